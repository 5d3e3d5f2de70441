//! OpenAI-style completion endpoint returning first-position top logprobs.

use std::collections::HashMap;
use std::sync::{Condvar, Mutex};
use std::time::Duration;

use serde_json::{json, Value};

use super::{Backend, BackendRequest, BackendResponse};
use crate::error::{Error, Result};
use crate::transport::{JsonEndpoint, RetryPolicy};

pub const ENV_BACKEND_URL: &str = "PRP_BACKEND_URL";
pub const ENV_BACKEND_KEY: &str = "PRP_BACKEND_KEY";

/// Gap below the smallest observed logprob given to candidates the endpoint
/// did not list.
const FLOOR_GAP: f64 = 10.0;

#[derive(Debug, Clone, PartialEq)]
pub struct HttpBackendConfig {
    pub url: String,
    pub api_key: Option<String>,
    pub model: Option<String>,
    pub top_logprobs: u32,
    pub max_in_flight: usize,
    pub base_backoff: Duration,
}

impl HttpBackendConfig {
    pub fn new(url: impl Into<String>) -> Self {
        Self {
            url: url.into(),
            api_key: None,
            model: None,
            top_logprobs: 5,
            max_in_flight: 8,
            base_backoff: Duration::from_millis(250),
        }
    }

    /// Reads the endpoint from `PRP_BACKEND_URL` and the key from `key_env`
    /// (usually `PRP_BACKEND_KEY`).
    pub fn from_env(key_env: &str) -> Result<Self> {
        let url = std::env::var(ENV_BACKEND_URL)
            .map_err(|_| Error::Config(format!("{ENV_BACKEND_URL} is not set")))?;
        let mut cfg = Self::new(url);
        cfg.api_key = std::env::var(key_env).ok().filter(|k| !k.is_empty());
        Ok(cfg)
    }
}

/// Counting semaphore bounding concurrent requests.
struct Slots {
    free: Mutex<usize>,
    cv: Condvar,
}

struct Permit<'a>(&'a Slots);

impl Slots {
    fn new(n: usize) -> Self {
        Self {
            free: Mutex::new(n.max(1)),
            cv: Condvar::new(),
        }
    }

    fn acquire(&self) -> Permit<'_> {
        let mut free = self.free.lock().unwrap_or_else(|p| p.into_inner());
        while *free == 0 {
            free = self.cv.wait(free).unwrap_or_else(|p| p.into_inner());
        }
        *free -= 1;
        Permit(self)
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.0.free.lock().unwrap_or_else(|p| p.into_inner()) += 1;
        self.0.cv.notify_one();
    }
}

pub struct HttpBackend {
    endpoint: JsonEndpoint,
    config: HttpBackendConfig,
    slots: Slots,
}

impl HttpBackend {
    pub fn new(config: HttpBackendConfig) -> Result<Self> {
        let endpoint = JsonEndpoint::new(config.url.clone(), config.api_key.clone())?;
        Ok(Self {
            endpoint,
            slots: Slots::new(config.max_in_flight),
            config,
        })
    }

    fn request_body(&self, req: &BackendRequest) -> Value {
        let mut body = json!({
            "prompt": req.prompt_text,
            "max_tokens": 1,
            "logprobs": self.config.top_logprobs,
            "temperature": 0,
        });
        if let Some(model) = &self.config.model {
            body["model"] = Value::String(model.clone());
        }
        body
    }
}

impl Backend for HttpBackend {
    fn score_continuations(&self, req: &BackendRequest) -> Result<BackendResponse> {
        let policy = RetryPolicy {
            max_retries: req.max_retries,
            timeout: req.timeout,
            base_backoff: self.config.base_backoff,
        };
        let body = self.request_body(req);
        let resp = {
            let _permit = self.slots.acquire();
            self.endpoint.post(&body, policy)?
        };
        let mut out = parse_completion(&resp.body, &req.candidate_tokens).map_err(|message| {
            Error::Backend {
                message: format!("{}: {message}", self.endpoint.url()),
                attempts: resp.attempts,
                status: Some(200),
            }
        })?;
        out.latency = resp.latency;
        Ok(out)
    }
}

/// Top-logprob map of the first generated position, keys trimmed. Accepts
/// both the completions layout (`top_logprobs: [{token: lp}]`) and the chat
/// layout (`content: [{top_logprobs: [{token, logprob}]}]`).
fn first_position_logprobs(choice: &Value) -> HashMap<String, f64> {
    let mut map: HashMap<String, f64> = HashMap::new();
    let mut put = |token: &str, lp: Option<f64>| {
        if let Some(lp) = lp.filter(|v| v.is_finite()) {
            let slot = map.entry(token.trim().to_string()).or_insert(lp);
            if lp > *slot {
                *slot = lp;
            }
        }
    };
    let lp = &choice["logprobs"];
    if let Some(obj) = lp["top_logprobs"].get(0).and_then(Value::as_object) {
        for (tok, v) in obj {
            put(tok, v.as_f64());
        }
    } else if let Some(arr) = lp["content"].get(0).and_then(|c| c["top_logprobs"].as_array()) {
        for entry in arr {
            if let Some(tok) = entry["token"].as_str() {
                put(tok, entry["logprob"].as_f64());
            }
        }
    }
    map
}

fn generated_text(choice: &Value) -> Option<&str> {
    choice["text"]
        .as_str()
        .or_else(|| choice["message"]["content"].as_str())
}

/// Turns an endpoint reply into candidate logprobs; `Err` means the reply
/// had neither logprobs nor text.
pub fn parse_completion(body: &Value, candidates: &[String]) -> std::result::Result<BackendResponse, String> {
    let choice = body["choices"]
        .get(0)
        .ok_or_else(|| "response has no choices".to_string())?;
    let raw = generated_text(choice).map(str::to_string);
    let map = first_position_logprobs(choice);
    if !map.is_empty() {
        let min = map.values().copied().fold(f64::INFINITY, f64::min);
        let floor = min - FLOOR_GAP;
        let logprobs = candidates
            .iter()
            .map(|c| map.get(c.as_str()).copied().unwrap_or(floor))
            .collect();
        return Ok(BackendResponse {
            logprobs: Some(logprobs),
            raw_generation: raw,
            latency: Duration::ZERO,
            cached: false,
        });
    }
    let text = raw.ok_or_else(|| "response has neither logprobs nor text".to_string())?;
    let answer = text
        .split_whitespace()
        .next()
        .unwrap_or("")
        .trim_matches(|c: char| !c.is_alphanumeric());
    match candidates.iter().position(|c| c.as_str() == answer) {
        Some(hit) => {
            let floor = -FLOOR_GAP;
            let logprobs = (0..candidates.len())
                .map(|i| if i == hit { 0.0 } else { floor })
                .collect();
            Ok(BackendResponse {
                logprobs: Some(logprobs),
                raw_generation: Some(text),
                latency: Duration::ZERO,
                cached: false,
            })
        }
        None => Ok(BackendResponse::unparseable(text)),
    }
}
