//! JSON-over-HTTP POST with per-request timeout and exponential backoff.

use std::thread;
use std::time::{Duration, Instant};

use log::warn;
use reqwest::blocking::Client;
use reqwest::StatusCode;
use serde_json::Value;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RetryPolicy {
    /// Retries after the first attempt.
    pub max_retries: u32,
    pub timeout: Duration,
    /// Delay before the first retry; doubled for every following one.
    pub base_backoff: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_retries: 3,
            timeout: Duration::from_secs(30),
            base_backoff: Duration::from_millis(250),
        }
    }
}

#[derive(Debug)]
pub struct JsonResponse {
    pub body: Value,
    pub latency: Duration,
    pub attempts: u32,
}

#[derive(Debug, Clone)]
pub struct JsonEndpoint {
    client: Client,
    url: String,
    bearer: Option<String>,
}

fn retryable(status: StatusCode) -> bool {
    status.is_server_error() || status == StatusCode::TOO_MANY_REQUESTS
}

impl JsonEndpoint {
    pub fn new(url: impl Into<String>, bearer: Option<String>) -> Result<Self> {
        let client = Client::builder()
            .build()
            .map_err(|e| Error::Config(format!("http client: {e}")))?;
        Ok(Self {
            client,
            url: url.into(),
            bearer,
        })
    }

    pub fn url(&self) -> &str {
        &self.url
    }

    /// POSTs `body`; transport failures, 5xx and 429 are retried.
    pub fn post(&self, body: &Value, policy: RetryPolicy) -> Result<JsonResponse> {
        let started = Instant::now();
        let mut last_status = None;
        let mut last_message = String::new();
        let attempts_allowed = policy.max_retries + 1;
        for attempt in 1..=attempts_allowed {
            if attempt > 1 {
                let factor = 1u32 << (attempt - 2).min(16);
                thread::sleep(policy.base_backoff.saturating_mul(factor));
            }
            let mut req = self.client.post(&self.url).timeout(policy.timeout).json(body);
            if let Some(key) = &self.bearer {
                req = req.bearer_auth(key);
            }
            match req.send() {
                Ok(resp) => {
                    let status = resp.status();
                    last_status = Some(status.as_u16());
                    if status.is_success() {
                        let body = resp.json::<Value>().map_err(|e| Error::Backend {
                            message: format!("invalid JSON from {}: {e}", self.url),
                            attempts: attempt,
                            status: Some(status.as_u16()),
                        })?;
                        return Ok(JsonResponse {
                            body,
                            latency: started.elapsed(),
                            attempts: attempt,
                        });
                    }
                    last_message = format!("{} returned {status}", self.url);
                    if !retryable(status) {
                        return Err(Error::Backend {
                            message: last_message,
                            attempts: attempt,
                            status: last_status,
                        });
                    }
                }
                Err(e) => {
                    last_message = format!("{}: {e}", self.url);
                }
            }
            warn!("attempt {attempt}/{attempts_allowed} failed: {last_message}");
        }
        Err(Error::Backend {
            message: last_message,
            attempts: attempts_allowed,
            status: last_status,
        })
    }
}
