//! Scored-continuation backends.
//!
//! A backend receives a flat prompt plus the candidate answer tokens and
//! returns one log-probability per candidate for the first generated
//! position. Implementations: an HTTP completion endpoint, a deterministic
//! oracle for simulation, and a caching wrapper around either.

mod cache;
mod http;
mod oracle;

use std::collections::HashSet;
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::prompt::PromptMode;

pub use cache::{CacheStats, CachedBackend};
pub use http::{parse_completion, HttpBackend, HttpBackendConfig, ENV_BACKEND_KEY, ENV_BACKEND_URL};
pub use oracle::OracleWorld;

/// What the prompt is about, for backends that reason over ids instead of text.
#[derive(Debug, Clone, PartialEq)]
pub struct RequestContext {
    pub query_id: String,
    pub query_text: String,
    /// Passage ids in slot order.
    pub doc_ids: Vec<String>,
    pub example_query_texts: Vec<String>,
    pub mode: PromptMode,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BackendRequest {
    pub prompt_text: String,
    pub candidate_tokens: Vec<String>,
    pub max_retries: u32,
    pub timeout: Duration,
    pub context: Option<RequestContext>,
}

impl BackendRequest {
    pub fn new(prompt_text: impl Into<String>, candidate_tokens: Vec<String>) -> Result<Self> {
        if candidate_tokens.is_empty() {
            return Err(Error::Argument("no candidate tokens".into()));
        }
        let mut seen = HashSet::new();
        for t in &candidate_tokens {
            if t.is_empty() || !seen.insert(t.as_str()) {
                return Err(Error::Argument(format!(
                    "candidate tokens must be distinct and non-empty: {candidate_tokens:?}"
                )));
            }
        }
        Ok(Self {
            prompt_text: prompt_text.into(),
            candidate_tokens,
            max_retries: 3,
            timeout: Duration::from_secs(30),
            context: None,
        })
    }

    pub fn with_limits(mut self, max_retries: u32, timeout: Duration) -> Self {
        self.max_retries = max_retries;
        self.timeout = timeout;
        self
    }

    pub fn with_context(mut self, context: RequestContext) -> Self {
        self.context = Some(context);
        self
    }
}

/// Log-probabilities aligned with the request's candidate tokens, or `None`
/// when the backend produced text that matched no candidate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackendResponse {
    pub logprobs: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub raw_generation: Option<String>,
    #[serde(skip)]
    pub latency: Duration,
    #[serde(skip)]
    pub cached: bool,
}

impl BackendResponse {
    pub fn scored(logprobs: Vec<f64>) -> Self {
        Self {
            logprobs: Some(logprobs),
            raw_generation: None,
            latency: Duration::ZERO,
            cached: false,
        }
    }

    pub fn unparseable(raw_generation: impl Into<String>) -> Self {
        Self {
            logprobs: None,
            raw_generation: Some(raw_generation.into()),
            latency: Duration::ZERO,
            cached: false,
        }
    }

    pub fn is_parseable(&self) -> bool {
        self.logprobs.is_some()
    }

    pub fn logprob(&self, index: usize) -> Option<f64> {
        self.logprobs.as_ref().and_then(|l| l.get(index).copied())
    }

    pub(crate) fn check_against(&self, req: &BackendRequest) -> Result<()> {
        if let Some(l) = &self.logprobs {
            if l.len() != req.candidate_tokens.len() || l.iter().any(|v| !v.is_finite()) {
                return Err(Error::Backend {
                    message: format!("malformed logprobs {l:?} for {:?}", req.candidate_tokens),
                    attempts: 1,
                    status: None,
                });
            }
        }
        Ok(())
    }
}

pub trait Backend: Send + Sync {
    fn score_continuations(&self, req: &BackendRequest) -> Result<BackendResponse>;
}

impl<B: Backend + ?Sized> Backend for &B {
    fn score_continuations(&self, req: &BackendRequest) -> Result<BackendResponse> {
        (**self).score_continuations(req)
    }
}

impl<B: Backend + ?Sized> Backend for Arc<B> {
    fn score_continuations(&self, req: &BackendRequest) -> Result<BackendResponse> {
        (**self).score_continuations(req)
    }
}

impl<B: Backend + ?Sized> Backend for Box<B> {
    fn score_continuations(&self, req: &BackendRequest) -> Result<BackendResponse> {
        (**self).score_continuations(req)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn request_tokens_validated() {
        assert!(BackendRequest::new("p", vec![]).is_err());
        assert!(BackendRequest::new("p", vec!["1".into(), "1".into()]).is_err());
        assert!(BackendRequest::new("p", vec!["".into()]).is_err());
        assert!(BackendRequest::new("p", vec!["1".into(), "2".into()]).is_ok());
    }

    #[test]
    fn response_shape_checked() {
        let req = BackendRequest::new("p", vec!["1".into(), "2".into()]).unwrap();
        assert!(BackendResponse::scored(vec![-1.0]).check_against(&req).is_err());
        assert!(BackendResponse::scored(vec![-1.0, f64::NAN]).check_against(&req).is_err());
        assert!(BackendResponse::scored(vec![-1.0, -2.0]).check_against(&req).is_ok());
        assert!(BackendResponse::unparseable("x").check_against(&req).is_ok());
    }
}
