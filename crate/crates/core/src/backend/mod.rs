//! Text generation backends.
//!
//! Every backend reports token usage alongside completions: the ledger never
//! tokenizes text itself. Three implementations ship here:
//!
//! * [`HttpBackend`] talks to a chat-completion endpoint with retries and a
//!   bound on in-flight requests;
//! * [`ReplayBackend`] records responses to, or serves them from, an
//!   append-only [`ReplayStore`];
//! * [`MockBackend`] answers from a script or a closure, for tests.

mod http;
mod mock;
mod replay;

pub use http::{BackendConfig, BackoffSchedule, HttpBackend};
pub use mock::MockBackend;
pub use replay::{ReplayBackend, ReplayMode, ReplayRecord, ReplayStore};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const DEFAULT_TEMPERATURE: f64 = 0.8;
pub const DEFAULT_TOP_P: f64 = 0.95;
pub const DEFAULT_MAX_NEW_TOKENS: u32 = 300;
pub const LONG_REASONING_MAX_NEW_TOKENS: u32 = 600;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BackendError {
    #[error("transport error: {0}")]
    Transport(String),
    #[error("rate limited: {0}")]
    RateLimited(String),
    #[error("malformed response: {0}")]
    MalformedResponse(String),
    #[error("authentication failed: {0}")]
    AuthFailure(String),
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("no recorded response for request {0}")]
    ReplayMiss(String),
    #[error("replay store error: {0}")]
    Store(String),
}

impl BackendError {
    pub fn is_retryable(&self) -> bool {
        matches!(self, BackendError::Transport(_) | BackendError::RateLimited(_))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Decode {
    Sampled,
    Greedy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationRequest {
    pub prompt_text: String,
    pub decode: Decode,
    pub temperature: f64,
    pub top_p: f64,
    pub n: u32,
    pub max_new_tokens: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    /// Distinguishes repeated identical calls within one run; part of the
    /// replay key.
    #[serde(default)]
    pub call_ordinal: u32,
}

impl GenerationRequest {
    pub fn sampled(prompt_text: impl Into<String>, temperature: f64, top_p: f64, n: u32, max_new_tokens: u32) -> Self {
        Self {
            prompt_text: prompt_text.into(),
            decode: Decode::Sampled,
            temperature,
            top_p,
            n,
            max_new_tokens,
            seed: None,
            call_ordinal: 0,
        }
    }

    /// Deterministic single-sample decode.
    pub fn greedy(prompt_text: impl Into<String>, max_new_tokens: u32) -> Self {
        Self {
            prompt_text: prompt_text.into(),
            decode: Decode::Greedy,
            temperature: 0.0,
            top_p: 1.0,
            n: 1,
            max_new_tokens,
            seed: None,
            call_ordinal: 0,
        }
    }

    pub fn with_ordinal(mut self, call_ordinal: u32) -> Self {
        self.call_ordinal = call_ordinal;
        self
    }

    pub fn with_seed(mut self, seed: Option<u64>) -> Self {
        self.seed = seed;
        self
    }

    /// Forces greedy requests to temperature 0 and a single sample.
    pub fn normalized(mut self) -> Self {
        if self.decode == Decode::Greedy {
            self.temperature = 0.0;
            self.n = 1;
        }
        self
    }

    pub fn validate(&self) -> Result<(), BackendError> {
        let bad = |m: &str| Err(BackendError::InvalidRequest(m.to_string()));
        if self.n == 0 {
            return bad("n must be at least 1");
        }
        if !(self.temperature.is_finite() && self.temperature >= 0.0) {
            return bad("temperature must be a finite non-negative number");
        }
        if !(self.top_p > 0.0 && self.top_p <= 1.0) {
            return bad("top_p must be in (0, 1]");
        }
        if self.max_new_tokens == 0 {
            return bad("max_new_tokens must be at least 1");
        }
        if self.decode == Decode::Greedy && (self.n != 1 || self.temperature != 0.0) {
            return bad("greedy decode requires n = 1 and temperature 0");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenerationResponse {
    pub completions: Vec<String>,
    pub prompt_tokens: u64,
    /// One entry per completion.
    pub completion_tokens: Vec<u64>,
    pub backend_id: String,
}

impl GenerationResponse {
    pub fn new(completions: Vec<String>, prompt_tokens: u64, completion_tokens: Vec<u64>, backend_id: &str) -> Self {
        Self {
            completions,
            prompt_tokens,
            completion_tokens,
            backend_id: backend_id.to_string(),
        }
    }

    /// Checks the response against what `request` asked for.
    pub fn check(&self, request: &GenerationRequest) -> Result<(), BackendError> {
        if self.completions.len() != request.n as usize {
            return Err(BackendError::MalformedResponse(format!(
                "requested {} completions, got {}",
                request.n,
                self.completions.len()
            )));
        }
        if self.completion_tokens.len() != self.completions.len() {
            return Err(BackendError::MalformedResponse(
                "completion token counts do not align with completions".into(),
            ));
        }
        if let Some(t) = self.completion_tokens.iter().find(|&&t| t > request.max_new_tokens as u64) {
            return Err(BackendError::MalformedResponse(format!(
                "completion reported {t} tokens, over the {} budget",
                request.max_new_tokens
            )));
        }
        Ok(())
    }
}

pub trait Backend: Send + Sync {
    fn id(&self) -> &str;

    fn generate(&self, request: &GenerationRequest) -> Result<GenerationResponse, BackendError>;
}

impl<B: Backend + ?Sized> Backend for std::sync::Arc<B> {
    fn id(&self) -> &str {
        (**self).id()
    }

    fn generate(&self, request: &GenerationRequest) -> Result<GenerationResponse, BackendError> {
        (**self).generate(request)
    }
}

/// Normalizes and validates `request`, calls the backend, and checks the
/// response shape.
pub fn generate_checked(
    backend: &dyn Backend,
    request: GenerationRequest,
) -> Result<(GenerationRequest, GenerationResponse), BackendError> {
    let request = request.normalized();
    request.validate()?;
    let response = backend.generate(&request)?;
    response.check(&request)?;
    Ok((request, response))
}
