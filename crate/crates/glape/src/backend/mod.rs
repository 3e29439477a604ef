//! LLM transports. The optimizer talks to a [`Backend`] trait object; the
//! concrete implementations are an HTTP client with caching and retries
//! ([`http::HttpBackend`]) and an offline deterministic replay
//! ([`replay::ReplayBackend`]) used for tests and reproducible runs.

pub mod cache;
pub mod http;
pub mod replay;

pub use cache::{cache_key, ResponseCache};
pub use http::{HttpBackend, HttpConfig};
pub use replay::{ReplayBackend, ReplayFixture};

use serde::{Deserialize, Serialize};

use crate::answers::RawResponse;

/// What a request is for. Replay backends route evaluation requests to
/// answer generators and optimization requests to proposal generators.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Purpose {
    Evaluation,
    Optimization,
}

/// One sampling request: `n_samples` completions for the same input.
#[derive(Debug, Clone, PartialEq)]
pub struct ChatRequest {
    pub model_id: String,
    pub system_text: Option<String>,
    pub user_text: String,
    pub temperature: f64,
    pub n_samples: usize,
    pub max_tokens: u32,
    pub purpose: Purpose,
}

/// One transport attempt, kept for diagnostics and carried by errors.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Attempt {
    pub number: u32,
    pub outcome: String,
    /// Sleep performed after this attempt, when it was retried.
    pub backoff_ms: Option<u64>,
}

#[derive(Debug, thiserror::Error)]
pub enum BackendError {
    #[error("transport failure after {} attempt(s): {message}", attempts.len())]
    Transport {
        message: String,
        attempts: Vec<Attempt>,
    },

    #[error("endpoint returned status {status} after {} attempt(s): {body_excerpt}", attempts.len())]
    HttpStatus {
        status: u16,
        body_excerpt: String,
        attempts: Vec<Attempt>,
    },

    #[error("malformed completion payload: {0}")]
    MalformedPayload(String),

    #[error("replay fixture has no entry for request: {0}")]
    ReplayMiss(String),

    #[error("api key environment variable {0} is not set")]
    MissingApiKey(String),

    #[error("response cache {path}: {message}")]
    CacheIo { path: String, message: String },
}

pub trait Backend: Send + Sync {
    /// All `n_samples` completions for the request, ordered by sample index.
    fn complete(&self, req: &ChatRequest) -> Result<Vec<RawResponse>, BackendError>;

    /// Network round-trips performed so far. Offline backends report 0.
    fn network_calls(&self) -> u64;
}
