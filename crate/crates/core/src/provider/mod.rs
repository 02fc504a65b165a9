//! Chat-completion and embedding services behind one trait.
//!
//! [`MockProvider`] is a pure function of its seed and the request and backs every
//! offline test. [`LiveProvider`] talks to an OpenAI-compatible HTTP endpoint.
//! [`RetryingProvider`], [`LimitedProvider`] and [`AuditedProvider`] wrap either one.

mod audit;
mod limiter;
mod live;
mod mock;
mod retry;

use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::vectors::EmbeddingVector;

pub use audit::AuditedProvider;
pub use limiter::{ConcurrencyLimiter, LimitedProvider};
pub use live::{LiveConfig, LiveProvider};
pub use mock::{ChatRule, MockFixture, MockProvider, MockResponder};
pub use retry::{RetryPolicy, RetryingProvider};

pub const DEFAULT_MAX_OUTPUT_TOKENS: u32 = 8192;

/// Request tags the pipeline stages attach to chat requests.
pub mod tags {
    pub const LABEL_CLUSTER: &str = "label_cluster";
    pub const MAP_TECHNIQUES: &str = "map_techniques";
    pub const GENERATE_TEMPLATE: &str = "generate_template";
    pub const EVAL: &str = "eval";
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub model_name: String,
    pub prompt_text: String,
    pub temperature: f64,
    pub max_output_tokens: u32,
    pub request_tag: String,
    /// Forwarded to services that accept a sampling seed.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

impl ChatRequest {
    pub fn new(model_name: impl Into<String>, prompt_text: impl Into<String>, temperature: f64) -> Self {
        Self {
            model_name: model_name.into(),
            prompt_text: prompt_text.into(),
            temperature,
            max_output_tokens: DEFAULT_MAX_OUTPUT_TOKENS,
            request_tag: String::new(),
            seed: None,
        }
    }

    pub fn with_tag(mut self, tag: impl Into<String>) -> Self {
        self.request_tag = tag.into();
        self
    }

    pub fn with_max_output_tokens(mut self, cap: u32) -> Self {
        self.max_output_tokens = cap;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = Some(seed);
        self
    }

    pub fn validate(&self) -> Result<(), ProviderError> {
        if !self.temperature.is_finite() || self.temperature < 0.0 {
            return Err(ProviderError::InvalidRequest(format!(
                "temperature must be finite and >= 0, got {}",
                self.temperature
            )));
        }
        if self.prompt_text.trim().is_empty() {
            return Err(ProviderError::InvalidRequest("prompt text is empty".into()));
        }
        if self.max_output_tokens == 0 {
            return Err(ProviderError::InvalidRequest(
                "max_output_tokens must be positive".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChatResponse {
    pub text: String,
    /// True iff the service stopped because the output-token cap was reached.
    pub truncated: bool,
    pub latency: Duration,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingRequest {
    pub model_name: String,
    pub texts: Vec<String>,
}

impl EmbeddingRequest {
    pub fn new(model_name: impl Into<String>, texts: Vec<String>) -> Self {
        Self {
            model_name: model_name.into(),
            texts,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingResponse {
    pub vectors: Vec<EmbeddingVector>,
}

impl EmbeddingResponse {
    /// Checks arity against the request and that all vectors share one dimension.
    pub fn check(self, request: &EmbeddingRequest) -> Result<Self, ProviderError> {
        if self.vectors.len() != request.texts.len() {
            return Err(ProviderError::Malformed(format!(
                "expected {} embeddings, got {}",
                request.texts.len(),
                self.vectors.len()
            )));
        }
        if let Some(first) = self.vectors.first() {
            if let Some(bad) = self.vectors.iter().find(|v| v.dim() != first.dim()) {
                return Err(ProviderError::Malformed(format!(
                    "embedding dimensions differ within one batch: {} vs {}",
                    first.dim(),
                    bad.dim()
                )));
            }
        }
        Ok(self)
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProviderError {
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("authentication failed: {0}")]
    Authentication(String),
    #[error("rate limited")]
    RateLimited { retry_after: Option<Duration> },
    #[error("request timed out")]
    Timeout,
    #[error("server error {status}: {message}")]
    Server { status: u16, message: String },
    #[error("transport error: {0}")]
    Transport(String),
    #[error("malformed service reply: {0}")]
    Malformed(String),
    #[error("gave up after {attempts} attempts: {last}")]
    RetriesExhausted { attempts: u32, last: Box<ProviderError> },
}

impl ProviderError {
    pub fn is_transient(&self) -> bool {
        matches!(
            self,
            Self::RateLimited { .. } | Self::Timeout | Self::Server { .. } | Self::Transport(_)
        )
    }
}

pub trait Provider: Send + Sync {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, ProviderError>;

    fn embed(&self, request: &EmbeddingRequest) -> Result<EmbeddingResponse, ProviderError>;
}

impl<P: Provider + ?Sized> Provider for Arc<P> {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, ProviderError> {
        (**self).complete(request)
    }

    fn embed(&self, request: &EmbeddingRequest) -> Result<EmbeddingResponse, ProviderError> {
        (**self).embed(request)
    }
}

impl<P: Provider + ?Sized> Provider for Box<P> {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, ProviderError> {
        (**self).complete(request)
    }

    fn embed(&self, request: &EmbeddingRequest) -> Result<EmbeddingResponse, ProviderError> {
        (**self).embed(request)
    }
}

impl<P: Provider + ?Sized> Provider for &P {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, ProviderError> {
        (**self).complete(request)
    }

    fn embed(&self, request: &EmbeddingRequest) -> Result<EmbeddingResponse, ProviderError> {
        (**self).embed(request)
    }
}
