use std::time::Duration;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{ChatRequest, ChatResponse, EmbeddingRequest, EmbeddingResponse, Provider, ProviderError};

/// Exponential backoff with optional jitter.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub initial_delay_ms: u64,
    pub max_delay_ms: u64,
    pub multiplier: f64,
    pub jitter: bool,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_attempts: 5,
            initial_delay_ms: 500,
            max_delay_ms: 30_000,
            multiplier: 2.0,
            jitter: true,
        }
    }
}

impl RetryPolicy {
    /// Nominal delay before retry number `retry` (0-based), before jitter.
    pub fn base_delay(&self, retry: u32) -> Duration {
        let raw = self.initial_delay_ms as f64 * self.multiplier.powi(retry as i32);
        Duration::from_millis(raw.min(self.max_delay_ms as f64) as u64)
    }

    fn delay(&self, retry: u32, err: &ProviderError) -> Duration {
        let mut d = self.base_delay(retry);
        if self.jitter {
            let factor = rand::rng().random_range(0.5..=1.0);
            d = d.mul_f64(factor);
        }
        if let ProviderError::RateLimited {
            retry_after: Some(after),
        } = err
        {
            d = d.max(*after);
        }
        d
    }
}

/// Retries transient failures; anything else is returned immediately.
pub struct RetryingProvider<P> {
    inner: P,
    policy: RetryPolicy,
    sleep: fn(Duration),
}

impl<P: Provider> RetryingProvider<P> {
    pub fn new(inner: P, policy: RetryPolicy) -> Self {
        Self {
            inner,
            policy,
            sleep: std::thread::sleep,
        }
    }

    /// Replaces the sleep function; tests use a no-op.
    pub fn with_sleep(mut self, sleep: fn(Duration)) -> Self {
        self.sleep = sleep;
        self
    }

    pub fn inner(&self) -> &P {
        &self.inner
    }

    fn run<T>(&self, mut call: impl FnMut() -> Result<T, ProviderError>) -> Result<T, ProviderError> {
        let attempts = self.policy.max_attempts.max(1);
        let mut retry = 0;
        loop {
            match call() {
                Ok(v) => return Ok(v),
                Err(e) if !e.is_transient() => return Err(e),
                Err(e) if retry + 1 >= attempts => {
                    return Err(ProviderError::RetriesExhausted {
                        attempts,
                        last: Box::new(e),
                    })
                }
                Err(e) => {
                    let d = self.policy.delay(retry, &e);
                    log::warn!("transient provider error ({e}); retrying in {d:?}");
                    (self.sleep)(d);
                    retry += 1;
                }
            }
        }
    }
}

impl<P: Provider> Provider for RetryingProvider<P> {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, ProviderError> {
        request.validate()?;
        self.run(|| self.inner.complete(request))
    }

    fn embed(&self, request: &EmbeddingRequest) -> Result<EmbeddingResponse, ProviderError> {
        self.run(|| self.inner.embed(request))
    }
}
