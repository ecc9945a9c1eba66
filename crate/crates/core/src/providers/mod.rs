//! Chat-LLM and embedding provider contracts.
//!
//! Pipeline stages talk to models only through [`ChatProvider`] and
//! [`EmbeddingProvider`]. HTTP clients, deterministic mocks, an in-flight
//! limiter and on-disk caches all implement the same traits and stack as
//! wrappers.

mod cache;
mod http;
mod limit;
mod mock;

use std::ops::{Add, AddAssign};
use std::thread;
use std::time::Duration;

use log::warn;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use cache::{CachedChat, CachedEmbedder};
pub use http::{HttpChatClient, HttpEmbeddingClient};
pub use limit::{InFlightLimit, Limited};
pub use mock::{MockChat, MockEmbedder, MockRule, PromptKind};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ProviderError {
    #[error("provider unavailable: {0}")]
    Unavailable(String),
    #[error("rate limited by provider")]
    RateLimited,
    #[error("prompt exceeds the provider context: {0}")]
    ContextOverflow(String),
    #[error("provider returned vectors of dim {got}, expected {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("unexpected provider response: {0}")]
    BadResponse(String),
}

pub type Result<T> = std::result::Result<T, ProviderError>;

/// Token usage of one or more LLM calls.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Usage {
    pub input_tokens: u64,
    pub output_tokens: u64,
}

impl Add for Usage {
    type Output = Usage;

    fn add(self, rhs: Usage) -> Usage {
        Usage {
            input_tokens: self.input_tokens + rhs.input_tokens,
            output_tokens: self.output_tokens + rhs.output_tokens,
        }
    }
}

impl AddAssign for Usage {
    fn add_assign(&mut self, rhs: Usage) {
        *self = *self + rhs;
    }
}

impl std::iter::Sum for Usage {
    fn sum<I: Iterator<Item = Usage>>(iter: I) -> Usage {
        iter.fold(Usage::default(), Add::add)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub model_id: String,
    pub prompt: String,
    pub temperature: f64,
    pub max_output_tokens: u32,
}

impl ChatRequest {
    pub const DEFAULT_MAX_OUTPUT_TOKENS: u32 = 2048;

    pub fn new(model_id: impl Into<String>, prompt: impl Into<String>) -> Self {
        Self {
            model_id: model_id.into(),
            prompt: prompt.into(),
            temperature: 0.0,
            max_output_tokens: Self::DEFAULT_MAX_OUTPUT_TOKENS,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.prompt.trim().is_empty() {
            return Err(ProviderError::InvalidRequest("empty prompt".into()));
        }
        if self.temperature.is_nan() || self.temperature < 0.0 {
            return Err(ProviderError::InvalidRequest(format!(
                "temperature must be >= 0, got {}",
                self.temperature
            )));
        }
        if self.max_output_tokens == 0 {
            return Err(ProviderError::InvalidRequest("max_output_tokens must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatResponse {
    pub text: String,
    pub input_tokens: u64,
    pub output_tokens: u64,
}

impl ChatResponse {
    pub fn usage(&self) -> Usage {
        Usage {
            input_tokens: self.input_tokens,
            output_tokens: self.output_tokens,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EmbeddingProviderInfo {
    pub model_id: String,
    pub dim: usize,
    pub max_tokens: usize,
}

pub trait ChatProvider: Send + Sync {
    fn model_id(&self) -> &str;

    /// One completion. Implementations report token usage exactly as the
    /// backend does and must not truncate an oversized prompt.
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse>;
}

pub trait EmbeddingProvider: Send + Sync {
    fn info(&self) -> Result<EmbeddingProviderInfo>;

    /// Raw vectors, one per text in order. Use [`embed`] for the checked
    /// entry point.
    fn embed_batch(&self, texts: &[String]) -> Result<Vec<Vec<f64>>>;

    /// Token count used for chunking against `info().max_tokens`.
    fn count_tokens(&self, text: &str) -> usize {
        estimate_tokens(text)
    }
}

impl<T: ChatProvider + ?Sized> ChatProvider for Box<T> {
    fn model_id(&self) -> &str {
        (**self).model_id()
    }

    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse> {
        (**self).complete(request)
    }
}

impl<T: EmbeddingProvider + ?Sized> EmbeddingProvider for Box<T> {
    fn info(&self) -> Result<EmbeddingProviderInfo> {
        (**self).info()
    }

    fn embed_batch(&self, texts: &[String]) -> Result<Vec<Vec<f64>>> {
        (**self).embed_batch(texts)
    }

    fn count_tokens(&self, text: &str) -> usize {
        (**self).count_tokens(text)
    }
}

/// Character-based token estimate, four characters per token rounded up.
pub fn estimate_tokens(text: &str) -> usize {
    text.chars().count().div_ceil(4)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RetryPolicy {
    /// Retries after the first attempt; applies to [`ProviderError::RateLimited`] only.
    pub max_retries: u32,
    pub base_delay_ms: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_retries: 2,
            base_delay_ms: 500,
        }
    }
}

impl RetryPolicy {
    pub fn no_delay() -> Self {
        Self {
            base_delay_ms: 0,
            ..Self::default()
        }
    }
}

/// Validated chat call with exponential backoff on rate limiting.
pub fn chat(request: &ChatRequest, client: &dyn ChatProvider, policy: &RetryPolicy) -> Result<ChatResponse> {
    request.validate()?;
    let mut attempt = 0;
    loop {
        match client.complete(request) {
            Err(ProviderError::RateLimited) if attempt < policy.max_retries => {
                let delay = policy.base_delay_ms.saturating_mul(1 << attempt);
                warn!("rate limited by {}, retrying in {delay} ms", client.model_id());
                thread::sleep(Duration::from_millis(delay));
                attempt += 1;
            }
            other => return other,
        }
    }
}

/// Embed `texts` and check the provider honoured the contract: one vector per
/// text, each of the advertised dimension.
pub fn embed(texts: &[String], provider: &dyn EmbeddingProvider) -> Result<Vec<Vec<f64>>> {
    if let Some(i) = texts.iter().position(|t| t.is_empty()) {
        return Err(ProviderError::InvalidRequest(format!("text {i} is empty")));
    }
    if texts.is_empty() {
        return Ok(Vec::new());
    }
    let info = provider.info()?;
    let vectors = provider.embed_batch(texts)?;
    if vectors.len() != texts.len() {
        return Err(ProviderError::BadResponse(format!(
            "{} vectors for {} texts",
            vectors.len(),
            texts.len()
        )));
    }
    if let Some(v) = vectors.iter().find(|v| v.len() != info.dim) {
        return Err(ProviderError::DimensionMismatch {
            expected: info.dim,
            got: v.len(),
        });
    }
    Ok(vectors)
}

pub fn provider_info(provider: &dyn EmbeddingProvider) -> Result<EmbeddingProviderInfo> {
    let info = provider.info()?;
    if info.dim == 0 || info.max_tokens == 0 {
        return Err(ProviderError::BadResponse(format!(
            "provider info must have positive dim and max_tokens, got {info:?}"
        )));
    }
    Ok(info)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::atomic::{AtomicU32, Ordering};

    struct Flaky {
        failures: AtomicU32,
        error: ProviderError,
    }

    impl ChatProvider for Flaky {
        fn model_id(&self) -> &str {
            "flaky"
        }

        fn complete(&self, request: &ChatRequest) -> Result<ChatResponse> {
            if self.failures.load(Ordering::SeqCst) > 0 {
                self.failures.fetch_sub(1, Ordering::SeqCst);
                return Err(self.error.clone());
            }
            Ok(ChatResponse {
                text: request.prompt.clone(),
                input_tokens: 1,
                output_tokens: 1,
            })
        }
    }

    #[test]
    fn retries_rate_limit_twice_then_gives_up() {
        let p = RetryPolicy::no_delay();
        let req = ChatRequest::new("m", "hi");
        let two = Flaky {
            failures: AtomicU32::new(2),
            error: ProviderError::RateLimited,
        };
        assert_eq!(chat(&req, &two, &p).unwrap().text, "hi");
        let three = Flaky {
            failures: AtomicU32::new(3),
            error: ProviderError::RateLimited,
        };
        assert_eq!(chat(&req, &three, &p), Err(ProviderError::RateLimited));
    }

    #[test]
    fn other_errors_are_not_retried() {
        let p = RetryPolicy::no_delay();
        let c = Flaky {
            failures: AtomicU32::new(1),
            error: ProviderError::Unavailable("down".into()),
        };
        assert!(matches!(chat(&ChatRequest::new("m", "x"), &c, &p), Err(ProviderError::Unavailable(_))));
        assert_eq!(c.failures.load(Ordering::SeqCst), 0);
    }

    #[test]
    fn request_validation() {
        let p = RetryPolicy::no_delay();
        let c = Flaky {
            failures: AtomicU32::new(0),
            error: ProviderError::RateLimited,
        };
        assert!(matches!(chat(&ChatRequest::new("m", "  "), &c, &p), Err(ProviderError::InvalidRequest(_))));
        let mut hot = ChatRequest::new("m", "x");
        hot.temperature = -0.1;
        assert!(hot.validate().is_err());
        assert_eq!(ChatRequest::new("m", "x").temperature, 0.0);
    }

    struct WrongDim;

    impl EmbeddingProvider for WrongDim {
        fn info(&self) -> Result<EmbeddingProviderInfo> {
            Ok(EmbeddingProviderInfo {
                model_id: "w".into(),
                dim: 64,
                max_tokens: 128,
            })
        }

        fn embed_batch(&self, texts: &[String]) -> Result<Vec<Vec<f64>>> {
            Ok(texts.iter().map(|_| vec![0.5; 63]).collect())
        }
    }

    #[test]
    fn dimension_mismatch_detected() {
        assert_eq!(
            embed(&["a".to_string()], &WrongDim),
            Err(ProviderError::DimensionMismatch { expected: 64, got: 63 })
        );
    }

    #[test]
    fn empty_text_rejected() {
        assert!(matches!(
            embed(&["a".to_string(), String::new()], &WrongDim),
            Err(ProviderError::InvalidRequest(_))
        ));
    }

    #[test]
    fn token_estimate() {
        assert_eq!(estimate_tokens(""), 0);
        assert_eq!(estimate_tokens("abcd"), 1);
        assert_eq!(estimate_tokens("abcde"), 2);
    }
}
