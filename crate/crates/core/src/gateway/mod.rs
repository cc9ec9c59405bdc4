//! Chat-completion backends behind a common trait, and the [`Gateway`] that
//! applies the retry, concurrency and rate-limit policy to any of them.

mod http;
mod mock;

use std::num::NonZeroU32;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use async_trait::async_trait;
use governor::{DefaultDirectRateLimiter, Quota, RateLimiter};
use serde::{Deserialize, Serialize};
use thiserror::Error;
use tokio::sync::Semaphore;

pub use http::{OpenAiBackend, API_KEY_ENV};
pub use mock::{detect_scenario, mock_reply, prompt_hash, reply_for, MockBackend, Scenario, UnknownScenario};

const MAX_BACKOFF: Duration = Duration::from_secs(60);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub content: String,
}

impl ChatMessage {
    pub fn system(content: impl Into<String>) -> Self {
        Self { role: Role::System, content: content.into() }
    }

    pub fn user(content: impl Into<String>) -> Self {
        Self { role: Role::User, content: content.into() }
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        Self { role: Role::Assistant, content: content.into() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub messages: Vec<ChatMessage>,
    pub model_id: String,
    pub temperature: f64,
    pub max_tokens: u32,
}

impl ChatRequest {
    pub fn new(messages: Vec<ChatMessage>, model_id: impl Into<String>, temperature: f64, max_tokens: u32) -> Self {
        Self { messages, model_id: model_id.into(), temperature, max_tokens }
    }

    /// Single user turn.
    pub fn user(prompt: impl Into<String>, model_id: impl Into<String>, temperature: f64, max_tokens: u32) -> Self {
        Self::new(vec![ChatMessage::user(prompt)], model_id, temperature, max_tokens)
    }

    pub fn validate(&self) -> Result<(), GatewayError> {
        let invalid = |m: &str| Err(GatewayError::InvalidRequest(m.to_owned()));
        match self.messages.last() {
            None => return invalid("no messages"),
            Some(m) if m.role != Role::User => return invalid("last message must be a user turn"),
            _ => {}
        }
        if self.messages.iter().any(|m| m.content.trim().is_empty()) {
            return invalid("message content is empty");
        }
        if self.model_id.trim().is_empty() {
            return invalid("model_id is empty");
        }
        if !self.temperature.is_finite() || self.temperature < 0.0 {
            return invalid("temperature must be a finite number >= 0");
        }
        if self.max_tokens == 0 {
            return invalid("max_tokens must be positive");
        }
        Ok(())
    }

    /// Content of the final user turn.
    pub fn prompt(&self) -> &str {
        self.messages.last().map(|m| m.content.as_str()).unwrap_or("")
    }

    pub fn system(&self) -> Option<&str> {
        self.messages
            .iter()
            .find(|m| m.role == Role::System)
            .map(|m| m.content.as_str())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Usage {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

/// What a backend returns for one attempt.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawReply {
    pub content: String,
    pub usage: Usage,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChatResponse {
    pub content: String,
    pub usage: Usage,
    pub latency_ms: u64,
    pub attempts: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackendPolicy {
    pub max_concurrency: usize,
    pub retries: u32,
    pub backoff_base_ms: u64,
    /// Requests per second; unlimited when absent.
    pub rate_limit: Option<f64>,
    /// Per-attempt timeout.
    pub timeout_ms: u64,
}

impl Default for BackendPolicy {
    fn default() -> Self {
        Self {
            max_concurrency: 8,
            retries: 3,
            backoff_base_ms: 500,
            rate_limit: None,
            timeout_ms: 120_000,
        }
    }
}

impl BackendPolicy {
    pub fn validate(&self) -> Result<(), GatewayError> {
        if self.max_concurrency == 0 {
            return Err(GatewayError::InvalidPolicy("max_concurrency must be at least 1".into()));
        }
        if self.timeout_ms == 0 {
            return Err(GatewayError::InvalidPolicy("timeout_ms must be positive".into()));
        }
        if let Some(r) = self.rate_limit {
            if !r.is_finite() || r <= 0.0 {
                return Err(GatewayError::InvalidPolicy("rate_limit must be a positive number".into()));
            }
        }
        Ok(())
    }

    /// Delay before retry number `attempt + 1`: `base * 2^attempt`, capped at
    /// 60 s.
    pub fn backoff(&self, attempt: u32) -> Duration {
        let factor = 1u64.checked_shl(attempt).unwrap_or(u64::MAX);
        Duration::from_millis(self.backoff_base_ms.saturating_mul(factor)).min(MAX_BACKOFF)
    }
}

/// Failure of a single attempt.
#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum TransportError {
    #[error("HTTP {status}: {message}")]
    Status { status: u16, message: String },
    #[error("network error: {0}")]
    Network(String),
    #[error("undecodable reply: {0}")]
    Decode(String),
    #[error("attempt timed out")]
    Timeout,
}

impl TransportError {
    /// 429, 5xx and transport-level failures are worth retrying; any other
    /// status is a verdict on the request itself.
    pub fn is_retryable(&self) -> bool {
        match self {
            TransportError::Status { status, .. } => *status == 429 || *status >= 500,
            _ => true,
        }
    }
}

#[derive(Debug, Clone, Error, PartialEq)]
pub enum GatewayError {
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("invalid backend policy: {0}")]
    InvalidPolicy(String),
    #[error("gave up after {attempts} attempt(s): {last}")]
    Exhausted { attempts: u32, last: TransportError },
    #[error("rejected with HTTP {status}: {message}")]
    Rejected { status: u16, message: String },
    #[error("timed out after {attempts} attempt(s)")]
    Timeout { attempts: u32 },
}

impl GatewayError {
    pub fn class(&self) -> &'static str {
        match self {
            GatewayError::InvalidRequest(_) => "InvalidRequest",
            GatewayError::InvalidPolicy(_) => "InvalidPolicy",
            GatewayError::Exhausted { .. } => "Exhausted",
            GatewayError::Rejected { .. } => "Rejected",
            GatewayError::Timeout { .. } => "Timeout",
        }
    }
}

#[async_trait]
pub trait ChatBackend: Send + Sync {
    fn name(&self) -> &str;

    async fn send(&self, req: &ChatRequest) -> Result<RawReply, TransportError>;
}

/// Applies a [`BackendPolicy`] to a backend. Cheap to share by reference
/// across tasks.
pub struct Gateway {
    backend: Arc<dyn ChatBackend>,
    policy: BackendPolicy,
    permits: Semaphore,
    limiter: Option<DefaultDirectRateLimiter>,
    sent: AtomicU64,
}

impl Gateway {
    pub fn new(backend: Arc<dyn ChatBackend>, policy: BackendPolicy) -> Result<Self, GatewayError> {
        policy.validate()?;
        let limiter = policy.rate_limit.map(|rps| {
            let quota = Quota::with_period(Duration::from_secs_f64(1.0 / rps))
                .unwrap_or_else(|| Quota::per_second(NonZeroU32::MAX))
                .allow_burst(NonZeroU32::MIN);
            RateLimiter::direct(quota)
        });
        Ok(Self {
            backend,
            permits: Semaphore::new(policy.max_concurrency),
            policy,
            limiter,
            sent: AtomicU64::new(0),
        })
    }

    pub fn policy(&self) -> &BackendPolicy {
        &self.policy
    }

    pub fn backend_name(&self) -> &str {
        self.backend.name()
    }

    /// Attempts sent to the backend so far, retries included.
    pub fn requests_sent(&self) -> u64 {
        self.sent.load(Ordering::Relaxed)
    }

    pub async fn complete(&self, req: &ChatRequest) -> Result<ChatResponse, GatewayError> {
        req.validate()?;
        let started = Instant::now();
        let timeout = Duration::from_millis(self.policy.timeout_ms);
        let mut attempt: u32 = 0;
        loop {
            let result = {
                let _permit = self.permits.acquire().await.expect("semaphore is never closed");
                if let Some(limiter) = &self.limiter {
                    limiter.until_ready().await;
                }
                self.sent.fetch_add(1, Ordering::Relaxed);
                match tokio::time::timeout(timeout, self.backend.send(req)).await {
                    Ok(r) => r,
                    Err(_) => Err(TransportError::Timeout),
                }
            };
            let attempts = attempt + 1;
            match result {
                Ok(reply) => {
                    return Ok(ChatResponse {
                        content: reply.content,
                        usage: reply.usage,
                        latency_ms: started.elapsed().as_millis() as u64,
                        attempts,
                    })
                }
                Err(err) if !err.is_retryable() => {
                    return Err(match err {
                        TransportError::Status { status, message } => GatewayError::Rejected { status, message },
                        last => GatewayError::Exhausted { attempts, last },
                    })
                }
                Err(err) if attempt >= self.policy.retries => {
                    return Err(match err {
                        TransportError::Timeout => GatewayError::Timeout { attempts },
                        last => GatewayError::Exhausted { attempts, last },
                    })
                }
                Err(err) => {
                    tracing::debug!(backend = self.backend.name(), attempt = attempts, error = %err, "retrying");
                    tokio::time::sleep(self.policy.backoff(attempt)).await;
                    attempt += 1;
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn backoff_is_geometric_and_capped() {
        let p = BackendPolicy { backoff_base_ms: 250, ..Default::default() };
        assert_eq!(p.backoff(0), Duration::from_millis(250));
        assert_eq!(p.backoff(1), Duration::from_millis(500));
        assert_eq!(p.backoff(3), Duration::from_millis(2000));
        assert_eq!(p.backoff(12), MAX_BACKOFF);
        assert_eq!(p.backoff(200), MAX_BACKOFF);
    }

    #[test]
    fn retry_classifier() {
        let status = |s| TransportError::Status { status: s, message: String::new() };
        assert!(status(429).is_retryable());
        assert!(status(503).is_retryable());
        assert!(!status(400).is_retryable());
        assert!(!status(401).is_retryable());
        assert!(TransportError::Network("reset".into()).is_retryable());
        assert!(TransportError::Timeout.is_retryable());
    }

    #[test]
    fn request_validation() {
        let ok = ChatRequest::user("hi", "m", 0.8, 16);
        ok.validate().unwrap();
        let mut bad = ok.clone();
        bad.messages.push(ChatMessage::assistant("x"));
        assert!(matches!(bad.validate(), Err(GatewayError::InvalidRequest(_))));
        let bad = ChatRequest::user(" ", "m", 0.8, 16);
        assert!(bad.validate().is_err());
        let bad = ChatRequest::user("hi", "m", -1.0, 16);
        assert!(bad.validate().is_err());
    }

    #[test]
    fn policy_validation() {
        assert!(BackendPolicy { max_concurrency: 0, ..Default::default() }.validate().is_err());
        assert!(BackendPolicy { rate_limit: Some(0.0), ..Default::default() }.validate().is_err());
        BackendPolicy { rate_limit: Some(5.0), ..Default::default() }.validate().unwrap();
    }
}
