//! Uniform access to chat-completion and embedding providers.
//!
//! The [`Gateway`] routes each request by its stage tag to a bound provider,
//! retries transient transport failures with jittered exponential backoff,
//! and enforces an in-flight cap plus an optional token-bucket rate limit.
//! Scripted [`TranscriptProvider`] mocks and the seeded [`HashEmbedder`]
//! make every pipeline stage runnable offline and deterministically.

mod hash_embed;
mod remote;
mod transcript;

pub use hash_embed::HashEmbedder;
pub use remote::{RemoteChatProvider, RemoteEmbeddingProvider, RemoteProviderConfig};
pub use transcript::{load_transcript, TranscriptEntry, TranscriptProvider};

use std::collections::HashMap;
use std::sync::{Arc, Condvar, Mutex};
use std::time::{Duration, Instant};

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Stage tags used as `ChatRequest::request_tag` by the pipeline.
pub mod stage {
    pub const PROMPT_INIT: &str = "prompt_init";
    pub const SUMMARIZE: &str = "summarize";
    pub const REFLECT: &str = "reflect";
    pub const REFINE: &str = "refine";
}

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("transport failure after {attempts} attempt(s): {message}")]
    Transport { attempts: u32, message: String },
    #[error("provider '{provider}' returned an empty response")]
    EmptyResponse { provider: String },
    #[error("transcript exhausted for tag '{tag}'")]
    TranscriptExhausted { tag: String },
    #[error("gateway configuration error: {0}")]
    Config(String),
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("provider error: {0}")]
    Provider(String),
}

impl GatewayError {
    /// Only transport failures are worth retrying.
    pub fn is_transient(&self) -> bool {
        matches!(self, GatewayError::Transport { .. })
    }
}

/// One chat-completion request, tagged with the pipeline stage it serves.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub system_text: String,
    pub user_text: String,
    pub temperature: f64,
    pub max_output_tokens: u32,
    pub request_tag: String,
}

impl ChatRequest {
    pub fn new(tag: &str, system_text: impl Into<String>, user_text: impl Into<String>) -> Self {
        ChatRequest {
            system_text: system_text.into(),
            user_text: user_text.into(),
            temperature: 0.0,
            max_output_tokens: 2048,
            request_tag: tag.to_string(),
        }
    }

    pub fn with_temperature(mut self, temperature: f64) -> Self {
        self.temperature = temperature;
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatResponse {
    pub text: String,
    pub provider_id: String,
    pub latency_ms: u64,
    pub attempt: u32,
}

/// Fixed-dimension embedding with its provider tag. Providers normalize to
/// unit length (tolerance 1e-6).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingVector {
    pub values: Vec<f32>,
    pub dim: usize,
    pub provider_id: String,
}

impl EmbeddingVector {
    /// Wrap values as-is; the caller vouches for normalization.
    pub fn new(values: Vec<f32>, provider_id: impl Into<String>) -> Self {
        let dim = values.len();
        EmbeddingVector { values, dim, provider_id: provider_id.into() }
    }

    /// Normalize to unit length. A zero vector is left untouched.
    pub fn normalized(values: Vec<f32>, provider_id: impl Into<String>) -> Self {
        let norm = values.iter().map(|v| (*v as f64).powi(2)).sum::<f64>().sqrt();
        let values = if norm > 0.0 {
            values.iter().map(|v| (*v as f64 / norm) as f32).collect()
        } else {
            values
        };
        EmbeddingVector::new(values, provider_id)
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| (*v as f64).powi(2)).sum::<f64>().sqrt()
    }

    /// Cosine similarity computed in f64 from the stored f32 components.
    pub fn cosine(&self, other: &EmbeddingVector) -> f64 {
        cosine_f32(&self.values, &other.values)
    }
}

pub fn cosine_f32(a: &[f32], b: &[f32]) -> f64 {
    let mut dot = 0.0f64;
    let mut na = 0.0f64;
    let mut nb = 0.0f64;
    for (x, y) in a.iter().zip(b.iter()) {
        let (x, y) = (*x as f64, *y as f64);
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na.sqrt() * nb.sqrt())
    }
}

/// A chat-completion backend. Returns the raw completion text; retry and
/// response assembly live in the [`Gateway`].
pub trait ChatProvider: Send + Sync {
    fn complete(&self, request: &ChatRequest) -> Result<String, GatewayError>;
    fn provider_id(&self) -> &str;
}

/// An embedding backend: one vector per input string, order-preserving.
pub trait EmbeddingProvider: Send + Sync {
    fn embed(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, GatewayError>;
    fn dim(&self) -> usize;
    fn provider_id(&self) -> &str;
}

/// Retry policy for transient failures: exponential backoff with jitter.
#[derive(Debug, Clone)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub base_delay_ms: u64,
    pub max_delay_ms: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy { max_attempts: 3, base_delay_ms: 250, max_delay_ms: 5_000 }
    }
}

impl RetryPolicy {
    /// No sleeping between attempts; used by offline runs and tests.
    pub fn immediate(max_attempts: u32) -> Self {
        RetryPolicy { max_attempts, base_delay_ms: 0, max_delay_ms: 0 }
    }

    fn backoff(&self, attempt: u32) -> Duration {
        if self.base_delay_ms == 0 {
            return Duration::ZERO;
        }
        let exp = self.base_delay_ms.saturating_mul(1u64 << (attempt - 1).min(16));
        let capped = exp.min(self.max_delay_ms).max(1);
        // Jitter in [capped/2, capped).
        let jittered = rand::thread_rng().gen_range(capped / 2..capped.max(2));
        Duration::from_millis(jittered)
    }
}

struct InFlightGate {
    cap: usize,
    count: Mutex<usize>,
    cv: Condvar,
}

struct SlotGuard<'a> {
    gate: &'a InFlightGate,
}

impl InFlightGate {
    fn acquire(&self) -> SlotGuard<'_> {
        let mut n = self.count.lock().unwrap();
        while *n >= self.cap {
            n = self.cv.wait(n).unwrap();
        }
        *n += 1;
        SlotGuard { gate: self }
    }
}

impl Drop for SlotGuard<'_> {
    fn drop(&mut self) {
        *self.gate.count.lock().unwrap() -= 1;
        self.gate.cv.notify_one();
    }
}

struct TokenBucket {
    capacity: f64,
    tokens: f64,
    refill_per_sec: f64,
    last: Instant,
}

impl TokenBucket {
    fn new(requests_per_sec: f64) -> Self {
        let capacity = requests_per_sec.max(1.0);
        TokenBucket { capacity, tokens: capacity, refill_per_sec: requests_per_sec, last: Instant::now() }
    }

    fn take(&mut self) {
        loop {
            let now = Instant::now();
            self.tokens = (self.tokens
                + now.duration_since(self.last).as_secs_f64() * self.refill_per_sec)
                .min(self.capacity);
            self.last = now;
            if self.tokens >= 1.0 {
                self.tokens -= 1.0;
                return;
            }
            let deficit = (1.0 - self.tokens) / self.refill_per_sec;
            std::thread::sleep(Duration::from_secs_f64(deficit.min(0.05)));
        }
    }
}

/// Per-stage provider bindings plus retry, concurrency, and rate policies.
/// Shareable across threads; clones are cheap handles to the same limits.
#[derive(Clone)]
pub struct Gateway {
    inner: Arc<GatewayInner>,
}

struct GatewayInner {
    chat: HashMap<String, Arc<dyn ChatProvider>>,
    embedder: Option<Arc<dyn EmbeddingProvider>>,
    retry: RetryPolicy,
    gate: Option<InFlightGate>,
    bucket: Option<Mutex<TokenBucket>>,
}

pub struct GatewayBuilder {
    chat: HashMap<String, Arc<dyn ChatProvider>>,
    embedder: Option<Arc<dyn EmbeddingProvider>>,
    retry: RetryPolicy,
    concurrency_cap: Option<usize>,
    requests_per_sec: Option<f64>,
}

impl Gateway {
    pub fn builder() -> GatewayBuilder {
        GatewayBuilder {
            chat: HashMap::new(),
            embedder: None,
            retry: RetryPolicy::default(),
            concurrency_cap: None,
            requests_per_sec: None,
        }
    }

    /// Route the request by tag, retrying transient failures up to the
    /// configured attempt limit.
    pub fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, GatewayError> {
        if request.user_text.is_empty() {
            return Err(GatewayError::InvalidRequest("user_text is empty".into()));
        }
        if request.temperature < 0.0 {
            return Err(GatewayError::InvalidRequest(format!(
                "temperature {} is negative",
                request.temperature
            )));
        }
        let provider = self.chat_provider(&request.request_tag)?;

        if let Some(bucket) = &self.inner.bucket {
            bucket.lock().unwrap().take();
        }
        let _slot = self.inner.gate.as_ref().map(|g| g.acquire());

        let mut last_message = String::new();
        for attempt in 1..=self.inner.retry.max_attempts {
            let started = Instant::now();
            match provider.complete(request) {
                Ok(text) => {
                    if text.trim().is_empty() {
                        return Err(GatewayError::EmptyResponse {
                            provider: provider.provider_id().to_string(),
                        });
                    }
                    return Ok(ChatResponse {
                        text,
                        provider_id: provider.provider_id().to_string(),
                        latency_ms: started.elapsed().as_millis() as u64,
                        attempt,
                    });
                }
                Err(err) if err.is_transient() && attempt < self.inner.retry.max_attempts => {
                    log::debug!(
                        "tag '{}' attempt {attempt} failed ({err}), retrying",
                        request.request_tag
                    );
                    last_message = err.to_string();
                    let delay = self.inner.retry.backoff(attempt);
                    if !delay.is_zero() {
                        std::thread::sleep(delay);
                    }
                }
                Err(GatewayError::Transport { message, .. }) => {
                    return Err(GatewayError::Transport {
                        attempts: self.inner.retry.max_attempts,
                        message,
                    });
                }
                Err(err) => return Err(err),
            }
        }
        Err(GatewayError::Transport {
            attempts: self.inner.retry.max_attempts,
            message: last_message,
        })
    }

    /// Embed texts through the bound provider, enforcing the configured
    /// dimension on every returned vector.
    pub fn embed(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, GatewayError> {
        if texts.is_empty() {
            return Err(GatewayError::InvalidRequest("no texts to embed".into()));
        }
        let embedder = self.embedder()?;
        if let Some(bucket) = &self.inner.bucket {
            bucket.lock().unwrap().take();
        }
        let _slot = self.inner.gate.as_ref().map(|g| g.acquire());
        let vectors = embedder.embed(texts)?;
        for v in &vectors {
            if v.dim != embedder.dim() {
                return Err(GatewayError::Config(format!(
                    "embedding dimension mismatch: provider '{}' configured for {}, returned {}",
                    embedder.provider_id(),
                    embedder.dim(),
                    v.dim
                )));
            }
        }
        Ok(vectors)
    }

    pub fn embedder(&self) -> Result<Arc<dyn EmbeddingProvider>, GatewayError> {
        self.inner
            .embedder
            .clone()
            .ok_or_else(|| GatewayError::Config("no embedding provider bound".into()))
    }

    fn chat_provider(&self, tag: &str) -> Result<Arc<dyn ChatProvider>, GatewayError> {
        self.inner
            .chat
            .get(tag)
            .or_else(|| self.inner.chat.get("*"))
            .cloned()
            .ok_or_else(|| GatewayError::Config(format!("no chat provider bound for stage '{tag}'")))
    }
}

impl GatewayBuilder {
    /// Bind a provider to one stage tag. The tag `"*"` is the fallback for
    /// stages without an explicit binding.
    pub fn bind(mut self, tag: &str, provider: Arc<dyn ChatProvider>) -> Self {
        self.chat.insert(tag.to_string(), provider);
        self
    }

    /// Bind one provider to every stage.
    pub fn bind_all(self, provider: Arc<dyn ChatProvider>) -> Self {
        self.bind("*", provider)
    }

    pub fn embedder(mut self, provider: Arc<dyn EmbeddingProvider>) -> Self {
        self.embedder = Some(provider);
        self
    }

    pub fn retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    pub fn concurrency_cap(mut self, cap: usize) -> Self {
        self.concurrency_cap = Some(cap.max(1));
        self
    }

    pub fn requests_per_sec(mut self, rps: f64) -> Self {
        self.requests_per_sec = Some(rps);
        self
    }

    pub fn build(self) -> Gateway {
        Gateway {
            inner: Arc::new(GatewayInner {
                chat: self.chat,
                embedder: self.embedder,
                retry: self.retry,
                gate: self.concurrency_cap.map(|cap| InFlightGate {
                    cap,
                    count: Mutex::new(0),
                    cv: Condvar::new(),
                }),
                bucket: self.requests_per_sec.map(|rps| Mutex::new(TokenBucket::new(rps))),
            }),
        }
    }
}
