//! Gateway to external text-completion services.
//!
//! Every request is built from a versioned [`PromptTemplate`] and carries an
//! idempotency key derived from the template version, the filled prompt and
//! the decoding parameters. Three backends share that key:
//!
//! - `remote`: cache first, then an HTTPS chat-completion call with bounded
//!   exponential-backoff retries, then a cache write;
//! - `mock`: canned responses from a fixture file keyed by idempotency key;
//! - `cache_only`: replay from a cache directory, erroring on a miss.
//!
//! Neither `mock` nor `cache_only` ever touches the network.

mod cache;
mod remote;
mod template;

use std::collections::HashMap;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Condvar, Mutex};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub use cache::ResponseCache;
pub use remote::{ChatRequest, HttpTransport, RemoteConfig, Transport, TransportError};
pub use template::{PromptTemplate, TemplateId};

#[derive(Debug, Error)]
pub enum LlmError {
    #[error("credential environment variable {0} is not set")]
    MissingCredential(String),
    #[error("request {key} failed after {attempts} attempt(s): {last}")]
    RetriesExhausted { key: String, attempts: u32, last: String },
    #[error("transport setup failed: {0}")]
    Transport(String),
    #[error("mock fixture has no response for key {0}")]
    MockMiss(String),
    #[error("cache has no response for key {0}")]
    CacheMiss(String),
    #[error("template error: {0}")]
    Template(String),
    #[error("cache error: {0}")]
    Cache(String),
    #[error("io error on {path}: {message}")]
    Io { path: String, message: String },
}

impl LlmError {
    pub(crate) fn io(path: &Path, e: std::io::Error) -> Self {
        LlmError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecodingParams {
    pub temperature: f64,
    pub max_tokens: u32,
}

impl Default for DecodingParams {
    fn default() -> Self {
        Self {
            temperature: 0.0,
            max_tokens: 1024,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionRequest {
    pub template_id: TemplateId,
    pub template_version: u32,
    pub prompt: String,
    pub params: DecodingParams,
    /// Re-ask counter; bumped when a response fails to parse so the retry
    /// gets its own cache slot.
    #[serde(default)]
    pub attempt: u32,
}

impl CompletionRequest {
    pub fn new(template_id: TemplateId, template_version: u32, prompt: impl Into<String>) -> Self {
        Self {
            template_id,
            template_version,
            prompt: prompt.into(),
            params: DecodingParams::default(),
            attempt: 0,
        }
    }

    /// Fills a shipped template.
    pub fn from_template(template: &PromptTemplate, vars: &[(&str, &str)]) -> Result<Self, LlmError> {
        Ok(Self::new(template.id, template.version, template.fill(vars)?))
    }

    pub fn with_attempt(mut self, attempt: u32) -> Self {
        self.attempt = attempt;
        self
    }

    /// SHA-256 over the canonical JSON of every request field.
    pub fn idempotency_key(&self) -> String {
        let canonical = serde_json::to_string(self).expect("request serializes");
        hex::encode(Sha256::digest(canonical.as_bytes()))
    }
}

/// One mock-fixture line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MockRecord {
    pub key: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub template_id: Option<String>,
    pub response: String,
}

#[derive(Debug, Clone, Default)]
pub struct MockFixture {
    responses: HashMap<String, String>,
}

impl MockFixture {
    pub fn from_records(records: impl IntoIterator<Item = MockRecord>) -> Self {
        Self {
            responses: records.into_iter().map(|r| (r.key, r.response)).collect(),
        }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, LlmError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| LlmError::io(path, e))?;
        let mut records = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let rec: MockRecord = serde_json::from_str(line)
                .map_err(|e| LlmError::Cache(format!("{}:{}: {e}", path.display(), i + 1)))?;
            records.push(rec);
        }
        Ok(Self::from_records(records))
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.responses.get(key).map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.responses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.responses.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    Remote,
    Mock,
    CacheOnly,
}

impl std::str::FromStr for BackendKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "remote" => Ok(BackendKind::Remote),
            "mock" => Ok(BackendKind::Mock),
            "cache-only" | "cache_only" => Ok(BackendKind::CacheOnly),
            other => Err(format!(
                "unknown backend {other:?} (expected remote, mock or cache-only)"
            )),
        }
    }
}

pub enum Backend {
    Remote {
        model: String,
        transport: Arc<dyn Transport>,
    },
    Mock(MockFixture),
    CacheOnly,
}

impl Backend {
    /// Builds the HTTPS backend, reading the credential from the configured
    /// environment variable.
    pub fn remote(config: &RemoteConfig) -> Result<Self, LlmError> {
        let key = std::env::var(&config.api_key_env)
            .ok()
            .filter(|k| !k.trim().is_empty())
            .ok_or_else(|| LlmError::MissingCredential(config.api_key_env.clone()))?;
        let transport = HttpTransport::new(config, key).map_err(|e| LlmError::Transport(e.message))?;
        Ok(Backend::Remote {
            model: config.model.clone(),
            transport: Arc::new(transport),
        })
    }

    pub fn kind(&self) -> BackendKind {
        match self {
            Backend::Remote { .. } => BackendKind::Remote,
            Backend::Mock(_) => BackendKind::Mock,
            Backend::CacheOnly => BackendKind::CacheOnly,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub base_delay_ms: u64,
    pub max_delay_ms: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_attempts: 5,
            base_delay_ms: 500,
            max_delay_ms: 16_000,
        }
    }
}

impl RetryPolicy {
    /// Delay before retry number `retry` (1-based).
    pub fn delay(&self, retry: u32) -> Duration {
        let factor = 1u64 << (retry.saturating_sub(1)).min(20);
        Duration::from_millis(self.base_delay_ms.saturating_mul(factor).min(self.max_delay_ms))
    }
}

/// Caps concurrent in-flight remote calls and spaces their start times.
#[derive(Debug)]
struct Throttle {
    max_inflight: usize,
    inflight: Mutex<usize>,
    freed: Condvar,
    min_interval: Duration,
    last_start: Mutex<Option<Instant>>,
}

impl Throttle {
    fn new(max_inflight: usize, min_interval: Duration) -> Self {
        Self {
            max_inflight: max_inflight.max(1),
            inflight: Mutex::new(0),
            freed: Condvar::new(),
            min_interval,
            last_start: Mutex::new(None),
        }
    }

    fn acquire(&self) -> ThrottlePermit<'_> {
        let mut n = self.inflight.lock().expect("throttle lock");
        while *n >= self.max_inflight {
            n = self.freed.wait(n).expect("throttle lock");
        }
        *n += 1;
        drop(n);
        if !self.min_interval.is_zero() {
            let mut last = self.last_start.lock().expect("throttle lock");
            if let Some(prev) = *last {
                let since = prev.elapsed();
                if since < self.min_interval {
                    std::thread::sleep(self.min_interval - since);
                }
            }
            *last = Some(Instant::now());
        }
        ThrottlePermit(self)
    }
}

struct ThrottlePermit<'a>(&'a Throttle);

impl Drop for ThrottlePermit<'_> {
    fn drop(&mut self) {
        let mut n = self.0.inflight.lock().expect("throttle lock");
        *n -= 1;
        self.0.freed.notify_one();
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClientOptions {
    pub retry: RetryPolicy,
    pub max_inflight: usize,
    pub min_interval_ms: u64,
}

impl Default for ClientOptions {
    fn default() -> Self {
        Self {
            retry: RetryPolicy::default(),
            max_inflight: 4,
            min_interval_ms: 0,
        }
    }
}

/// The single entry point for completions.
pub struct CompletionClient {
    backend: Backend,
    cache: Option<ResponseCache>,
    retry: RetryPolicy,
    throttle: Throttle,
    network_calls: AtomicUsize,
}

impl CompletionClient {
    pub fn new(backend: Backend, cache: Option<ResponseCache>, options: ClientOptions) -> Self {
        Self {
            backend,
            cache,
            retry: options.retry,
            throttle: Throttle::new(options.max_inflight, Duration::from_millis(options.min_interval_ms)),
            network_calls: AtomicUsize::new(0),
        }
    }

    pub fn mock(fixture: MockFixture) -> Self {
        Self::new(Backend::Mock(fixture), None, ClientOptions::default())
    }

    pub fn backend_kind(&self) -> BackendKind {
        self.backend.kind()
    }

    /// Number of transport calls issued so far (including failed attempts).
    pub fn network_calls(&self) -> usize {
        self.network_calls.load(Ordering::SeqCst)
    }

    pub fn cache(&self) -> Option<&ResponseCache> {
        self.cache.as_ref()
    }

    pub fn complete(&self, request: &CompletionRequest) -> Result<String, LlmError> {
        let key = request.idempotency_key();
        match &self.backend {
            Backend::Mock(fixture) => fixture.get(&key).map(str::to_string).ok_or(LlmError::MockMiss(key)),
            Backend::CacheOnly => self
                .cache
                .as_ref()
                .and_then(|c| c.get(&key))
                .ok_or(LlmError::CacheMiss(key)),
            Backend::Remote { model, transport } => {
                if let Some(hit) = self.cache.as_ref().and_then(|c| c.get(&key)) {
                    return Ok(hit);
                }
                let chat = ChatRequest {
                    model: model.clone(),
                    prompt: request.prompt.clone(),
                    temperature: request.params.temperature,
                    max_tokens: request.params.max_tokens,
                };
                let response = self.call_with_retries(&key, transport.as_ref(), &chat)?;
                if let Some(cache) = &self.cache {
                    cache.put(request, &response)?;
                }
                Ok(response)
            }
        }
    }

    fn call_with_retries(&self, key: &str, transport: &dyn Transport, chat: &ChatRequest) -> Result<String, LlmError> {
        let max = self.retry.max_attempts.max(1);
        let mut last = String::new();
        for attempt in 1..=max {
            if attempt > 1 {
                std::thread::sleep(self.retry.delay(attempt - 1));
            }
            let result = {
                let _permit = self.throttle.acquire();
                self.network_calls.fetch_add(1, Ordering::SeqCst);
                transport.chat(chat)
            };
            match result {
                Ok(text) => return Ok(text),
                Err(e) => {
                    tracing::warn!(key, attempt, error = %e.message, "completion attempt failed");
                    last = e.message;
                    if !e.retryable {
                        return Err(LlmError::RetriesExhausted {
                            key: key.to_string(),
                            attempts: attempt,
                            last,
                        });
                    }
                }
            }
        }
        Err(LlmError::RetriesExhausted {
            key: key.to_string(),
            attempts: max,
            last,
        })
    }
}
