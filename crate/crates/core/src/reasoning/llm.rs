//! Chat-completion backends: HTTP, an on-disk response cache and bounded
//! concurrent batching.

use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LlmEndpointConfig {
    /// Base URL of an OpenAI-compatible API, or `mock://<name>` for an
    /// offline backend.
    pub base_url: String,
    pub model_name: String,
    /// Environment variable holding the bearer token, if any.
    pub api_key_env: Option<String>,
    pub timeout_s: f64,
    pub max_retries: u32,
    pub backoff_ms: u64,
    pub temperature: f64,
    pub max_in_flight: usize,
}

impl Default for LlmEndpointConfig {
    fn default() -> Self {
        LlmEndpointConfig {
            base_url: "mock://rules-literal".into(),
            model_name: "gpt-4o-mini".into(),
            api_key_env: Some("OPENAI_API_KEY".into()),
            timeout_s: 30.0,
            max_retries: 3,
            backoff_ms: 200,
            temperature: 0.0,
            max_in_flight: 4,
        }
    }
}

impl LlmEndpointConfig {
    pub fn validate(&self) -> Result<(), LlmError> {
        if self.temperature != 0.0 {
            return Err(LlmError::Config(format!(
                "temperature must be 0 for reproducible runs, got {}",
                self.temperature
            )));
        }
        if self.max_in_flight == 0 {
            return Err(LlmError::Config("max_in_flight must be at least 1".into()));
        }
        if !(self.timeout_s.is_finite() && self.timeout_s > 0.0) {
            return Err(LlmError::Config(format!("invalid timeout {}", self.timeout_s)));
        }
        if self.base_url.trim().is_empty() {
            return Err(LlmError::Config("base_url is empty".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum LlmError {
    #[error("{sample_id}: request timed out")]
    Timeout { sample_id: String },
    #[error("{sample_id}: transport error: {message}")]
    Transport { sample_id: String, message: String },
    #[error("{sample_id}: rate limited after {attempts} attempts")]
    RateLimited { sample_id: String, attempts: u32 },
    #[error("{sample_id}: HTTP {status}: {body}")]
    Http {
        sample_id: String,
        status: u16,
        body: String,
    },
    #[error("{sample_id}: malformed response: {message}")]
    BadResponse { sample_id: String, message: String },
    #[error("LLM configuration error: {0}")]
    Config(String),
}

impl LlmError {
    /// Short code recorded as a prediction's fallback reason.
    pub fn reason_code(&self) -> &'static str {
        match self {
            LlmError::Timeout { .. } => "timeout",
            LlmError::Transport { .. } => "transport",
            LlmError::RateLimited { .. } => "rate_limited",
            LlmError::Http { .. } => "http_status",
            LlmError::BadResponse { .. } => "bad_response",
            LlmError::Config(_) => "config",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LlmRequest {
    pub sample_id: String,
    pub prompt: String,
}

impl LlmRequest {
    pub fn new(sample_id: impl Into<String>, prompt: impl Into<String>) -> Self {
        LlmRequest {
            sample_id: sample_id.into(),
            prompt: prompt.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LlmReply {
    pub text: String,
    pub attempts: u32,
    pub cached: bool,
}

pub trait ChatBackend: Send + Sync {
    fn model_name(&self) -> &str;
    fn complete(&self, req: &LlmRequest) -> Result<LlmReply, LlmError>;
}

impl<B: ChatBackend + ?Sized> ChatBackend for Box<B> {
    fn model_name(&self) -> &str {
        (**self).model_name()
    }
    fn complete(&self, req: &LlmRequest) -> Result<LlmReply, LlmError> {
        (**self).complete(req)
    }
}

impl<B: ChatBackend + ?Sized> ChatBackend for &B {
    fn model_name(&self) -> &str {
        (**self).model_name()
    }
    fn complete(&self, req: &LlmRequest) -> Result<LlmReply, LlmError> {
        (**self).complete(req)
    }
}

const SYSTEM_MESSAGE: &str = "You label the emotion of speech utterances. Follow the requested answer format exactly.";

/// Client for `POST {base_url}/chat/completions`.
///
/// Transport failures, 5xx and 429 are retried with exponential backoff up
/// to `max_retries` extra attempts. A timeout ends the request at once.
pub struct HttpChatBackend {
    client: reqwest::blocking::Client,
    url: String,
    cfg: LlmEndpointConfig,
    api_key: Option<String>,
}

impl HttpChatBackend {
    pub fn new(cfg: &LlmEndpointConfig) -> Result<Self, LlmError> {
        cfg.validate()?;
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs_f64(cfg.timeout_s))
            .build()
            .map_err(|e| LlmError::Config(e.to_string()))?;
        let api_key = cfg.api_key_env.as_deref().and_then(|k| std::env::var(k).ok());
        Ok(HttpChatBackend {
            client,
            url: format!("{}/chat/completions", cfg.base_url.trim_end_matches('/')),
            cfg: cfg.clone(),
            api_key,
        })
    }

    fn body(&self, prompt: &str) -> serde_json::Value {
        serde_json::json!({
            "model": self.cfg.model_name,
            "temperature": self.cfg.temperature,
            "messages": [
                {"role": "system", "content": SYSTEM_MESSAGE},
                {"role": "user", "content": prompt},
            ],
        })
    }
}

enum Attempt {
    Done(String),
    Retry(LlmError),
    Fail(LlmError),
}

impl HttpChatBackend {
    fn attempt(&self, req: &LlmRequest, attempts: u32) -> Attempt {
        let sample_id = req.sample_id.clone();
        let mut builder = self.client.post(&self.url).json(&self.body(&req.prompt));
        if let Some(key) = &self.api_key {
            builder = builder.bearer_auth(key);
        }
        let resp = match builder.send() {
            Ok(r) => r,
            Err(e) if e.is_timeout() => return Attempt::Fail(LlmError::Timeout { sample_id }),
            Err(e) => {
                return Attempt::Retry(LlmError::Transport {
                    sample_id,
                    message: e.to_string(),
                })
            }
        };
        let status = resp.status();
        let text = match resp.text() {
            Ok(t) => t,
            Err(e) if e.is_timeout() => return Attempt::Fail(LlmError::Timeout { sample_id }),
            Err(e) => {
                return Attempt::Retry(LlmError::Transport {
                    sample_id,
                    message: e.to_string(),
                })
            }
        };
        if status.as_u16() == 429 {
            return Attempt::Retry(LlmError::RateLimited { sample_id, attempts });
        }
        if !status.is_success() {
            let err = LlmError::Http {
                sample_id,
                status: status.as_u16(),
                body: text.chars().take(200).collect(),
            };
            return if status.is_server_error() {
                Attempt::Retry(err)
            } else {
                Attempt::Fail(err)
            };
        }
        match extract_content(&text) {
            Some(c) => Attempt::Done(c),
            None => Attempt::Fail(LlmError::BadResponse {
                sample_id,
                message: "no choices[0].message.content".into(),
            }),
        }
    }
}

fn extract_content(body: &str) -> Option<String> {
    let v: serde_json::Value = serde_json::from_str(body).ok()?;
    v.get("choices")?
        .get(0)?
        .get("message")?
        .get("content")?
        .as_str()
        .map(str::to_string)
}

impl ChatBackend for HttpChatBackend {
    fn model_name(&self) -> &str {
        &self.cfg.model_name
    }

    fn complete(&self, req: &LlmRequest) -> Result<LlmReply, LlmError> {
        let mut attempts = 0;
        loop {
            attempts += 1;
            match self.attempt(req, attempts) {
                Attempt::Done(text) => {
                    return Ok(LlmReply {
                        text,
                        attempts,
                        cached: false,
                    })
                }
                Attempt::Fail(e) => return Err(e),
                Attempt::Retry(e) => {
                    if attempts > self.cfg.max_retries {
                        return Err(e);
                    }
                    let delay = self.cfg.backoff_ms.saturating_mul(1 << (attempts - 1).min(16));
                    log::debug!(
                        "{}: attempt {attempts} failed ({e}), retrying in {delay} ms",
                        req.sample_id
                    );
                    std::thread::sleep(Duration::from_millis(delay));
                }
            }
        }
    }
}

/// Content-addressed key of a prompt under a given model.
pub fn cache_key(model: &str, prompt: &str) -> String {
    let mut h = Sha256::new();
    h.update(model.as_bytes());
    h.update(b"\n");
    h.update(prompt.as_bytes());
    hex::encode(h.finalize())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CacheRecord {
    pub model: String,
    pub prompt: String,
    pub response: String,
}

/// Stores successful responses as `<dir>/<key>.json`; repeated prompts are
/// served from disk without touching the inner backend.
pub struct CachedBackend<B> {
    inner: B,
    dir: PathBuf,
    hits: AtomicUsize,
    misses: AtomicUsize,
    write_lock: Mutex<()>,
}

impl<B: ChatBackend> CachedBackend<B> {
    pub fn new(inner: B, dir: impl Into<PathBuf>) -> std::io::Result<Self> {
        let dir = dir.into();
        std::fs::create_dir_all(&dir)?;
        Ok(CachedBackend {
            inner,
            dir,
            hits: AtomicUsize::new(0),
            misses: AtomicUsize::new(0),
            write_lock: Mutex::new(()),
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn hits(&self) -> usize {
        self.hits.load(Ordering::Relaxed)
    }

    pub fn misses(&self) -> usize {
        self.misses.load(Ordering::Relaxed)
    }

    fn path_for(&self, key: &str) -> PathBuf {
        self.dir.join(format!("{key}.json"))
    }

    /// Cached exchange for a prompt, if any.
    pub fn lookup(&self, prompt: &str) -> Option<CacheRecord> {
        let key = cache_key(self.inner.model_name(), prompt);
        let text = std::fs::read_to_string(self.path_for(&key)).ok()?;
        let rec: CacheRecord = serde_json::from_str(&text).ok()?;
        (rec.prompt == prompt && rec.model == self.inner.model_name()).then_some(rec)
    }

    fn store(&self, prompt: &str, response: &str) -> std::io::Result<()> {
        let key = cache_key(self.inner.model_name(), prompt);
        let rec = CacheRecord {
            model: self.inner.model_name().to_string(),
            prompt: prompt.to_string(),
            response: response.to_string(),
        };
        let json = serde_json::to_string_pretty(&rec).map_err(std::io::Error::other)?;
        let _guard = self.write_lock.lock().unwrap_or_else(|p| p.into_inner());
        let tmp = self.dir.join(format!(".{key}.tmp"));
        std::fs::write(&tmp, json)?;
        std::fs::rename(tmp, self.path_for(&key))
    }
}

impl<B: ChatBackend> ChatBackend for CachedBackend<B> {
    fn model_name(&self) -> &str {
        self.inner.model_name()
    }

    fn complete(&self, req: &LlmRequest) -> Result<LlmReply, LlmError> {
        if let Some(rec) = self.lookup(&req.prompt) {
            self.hits.fetch_add(1, Ordering::Relaxed);
            return Ok(LlmReply {
                text: rec.response,
                attempts: 0,
                cached: true,
            });
        }
        self.misses.fetch_add(1, Ordering::Relaxed);
        let reply = self.inner.complete(req)?;
        if let Err(e) = self.store(&req.prompt, &reply.text) {
            log::warn!("could not cache response for {}: {e}", req.sample_id);
        }
        Ok(reply)
    }
}

/// Runs `requests` through `backend` with at most `max_in_flight` calls
/// outstanding. Results come back in input order.
pub fn query_batch<B: ChatBackend + ?Sized>(
    backend: &B,
    requests: &[LlmRequest],
    max_in_flight: usize,
) -> Vec<Result<LlmReply, LlmError>> {
    query_batch_timed(backend, requests, max_in_flight)
        .into_iter()
        .map(|(r, _)| r)
        .collect()
}

pub type TimedReply = (Result<LlmReply, LlmError>, Duration);

/// [`query_batch`] that also reports the wall time of each call.
pub fn query_batch_timed<B: ChatBackend + ?Sized>(
    backend: &B,
    requests: &[LlmRequest],
    max_in_flight: usize,
) -> Vec<TimedReply> {
    let timed = |r: &LlmRequest| {
        let start = std::time::Instant::now();
        let out = backend.complete(r);
        (out, start.elapsed())
    };
    let workers = max_in_flight.max(1).min(requests.len());
    if workers <= 1 {
        return requests.iter().map(timed).collect();
    }
    let next = AtomicUsize::new(0);
    let slots: Vec<Mutex<Option<TimedReply>>> = requests.iter().map(|_| Mutex::new(None)).collect();
    std::thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= requests.len() {
                    break;
                }
                let r = timed(&requests[i]);
                *slots[i].lock().unwrap() = Some(r);
            });
        }
    });
    slots
        .into_iter()
        .map(|m| m.into_inner().unwrap().expect("every slot is filled"))
        .collect()
}

/// One-off query against the configured HTTP endpoint.
pub fn query_llm(prompt: &str, cfg: &LlmEndpointConfig) -> Result<LlmReply, LlmError> {
    HttpChatBackend::new(cfg)?.complete(&LlmRequest::new("query", prompt))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::atomic::AtomicUsize;

    struct Echo {
        calls: AtomicUsize,
        in_flight: AtomicUsize,
        peak: AtomicUsize,
    }

    impl Echo {
        fn new() -> Self {
            Echo {
                calls: AtomicUsize::new(0),
                in_flight: AtomicUsize::new(0),
                peak: AtomicUsize::new(0),
            }
        }
    }

    impl ChatBackend for Echo {
        fn model_name(&self) -> &str {
            "echo"
        }
        fn complete(&self, req: &LlmRequest) -> Result<LlmReply, LlmError> {
            self.calls.fetch_add(1, Ordering::SeqCst);
            let now = self.in_flight.fetch_add(1, Ordering::SeqCst) + 1;
            self.peak.fetch_max(now, Ordering::SeqCst);
            std::thread::sleep(Duration::from_millis(5));
            self.in_flight.fetch_sub(1, Ordering::SeqCst);
            Ok(LlmReply {
                text: format!("reply to {}", req.sample_id),
                attempts: 1,
                cached: false,
            })
        }
    }

    #[test]
    fn batch_keeps_order_and_bounds_concurrency() {
        let backend = Echo::new();
        let reqs: Vec<_> = (0..20).map(|i| LlmRequest::new(format!("s{i}"), "p")).collect();
        let out = query_batch(&backend, &reqs, 3);
        for (i, r) in out.iter().enumerate() {
            assert_eq!(r.as_ref().unwrap().text, format!("reply to s{i}"));
        }
        assert!(backend.peak.load(Ordering::SeqCst) <= 3);
    }

    #[test]
    fn cache_serves_repeats() {
        let dir = tempfile::tempdir().unwrap();
        let cached = CachedBackend::new(Echo::new(), dir.path()).unwrap();
        let a = cached.complete(&LlmRequest::new("a", "same prompt")).unwrap();
        let b = cached.complete(&LlmRequest::new("b", "same prompt")).unwrap();
        assert!(!a.cached && b.cached);
        assert_eq!(a.text, b.text);
        assert_eq!(cached.inner.calls.load(Ordering::SeqCst), 1);
        assert_eq!((cached.hits(), cached.misses()), (1, 1));
        assert_eq!(cached.lookup("same prompt").unwrap().response, "reply to a");
    }

    #[test]
    fn cache_key_depends_on_model() {
        assert_ne!(cache_key("m1", "p"), cache_key("m2", "p"));
        assert_eq!(cache_key("m1", "p").len(), 64);
    }

    #[test]
    fn nonzero_temperature_rejected() {
        let cfg = LlmEndpointConfig {
            temperature: 0.7,
            ..Default::default()
        };
        assert!(matches!(cfg.validate(), Err(LlmError::Config(_))));
    }

    #[test]
    fn content_extraction() {
        let body = r#"{"choices":[{"message":{"role":"assistant","content":"LABEL: calm"}}]}"#;
        assert_eq!(extract_content(body).as_deref(), Some("LABEL: calm"));
        assert_eq!(extract_content("{}"), None);
    }
}
