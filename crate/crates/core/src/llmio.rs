//! Chat-completion clients: a blocking HTTP client for OpenAI-compatible endpoints and a
//! fixture-playback mock keyed by request content.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Condvar, Mutex};
use std::time::Duration;

use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

impl Role {
    pub fn as_str(self) -> &'static str {
        match self {
            Role::System => "system",
            Role::User => "user",
            Role::Assistant => "assistant",
        }
    }
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
    pub model: String,
    pub messages: Vec<ChatMessage>,
    pub temperature: f64,
    pub max_tokens: u32,
}

pub const DEFAULT_MAX_TOKENS: u32 = 2048;

impl ChatRequest {
    /// Request at temperature 0.
    pub fn new(model: impl Into<String>, messages: Vec<ChatMessage>) -> Self {
        Self { model: model.into(), messages, temperature: 0.0, max_tokens: DEFAULT_MAX_TOKENS }
    }

    pub fn validate(&self) -> Result<(), LlmError> {
        match self.messages.first() {
            None => Err(LlmError::InvalidRequest("request has no messages".into())),
            Some(m) if m.role != Role::System => {
                Err(LlmError::InvalidRequest("first message must be the system message".into()))
            }
            _ if !(self.temperature.is_finite() && self.temperature >= 0.0) => {
                Err(LlmError::InvalidRequest(format!("temperature {} must be >= 0", self.temperature)))
            }
            _ => Ok(()),
        }
    }

    /// Stable content key: SHA-256 over a canonical rendering of model and messages.
    pub fn key(&self) -> String {
        let mut hasher = Sha256::new();
        hasher.update(b"model\x1f");
        hasher.update(self.model.as_bytes());
        for m in &self.messages {
            hasher.update(b"\x1e");
            hasher.update(m.role.as_str().as_bytes());
            hasher.update(b"\x1f");
            hasher.update((m.content.len() as u64).to_le_bytes());
            hasher.update(m.content.as_bytes());
        }
        hex::encode(hasher.finalize())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FinishReason {
    Stop,
    Length,
    Error,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Usage {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatResponse {
    pub content: String,
    pub finish_reason: FinishReason,
    pub usage: Usage,
}

#[derive(Debug, Error)]
pub enum LlmError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("environment variable `{0}` holding the API key is not set")]
    MissingApiKey(String),
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("request timed out after {attempts} attempt(s)")]
    Timeout { attempts: u32 },
    #[error("endpoint returned non-retryable status {status}: {body}")]
    Status { status: u16, body: String },
    #[error("retries exhausted after {attempts} attempt(s); last failure: {last}")]
    RetriesExhausted { attempts: u32, last: String },
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("no fixture for request key {key} in {dir}")]
    MissingFixture { key: String, dir: PathBuf },
    #[error("fixture i/o on {path}: {message}")]
    Fixture { path: PathBuf, message: String },
}

impl LlmError {
    /// True for failures that stem from the network or the remote endpoint.
    pub fn is_transport(&self) -> bool {
        matches!(
            self,
            LlmError::Timeout { .. }
                | LlmError::Status { .. }
                | LlmError::RetriesExhausted { .. }
                | LlmError::Protocol(_)
        )
    }
}

/// Anything that can answer a chat-completion request.
pub trait ChatClient: Send + Sync {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, LlmError>;

    /// Model name to put in requests built for this client.
    fn model(&self) -> &str;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClientConfig {
    pub endpoint_url: String,
    pub model: String,
    pub api_key_env_name: String,
    pub timeout: Duration,
    pub max_retries: u32,
    pub max_inflight: usize,
    /// First backoff delay; later delays double, with up to 50% jitter.
    pub backoff_base: Duration,
}

impl Default for ClientConfig {
    fn default() -> Self {
        Self {
            endpoint_url: "https://api.openai.com/v1/chat/completions".into(),
            model: "gpt-4o-mini".into(),
            api_key_env_name: "OPENAI_API_KEY".into(),
            timeout: Duration::from_secs(60),
            max_retries: 3,
            max_inflight: 4,
            backoff_base: Duration::from_secs(1),
        }
    }
}

struct Semaphore {
    free: Mutex<usize>,
    cv: Condvar,
}

struct Permit<'a>(&'a Semaphore);

impl Semaphore {
    fn new(n: usize) -> Self {
        Self { free: Mutex::new(n), cv: Condvar::new() }
    }

    fn acquire(&self) -> Permit<'_> {
        let mut free = self.free.lock().unwrap_or_else(|e| e.into_inner());
        while *free == 0 {
            free = self.cv.wait(free).unwrap_or_else(|e| e.into_inner());
        }
        *free -= 1;
        Permit(self)
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.0.free.lock().unwrap_or_else(|e| e.into_inner()) += 1;
        self.0.cv.notify_one();
    }
}

/// Blocking client for an OpenAI-compatible chat-completions endpoint.
pub struct HttpClient {
    config: ClientConfig,
    api_key: String,
    agent: ureq::Agent,
    inflight: Semaphore,
}

#[derive(Deserialize)]
struct WireResponse {
    choices: Vec<WireChoice>,
    #[serde(default)]
    usage: Option<Usage>,
}

#[derive(Deserialize)]
struct WireChoice {
    message: WireMessage,
    #[serde(default)]
    finish_reason: Option<String>,
}

#[derive(Deserialize)]
struct WireMessage {
    #[serde(default)]
    content: Option<String>,
}

enum Attempt {
    Done(ChatResponse),
    Retry(String, bool),
    Fatal(LlmError),
}

impl HttpClient {
    /// Reads the API key from the configured environment variable; no network activity.
    pub fn new(config: ClientConfig) -> Result<Self, LlmError> {
        if config.timeout.is_zero() {
            return Err(LlmError::Config("timeout must be positive".into()));
        }
        if config.max_inflight == 0 {
            return Err(LlmError::Config("max_inflight must be at least 1".into()));
        }
        let api_key = std::env::var(&config.api_key_env_name)
            .ok()
            .filter(|k| !k.trim().is_empty())
            .ok_or_else(|| LlmError::MissingApiKey(config.api_key_env_name.clone()))?;
        let agent = ureq::Agent::new_with_config(
            ureq::Agent::config_builder().timeout_global(Some(config.timeout)).http_status_as_error(false).build(),
        );
        let inflight = Semaphore::new(config.max_inflight);
        Ok(Self { config, api_key, agent, inflight })
    }

    pub fn config(&self) -> &ClientConfig {
        &self.config
    }

    fn attempt(&self, request: &ChatRequest) -> Attempt {
        let _permit = self.inflight.acquire();
        let sent = self
            .agent
            .post(&self.config.endpoint_url)
            .header("Authorization", &format!("Bearer {}", self.api_key))
            .send_json(request);
        let mut response = match sent {
            Ok(r) => r,
            Err(ureq::Error::Timeout(t)) => return Attempt::Retry(format!("timeout ({t})"), true),
            Err(e) => return Attempt::Retry(format!("transport: {e}"), false),
        };
        let status = response.status().as_u16();
        let body = match response.body_mut().read_to_string() {
            Ok(b) => b,
            Err(ureq::Error::Timeout(t)) => return Attempt::Retry(format!("timeout reading body ({t})"), true),
            Err(e) => return Attempt::Retry(format!("reading body: {e}"), false),
        };
        if status == 429 || (500..600).contains(&status) {
            return Attempt::Retry(format!("status {status}"), false);
        }
        if !(200..300).contains(&status) {
            return Attempt::Fatal(LlmError::Status { status, body });
        }
        Attempt::Done(match decode_response(&body) {
            Ok(r) => r,
            Err(e) => return Attempt::Fatal(e),
        })
    }

    fn backoff(&self, retry: u32) -> Duration {
        let base = self.config.backoff_base.as_secs_f64() * 2f64.powi(retry as i32);
        let jitter: f64 = rand::rng().random_range(0.0..0.5);
        Duration::from_secs_f64(base * (1.0 + jitter))
    }
}

fn decode_response(body: &str) -> Result<ChatResponse, LlmError> {
    let wire: WireResponse =
        serde_json::from_str(body).map_err(|e| LlmError::Protocol(format!("malformed response body: {e}")))?;
    let choice = wire.choices.into_iter().next().ok_or_else(|| LlmError::Protocol("response has no choices".into()))?;
    let finish_reason = match choice.finish_reason.as_deref() {
        None | Some("stop") => FinishReason::Stop,
        Some("length") => FinishReason::Length,
        Some(_) => FinishReason::Error,
    };
    let content = match (choice.message.content, finish_reason) {
        (Some(c), _) => c,
        (None, FinishReason::Stop) => return Err(LlmError::Protocol("choice has no message content".into())),
        (None, _) => String::new(),
    };
    Ok(ChatResponse { content, finish_reason, usage: wire.usage.unwrap_or_default() })
}

impl ChatClient for HttpClient {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, LlmError> {
        request.validate()?;
        let attempts = self.config.max_retries + 1;
        let mut last = String::new();
        let mut last_was_timeout = false;
        for i in 0..attempts {
            if i > 0 {
                let delay = self.backoff(i - 1);
                log::warn!("chat request failed ({last}); retrying in {delay:?}");
                std::thread::sleep(delay);
            }
            match self.attempt(request) {
                Attempt::Done(r) => return Ok(r),
                Attempt::Fatal(e) => return Err(e),
                Attempt::Retry(why, timeout) => {
                    last = why;
                    last_was_timeout = timeout;
                }
            }
        }
        if last_was_timeout {
            Err(LlmError::Timeout { attempts })
        } else {
            Err(LlmError::RetriesExhausted { attempts, last })
        }
    }

    fn model(&self) -> &str {
        &self.config.model
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fixture {
    pub request_digest: String,
    pub content: String,
}

/// Replays stored replies keyed by [`ChatRequest::key`]. In recording mode, misses are
/// forwarded to a live client and the reply is written as a new fixture.
pub struct MockClient {
    dir: PathBuf,
    model: String,
    recorder: Option<Box<dyn ChatClient>>,
    calls: AtomicUsize,
}

pub const MOCK_MODEL: &str = "mock";

impl MockClient {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Self { dir: dir.into(), model: MOCK_MODEL.into(), recorder: None, calls: AtomicUsize::new(0) }
    }

    pub fn recording(dir: impl Into<PathBuf>, live: Box<dyn ChatClient>) -> Self {
        let model = live.model().to_string();
        Self { dir: dir.into(), model, recorder: Some(live), calls: AtomicUsize::new(0) }
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    /// Number of `complete` calls served so far.
    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    pub fn fixture_path(dir: &Path, key: &str) -> PathBuf {
        dir.join(format!("{key}.json"))
    }

    /// Stores `content` as the reply to `request`.
    pub fn write_fixture(dir: &Path, request: &ChatRequest, content: &str) -> Result<PathBuf, LlmError> {
        let key = request.key();
        let path = Self::fixture_path(dir, &key);
        let io = |e: std::io::Error| LlmError::Fixture { path: path.clone(), message: e.to_string() };
        fs::create_dir_all(dir).map_err(io)?;
        let doc = Fixture { request_digest: key.clone(), content: content.to_string() };
        let mut text = serde_json::to_string_pretty(&doc).expect("fixture serializes");
        text.push('\n');
        fs::write(&path, text).map_err(io)?;
        Ok(path)
    }

    fn load(&self, key: &str) -> Result<Option<Fixture>, LlmError> {
        let path = Self::fixture_path(&self.dir, key);
        let text = match fs::read_to_string(&path) {
            Ok(t) => t,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(None),
            Err(e) => return Err(LlmError::Fixture { path, message: e.to_string() }),
        };
        let fixture: Fixture = serde_json::from_str(&text)
            .map_err(|e| LlmError::Fixture { path: path.clone(), message: e.to_string() })?;
        if fixture.request_digest != key {
            return Err(LlmError::Fixture {
                path,
                message: format!("digest {} does not match key", fixture.request_digest),
            });
        }
        Ok(Some(fixture))
    }
}

impl ChatClient for MockClient {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, LlmError> {
        request.validate()?;
        self.calls.fetch_add(1, Ordering::SeqCst);
        let key = request.key();
        if let Some(f) = self.load(&key)? {
            return Ok(ChatResponse { content: f.content, finish_reason: FinishReason::Stop, usage: Usage::default() });
        }
        match &self.recorder {
            Some(live) => {
                let response = live.complete(request)?;
                Self::write_fixture(&self.dir, request, &response.content)?;
                Ok(response)
            }
            None => Err(LlmError::MissingFixture { key, dir: self.dir.clone() }),
        }
    }

    fn model(&self) -> &str {
        &self.model
    }
}
