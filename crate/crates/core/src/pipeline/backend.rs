//! Chat backends: a replaying mock and an HTTP client for the common
//! chat-completions wire format.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Mutex;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::jsonl::{self, JsonlError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum UserPart {
    Text { text: String },
    ImageUrl { url: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackendRequest {
    pub model_hint: String,
    pub system_text: String,
    pub user_parts: Vec<UserPart>,
    pub temperature: f64,
    pub max_output_tokens: u32,
    /// `"{sample_id}/{stage}"`; the mock replays fixtures by this key.
    pub trace_id: String,
}

impl BackendRequest {
    pub fn user_text(&self) -> String {
        self.user_parts
            .iter()
            .filter_map(|p| match p {
                UserPart::Text { text } => Some(text.as_str()),
                UserPart::ImageUrl { .. } => None,
            })
            .collect::<Vec<_>>()
            .join("\n")
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenUsage {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

impl TokenUsage {
    pub fn total(&self) -> u64 {
        self.prompt_tokens + self.completion_tokens
    }

    pub fn add(&mut self, other: TokenUsage) {
        self.prompt_tokens += other.prompt_tokens;
        self.completion_tokens += other.completion_tokens;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackendResponse {
    pub text: String,
    pub token_usage: TokenUsage,
    pub latency_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum BackendError {
    #[error("transport error: {0}")]
    Transport(String),
    #[error("http status {0}")]
    Status(u16),
    #[error("malformed response: {0}")]
    Malformed(String),
    #[error("no fixture for `{0}`")]
    NoFixture(String),
    #[error("backend interrupted")]
    Interrupted,
}

impl BackendError {
    /// Worth retrying with backoff.
    pub fn is_transient(&self) -> bool {
        match self {
            BackendError::Transport(_) => true,
            BackendError::Status(code) => *code == 429 || *code >= 500,
            _ => false,
        }
    }
}

pub trait ChatBackend: Send + Sync {
    fn complete(&self, request: &BackendRequest) -> Result<BackendResponse, BackendError>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fixture {
    pub trace_id: String,
    pub text: String,
}

#[derive(Debug, Default)]
struct MockState {
    calls: BTreeMap<String, usize>,
    failures: BTreeMap<String, usize>,
    successes: usize,
    abort_after: Option<usize>,
}

/// Replays canned responses keyed by trace id. Token usage is a word count.
#[derive(Debug, Default)]
pub struct MockBackend {
    fixtures: BTreeMap<String, String>,
    state: Mutex<MockState>,
}

fn words(text: &str) -> u64 {
    text.split_whitespace().count() as u64
}

impl MockBackend {
    pub fn new<I: IntoIterator<Item = Fixture>>(fixtures: I) -> Self {
        MockBackend {
            fixtures: fixtures.into_iter().map(|f| (f.trace_id, f.text)).collect(),
            state: Mutex::default(),
        }
    }

    pub fn from_file(path: &Path) -> Result<Self, JsonlError> {
        Ok(Self::new(jsonl::read::<Fixture>(path)?))
    }

    pub fn insert(&mut self, trace_id: &str, text: &str) {
        self.fixtures.insert(trace_id.to_string(), text.to_string());
    }

    pub fn fixture(&self, trace_id: &str) -> Option<&str> {
        self.fixtures.get(trace_id).map(String::as_str)
    }

    /// The next `n` calls for `trace_id` fail with a transport error.
    pub fn fail_next(&self, trace_id: &str, n: usize) {
        self.lock().failures.insert(trace_id.to_string(), n);
    }

    /// After `n` more successful calls every call returns `Interrupted`,
    /// as if the process had been killed.
    pub fn abort_after(&self, n: Option<usize>) {
        let mut state = self.lock();
        state.abort_after = n.map(|n| state.successes + n);
    }

    pub fn call_count(&self, trace_id: &str) -> usize {
        self.lock().calls.get(trace_id).copied().unwrap_or(0)
    }

    pub fn calls(&self) -> BTreeMap<String, usize> {
        self.lock().calls.clone()
    }

    pub fn total_calls(&self) -> usize {
        self.lock().calls.values().sum()
    }

    fn lock(&self) -> std::sync::MutexGuard<'_, MockState> {
        self.state.lock().unwrap_or_else(|e| e.into_inner())
    }
}

impl ChatBackend for MockBackend {
    fn complete(&self, request: &BackendRequest) -> Result<BackendResponse, BackendError> {
        let mut state = self.lock();
        if state.abort_after.is_some_and(|limit| state.successes >= limit) {
            return Err(BackendError::Interrupted);
        }
        *state.calls.entry(request.trace_id.clone()).or_default() += 1;
        if let Some(left) = state.failures.get_mut(&request.trace_id).filter(|n| **n > 0) {
            *left -= 1;
            return Err(BackendError::Transport("injected failure".into()));
        }
        let text = self
            .fixtures
            .get(&request.trace_id)
            .ok_or_else(|| BackendError::NoFixture(request.trace_id.clone()))?;
        state.successes += 1;
        Ok(BackendResponse {
            text: text.clone(),
            token_usage: TokenUsage {
                prompt_tokens: words(&request.system_text) + words(&request.user_text()),
                completion_tokens: words(text),
            },
            latency_ms: 0,
        })
    }
}

/// Request body in the chat-completions wire format.
pub fn to_wire(request: &BackendRequest, model: &str) -> Value {
    let content: Vec<Value> = request
        .user_parts
        .iter()
        .map(|p| match p {
            UserPart::Text { text } => json!({"type": "text", "text": text}),
            UserPart::ImageUrl { url } => json!({"type": "image_url", "image_url": {"url": url}}),
        })
        .collect();
    let mut messages = Vec::new();
    if !request.system_text.is_empty() {
        messages.push(json!({"role": "system", "content": request.system_text}));
    }
    messages.push(json!({"role": "user", "content": content}));
    json!({
        "model": model,
        "messages": messages,
        "temperature": request.temperature,
        "max_tokens": request.max_output_tokens,
    })
}

pub fn from_wire(body: &Value, latency_ms: u64) -> Result<BackendResponse, BackendError> {
    let text = body
        .pointer("/choices/0/message/content")
        .and_then(Value::as_str)
        .ok_or_else(|| BackendError::Malformed("missing choices[0].message.content".into()))?;
    let count = |key: &str| body.pointer(&format!("/usage/{key}")).and_then(Value::as_u64).unwrap_or(0);
    Ok(BackendResponse {
        text: text.to_string(),
        token_usage: TokenUsage {
            prompt_tokens: count("prompt_tokens"),
            completion_tokens: count("completion_tokens"),
        },
        latency_ms,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackendConfig {
    /// Chat-completions endpoint; `GEN_BACKEND_URL` overrides it.
    pub url: Option<String>,
    pub timeout_secs: u64,
    /// Model hint to provider model name; unmapped hints are sent as-is.
    pub models: BTreeMap<String, String>,
}

impl Default for BackendConfig {
    fn default() -> Self {
        BackendConfig {
            url: None,
            timeout_secs: 120,
            models: BTreeMap::new(),
        }
    }
}

pub struct HttpBackend {
    agent: ureq::Agent,
    url: String,
    key: Option<String>,
    models: BTreeMap<String, String>,
}

impl HttpBackend {
    /// Endpoint from `GEN_BACKEND_URL` or the config; key from `GEN_BACKEND_KEY`.
    pub fn from_env(config: &BackendConfig) -> Result<Self, BackendError> {
        let url = std::env::var("GEN_BACKEND_URL")
            .ok()
            .or_else(|| config.url.clone())
            .ok_or_else(|| BackendError::Transport("no backend url: set GEN_BACKEND_URL".into()))?;
        Ok(Self::new(&url, std::env::var("GEN_BACKEND_KEY").ok(), config))
    }

    pub fn new(url: &str, key: Option<String>, config: &BackendConfig) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(config.timeout_secs)))
            .build()
            .into();
        HttpBackend {
            agent,
            url: url.to_string(),
            key,
            models: config.models.clone(),
        }
    }
}

impl ChatBackend for HttpBackend {
    fn complete(&self, request: &BackendRequest) -> Result<BackendResponse, BackendError> {
        let model = self.models.get(&request.model_hint).unwrap_or(&request.model_hint);
        let body = to_wire(request, model);
        let start = Instant::now();
        let mut call = self.agent.post(&self.url);
        if let Some(key) = &self.key {
            call = call.header("Authorization", &format!("Bearer {key}"));
        }
        let mut response = call.send_json(&body).map_err(|e| match e {
            ureq::Error::StatusCode(code) => BackendError::Status(code),
            other => BackendError::Transport(other.to_string()),
        })?;
        let value: Value = response
            .body_mut()
            .read_json()
            .map_err(|e| BackendError::Malformed(e.to_string()))?;
        from_wire(&value, start.elapsed().as_millis() as u64)
    }
}
