//! Completion providers shared by the outer and inner loops.

use std::collections::{BTreeMap, VecDeque};
use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub const LLM_URL_ENV: &str = "NESTBROWSE_LLM_URL";
pub const LLM_KEY_ENV: &str = "NESTBROWSE_LLM_KEY";
pub const LLM_MODEL_ENV: &str = "NESTBROWSE_LLM_MODEL";

pub const OUTER_MAX_COMPLETION_TOKENS: u32 = 4096;
pub const INNER_MAX_COMPLETION_TOKENS: u32 = 8192;
pub const DEFAULT_RETRIES: u32 = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MessageRole {
    System,
    User,
    Assistant,
    Tool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Message {
    pub role: MessageRole,
    pub content: String,
}

impl Message {
    pub fn system(content: impl Into<String>) -> Self {
        Message { role: MessageRole::System, content: content.into() }
    }
    pub fn user(content: impl Into<String>) -> Self {
        Message { role: MessageRole::User, content: content.into() }
    }
    pub fn assistant(content: impl Into<String>) -> Self {
        Message { role: MessageRole::Assistant, content: content.into() }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PolicyRequest {
    pub messages: Vec<Message>,
    pub max_completion_tokens: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stop: Option<Vec<String>>,
}

impl PolicyRequest {
    pub fn new(messages: Vec<Message>, max_completion_tokens: u32) -> Self {
        PolicyRequest { messages, max_completion_tokens, stop: None }
    }

    fn check(&self) -> Result<(), PolicyError> {
        match self.messages.first() {
            None => Err(PolicyError::InvalidRequest("request has no messages".into())),
            Some(m) if m.role != MessageRole::System => {
                Err(PolicyError::InvalidRequest("first message must be the system prompt".into()))
            }
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PolicyError {
    #[error("ProviderExhausted: {0}")]
    ProviderExhausted(String),
    #[error("InvalidRequest: {0}")]
    InvalidRequest(String),
}

/// A completion provider: the agent model or the extractor.
pub trait Policy: Send + Sync {
    fn complete(&self, request: &PolicyRequest) -> Result<String, PolicyError>;
}

impl<P: Policy + ?Sized> Policy for std::sync::Arc<P> {
    fn complete(&self, request: &PolicyRequest) -> Result<String, PolicyError> {
        (**self).complete(request)
    }
}

impl<P: Policy + ?Sized> Policy for &P {
    fn complete(&self, request: &PolicyRequest) -> Result<String, PolicyError> {
        (**self).complete(request)
    }
}

impl<P: Policy + ?Sized> Policy for Box<P> {
    fn complete(&self, request: &PolicyRequest) -> Result<String, PolicyError> {
        (**self).complete(request)
    }
}

/// Stable hex digest of a request's messages.
pub fn fingerprint(request: &PolicyRequest) -> String {
    let mut h = Sha256::new();
    for m in &request.messages {
        h.update(serde_json::to_string(&m.role).expect("role serializes"));
        h.update([0u8]);
        h.update(&m.content);
        h.update([0u8]);
    }
    hex::encode(h.finalize())
}

/// Deterministic test double: plays canned completions in order, or answers
/// from a table keyed by request fingerprint.
pub struct ScriptedPolicy {
    script: Mutex<VecDeque<String>>,
    rules: BTreeMap<String, String>,
}

impl ScriptedPolicy {
    pub fn from_script<I, S>(script: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        ScriptedPolicy {
            script: Mutex::new(script.into_iter().map(Into::into).collect()),
            rules: BTreeMap::new(),
        }
    }

    pub fn from_rules(rules: BTreeMap<String, String>) -> Self {
        ScriptedPolicy { script: Mutex::new(VecDeque::new()), rules }
    }

    pub fn remaining(&self) -> usize {
        self.script.lock().expect("script lock").len()
    }
}

impl Policy for ScriptedPolicy {
    fn complete(&self, request: &PolicyRequest) -> Result<String, PolicyError> {
        request.check()?;
        if !self.rules.is_empty() {
            let fp = fingerprint(request);
            return self
                .rules
                .get(&fp)
                .cloned()
                .ok_or_else(|| PolicyError::ProviderExhausted(format!("no scripted rule for fingerprint {fp}")));
        }
        self.script
            .lock()
            .expect("script lock")
            .pop_front()
            .ok_or_else(|| PolicyError::ProviderExhausted("script exhausted".into()))
    }
}

/// Policy from a closure.
pub struct FnPolicy<F>(pub F);

impl<F> Policy for FnPolicy<F>
where
    F: Fn(&PolicyRequest) -> Result<String, PolicyError> + Send + Sync,
{
    fn complete(&self, request: &PolicyRequest) -> Result<String, PolicyError> {
        request.check()?;
        (self.0)(request)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RemoteConfig {
    /// Chat-completions URL (OpenAI-compatible).
    pub url: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub api_key: Option<String>,
    pub model: String,
    /// Passed through verbatim (temperature, top_p, ...).
    #[serde(default)]
    pub sampling: Map<String, Value>,
    #[serde(default = "default_retries")]
    pub retries: u32,
    #[serde(default = "default_backoff")]
    pub backoff_ms: u64,
    #[serde(default = "default_timeout")]
    pub timeout_ms: u64,
}

fn default_retries() -> u32 {
    DEFAULT_RETRIES
}
fn default_backoff() -> u64 {
    500
}
fn default_timeout() -> u64 {
    300_000
}

impl RemoteConfig {
    pub fn new(url: impl Into<String>, model: impl Into<String>) -> Self {
        RemoteConfig {
            url: url.into(),
            api_key: None,
            model: model.into(),
            sampling: Map::new(),
            retries: DEFAULT_RETRIES,
            backoff_ms: default_backoff(),
            timeout_ms: default_timeout(),
        }
    }

    /// From NESTBROWSE_LLM_URL / _KEY / _MODEL.
    pub fn from_env() -> Option<Self> {
        let url = std::env::var(LLM_URL_ENV).ok()?;
        let model = std::env::var(LLM_MODEL_ENV).unwrap_or_default();
        let mut c = RemoteConfig::new(url, model);
        c.api_key = std::env::var(LLM_KEY_ENV).ok();
        Some(c)
    }
}

/// HTTP chat-completion provider with retry on transient failures.
pub struct RemotePolicy {
    config: RemoteConfig,
    client: reqwest::blocking::Client,
}

enum Attempt {
    Transient(String),
    Fatal(String),
}

impl RemotePolicy {
    pub fn new(config: RemoteConfig) -> Result<Self, PolicyError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_millis(config.timeout_ms))
            .build()
            .map_err(|e| PolicyError::InvalidRequest(e.to_string()))?;
        Ok(RemotePolicy { config, client })
    }

    fn body(&self, request: &PolicyRequest) -> Value {
        let mut body = json!({
            "model": self.config.model,
            "messages": request.messages,
            "max_tokens": request.max_completion_tokens,
        });
        if let Some(stop) = &request.stop {
            body["stop"] = json!(stop);
        }
        for (k, v) in &self.config.sampling {
            body[k] = v.clone();
        }
        body
    }

    fn attempt(&self, body: &Value) -> Result<String, Attempt> {
        let mut req = self.client.post(&self.config.url).json(body);
        if let Some(key) = &self.config.api_key {
            req = req.bearer_auth(key);
        }
        let resp = req.send().map_err(|e| Attempt::Transient(e.to_string()))?;
        let status = resp.status();
        if status.as_u16() == 429 || status.is_server_error() {
            return Err(Attempt::Transient(format!("HTTP {status}")));
        }
        if !status.is_success() {
            let text = resp.text().unwrap_or_default();
            return Err(Attempt::Fatal(format!("HTTP {status}: {text}")));
        }
        let v: Value = resp.json().map_err(|e| Attempt::Transient(format!("bad response body: {e}")))?;
        v["choices"][0]["message"]["content"]
            .as_str()
            .map(str::to_string)
            .ok_or_else(|| Attempt::Fatal(format!("response has no choices[0].message.content: {v}")))
    }
}

impl Policy for RemotePolicy {
    fn complete(&self, request: &PolicyRequest) -> Result<String, PolicyError> {
        request.check()?;
        let body = self.body(request);
        let mut last = String::new();
        for attempt in 0..=self.config.retries {
            if attempt > 0 {
                std::thread::sleep(Duration::from_millis(self.config.backoff_ms << (attempt - 1)));
            }
            match self.attempt(&body) {
                Ok(text) => return Ok(text),
                Err(Attempt::Fatal(e)) => return Err(PolicyError::ProviderExhausted(e)),
                Err(Attempt::Transient(e)) => {
                    tracing::warn!(attempt, error = %e, "policy request failed");
                    last = e;
                }
            }
        }
        Err(PolicyError::ProviderExhausted(format!(
            "{} attempts failed; last error: {last}",
            self.config.retries + 1
        )))
    }
}
