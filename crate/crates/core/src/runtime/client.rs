use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Mutex;
use std::time::Duration;

use base64::Engine;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{Author, Message, Part, Role, RoleConfig};

/// Environment variable holding the bearer token for HTTP endpoints.
pub const TOKEN_ENV: &str = "GUIAGENT_API_TOKEN";

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ModelError {
    #[error("model unavailable: {0}")]
    Unavailable(String),
    #[error("model call timed out after {0:?}")]
    Timeout(Duration),
    #[error("cannot read image {path}: {reason}")]
    Image { path: String, reason: String },
}

/// Raw model text plus how many transport retries it took.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Completion {
    pub text: String,
    pub retry_count: u32,
}

/// Anything that turns a message list into model text. Shared across
/// threads by batch runners.
pub trait ModelClient: Send + Sync {
    fn complete(&self, role: &RoleConfig, messages: &[Message]) -> Result<Completion, ModelError>;
}

impl<T: ModelClient + ?Sized> ModelClient for &T {
    fn complete(&self, role: &RoleConfig, messages: &[Message]) -> Result<Completion, ModelError> {
        (**self).complete(role, messages)
    }
}

impl<T: ModelClient + ?Sized> ModelClient for std::sync::Arc<T> {
    fn complete(&self, role: &RoleConfig, messages: &[Message]) -> Result<Completion, ModelError> {
        (**self).complete(role, messages)
    }
}

// ---------------------------------------------------------------------------
// Scripted model
// ---------------------------------------------------------------------------

#[derive(Debug, Default, Deserialize)]
struct ScriptFile {
    replies: BTreeMap<Role, Vec<String>>,
    #[serde(default)]
    cycle: bool,
}

/// Replays canned replies from one queue per role.
///
/// JSON form: `{"replies": {"executor": ["...", "..."]}, "cycle": false}`.
/// With `cycle` set, an exhausted queue starts over; otherwise it reports the
/// model as unavailable.
#[derive(Debug, Default)]
pub struct ScriptedModel {
    queues: Mutex<BTreeMap<Role, (Vec<String>, usize)>>,
    cycle: bool,
}

impl ScriptedModel {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_replies<I, S>(self, role: Role, replies: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        self.queues
            .lock()
            .unwrap()
            .insert(role, (replies.into_iter().map(Into::into).collect(), 0));
        self
    }

    pub fn cycling(mut self, cycle: bool) -> Self {
        self.cycle = cycle;
        self
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        let file: ScriptFile = serde_json::from_str(text)?;
        Ok(Self {
            queues: Mutex::new(file.replies.into_iter().map(|(r, q)| (r, (q, 0))).collect()),
            cycle: file.cycle,
        })
    }

    /// Replies not yet handed out for `role`.
    pub fn remaining(&self, role: Role) -> usize {
        self.queues
            .lock()
            .unwrap()
            .get(&role)
            .map_or(0, |(q, i)| q.len().saturating_sub(*i))
    }
}

impl ModelClient for ScriptedModel {
    fn complete(&self, role: &RoleConfig, _messages: &[Message]) -> Result<Completion, ModelError> {
        let mut queues = self.queues.lock().unwrap();
        let exhausted = || ModelError::Unavailable(format!("no scripted reply left for role {}", role.role.as_str()));
        let (queue, next) = queues.get_mut(&role.role).ok_or_else(exhausted)?;
        if *next >= queue.len() {
            if !self.cycle || queue.is_empty() {
                return Err(exhausted());
            }
            *next = 0;
        }
        let text = queue[*next].clone();
        *next += 1;
        Ok(Completion { text, retry_count: 0 })
    }
}

// ---------------------------------------------------------------------------
// Recording wrapper
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
pub struct RecordedCall {
    pub role: Role,
    pub messages: Vec<Message>,
    pub reply: Result<String, String>,
}

/// Forwards to an inner client and keeps every request and reply.
#[derive(Debug)]
pub struct RecordingClient<C> {
    inner: C,
    calls: Mutex<Vec<RecordedCall>>,
}

impl<C: ModelClient> RecordingClient<C> {
    pub fn new(inner: C) -> Self {
        Self {
            inner,
            calls: Mutex::new(Vec::new()),
        }
    }

    pub fn calls(&self) -> Vec<RecordedCall> {
        self.calls.lock().unwrap().clone()
    }

    pub fn into_inner(self) -> C {
        self.inner
    }
}

impl<C: ModelClient> ModelClient for RecordingClient<C> {
    fn complete(&self, role: &RoleConfig, messages: &[Message]) -> Result<Completion, ModelError> {
        let result = self.inner.complete(role, messages);
        self.calls.lock().unwrap().push(RecordedCall {
            role: role.role,
            messages: messages.to_vec(),
            reply: result.as_ref().map(|c| c.text.clone()).map_err(ToString::to_string),
        });
        result
    }
}

// ---------------------------------------------------------------------------
// HTTP client
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HttpConfig {
    /// Full chat-completions URL.
    pub endpoint: String,
    pub model: String,
    /// Bearer token. Falls back to `GUIAGENT_API_TOKEN` when unset.
    #[serde(skip_serializing)]
    pub token: Option<String>,
    pub timeout_ms: u64,
    pub max_tries: u32,
    pub backoff_ms: u64,
}

impl Default for HttpConfig {
    fn default() -> Self {
        Self {
            endpoint: String::new(),
            model: "default".into(),
            token: None,
            timeout_ms: 120_000,
            max_tries: 3,
            backoff_ms: 250,
        }
    }
}

/// OpenAI-style chat-completions client. Images are sent inline as base64
/// PNG data URLs. Transport failures, 429 and 5xx responses are retried with
/// exponential backoff; a timeout is returned immediately.
pub struct HttpModelClient {
    cfg: HttpConfig,
    agent: ureq::Agent,
}

enum Attempt {
    Done(String),
    Transient(String),
    Fatal(ModelError),
}

impl HttpModelClient {
    pub fn new(mut cfg: HttpConfig) -> Self {
        if cfg.token.is_none() {
            cfg.token = std::env::var(TOKEN_ENV).ok().filter(|t| !t.is_empty());
        }
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_millis(cfg.timeout_ms)))
            .http_status_as_error(false)
            .build()
            .into();
        Self { cfg, agent }
    }

    pub fn config(&self) -> &HttpConfig {
        &self.cfg
    }

    fn request_body(&self, role: &RoleConfig, messages: &[Message]) -> Result<Value, ModelError> {
        let messages = messages.iter().map(wire_message).collect::<Result<Vec<_>, _>>()?;
        Ok(json!({
            "model": self.cfg.model,
            "temperature": role.temperature,
            "max_tokens": role.max_output_units,
            "messages": messages,
        }))
    }

    fn attempt(&self, body: &Value) -> Attempt {
        let mut req = self.agent.post(&self.cfg.endpoint);
        if let Some(token) = &self.cfg.token {
            req = req.header("Authorization", &format!("Bearer {token}"));
        }
        match req.send_json(body) {
            Ok(mut resp) => {
                let status = resp.status().as_u16();
                if status == 429 || status >= 500 {
                    return Attempt::Transient(format!("HTTP {status}"));
                }
                if !(200..300).contains(&status) {
                    let detail = resp.body_mut().read_to_string().unwrap_or_default();
                    return Attempt::Fatal(ModelError::Unavailable(format!("HTTP {status}: {detail}")));
                }
                match resp.body_mut().read_json::<Value>() {
                    Ok(v) => match reply_text(&v) {
                        Some(text) => Attempt::Done(text),
                        None => {
                            Attempt::Fatal(ModelError::Unavailable(format!("response has no message content: {v}")))
                        }
                    },
                    Err(e) => self.classify(e),
                }
            }
            Err(e) => self.classify(e),
        }
    }

    fn classify(&self, e: ureq::Error) -> Attempt {
        match e {
            ureq::Error::Timeout(_) => Attempt::Fatal(ModelError::Timeout(Duration::from_millis(self.cfg.timeout_ms))),
            ureq::Error::Io(ref io) if io.kind() == std::io::ErrorKind::TimedOut => {
                Attempt::Fatal(ModelError::Timeout(Duration::from_millis(self.cfg.timeout_ms)))
            }
            ureq::Error::Io(_)
            | ureq::Error::ConnectionFailed
            | ureq::Error::HostNotFound
            | ureq::Error::Protocol(_) => Attempt::Transient(e.to_string()),
            other => Attempt::Fatal(ModelError::Unavailable(other.to_string())),
        }
    }
}

impl ModelClient for HttpModelClient {
    fn complete(&self, role: &RoleConfig, messages: &[Message]) -> Result<Completion, ModelError> {
        let body = self.request_body(role, messages)?;
        let tries = self.cfg.max_tries.max(1);
        let mut last = String::new();
        for attempt in 0..tries {
            match self.attempt(&body) {
                Attempt::Done(text) => {
                    return Ok(Completion {
                        text,
                        retry_count: attempt,
                    })
                }
                Attempt::Fatal(e) => return Err(e),
                Attempt::Transient(reason) => {
                    log::warn!("{} call attempt {} failed: {reason}", role.role.as_str(), attempt + 1);
                    last = reason;
                    if attempt + 1 < tries {
                        std::thread::sleep(Duration::from_millis(self.cfg.backoff_ms << attempt));
                    }
                }
            }
        }
        Err(ModelError::Unavailable(format!("gave up after {tries} tries: {last}")))
    }
}

fn wire_message(m: &Message) -> Result<Value, ModelError> {
    let role = match m.author {
        Author::System => "system",
        Author::User => "user",
        Author::Assistant => "assistant",
    };
    let content = m
        .parts
        .iter()
        .map(|p| match p {
            Part::Text { text } => Ok(json!({"type": "text", "text": text})),
            Part::Image { path } => Ok(json!({
                "type": "image_url",
                "image_url": {"url": data_url(path)?},
            })),
        })
        .collect::<Result<Vec<_>, ModelError>>()?;
    Ok(json!({"role": role, "content": content}))
}

fn data_url(path: &Path) -> Result<String, ModelError> {
    let bytes = std::fs::read(path).map_err(|e| ModelError::Image {
        path: path.display().to_string(),
        reason: e.to_string(),
    })?;
    Ok(format!(
        "data:image/png;base64,{}",
        base64::engine::general_purpose::STANDARD.encode(bytes)
    ))
}

/// `choices[0].message.content`, either a string or a list of text parts.
fn reply_text(v: &Value) -> Option<String> {
    let content = v.get("choices")?.get(0)?.get("message")?.get("content")?;
    match content {
        Value::String(s) => Some(s.clone()),
        Value::Array(parts) => Some(
            parts
                .iter()
                .filter_map(|p| p.get("text").and_then(Value::as_str))
                .collect::<Vec<_>>()
                .join(""),
        ),
        _ => None,
    }
}
