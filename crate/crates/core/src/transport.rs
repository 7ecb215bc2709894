//! JSON-over-HTTP transport with record/replay cassettes.
//!
//! Remote backends talk to `POST <url>` with a JSON body. In tests they run against a
//! [`CassetteTransport`] in replay mode, which never touches the network: interactions are looked
//! up by a SHA-256 of the URL and canonical request body, and repeated identical requests consume
//! their recorded responses in order.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Duration;

use base64::Engine;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const CASSETTE_VERSION: u32 = 1;

/// Where and how to reach a remote model endpoint.
#[derive(Debug, Clone, PartialEq)]
pub struct EndpointConfig {
    pub url: String,
    pub api_key: Option<String>,
    pub model: String,
    pub temperature: f64,
    pub timeout: Duration,
}

impl EndpointConfig {
    pub fn new(url: impl Into<String>, model: impl Into<String>) -> Self {
        Self {
            url: url.into(),
            api_key: None,
            model: model.into(),
            temperature: 1.0,
            timeout: Duration::from_secs(120),
        }
    }

    pub fn with_key(mut self, key: impl Into<String>) -> Self {
        self.api_key = Some(key.into());
        self
    }

    /// Read `<PREFIX>_API_URL`, `<PREFIX>_API_KEY` and `<PREFIX>_MODEL`.
    pub fn from_env(prefix: &str) -> Result<Self> {
        Self::from_lookup(prefix, |k| std::env::var(k).ok())
    }

    pub fn from_lookup(prefix: &str, lookup: impl Fn(&str) -> Option<String>) -> Result<Self> {
        let url_var = format!("{prefix}_API_URL");
        let key_var = format!("{prefix}_API_KEY");
        // credentials are checked first so that an unconfigured backend reports an auth failure
        let key = lookup(&key_var)
            .filter(|s| !s.is_empty())
            .ok_or_else(|| Error::Auth(format!("{key_var} is not set")))?;
        let url = lookup(&url_var)
            .filter(|s| !s.is_empty())
            .ok_or_else(|| Error::Transport(format!("{url_var} is not set")))?;
        let model = lookup(&format!("{prefix}_MODEL")).unwrap_or_else(|| "default".into());
        Ok(Self::new(url, model).with_key(key))
    }
}

pub trait Transport: Send {
    fn post_json(&mut self, url: &str, api_key: Option<&str>, body: &Value) -> Result<Value>;
}

/// Live HTTP transport.
pub struct HttpTransport {
    agent: ureq::Agent,
}

impl HttpTransport {
    pub fn new(timeout: Duration) -> Self {
        Self {
            agent: ureq::AgentBuilder::new().timeout(timeout).build(),
        }
    }
}

impl Transport for HttpTransport {
    fn post_json(&mut self, url: &str, api_key: Option<&str>, body: &Value) -> Result<Value> {
        let mut req = self.agent.post(url).set("Content-Type", "application/json");
        if let Some(key) = api_key {
            req = req.set("Authorization", &format!("Bearer {key}"));
        }
        match req.send_json(body) {
            Ok(resp) => resp
                .into_json::<Value>()
                .map_err(|e| Error::Transport(format!("{url}: unreadable response body: {e}"))),
            Err(ureq::Error::Status(code @ (401 | 403), _)) => Err(Error::Auth(format!("{url} answered {code}"))),
            Err(ureq::Error::Status(code, resp)) => {
                let text = resp.into_string().unwrap_or_default();
                Err(Error::Transport(format!("{url} answered {code}: {text}")))
            }
            Err(ureq::Error::Transport(t)) => Err(Error::Transport(format!("{url}: {t}"))),
        }
    }
}

/// Stable key for a request: hex SHA-256 of the URL and the canonical (key-sorted) body.
pub fn request_key(url: &str, body: &Value) -> String {
    let mut h = Sha256::new();
    h.update(url.as_bytes());
    h.update(b"\n");
    h.update(serde_json::to_string(body).expect("JSON value serializes").as_bytes());
    hex::encode(h.finalize())
}

/// Copy of a request body with base64 image payloads replaced by their digests.
fn redact_images(body: &Value) -> Value {
    match body {
        Value::Object(map) => Value::Object(
            map.iter()
                .map(|(k, v)| {
                    let v = match (k.as_str(), v) {
                        ("images" | "image", Value::Array(items)) => {
                            Value::Array(items.iter().map(digest_string).collect())
                        }
                        ("images" | "image", s @ Value::String(_)) => digest_string(s),
                        _ => redact_images(v),
                    };
                    (k.clone(), v)
                })
                .collect(),
        ),
        Value::Array(items) => Value::Array(items.iter().map(redact_images).collect()),
        other => other.clone(),
    }
}

fn digest_string(v: &Value) -> Value {
    match v.as_str() {
        Some(s) => Value::String(format!("sha256:{}", hex::encode(Sha256::digest(s.as_bytes())))),
        None => v.clone(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Interaction {
    pub key: String,
    pub url: String,
    /// Request body with image payloads replaced by digests.
    pub request: Value,
    pub response: Value,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cassette {
    pub version: u32,
    pub interactions: Vec<Interaction>,
}

impl Default for Cassette {
    fn default() -> Self {
        Self {
            version: CASSETTE_VERSION,
            interactions: Vec::new(),
        }
    }
}

impl Cassette {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cassette: Cassette = serde_json::from_str(&text)?;
        if cassette.version != CASSETTE_VERSION {
            return Err(Error::Config(format!(
                "{}: cassette version {} unsupported",
                path.display(),
                cassette.version
            )));
        }
        Ok(cassette)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        let text = serde_json::to_string_pretty(self)? + "\n";
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    /// Append an interaction for `body` posted to `url`.
    pub fn push(&mut self, url: &str, body: &Value, response: Value) {
        self.interactions.push(Interaction {
            key: request_key(url, body),
            url: url.to_string(),
            request: redact_images(body),
            response,
        });
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CassetteMode {
    /// Serve recorded responses only; a miss is a transport error.
    Replay,
    /// Forward to the inner transport and append every interaction.
    Record,
}

pub struct CassetteTransport {
    mode: CassetteMode,
    cassette: Cassette,
    path: Option<PathBuf>,
    inner: Option<Box<dyn Transport>>,
    consumed: HashMap<String, usize>,
}

impl CassetteTransport {
    pub fn replay(cassette: Cassette) -> Self {
        Self {
            mode: CassetteMode::Replay,
            cassette,
            path: None,
            inner: None,
            consumed: HashMap::new(),
        }
    }

    pub fn replay_file(path: &Path) -> Result<Self> {
        Ok(Self::replay(Cassette::load(path)?))
    }

    /// Record through `inner`, rewriting `path` after every interaction.
    pub fn record(path: impl Into<PathBuf>, inner: Box<dyn Transport>) -> Self {
        Self {
            mode: CassetteMode::Record,
            cassette: Cassette::default(),
            path: Some(path.into()),
            inner: Some(inner),
            consumed: HashMap::new(),
        }
    }

    pub fn cassette(&self) -> &Cassette {
        &self.cassette
    }
}

impl Transport for CassetteTransport {
    fn post_json(&mut self, url: &str, api_key: Option<&str>, body: &Value) -> Result<Value> {
        match self.mode {
            CassetteMode::Replay => {
                let key = request_key(url, body);
                let used = self.consumed.entry(key.clone()).or_default();
                let hit = self.cassette.interactions.iter().filter(|i| i.key == key).nth(*used);
                match hit {
                    Some(i) => {
                        *used += 1;
                        response_or_error(&i.response)
                    }
                    None => Err(Error::Transport(format!(
                        "cassette has no recorded interaction #{} for request {key}",
                        *used + 1
                    ))),
                }
            }
            CassetteMode::Record => {
                let inner = self.inner.as_mut().expect("record mode has an inner transport");
                let result = inner.post_json(url, api_key, body);
                let recorded = match &result {
                    Ok(v) => v.clone(),
                    Err(Error::Auth(m)) => json!({"__error": {"kind": "auth", "message": m}}),
                    Err(e) => json!({"__error": {"kind": "transport", "message": e.to_string()}}),
                };
                self.cassette.push(url, body, recorded);
                if let Some(path) = &self.path {
                    self.cassette.save(path)?;
                }
                result
            }
        }
    }
}

/// Recorded failures are stored as `{"__error": {"kind", "message"}}` and replayed as errors.
fn response_or_error(v: &Value) -> Result<Value> {
    match v.get("__error") {
        Some(e) => {
            let msg = e.get("message").and_then(Value::as_str).unwrap_or("recorded error").to_string();
            match e.get("kind").and_then(Value::as_str) {
                Some("auth") => Err(Error::Auth(msg)),
                _ => Err(Error::Transport(msg)),
            }
        }
        None => Ok(v.clone()),
    }
}

pub fn encode_base64(bytes: &[u8]) -> String {
    base64::engine::general_purpose::STANDARD.encode(bytes)
}

/// One chat message: role, text, and base64 PNG attachments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: String,
    pub text: String,
    #[serde(default)]
    pub images: Vec<String>,
}

impl ChatMessage {
    pub fn system(text: impl Into<String>) -> Self {
        Self {
            role: "system".into(),
            text: text.into(),
            images: Vec::new(),
        }
    }

    pub fn user(text: impl Into<String>, images: Vec<String>) -> Self {
        Self {
            role: "user".into(),
            text: text.into(),
            images,
        }
    }
}

/// Multimodal model client speaking `{model, temperature, messages}` -> `{text}`.
pub struct ModelClient {
    endpoint: EndpointConfig,
    transport: Box<dyn Transport>,
}

impl ModelClient {
    pub fn new(endpoint: EndpointConfig, transport: Box<dyn Transport>) -> Self {
        Self { endpoint, transport }
    }

    /// Client over live HTTP.
    pub fn http(endpoint: EndpointConfig) -> Self {
        let transport = Box::new(HttpTransport::new(endpoint.timeout));
        Self::new(endpoint, transport)
    }

    pub fn endpoint(&self) -> &EndpointConfig {
        &self.endpoint
    }

    pub fn request_body(&self, messages: &[ChatMessage]) -> Value {
        json!({
            "model": self.endpoint.model,
            "temperature": self.endpoint.temperature,
            "messages": messages,
        })
    }

    pub fn complete(&mut self, messages: &[ChatMessage]) -> Result<String> {
        let body = self.request_body(messages);
        let resp = self
            .transport
            .post_json(&self.endpoint.url, self.endpoint.api_key.as_deref(), &body)?;
        match resp.get("text").and_then(Value::as_str) {
            Some(t) => Ok(t.to_string()),
            None => Err(Error::Transport(format!("response lacks a `text` field: {resp}"))),
        }
    }
}
