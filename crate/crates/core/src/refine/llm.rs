use std::path::Path;
use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::embed::Embedder;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Message {
    pub role: String,
    pub content: String,
}

impl Message {
    pub fn new(role: &str, content: impl Into<String>) -> Self {
        Message {
            role: role.to_owned(),
            content: content.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct LlmRequest {
    pub messages: Vec<Message>,
}

impl LlmRequest {
    /// Concatenated message contents, handy for assertions.
    pub fn text(&self) -> String {
        self.messages
            .iter()
            .map(|m| m.content.as_str())
            .collect::<Vec<_>>()
            .join("\n")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LlmResponse {
    pub content: String,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LlmError {
    #[error("mock script exhausted after {0} responses")]
    Exhausted(usize),
    #[error("adapter transport error: {0}")]
    Transport(String),
    #[error("adapter returned a malformed response: {0}")]
    Malformed(String),
    #[error("adapter configuration: {0}")]
    Config(String),
}

/// Language-model backend. Critics never see it; only the fix loop does.
pub trait LlmAdapter: Send + Sync {
    fn complete(&self, request: &LlmRequest) -> Result<LlmResponse, LlmError>;
}

/// Replays canned responses in order and captures every request it receives.
pub struct MockAdapter {
    responses: Vec<LlmResponse>,
    cursor: Mutex<usize>,
    captured: Mutex<Vec<LlmRequest>>,
    delay: Duration,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum ScriptDoc {
    List(Vec<LlmResponse>),
    Wrapped { responses: Vec<LlmResponse> },
}

impl MockAdapter {
    pub fn new(responses: Vec<LlmResponse>) -> Self {
        MockAdapter {
            responses,
            cursor: Mutex::new(0),
            captured: Mutex::new(Vec::new()),
            delay: Duration::ZERO,
        }
    }

    pub fn from_contents<S: Into<String>>(contents: impl IntoIterator<Item = S>) -> Self {
        Self::new(
            contents
                .into_iter()
                .map(|c| LlmResponse { content: c.into() })
                .collect(),
        )
    }

    /// Script document: a list of `{"content": ...}` objects, optionally
    /// wrapped as `{"responses": [...]}`.
    pub fn from_json_str(doc: &str) -> Result<Self, LlmError> {
        let parsed: ScriptDoc =
            serde_json::from_str(doc).map_err(|e| LlmError::Config(format!("mock script: {e}")))?;
        Ok(Self::new(match parsed {
            ScriptDoc::List(r) | ScriptDoc::Wrapped { responses: r } => r,
        }))
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self, LlmError> {
        let path = path.as_ref();
        let doc = std::fs::read_to_string(path)
            .map_err(|e| LlmError::Config(format!("{}: {e}", path.display())))?;
        Self::from_json_str(&doc)
    }

    /// Sleeps this long before each response.
    pub fn with_delay(mut self, delay: Duration) -> Self {
        self.delay = delay;
        self
    }

    pub fn requests(&self) -> Vec<LlmRequest> {
        self.captured.lock().expect("mock lock").clone()
    }

    pub fn consumed(&self) -> usize {
        *self.cursor.lock().expect("mock lock")
    }
}

impl LlmAdapter for MockAdapter {
    fn complete(&self, request: &LlmRequest) -> Result<LlmResponse, LlmError> {
        self.captured
            .lock()
            .expect("mock lock")
            .push(request.clone());
        if !self.delay.is_zero() {
            std::thread::sleep(self.delay);
        }
        let mut cursor = self.cursor.lock().expect("mock lock");
        let r = self
            .responses
            .get(*cursor)
            .cloned()
            .ok_or(LlmError::Exhausted(self.responses.len()))?;
        *cursor += 1;
        Ok(r)
    }
}

pub const ENV_LLM_URL: &str = "RC_LLM_URL";
pub const ENV_LLM_KEY: &str = "RC_LLM_KEY";
pub const ENV_EMBED_URL: &str = "RC_EMBED_URL";

/// HTTP adapter: `{messages}` in, `{content}` out. Times out after 60 s and
/// retries once.
pub struct RemoteAdapter {
    url: String,
    key: Option<String>,
    agent: ureq::Agent,
}

fn agent(timeout: Duration) -> ureq::Agent {
    ureq::Agent::config_builder()
        .timeout_global(Some(timeout))
        .build()
        .into()
}

impl RemoteAdapter {
    pub fn new(url: impl Into<String>, key: Option<String>) -> Self {
        RemoteAdapter {
            url: url.into(),
            key,
            agent: agent(Duration::from_secs(60)),
        }
    }

    pub fn from_env() -> Result<Self, LlmError> {
        let url = std::env::var(ENV_LLM_URL)
            .map_err(|_| LlmError::Config(format!("{ENV_LLM_URL} is not set")))?;
        Ok(Self::new(url, std::env::var(ENV_LLM_KEY).ok()))
    }
}

fn post_json<Req: Serialize, Resp: for<'de> Deserialize<'de>>(
    agent: &ureq::Agent,
    url: &str,
    key: Option<&str>,
    body: &Req,
) -> Result<Resp, LlmError> {
    let attempt = || -> Result<Resp, LlmError> {
        let mut req = agent.post(url);
        if let Some(k) = key {
            req = req.header("Authorization", &format!("Bearer {k}"));
        }
        let mut resp = req
            .send_json(body)
            .map_err(|e| LlmError::Transport(e.to_string()))?;
        resp.body_mut()
            .read_json::<Resp>()
            .map_err(|e| LlmError::Malformed(e.to_string()))
    };
    match attempt() {
        Err(LlmError::Transport(_)) => attempt(),
        other => other,
    }
}

impl LlmAdapter for RemoteAdapter {
    fn complete(&self, request: &LlmRequest) -> Result<LlmResponse, LlmError> {
        post_json(&self.agent, &self.url, self.key.as_deref(), request)
    }
}

/// HTTP embedder: `{input}` in, `{vector}` out.
pub struct RemoteEmbedder {
    url: String,
    key: Option<String>,
    dim: usize,
    agent: ureq::Agent,
}

impl RemoteEmbedder {
    pub fn new(url: impl Into<String>, key: Option<String>, dim: usize) -> Self {
        RemoteEmbedder {
            url: url.into(),
            key,
            dim,
            agent: agent(Duration::from_secs(60)),
        }
    }

    pub fn from_env(dim: usize) -> Result<Self, LlmError> {
        let url = std::env::var(ENV_EMBED_URL)
            .map_err(|_| LlmError::Config(format!("{ENV_EMBED_URL} is not set")))?;
        Ok(Self::new(url, std::env::var(ENV_LLM_KEY).ok(), dim))
    }
}

#[derive(Serialize)]
struct EmbedRequest<'a> {
    input: &'a str,
}

#[derive(Deserialize)]
struct EmbedResponse {
    vector: Vec<f64>,
}

impl Embedder for RemoteEmbedder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, text: &str) -> Result<Vec<f64>, LlmError> {
        let r: EmbedResponse = post_json(
            &self.agent,
            &self.url,
            self.key.as_deref(),
            &EmbedRequest { input: text },
        )?;
        if r.vector.len() != self.dim {
            return Err(LlmError::Malformed(format!(
                "embedding has {} dimensions, expected {}",
                r.vector.len(),
                self.dim
            )));
        }
        Ok(r.vector)
    }
}
