use std::fs;
use std::path::{Path, PathBuf};
use std::time::Duration;

use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use super::prompt::PromptSpec;
use super::LlmError;

/// Something that turns a prompt into response text. The bound spec travels
/// with the text so offline clients need not parse the prompt.
pub trait LlmClient {
    fn complete(&mut self, prompt: &str, spec: &PromptSpec) -> Result<String, LlmError>;

    fn name(&self) -> &'static str;
}

impl<C: LlmClient + ?Sized> LlmClient for Box<C> {
    fn complete(&mut self, prompt: &str, spec: &PromptSpec) -> Result<String, LlmError> {
        (**self).complete(prompt, spec)
    }

    fn name(&self) -> &'static str {
        (**self).name()
    }
}

/// Hex SHA-256 of the prompt text; the key of recorded responses.
pub fn prompt_hash(prompt: &str) -> String {
    hex::encode(Sha256::digest(prompt.as_bytes()))
}

fn response_path(dir: &Path, prompt: &str) -> PathBuf {
    dir.join(format!("{}.txt", prompt_hash(prompt)))
}

/// Serves stored responses from `<dir>/<prompt hash>.txt`.
#[derive(Clone, Debug)]
pub struct ReplayClient {
    dir: PathBuf,
}

impl ReplayClient {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Self { dir: dir.into() }
    }
}

impl LlmClient for ReplayClient {
    fn complete(&mut self, prompt: &str, _spec: &PromptSpec) -> Result<String, LlmError> {
        let path = response_path(&self.dir, prompt);
        match fs::read_to_string(&path) {
            Ok(text) => Ok(text),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Err(LlmError::ReplayMiss(prompt_hash(prompt))),
            Err(e) => Err(LlmError::Io(e)),
        }
    }

    fn name(&self) -> &'static str {
        "replay"
    }
}

/// Wraps a client and stores every response where [`ReplayClient`] finds it.
pub struct RecordingClient<C> {
    inner: C,
    dir: PathBuf,
}

impl<C: LlmClient> RecordingClient<C> {
    pub fn new(inner: C, dir: impl Into<PathBuf>) -> Self {
        Self { inner, dir: dir.into() }
    }
}

impl<C: LlmClient> LlmClient for RecordingClient<C> {
    fn complete(&mut self, prompt: &str, spec: &PromptSpec) -> Result<String, LlmError> {
        let text = self.inner.complete(prompt, spec)?;
        fs::create_dir_all(&self.dir)?;
        fs::write(response_path(&self.dir, prompt), &text)?;
        Ok(text)
    }

    fn name(&self) -> &'static str {
        self.inner.name()
    }
}

pub const ENV_URL: &str = "ICCO_LLM_URL";
pub const ENV_MODEL: &str = "ICCO_LLM_MODEL";
pub const ENV_API_KEY: &str = "ICCO_LLM_API_KEY";
pub const ENV_TIMEOUT: &str = "ICCO_LLM_TIMEOUT_SECS";

/// Chat-completion endpoint over HTTPS.
#[derive(Clone, Debug)]
pub struct LiveClient {
    pub url: String,
    pub model: String,
    api_key: String,
    pub timeout: Duration,
}

impl LiveClient {
    pub fn new(url: String, model: String, api_key: String, timeout: Duration) -> Self {
        Self {
            url,
            model,
            api_key,
            timeout,
        }
    }

    /// Reads the endpoint from `ICCO_LLM_URL`, `ICCO_LLM_MODEL`,
    /// `ICCO_LLM_API_KEY` and `ICCO_LLM_TIMEOUT_SECS`. Only the key is required.
    pub fn from_env() -> Result<Self, LlmError> {
        let var = |k: &str| std::env::var(k).ok().filter(|v| !v.trim().is_empty());
        let api_key = var(ENV_API_KEY).ok_or_else(|| LlmError::Config(format!("{ENV_API_KEY} is not set")))?;
        let timeout = match var(ENV_TIMEOUT) {
            Some(t) => t
                .parse::<f64>()
                .ok()
                .filter(|t| *t > 0.0)
                .ok_or_else(|| LlmError::Config(format!("{ENV_TIMEOUT} must be a positive number")))?,
            None => 60.0,
        };
        Ok(Self::new(
            var(ENV_URL).unwrap_or_else(|| "https://api.openai.com/v1/chat/completions".into()),
            var(ENV_MODEL).unwrap_or_else(|| "gpt-4o".into()),
            api_key,
            Duration::from_secs_f64(timeout),
        ))
    }

    fn request_body(&self, prompt: &str) -> Value {
        json!({
            "model": self.model,
            "temperature": 0,
            "messages": [{ "role": "user", "content": prompt }],
        })
    }
}

/// `choices[0].message.content` of a chat-completion reply.
pub fn extract_content(reply: &Value) -> Result<String, LlmError> {
    reply
        .pointer("/choices/0/message/content")
        .and_then(Value::as_str)
        .map(str::to_string)
        .ok_or_else(|| LlmError::Transport("reply has no choices[0].message.content".into()))
}

impl LlmClient for LiveClient {
    fn complete(&mut self, prompt: &str, _spec: &PromptSpec) -> Result<String, LlmError> {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(self.timeout))
            .build()
            .into();
        let mut response = agent
            .post(&self.url)
            .header("Authorization", &format!("Bearer {}", self.api_key))
            .send_json(self.request_body(prompt))
            .map_err(|e| LlmError::Transport(e.to_string()))?;
        let reply: Value = response
            .body_mut()
            .read_json()
            .map_err(|e| LlmError::Transport(e.to_string()))?;
        extract_content(&reply)
    }

    fn name(&self) -> &'static str {
        "live"
    }
}
