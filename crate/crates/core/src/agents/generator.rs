use std::sync::{Condvar, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::prompt::{parse_prompt, render_template};
use super::AgentError;

pub const DEFAULT_API_KEY_ENV: &str = "CAREX_API_KEY";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GeneratorMode {
    Remote,
    #[default]
    Offline,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GeneratorConfig {
    pub mode: GeneratorMode,
    /// Base URL of an OpenAI-compatible API, or the full
    /// `.../chat/completions` URL.
    pub endpoint: Option<String>,
    pub model: String,
    pub temperature: f64,
    pub max_tokens: u32,
    pub api_key_env: String,
    pub timeout_s: f64,
    /// Concurrent remote requests allowed per generator.
    pub max_in_flight: usize,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig {
            mode: GeneratorMode::Offline,
            endpoint: None,
            model: "gpt-4".into(),
            temperature: 0.3,
            max_tokens: 600,
            api_key_env: DEFAULT_API_KEY_ENV.into(),
            timeout_s: 30.0,
            max_in_flight: 4,
        }
    }
}

impl GeneratorConfig {
    /// Named backbone presets: `gpt-4`, `llama`, `offline`.
    pub fn preset(name: &str) -> Option<Self> {
        let base = GeneratorConfig::default();
        match name {
            "offline" => Some(base),
            "gpt-4" => Some(GeneratorConfig {
                mode: GeneratorMode::Remote,
                endpoint: Some("https://api.openai.com/v1".into()),
                ..base
            }),
            "llama" => Some(GeneratorConfig {
                mode: GeneratorMode::Remote,
                endpoint: Some("http://127.0.0.1:8000/v1".into()),
                model: "llama-3-8b-instruct".into(),
                ..base
            }),
            _ => None,
        }
    }

    pub fn validate(&self) -> Result<(), AgentError> {
        if self.mode == GeneratorMode::Remote {
            if self.endpoint.as_deref().is_none_or(|e| e.trim().is_empty()) {
                return Err(AgentError::InvalidConfig("remote mode needs an endpoint".into()));
            }
            if self.model.trim().is_empty() {
                return Err(AgentError::InvalidConfig("remote mode needs a model".into()));
            }
        }
        if self.max_in_flight == 0 {
            return Err(AgentError::InvalidConfig("max_in_flight must be at least 1".into()));
        }
        if !(self.timeout_s > 0.0) {
            return Err(AgentError::InvalidConfig("timeout must be positive".into()));
        }
        if !(0.0..=2.0).contains(&self.temperature) {
            return Err(AgentError::InvalidConfig(format!("temperature {} out of [0, 2]", self.temperature)));
        }
        Ok(())
    }
}

/// Turns a prompt into explanation text.
pub trait Generator: Send + Sync {
    fn generate(&self, prompt: &str) -> Result<String, AgentError>;
}

/// Deterministic template generator; reads the sections of the prompt.
#[derive(Debug, Clone, Copy, Default)]
pub struct OfflineGenerator;

impl Generator for OfflineGenerator {
    fn generate(&self, prompt: &str) -> Result<String, AgentError> {
        Ok(render_template(&parse_prompt(prompt)))
    }
}

/// OpenAI-compatible chat-completions client.
#[derive(Debug)]
pub struct RemoteGenerator {
    cfg: GeneratorConfig,
    in_flight: Mutex<usize>,
    slot_free: Condvar,
}

struct Slot<'a>(&'a RemoteGenerator);

impl Drop for Slot<'_> {
    fn drop(&mut self) {
        *self.0.in_flight.lock().expect("in-flight lock") -= 1;
        self.0.slot_free.notify_one();
    }
}

#[derive(Serialize)]
struct ChatMessage<'a> {
    role: &'a str,
    content: &'a str,
}

#[derive(Serialize)]
struct ChatRequest<'a> {
    model: &'a str,
    messages: Vec<ChatMessage<'a>>,
    temperature: f64,
    max_tokens: u32,
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<ChatChoice>,
}

#[derive(Deserialize)]
struct ChatChoice {
    message: ChatReply,
}

#[derive(Deserialize)]
struct ChatReply {
    content: Option<String>,
}

impl RemoteGenerator {
    pub fn new(cfg: GeneratorConfig) -> Result<Self, AgentError> {
        cfg.validate()?;
        Ok(RemoteGenerator { cfg, in_flight: Mutex::new(0), slot_free: Condvar::new() })
    }

    /// Blocks until fewer than `max_in_flight` requests are running.
    fn acquire(&self) -> Slot<'_> {
        let mut n = self.in_flight.lock().expect("in-flight lock");
        while *n >= self.cfg.max_in_flight {
            n = self.slot_free.wait(n).expect("in-flight lock");
        }
        *n += 1;
        Slot(self)
    }

    pub fn url(&self) -> String {
        let base = self.cfg.endpoint.as_deref().unwrap_or_default().trim_end_matches('/');
        if base.ends_with("/chat/completions") {
            base.to_string()
        } else {
            format!("{base}/chat/completions")
        }
    }
}

impl Generator for RemoteGenerator {
    fn generate(&self, prompt: &str) -> Result<String, AgentError> {
        let body = ChatRequest {
            model: &self.cfg.model,
            messages: vec![ChatMessage { role: "user", content: prompt }],
            temperature: self.cfg.temperature,
            max_tokens: self.cfg.max_tokens,
        };
        let _slot = self.acquire();
        // Built per call so the blocking client never lives on an async thread.
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs_f64(self.cfg.timeout_s))
            .build()
            .map_err(|e| AgentError::RemoteUnavailable(e.to_string()))?;
        let mut req = client.post(self.url()).json(&body);
        match std::env::var(&self.cfg.api_key_env) {
            Ok(key) if !key.is_empty() => req = req.bearer_auth(key),
            _ => tracing::warn!(var = %self.cfg.api_key_env, "API key variable unset; sending without auth"),
        }
        let resp = req.send().map_err(|e| {
            if e.is_timeout() {
                AgentError::Timeout
            } else {
                AgentError::RemoteUnavailable(e.to_string())
            }
        })?;
        let status = resp.status();
        if !status.is_success() {
            let text = resp.text().unwrap_or_default();
            return Err(AgentError::RemoteUnavailable(format!(
                "HTTP {status}: {}",
                text.chars().take(200).collect::<String>()
            )));
        }
        let parsed: ChatResponse =
            resp.json().map_err(|e| AgentError::RemoteUnavailable(format!("malformed completion: {e}")))?;
        parsed
            .choices
            .into_iter()
            .next()
            .and_then(|c| c.message.content)
            .ok_or_else(|| AgentError::RemoteUnavailable("completion has no content".into()))
    }
}

pub fn make_generator(cfg: &GeneratorConfig) -> Result<Box<dyn Generator>, AgentError> {
    cfg.validate()?;
    Ok(match cfg.mode {
        GeneratorMode::Offline => Box::new(OfflineGenerator),
        GeneratorMode::Remote => Box::new(RemoteGenerator::new(cfg.clone())?),
    })
}
