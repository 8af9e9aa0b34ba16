use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::templates::RenderedPrompt;
use super::Role;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub role: Role,
    pub model: String,
    pub temperature: f64,
    pub max_output_tokens: u32,
    pub prompt: RenderedPrompt,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelResponse {
    pub text: String,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum ProviderError {
    /// Worth retrying: rate limits, server errors, dropped connections.
    #[error("transient provider failure ({status:?}): {message}")]
    Transient { status: Option<u16>, message: String },
    #[error("provider rejected credentials: {0}")]
    Auth(String),
    #[error("provider request failed: {0}")]
    Fatal(String),
}

pub trait Provider: Send + Sync {
    fn send(&self, request: &ChatRequest) -> Result<ModelResponse, ProviderError>;

    /// True when replies depend on call order (scripted providers); callers
    /// then keep provider traffic sequential.
    fn order_sensitive(&self) -> bool {
        false
    }
}

/// Rough token estimate used when a script entry gives no counts.
pub fn estimate_tokens(text: &str) -> u64 {
    (text.chars().count() as u64).div_ceil(4)
}

/// One scripted reply.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ScriptEntry {
    Text(String),
    Full {
        #[serde(default)]
        text: String,
        #[serde(default)]
        prompt_tokens: Option<u64>,
        #[serde(default)]
        completion_tokens: Option<u64>,
        /// HTTP-like status to fail with instead of replying.
        #[serde(default)]
        error: Option<u16>,
    },
}

impl ScriptEntry {
    pub fn text(t: impl Into<String>) -> Self {
        ScriptEntry::Text(t.into())
    }

    pub fn priced(t: impl Into<String>, prompt_tokens: u64, completion_tokens: u64) -> Self {
        ScriptEntry::Full {
            text: t.into(),
            prompt_tokens: Some(prompt_tokens),
            completion_tokens: Some(completion_tokens),
            error: None,
        }
    }

    pub fn failure(status: u16) -> Self {
        ScriptEntry::Full {
            text: String::new(),
            prompt_tokens: None,
            completion_tokens: None,
            error: Some(status),
        }
    }
}

/// Script file: role name to the replies for that role's successive calls.
///
/// ```json
/// { "replies": { "JudgeRule": ["{\"is_valid\": true, \"reasoning\": \"ok\"}",
///                              {"text": "...", "prompt_tokens": 900, "completion_tokens": 120},
///                              {"error": 429}] },
///   "fallback": { "Solver": "no idea" } }
/// ```
///
/// A role's `fallback` reply is used once its list is exhausted.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MockScript {
    #[serde(default)]
    pub replies: BTreeMap<Role, Vec<ScriptEntry>>,
    #[serde(default)]
    pub fallback: BTreeMap<Role, ScriptEntry>,
}

impl MockScript {
    pub fn push(&mut self, role: Role, entry: ScriptEntry) -> &mut Self {
        self.replies.entry(role).or_default().push(entry);
        self
    }

    pub fn load(path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        serde_json::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))
    }
}

fn status_error(status: u16, message: String) -> ProviderError {
    match status {
        401 | 403 => ProviderError::Auth(message),
        408 | 409 | 425 | 429 | 500..=599 => ProviderError::Transient {
            status: Some(status),
            message,
        },
        _ => ProviderError::Fatal(format!("status {status}: {message}")),
    }
}

/// Replays a [`MockScript`], indexed by (role, per-role call count).
#[derive(Debug)]
pub struct MockProvider {
    script: MockScript,
    calls: Mutex<BTreeMap<Role, usize>>,
}

impl MockProvider {
    pub fn new(script: MockScript) -> Self {
        MockProvider {
            script,
            calls: Mutex::new(BTreeMap::new()),
        }
    }

    /// Calls made so far per role.
    pub fn call_counts(&self) -> BTreeMap<Role, usize> {
        self.calls.lock().unwrap_or_else(|e| e.into_inner()).clone()
    }
}

impl Provider for MockProvider {
    fn send(&self, request: &ChatRequest) -> Result<ModelResponse, ProviderError> {
        let index = {
            let mut calls = self.calls.lock().unwrap_or_else(|e| e.into_inner());
            let n = calls.entry(request.role).or_insert(0);
            *n += 1;
            *n - 1
        };
        let entry = self
            .script
            .replies
            .get(&request.role)
            .and_then(|list| list.get(index))
            .or_else(|| self.script.fallback.get(&request.role))
            .ok_or_else(|| {
                ProviderError::Fatal(format!("mock script has no reply for {} call {index}", request.role))
            })?;
        let prompt_estimate = estimate_tokens(&request.prompt.system) + estimate_tokens(&request.prompt.user);
        match entry {
            ScriptEntry::Text(text) => Ok(ModelResponse {
                text: text.clone(),
                prompt_tokens: prompt_estimate,
                completion_tokens: estimate_tokens(text),
            }),
            ScriptEntry::Full {
                error: Some(status), ..
            } => Err(status_error(*status, "scripted failure".into())),
            ScriptEntry::Full {
                text,
                prompt_tokens,
                completion_tokens,
                ..
            } => Ok(ModelResponse {
                text: text.clone(),
                prompt_tokens: prompt_tokens.unwrap_or(prompt_estimate),
                completion_tokens: completion_tokens.unwrap_or_else(|| estimate_tokens(text)),
            }),
        }
    }

    fn order_sensitive(&self) -> bool {
        true
    }
}

/// Client for the common `POST {base}/chat/completions` interface.
pub struct HttpProvider {
    base_url: String,
    api_key: Option<String>,
    agent: ureq::Agent,
}

#[derive(Deserialize)]
struct CompletionBody {
    choices: Vec<Choice>,
    #[serde(default)]
    usage: Option<Usage>,
}

#[derive(Deserialize)]
struct Choice {
    message: Message,
}

#[derive(Deserialize)]
struct Message {
    #[serde(default)]
    content: Option<String>,
}

#[derive(Deserialize)]
struct Usage {
    #[serde(default)]
    prompt_tokens: u64,
    #[serde(default)]
    completion_tokens: u64,
}

impl HttpProvider {
    pub fn new(base_url: impl Into<String>, api_key: Option<String>, timeout: Duration) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .build()
            .into();
        HttpProvider {
            base_url: base_url.into().trim_end_matches('/').to_string(),
            api_key,
            agent,
        }
    }

    fn body(request: &ChatRequest) -> serde_json::Value {
        let mut messages = vec![serde_json::json!({"role": "system", "content": request.prompt.system})];
        if !request.prompt.user.is_empty() {
            messages.push(serde_json::json!({"role": "user", "content": request.prompt.user}));
        }
        serde_json::json!({
            "model": request.model,
            "messages": messages,
            "temperature": request.temperature,
            "max_tokens": request.max_output_tokens,
        })
    }
}

impl Provider for HttpProvider {
    fn send(&self, request: &ChatRequest) -> Result<ModelResponse, ProviderError> {
        let url = format!("{}/chat/completions", self.base_url);
        let mut call = self.agent.post(&url).header("Content-Type", "application/json");
        if let Some(key) = &self.api_key {
            call = call.header("Authorization", &format!("Bearer {key}"));
        }
        let mut resp = call
            .send(Self::body(request).to_string())
            .map_err(|e| ProviderError::Transient {
                status: None,
                message: e.to_string(),
            })?;
        let status = resp.status().as_u16();
        if !(200..300).contains(&status) {
            let text = resp.body_mut().read_to_string().unwrap_or_default();
            return Err(status_error(status, text.chars().take(500).collect()));
        }
        let raw = resp
            .body_mut()
            .read_to_string()
            .map_err(|e| ProviderError::Transient {
                status: None,
                message: e.to_string(),
            })?;
        let body: CompletionBody = serde_json::from_str(&raw).map_err(|e| ProviderError::Fatal(format!("unreadable completion body: {e}")))?;
        let text = body
            .choices
            .into_iter()
            .next()
            .and_then(|c| c.message.content)
            .ok_or_else(|| ProviderError::Fatal("completion has no message content".into()))?;
        let usage = body.usage.unwrap_or(Usage {
            prompt_tokens: 0,
            completion_tokens: 0,
        });
        Ok(ModelResponse {
            text,
            prompt_tokens: usage.prompt_tokens,
            completion_tokens: usage.completion_tokens,
        })
    }
}
