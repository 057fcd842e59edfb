//! Chat-completion access for the chat model and the target model.

use alloc::collections::VecDeque;
use alloc::string::String;
use alloc::vec::Vec;
use core::time::Duration;

use serde::{Deserialize, Serialize};

use crate::chatstore::{Author, Message};

pub const DEFAULT_MODEL_ID: &str = "Llama-3-70B";
pub const DEFAULT_TIMEOUT_MS: u64 = 120_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationParams {
    pub temperature: f64,
    pub max_tokens: u32,
    #[serde(default)]
    pub seed: Option<u64>,
}

impl Default for GenerationParams {
    fn default() -> Self {
        Self { temperature: 0.0, max_tokens: 1024, seed: Some(0) }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BackendKind {
    Scripted,
    Remote,
}

/// How to reach a model. Never carries the credential itself, only the
/// name of the environment variable holding it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind")]
pub enum BackendConfig {
    Scripted {
        model_id: String,
        responses: Vec<String>,
    },
    Remote {
        endpoint: String,
        model_id: String,
        auth_env_name: Option<String>,
        #[serde(default)]
        params: GenerationParams,
        #[serde(default = "default_timeout")]
        timeout_ms: u64,
    },
}

fn default_timeout() -> u64 {
    DEFAULT_TIMEOUT_MS
}

/// A scripted backend config whose completions are `responses`, in order.
pub fn scripted<S: Into<String>>(responses: impl IntoIterator<Item = S>) -> BackendConfig {
    BackendConfig::Scripted {
        model_id: String::from("scripted"),
        responses: responses.into_iter().map(Into::into).collect(),
    }
}

impl BackendConfig {
    pub fn remote(endpoint: impl Into<String>, model_id: impl Into<String>, auth_env_name: Option<String>) -> Self {
        BackendConfig::Remote {
            endpoint: endpoint.into(),
            model_id: model_id.into(),
            auth_env_name,
            params: GenerationParams::default(),
            timeout_ms: DEFAULT_TIMEOUT_MS,
        }
    }

    pub fn kind(&self) -> BackendKind {
        match self {
            BackendConfig::Scripted { .. } => BackendKind::Scripted,
            BackendConfig::Remote { .. } => BackendKind::Remote,
        }
    }

    pub fn model_id(&self) -> &str {
        match self {
            BackendConfig::Scripted { model_id, .. } | BackendConfig::Remote { model_id, .. } => model_id,
        }
    }

    pub fn validate(&self) -> Result<(), BackendError> {
        match self {
            BackendConfig::Scripted { .. } => Ok(()),
            BackendConfig::Remote { endpoint, model_id, params, .. } => {
                if endpoint.trim().is_empty() {
                    return Err(BackendError::InvalidConfig(String::from("remote backend needs an endpoint")));
                }
                if model_id.trim().is_empty() {
                    return Err(BackendError::InvalidConfig(String::from("remote backend needs a model id")));
                }
                if params.temperature.is_nan() || params.temperature < 0.0 || params.max_tokens == 0 {
                    return Err(BackendError::InvalidConfig(String::from(
                        "temperature must be >= 0 and max_tokens positive",
                    )));
                }
                Ok(())
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
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

impl From<Author> for Role {
    fn from(author: Author) -> Self {
        match author {
            Author::System => Role::System,
            Author::User => Role::User,
            Author::Model | Author::TargetModel => Role::Assistant,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub content: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatRequest {
    messages: Vec<ChatMessage>,
}

impl ChatRequest {
    pub fn new(messages: Vec<ChatMessage>) -> Result<Self, BackendError> {
        if messages.is_empty() {
            return Err(BackendError::EmptyRequest);
        }
        Ok(Self { messages })
    }

    pub fn from_context<'a>(context: impl IntoIterator<Item = &'a Message>) -> Result<Self, BackendError> {
        Self::new(
            context.into_iter().map(|m| ChatMessage { role: m.author.into(), content: m.content.clone() }).collect(),
        )
    }

    pub fn messages(&self) -> &[ChatMessage] {
        &self.messages
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Usage {
    pub prompt_units: Option<u64>,
    pub completion_units: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Completion {
    pub content: String,
    pub usage: Usage,
    pub latency: Duration,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum BackendError {
    #[error("scripted backend has no responses left")]
    ScriptExhausted,
    #[error("transport error: {0}")]
    Transport(String),
    #[error("provider returned status {status}: {body}")]
    ProviderError { status: u16, body: String },
    #[error("request timed out")]
    Timeout,
    #[error("a chat request needs at least one message")]
    EmptyRequest,
    #[error("invalid backend config: {0}")]
    InvalidConfig(String),
}

pub trait ChatBackend {
    fn complete(&mut self, req: &ChatRequest) -> Result<Completion, BackendError>;
}

impl<B: ChatBackend + ?Sized> ChatBackend for &mut B {
    fn complete(&mut self, req: &ChatRequest) -> Result<Completion, BackendError> {
        (**self).complete(req)
    }
}

impl<B: ChatBackend + ?Sized> ChatBackend for alloc::boxed::Box<B> {
    fn complete(&mut self, req: &ChatRequest) -> Result<Completion, BackendError> {
        (**self).complete(req)
    }
}

/// Returns queued responses in order and records every request.
#[derive(Debug, Clone, Default)]
pub struct ScriptedBackend {
    queue: VecDeque<String>,
    recorded: Vec<ChatRequest>,
}

impl ScriptedBackend {
    pub fn new<S: Into<String>>(responses: impl IntoIterator<Item = S>) -> Self {
        Self { queue: responses.into_iter().map(Into::into).collect(), recorded: Vec::new() }
    }

    /// Builds the backend for a scripted config, skipping the first
    /// `consumed` responses (those already answered before a restart).
    pub fn from_config(cfg: &BackendConfig, consumed: usize) -> Option<Self> {
        match cfg {
            BackendConfig::Scripted { responses, .. } => Some(Self::new(responses.iter().skip(consumed).cloned())),
            BackendConfig::Remote { .. } => None,
        }
    }

    pub fn push(&mut self, response: impl Into<String>) {
        self.queue.push_back(response.into());
    }

    pub fn remaining(&self) -> usize {
        self.queue.len()
    }

    pub fn recorded_requests(&self) -> &[ChatRequest] {
        &self.recorded
    }
}

impl ChatBackend for ScriptedBackend {
    fn complete(&mut self, req: &ChatRequest) -> Result<Completion, BackendError> {
        if req.messages.is_empty() {
            return Err(BackendError::EmptyRequest);
        }
        self.recorded.push(req.clone());
        let content = self.queue.pop_front().ok_or(BackendError::ScriptExhausted)?;
        Ok(Completion { content, usage: Usage::default(), latency: Duration::ZERO })
    }
}
