//! Chat-completion and embedding backends.
//!
//! [`Backend`] is the single seam between the pipeline and model providers.
//! Two implementations ship: [`HttpBackend`] talks to any OpenAI-compatible
//! endpoint, and [`ScriptedBackend`] replays canned responses for offline,
//! bit-reproducible runs.

mod http;
mod log;
mod scripted;

pub use self::http::{HttpBackend, HttpConfig, RetryPolicy};
pub use self::log::{LoggedMessage, LoggedPart, PromptLog, PromptRecord};
pub use self::scripted::{Script, ScriptRecord, ScriptedBackend};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Part {
    Text(String),
    Image { bytes: Vec<u8>, media_type: String },
}

impl Part {
    pub fn text(s: impl Into<String>) -> Self {
        Part::Text(s.into())
    }

    pub fn png(bytes: Vec<u8>) -> Self {
        Part::Image {
            bytes,
            media_type: "image/png".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChatMessage {
    pub role: Role,
    pub parts: Vec<Part>,
}

impl ChatMessage {
    pub fn system(text: impl Into<String>) -> Self {
        Self {
            role: Role::System,
            parts: vec![Part::text(text)],
        }
    }

    pub fn user(parts: Vec<Part>) -> Self {
        Self {
            role: Role::User,
            parts,
        }
    }

    pub fn user_text(text: impl Into<String>) -> Self {
        Self::user(vec![Part::text(text)])
    }

    pub fn assistant(text: impl Into<String>) -> Self {
        Self {
            role: Role::Assistant,
            parts: vec![Part::text(text)],
        }
    }

    pub fn validate(&self) -> Result<(), BackendError> {
        if self.parts.is_empty() {
            return Err(BackendError::InvalidRequest("message has no parts".into()));
        }
        if self.role != Role::User && self.parts.iter().any(|p| matches!(p, Part::Image { .. })) {
            return Err(BackendError::InvalidRequest(format!(
                "image parts are only allowed in user messages, found one in a {:?} message",
                self.role
            )));
        }
        Ok(())
    }

    /// Concatenated text parts.
    pub fn text(&self) -> String {
        self.parts
            .iter()
            .filter_map(|p| match p {
                Part::Text(t) => Some(t.as_str()),
                Part::Image { .. } => None,
            })
            .collect::<Vec<_>>()
            .join("\n")
    }

    pub fn image_count(&self) -> usize {
        self.parts
            .iter()
            .filter(|p| matches!(p, Part::Image { .. }))
            .count()
    }
}

pub const DEFAULT_MAX_OUTPUT_TOKENS: u32 = 1024;

#[derive(Debug, Clone, PartialEq)]
pub struct ChatRequest {
    pub messages: Vec<ChatMessage>,
    /// Sampling temperature; 0.0 unless a caller opts out.
    pub temperature: f32,
    pub max_output_tokens: u32,
    /// Empty means "use the backend's configured chat model".
    pub model_name: String,
}

impl ChatRequest {
    pub fn new(messages: Vec<ChatMessage>) -> Self {
        Self {
            messages,
            temperature: 0.0,
            max_output_tokens: DEFAULT_MAX_OUTPUT_TOKENS,
            model_name: String::new(),
        }
    }

    pub fn validate(&self) -> Result<(), BackendError> {
        if self.messages.is_empty() {
            return Err(BackendError::InvalidRequest("request has no messages".into()));
        }
        self.messages.iter().try_for_each(ChatMessage::validate)
    }

    /// All text of the request, one message per block.
    pub fn prompt_text(&self) -> String {
        self.messages
            .iter()
            .map(ChatMessage::text)
            .collect::<Vec<_>>()
            .join("\n\n")
    }

    pub fn image_count(&self) -> usize {
        self.messages.iter().map(ChatMessage::image_count).sum()
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Usage {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Completion {
    pub text: String,
    pub usage: Usage,
    /// The provider stopped because of the output-token limit.
    pub truncated: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EmbeddingVector {
    pub values: Vec<f32>,
}

impl EmbeddingVector {
    pub fn new(values: Vec<f32>) -> Self {
        Self { values }
    }

    pub fn dimension(&self) -> usize {
        self.values.len()
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

#[derive(Debug, Clone, Error, PartialEq)]
pub enum BackendError {
    #[error("transport failure: {0}")]
    Transport(String),
    #[error("authentication rejected ({status}): {body}")]
    Auth { status: u16, body: String },
    #[error("provider error{}: {body}", .status.map(|s| format!(" ({s})")).unwrap_or_default())]
    Provider { status: Option<u16>, body: String },
    #[error("script exhausted: no response left for request")]
    ScriptExhausted,
    #[error("empty text")]
    EmptyText,
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("backend configuration: {0}")]
    Config(String),
}

/// A chat-completion and embedding provider.
pub trait Backend: Send + Sync {
    fn complete(&self, req: &ChatRequest) -> Result<Completion, BackendError>;

    /// One vector per input, same order, constant dimension.
    fn embed(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, BackendError>;

    /// Upper bound on concurrent requests callers should issue.
    fn max_in_flight(&self) -> usize {
        1
    }

    fn chat_model(&self) -> &str;

    fn embed_model(&self) -> &str;
}

pub(crate) fn check_embed_inputs(texts: &[String]) -> Result<(), BackendError> {
    if texts.is_empty() {
        return Err(BackendError::InvalidRequest("no texts to embed".into()));
    }
    if texts.iter().any(|t| t.trim().is_empty()) {
        return Err(BackendError::EmptyText);
    }
    Ok(())
}
