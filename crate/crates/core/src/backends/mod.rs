//! Chat-completion and embedding backends.
//!
//! The engine talks to models only through [`ChatBackend`] and [`Embedder`].
//! [`http`] holds the wire clients; [`mock`] holds deterministic stand-ins
//! used by tests and offline runs.

pub mod http;
pub mod mock;

use std::fmt;
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::index::Embedding;

pub use http::{HttpChatClient, HttpEmbedder};
pub use mock::{HashEmbedder, Script, ScriptRule, ScriptedChat};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BackendError {
    #[error("backend unavailable: {0}")]
    BackendUnavailable(String),
    #[error("malformed response: {0}")]
    MalformedResponse(String),
    #[error("embedding dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("no scripted reply matches the request")]
    NoMatch,
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("invalid script: {0}")]
    InvalidScript(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

impl Role {
    pub fn as_str(&self) -> &'static str {
        match self {
            Role::System => "system",
            Role::User => "user",
            Role::Assistant => "assistant",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub content: String,
}

impl ChatMessage {
    pub fn system(content: impl Into<String>) -> Self {
        Self { role: Role::System, content: content.into() }
    }

    pub fn user(content: impl Into<String>) -> Self {
        Self { role: Role::User, content: content.into() }
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        Self { role: Role::Assistant, content: content.into() }
    }
}

/// Reject empty conversations and empty system/user turns.
pub fn validate_messages(messages: &[ChatMessage]) -> Result<(), BackendError> {
    if messages.is_empty() {
        return Err(BackendError::InvalidRequest("no messages".into()));
    }
    for m in messages {
        if m.role != Role::Assistant && m.content.trim().is_empty() {
            return Err(BackendError::InvalidRequest(format!(
                "empty {} message",
                m.role.as_str()
            )));
        }
    }
    Ok(())
}

/// Hex SHA-256 over the role-tagged conversation. Scripts can key replies on it.
pub fn conversation_digest(messages: &[ChatMessage]) -> String {
    let mut h = Sha256::new();
    for m in messages {
        h.update(m.role.as_str().as_bytes());
        h.update(b": ");
        h.update(m.content.as_bytes());
        h.update(b"\n");
    }
    hex::encode(h.finalize())
}

pub trait ChatBackend: Send + Sync {
    fn chat_complete(&self, messages: &[ChatMessage], max_tokens: u32) -> Result<String, BackendError>;
}

pub trait Embedder: Send + Sync {
    fn dim(&self) -> usize;
    fn embed(&self, text: &str) -> Result<Embedding, BackendError>;
}

impl<T: ChatBackend + ?Sized> ChatBackend for Arc<T> {
    fn chat_complete(&self, messages: &[ChatMessage], max_tokens: u32) -> Result<String, BackendError> {
        (**self).chat_complete(messages, max_tokens)
    }
}

impl<T: Embedder + ?Sized> Embedder for Arc<T> {
    fn dim(&self) -> usize {
        (**self).dim()
    }

    fn embed(&self, text: &str) -> Result<Embedding, BackendError> {
        (**self).embed(text)
    }
}

/// An API key that never prints.
#[derive(Clone, PartialEq, Eq)]
pub struct ApiKey(String);

impl ApiKey {
    pub fn new(key: impl Into<String>) -> Self {
        Self(key.into())
    }

    pub fn expose(&self) -> &str {
        &self.0
    }
}

impl fmt::Debug for ApiKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("ApiKey(***)")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BackendConfig {
    pub base_url: String,
    pub model: String,
    pub timeout: Duration,
    pub max_retries: u32,
    /// First retry delay; doubles on each further retry.
    pub backoff: Duration,
    pub temperature: f64,
    pub api_key: Option<ApiKey>,
}

impl Default for BackendConfig {
    fn default() -> Self {
        Self {
            base_url: "http://localhost:11434".into(),
            model: "llama3.1:70b".into(),
            timeout: Duration::from_secs(120),
            max_retries: 2,
            backoff: Duration::from_secs(1),
            temperature: 0.0,
            api_key: None,
        }
    }
}

impl BackendConfig {
    pub fn validate(&self) -> Result<(), BackendError> {
        if self.timeout.is_zero() {
            return Err(BackendError::InvalidRequest("timeout must be positive".into()));
        }
        if self.base_url.trim().is_empty() {
            return Err(BackendError::InvalidRequest("base_url is empty".into()));
        }
        Ok(())
    }

    /// Upper bound on how long one call can block, retries included.
    pub fn worst_case_latency(&self) -> Duration {
        let attempts = self.max_retries + 1;
        let backoff: Duration = (0..self.max_retries).map(|i| self.backoff * 2u32.pow(i)).sum();
        self.timeout * attempts + backoff
    }
}

/// The model endpoints one engine uses.
#[derive(Clone)]
pub struct Backends {
    /// The main reasoning model.
    pub chat: Arc<dyn ChatBackend>,
    /// Lightweight model for request decomposition and session summaries.
    /// `None` selects the deterministic fallbacks.
    pub helper: Option<Arc<dyn ChatBackend>>,
    pub embedder: Arc<dyn Embedder>,
}

impl Backends {
    pub fn new(chat: Arc<dyn ChatBackend>, embedder: Arc<dyn Embedder>) -> Self {
        Self { chat, helper: None, embedder }
    }

    pub fn with_helper(mut self, helper: Arc<dyn ChatBackend>) -> Self {
        self.helper = Some(helper);
        self
    }
}
