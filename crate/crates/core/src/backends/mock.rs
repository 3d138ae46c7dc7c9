//! Deterministic backends: a rule-scripted chat model and a feature-hashing
//! embedder.

use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};

use serde::{Deserialize, Serialize};

use super::{conversation_digest, validate_messages, BackendError, ChatBackend, ChatMessage, Embedder};
use crate::index::Embedding;

/// One scripted reply. A rule fires when every condition it sets holds over
/// the concatenated message contents; the first firing rule wins.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ScriptRule {
    /// Substrings that must all appear.
    #[serde(default)]
    pub contains: Vec<String>,
    /// Substrings that must all be absent.
    #[serde(default)]
    pub excludes: Vec<String>,
    /// Exact conversation digest (see [`conversation_digest`]).
    #[serde(default)]
    pub digest: Option<String>,
    pub reply: String,
}

impl ScriptRule {
    pub fn when(contains: &[&str], reply: impl Into<String>) -> Self {
        Self {
            contains: contains.iter().map(|s| s.to_string()).collect(),
            reply: reply.into(),
            ..Default::default()
        }
    }

    pub fn unless(mut self, excludes: &[&str]) -> Self {
        self.excludes.extend(excludes.iter().map(|s| s.to_string()));
        self
    }

    fn matches(&self, text: &str, digest: &str) -> bool {
        self.digest.as_deref().is_none_or(|d| d == digest)
            && self.contains.iter().all(|s| text.contains(s.as_str()))
            && !self.excludes.iter().any(|s| text.contains(s.as_str()))
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Script {
    #[serde(default)]
    pub rules: Vec<ScriptRule>,
    /// Reply for unmatched requests; `None` makes them fail with `NoMatch`.
    #[serde(default)]
    pub default: Option<String>,
}

impl Script {
    pub fn from_json(text: &str) -> Result<Self, BackendError> {
        serde_json::from_str(text).map_err(|e| BackendError::InvalidScript(e.to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, BackendError> {
        let text = std::fs::read_to_string(path.as_ref()).map_err(|e| {
            BackendError::InvalidScript(format!("{}: {e}", path.as_ref().display()))
        })?;
        Self::from_json(&text)
    }
}

/// Chat backend that answers from a [`Script`].
#[derive(Debug, Default)]
pub struct ScriptedChat {
    script: Script,
    calls: AtomicUsize,
}

impl ScriptedChat {
    pub fn new(script: Script) -> Self {
        Self { script, calls: AtomicUsize::new(0) }
    }

    pub fn from_rules(rules: Vec<ScriptRule>, default: Option<String>) -> Self {
        Self::new(Script { rules, default })
    }

    /// Number of requests answered or rejected so far.
    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::Relaxed)
    }
}

impl ChatBackend for ScriptedChat {
    fn chat_complete(&self, messages: &[ChatMessage], _max_tokens: u32) -> Result<String, BackendError> {
        validate_messages(messages)?;
        self.calls.fetch_add(1, Ordering::Relaxed);
        let text: String = messages
            .iter()
            .map(|m| m.content.as_str())
            .collect::<Vec<_>>()
            .join("\n");
        let digest = conversation_digest(messages);
        self.script
            .rules
            .iter()
            .find(|r| r.matches(&text, &digest))
            .map(|r| r.reply.clone())
            .or_else(|| self.script.default.clone())
            .ok_or(BackendError::NoMatch)
    }
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

/// Signed feature hashing of lowercase character 3-grams, L2-normalized.
/// Texts that share more 3-grams land closer together.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HashEmbedder {
    dim: usize,
}

impl HashEmbedder {
    pub fn new(dim: usize) -> Self {
        assert!(dim > 0, "embedding dimension must be positive");
        Self { dim }
    }
}

impl Embedder for HashEmbedder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, text: &str) -> Result<Embedding, BackendError> {
        if text.is_empty() {
            return Err(BackendError::InvalidRequest("cannot embed empty text".into()));
        }
        let chars: Vec<char> = text.to_lowercase().chars().collect();
        let grams: Vec<String> = if chars.len() < 3 {
            vec![chars.iter().collect()]
        } else {
            chars.windows(3).map(|w| w.iter().collect()).collect()
        };

        let mut values = vec![0.0f64; self.dim];
        for gram in &grams {
            let h = fnv1a(gram.as_bytes());
            let sign = if h >> 63 == 0 { 1.0 } else { -1.0 };
            values[(h % self.dim as u64) as usize] += sign;
        }
        let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 {
            // every gram cancelled out; fall back to a one-hot of the whole text
            values[(fnv1a(text.as_bytes()) % self.dim as u64) as usize] = 1.0;
        } else {
            values.iter_mut().for_each(|v| *v /= norm);
        }
        Embedding::new(values).map_err(|e| BackendError::MalformedResponse(e.to_string()))
    }
}
