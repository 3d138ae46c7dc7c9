//! Memory item model shared by the repository, the context assembler and
//! the memory writer.

use std::fmt;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::index::Embedding;
use crate::tokens::count_tokens;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum MemoryKind {
    TaskMemory,
    Knowledge,
}

impl MemoryKind {
    pub const ALL: [MemoryKind; 2] = [MemoryKind::TaskMemory, MemoryKind::Knowledge];

    pub fn as_str(&self) -> &'static str {
        match self {
            MemoryKind::TaskMemory => "TaskMemory",
            MemoryKind::Knowledge => "Knowledge",
        }
    }
}

impl fmt::Display for MemoryKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// How much of a memory is rendered into a context. Ordered
/// `Brief < Concise < Original`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PrecisionLevel {
    Brief,
    Concise,
    Original,
}

impl PrecisionLevel {
    pub fn downgrade(self) -> Self {
        match self {
            PrecisionLevel::Original => PrecisionLevel::Concise,
            _ => PrecisionLevel::Brief,
        }
    }

    pub fn upgrade(self) -> Self {
        match self {
            PrecisionLevel::Brief => PrecisionLevel::Concise,
            _ => PrecisionLevel::Original,
        }
    }
}

impl std::str::FromStr for PrecisionLevel {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "original" => Ok(PrecisionLevel::Original),
            "concise" => Ok(PrecisionLevel::Concise),
            "brief" => Ok(PrecisionLevel::Brief),
            other => Err(format!("unknown precision level '{other}'")),
        }
    }
}

/// Hex SHA-256 of a request; links a memory to the task that produced it.
pub fn request_digest(request: &str) -> String {
    hex::encode(Sha256::digest(request.as_bytes()))
}

/// One stored experience or knowledge unit. Field order is the archive
/// record layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemoryItem {
    pub id: String,
    pub kind: MemoryKind,
    pub original_text: String,
    pub concise_text: String,
    pub brief_text: String,
    pub embedding: Embedding,
    pub success: bool,
    pub created_at: DateTime<Utc>,
    pub source_task: Option<String>,
}

impl MemoryItem {
    pub fn text(&self, level: PrecisionLevel) -> &str {
        match level {
            PrecisionLevel::Original => &self.original_text,
            PrecisionLevel::Concise => &self.concise_text,
            PrecisionLevel::Brief => &self.brief_text,
        }
    }

    /// Checks the text invariants: all renditions non-empty and token counts
    /// non-increasing from original to brief.
    pub fn validate(&self) -> Result<(), String> {
        validate_renditions(&self.original_text, &self.concise_text, &self.brief_text)?;
        if self.id.is_empty() {
            return Err("id is empty".into());
        }
        Ok(())
    }
}

pub fn validate_renditions(original: &str, concise: &str, brief: &str) -> Result<(), String> {
    for (name, text) in [("original", original), ("concise", concise), ("brief", brief)] {
        if text.trim().is_empty() {
            return Err(format!("{name}_text is empty"));
        }
    }
    let (o, c, b) = (count_tokens(original), count_tokens(concise), count_tokens(brief));
    if !(b <= c && c <= o) {
        return Err(format!(
            "token counts must satisfy brief <= concise <= original, got {b}/{c}/{o}"
        ));
    }
    Ok(())
}
