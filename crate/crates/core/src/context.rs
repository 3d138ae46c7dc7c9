//! Memory output: picks references from the repository, grades each by
//! relevance into a precision level, and composes the model context under a
//! token budget.
//!
//! When the context is too large, the lowest-relevance reference that can
//! still lose precision is downgraded one step at a time; once every
//! reference is brief, the lowest-relevance ones are dropped. The base prompt
//! and feedback are never truncated and reference order never changes.

use std::collections::{BTreeMap, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backends::{BackendError, Embedder};
use crate::encoder::QueryObject;
use crate::memory::{MemoryItem, MemoryKind, PrecisionLevel};
use crate::repository::{MemoryRepository, RepositoryError};
use crate::tokens::count_tokens;

pub const DEFAULT_BUDGET: usize = 8192;
pub const REFERENCES_PER_KIND: usize = 3;

#[derive(Debug, Error)]
pub enum ContextError {
    #[error("budget of {budget} tokens cannot hold the base prompt and feedback ({required} tokens)")]
    BudgetTooSmall { budget: usize, required: usize },
    #[error("embedding failure: {0}")]
    EmbeddingFailure(#[from] BackendError),
    #[error(transparent)]
    Repository(#[from] RepositoryError),
}

/// Relevance cut-offs for the initial precision of a reference.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrecisionThresholds {
    pub original: f64,
    pub concise: f64,
}

impl Default for PrecisionThresholds {
    fn default() -> Self {
        Self { original: 0.85, concise: 0.60 }
    }
}

pub fn assign_precision(relevance: f64, thresholds: &PrecisionThresholds) -> PrecisionLevel {
    if relevance >= thresholds.original {
        PrecisionLevel::Original
    } else if relevance >= thresholds.concise {
        PrecisionLevel::Concise
    } else {
        PrecisionLevel::Brief
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ReferenceLabel {
    KeyReference,
    GeneralReference,
}

impl fmt::Display for ReferenceLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ReferenceLabel::KeyReference => "Key Reference",
            ReferenceLabel::GeneralReference => "General Reference",
        })
    }
}

/// A retrieved memory at the precision it will be rendered with.
#[derive(Debug, Clone, PartialEq)]
pub struct Reference {
    pub item: MemoryItem,
    pub relevance: f64,
    pub level: PrecisionLevel,
}

impl Reference {
    pub fn label(&self) -> ReferenceLabel {
        if self.level == PrecisionLevel::Original {
            ReferenceLabel::KeyReference
        } else {
            ReferenceLabel::GeneralReference
        }
    }

    pub fn text(&self) -> &str {
        self.item.text(self.level)
    }

    pub fn render(&self) -> String {
        format!(
            "### {} ({}, relevance={:.2})\n{}\n\n",
            self.label(),
            self.item.kind,
            self.relevance,
            self.text()
        )
    }

    pub fn tokens(&self) -> usize {
        count_tokens(&self.render())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ContextBundle {
    pub base_prompt: String,
    pub references: Vec<Reference>,
    pub feedback: Option<String>,
    pub token_total: usize,
    pub budget: usize,
    /// Number of single-step precision downgrades applied while fitting.
    pub downgrades: usize,
    /// Ids dropped to fit, lowest relevance first.
    pub dropped: Vec<String>,
}

fn base_part(base_prompt: &str) -> String {
    format!("{base_prompt}\n\n")
}

fn fixed_cost(base_prompt: &str, feedback: Option<&str>) -> usize {
    count_tokens(&base_part(base_prompt)) + feedback.map(count_tokens).unwrap_or(0)
}

impl ContextBundle {
    /// The exact text sent to the model: base prompt, reference blocks, then
    /// feedback. `token_total` is the sum of the token counts of these parts.
    pub fn render(&self) -> String {
        let mut out = base_part(&self.base_prompt);
        for r in &self.references {
            out.push_str(&r.render());
        }
        if let Some(fb) = &self.feedback {
            out.push_str(fb);
        }
        out
    }
}

/// Build a context within `budget` tokens.
pub fn compose(
    base_prompt: &str,
    refs: &[Reference],
    feedback: Option<&str>,
    budget: usize,
) -> Result<ContextBundle, ContextError> {
    let fixed = fixed_cost(base_prompt, feedback);
    if fixed > budget {
        return Err(ContextError::BudgetTooSmall { budget, required: fixed });
    }
    let mut refs = refs.to_vec();
    refs.sort_by(|a, b| b.relevance.total_cmp(&a.relevance));

    let mut costs: Vec<usize> = refs.iter().map(Reference::tokens).collect();
    let mut total = fixed + costs.iter().sum::<usize>();
    let mut downgrades = 0;
    let mut dropped = Vec::new();
    while total > budget {
        if let Some(i) = refs.iter().rposition(|r| r.level != PrecisionLevel::Brief) {
            refs[i].level = refs[i].level.downgrade();
            let cost = refs[i].tokens();
            total = total - costs[i] + cost;
            costs[i] = cost;
            downgrades += 1;
        } else {
            let r = refs.pop().expect("over budget with references left");
            total -= costs.pop().expect("costs track references");
            dropped.push(r.item.id);
        }
    }

    Ok(ContextBundle {
        base_prompt: base_prompt.to_string(),
        references: refs,
        feedback: feedback.map(str::to_string),
        token_total: total,
        budget,
        downgrades,
        dropped,
    })
}

/// The model's 1-5 self-assessment per reference, keyed by the 1-based
/// position of the reference in the context that produced it.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ContributionReport {
    pub levels: BTreeMap<usize, u8>,
}

impl ContributionReport {
    /// Every reference rated 3 (neutral).
    pub fn neutral(count: usize) -> Self {
        Self { levels: (1..=count).map(|i| (i, 3)).collect() }
    }

    pub fn level(&self, ordinal: usize) -> Option<u8> {
        self.levels.get(&ordinal).copied()
    }
}

/// Ratings 4-5 raise precision one step, 1-2 lower it one step, 3 keeps it.
/// References without a rating are left alone.
pub fn apply_contribution_feedback(refs: &[Reference], report: &ContributionReport) -> Vec<Reference> {
    refs.iter()
        .enumerate()
        .map(|(i, r)| {
            let mut r = r.clone();
            r.level = match report.level(i + 1) {
                Some(4 | 5) => r.level.upgrade(),
                Some(1 | 2) => r.level.downgrade(),
                _ => r.level,
            };
            r
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct RetrievalConfig {
    pub per_kind: usize,
    pub success_only: bool,
    pub thresholds: PrecisionThresholds,
}

impl Default for RetrievalConfig {
    fn default() -> Self {
        Self {
            per_kind: REFERENCES_PER_KIND,
            success_only: true,
            thresholds: PrecisionThresholds::default(),
        }
    }
}

/// Up to `per_kind` task memories and `per_kind` knowledge items, merged and
/// sorted by relevance, each graded by [`assign_precision`].
pub fn retrieve_references(
    qo: &QueryObject,
    mr: &MemoryRepository,
    embedder: &dyn Embedder,
    config: &RetrievalConfig,
    exclude: &HashSet<String>,
) -> Result<Vec<Reference>, ContextError> {
    let mut refs = Vec::new();
    for (kind, query) in [
        (MemoryKind::TaskMemory, &qo.task_memory_query),
        (MemoryKind::Knowledge, &qo.knowledge_query),
    ] {
        let embedding = embedder.embed(query)?;
        let hits = mr.search_excluding(&embedding, kind, config.per_kind, config.success_only, exclude)?;
        refs.extend(hits.into_iter().map(|h| Reference {
            level: assign_precision(h.relevance, &config.thresholds),
            relevance: h.relevance,
            item: h.item,
        }));
    }
    refs.sort_by(|a, b| {
        b.relevance
            .total_cmp(&a.relevance)
            .then_with(|| a.item.id.cmp(&b.item.id))
    });
    Ok(refs)
}
