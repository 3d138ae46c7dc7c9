//! Memory input: summarize a finished session at three precisions and commit
//! the summaries to the repository.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backends::{BackendError, ChatBackend, ChatMessage, Embedder};
use crate::engine::checker::Evaluation;
use crate::engine::transcript::SessionTranscript;
use crate::memory::{request_digest, validate_renditions, MemoryKind};
use crate::repository::{MemoryDraft, MemoryRepository, RepositoryError};

pub const RATIONALE_PREFIX: &str = "RATIONALE:";

#[derive(Debug, Error)]
pub enum WriterError {
    #[error("transcript has no model output to summarize")]
    TranscriptTooEarly,
}

#[derive(Debug, Error)]
pub enum CommitError {
    #[error("embedding failure after committing {} item(s): {source}", committed.len())]
    EmbeddingFailure { committed: Vec<String>, source: BackendError },
    #[error("storage failure after committing {} item(s): {source}", committed.len())]
    StorageFailure { committed: Vec<String>, source: RepositoryError },
}

impl CommitError {
    /// Ids that were durably stored before the failure.
    pub fn committed(&self) -> &[String] {
        match self {
            CommitError::EmbeddingFailure { committed, .. } | CommitError::StorageFailure { committed, .. } => committed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Renditions {
    pub original_text: String,
    pub concise_text: String,
    pub brief_text: String,
}

impl Renditions {
    pub fn validate(&self) -> Result<(), String> {
        validate_renditions(&self.original_text, &self.concise_text, &self.brief_text)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SummaryBundle {
    pub task_memory: Option<Renditions>,
    pub knowledge: Option<Renditions>,
    pub success: bool,
    /// Digest of the originating request.
    pub source_task: Option<String>,
}

impl SummaryBundle {
    pub fn kinds(&self) -> impl Iterator<Item = (MemoryKind, &Renditions)> {
        [(MemoryKind::TaskMemory, self.task_memory.as_ref()), (MemoryKind::Knowledge, self.knowledge.as_ref())]
            .into_iter()
            .filter_map(|(k, r)| r.map(|r| (k, r)))
    }
}

fn first_line(text: &str) -> &str {
    text.lines().map(str::trim).find(|l| !l.is_empty()).unwrap_or(text.trim())
}

fn render_verdicts(verdicts: &[Evaluation], success: bool) -> String {
    let mut out = format!("Outcome: {}", if success { "success" } else { "failure" });
    for (i, ev) in verdicts.iter().enumerate() {
        out.push_str(&format!("\nEvaluation {}: {}", i + 1, if ev.passed { "pass" } else { "fail" }));
        if ev.verdicts.is_empty() {
            out.push_str(" (no checks)");
        }
        for v in &ev.verdicts {
            out.push_str(&format!("\n- {} {}: {}", if v.holds { "ok" } else { "FAIL" }, v.predicate, v.detail));
        }
    }
    out
}

fn rationale(t: &SessionTranscript) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    for line in t.llm_outputs.iter().flat_map(|o| o.lines()) {
        if let Some(r) = line.trim().strip_prefix(RATIONALE_PREFIX) {
            let r = r.trim().to_string();
            if !r.is_empty() && !out.contains(&r) {
                out.push(r);
            }
        }
    }
    out
}

/// The extractive renderings. Each level is a prefix of the next, so token
/// counts never decrease from brief to original.
pub fn extractive_summary(t: &SessionTranscript) -> Result<SummaryBundle, WriterError> {
    if t.llm_outputs.is_empty() {
        return Err(WriterError::TranscriptTooEarly);
    }
    let success = t.succeeded();
    let plan = t.plans.last();
    let ops = match plan {
        Some(p) if !p.is_empty() => p.action_names().join(", "),
        _ => "(none)".into(),
    };
    let plan_text = match plan {
        Some(p) if !p.is_empty() => format!("Plan:\n{p}"),
        _ => "Plan: (none)".into(),
    };
    let request = t.request.trim();
    let brief = format!("{}\nOps: {ops}", first_line(request));
    let verdicts = render_verdicts(&t.verdicts, success);

    let concise = format!("{request}\n{plan_text}");
    let task_memory = Renditions {
        original_text: format!("{concise}\nVerdicts:\n{verdicts}"),
        concise_text: concise,
        brief_text: brief.clone(),
    };

    let mut points: Vec<String> = Vec::new();
    for l in &t.lessons {
        if !points.contains(l) {
            points.push(l.clone());
        }
    }
    points.extend(rationale(t));
    let knowledge = (!points.is_empty()).then(|| {
        let concise = format!(
            "{brief}\nKey points:\n{}",
            points.iter().map(|p| format!("- {p}")).collect::<Vec<_>>().join("\n")
        );
        Renditions {
            original_text: format!("{concise}\nDetails:\n{plan_text}\n{verdicts}"),
            concise_text: concise,
            brief_text: brief,
        }
    });

    Ok(SummaryBundle {
        task_memory: Some(task_memory),
        knowledge,
        success,
        source_task: Some(request_digest(&t.request)),
    })
}

const SUMMARY_PROMPT: &str = "Summarize the spreadsheet session below for later reuse.
Reply with exactly two lines:
CONCISE: <the request and the essential steps>
BRIEF: <a few words naming the task and its operations>";

fn helper_renditions(extractive: &Renditions, helper: &dyn ChatBackend) -> Option<Renditions> {
    let messages = [ChatMessage::system(SUMMARY_PROMPT), ChatMessage::user(extractive.original_text.clone())];
    let reply = match helper.chat_complete(&messages, 256) {
        Ok(r) => r,
        Err(e) => {
            log::warn!("summary model failed ({e}), using extractive summary");
            return None;
        }
    };
    let field = |prefix: &str| {
        reply.lines().find_map(|l| l.trim().strip_prefix(prefix).map(|v| v.trim().to_string()))
    };
    let candidate = Renditions {
        original_text: extractive.original_text.clone(),
        concise_text: field("CONCISE:")?,
        brief_text: field("BRIEF:")?,
    };
    match candidate.validate() {
        Ok(()) => Some(candidate),
        Err(e) => {
            log::warn!("summary model reply rejected ({e}), using extractive summary");
            None
        }
    }
}

/// Summarize a session. A helper model may rewrite the task memory's concise
/// and brief texts; anything it gets wrong falls back to the extractive form.
pub fn summarize_session(t: &SessionTranscript, helper: Option<&dyn ChatBackend>) -> Result<SummaryBundle, WriterError> {
    let mut bundle = extractive_summary(t)?;
    if let (Some(helper), Some(task)) = (helper, bundle.task_memory.as_mut()) {
        if let Some(better) = helper_renditions(task, helper) {
            *task = better;
        }
    }
    Ok(bundle)
}

/// Store one item per kind present, each embedded from its concise text.
pub fn commit(bundle: &SummaryBundle, embedder: &dyn Embedder, mr: &MemoryRepository) -> Result<Vec<String>, CommitError> {
    let mut committed = Vec::new();
    for (kind, r) in bundle.kinds() {
        let embedding = match embedder.embed(&r.concise_text) {
            Ok(e) => e,
            Err(source) => return Err(CommitError::EmbeddingFailure { committed, source }),
        };
        let draft = MemoryDraft {
            kind,
            original_text: r.original_text.clone(),
            concise_text: r.concise_text.clone(),
            brief_text: r.brief_text.clone(),
            embedding,
            success: bundle.success,
            source_task: bundle.source_task.clone(),
        };
        match mr.insert(draft) {
            Ok(id) => committed.push(id),
            Err(source) => return Err(CommitError::StorageFailure { committed, source }),
        }
    }
    Ok(committed)
}
