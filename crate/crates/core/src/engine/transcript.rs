//! Session record consumed by the memory writer and written by `--transcript`.

use serde::{Deserialize, Serialize};

use super::actions::ActionPlan;
use super::checker::Evaluation;
use super::executor::StepOutcome;
use super::state::EngineState;
use crate::context::ContextBundle;
use crate::encoder::QueryObject;
use crate::memory::{MemoryKind, PrecisionLevel};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceDigest {
    pub id: String,
    pub kind: MemoryKind,
    pub level: PrecisionLevel,
    pub relevance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContextDigest {
    pub token_total: usize,
    pub budget: usize,
    pub references: Vec<ReferenceDigest>,
    pub feedback: Option<String>,
    pub rendered: String,
}

impl From<&ContextBundle> for ContextDigest {
    fn from(b: &ContextBundle) -> Self {
        Self {
            token_total: b.token_total,
            budget: b.budget,
            references: b
                .references
                .iter()
                .map(|r| ReferenceDigest {
                    id: r.item.id.clone(),
                    kind: r.item.kind,
                    level: r.level,
                    relevance: r.relevance,
                })
                .collect(),
            feedback: b.feedback.clone(),
            rendered: b.render(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionRecord {
    /// Proposal cycle the step belongs to, starting at 1.
    pub attempt: usize,
    pub action: String,
    pub params: Vec<(String, String)>,
    pub outcome: StepOutcome,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionTranscript {
    pub request: String,
    pub query_object: Option<QueryObject>,
    /// Every state entered, in order, once per visit.
    pub states: Vec<EngineState>,
    pub contexts: Vec<ContextDigest>,
    pub llm_outputs: Vec<String>,
    /// Plans that parsed, in proposal order.
    pub plans: Vec<ActionPlan>,
    pub action_log: Vec<ActionRecord>,
    pub verdicts: Vec<Evaluation>,
    /// Feedback texts handed back to the model after a failed attempt.
    pub lessons: Vec<String>,
    /// Non-fatal problems, such as degraded retrieval.
    pub notes: Vec<String>,
    pub final_status: Option<EngineState>,
    pub failure: Option<String>,
    pub wall_time: f64,
}

impl SessionTranscript {
    pub fn new(request: &str) -> Self {
        Self {
            request: request.to_string(),
            query_object: None,
            states: Vec::new(),
            contexts: Vec::new(),
            llm_outputs: Vec::new(),
            plans: Vec::new(),
            action_log: Vec::new(),
            verdicts: Vec::new(),
            lessons: Vec::new(),
            notes: Vec::new(),
            final_status: None,
            failure: None,
            wall_time: 0.0,
        }
    }

    pub fn visits(&self, state: EngineState) -> usize {
        self.states.iter().filter(|s| **s == state).count()
    }

    pub fn reached(&self, state: EngineState) -> bool {
        self.visits(state) > 0
    }

    /// `Init -> Observing -> ...`
    pub fn state_line(&self) -> String {
        self.states.iter().map(|s| s.to_string()).collect::<Vec<_>>().join(" -> ")
    }

    /// The latest evaluation passed and the session did not fail.
    pub fn succeeded(&self) -> bool {
        self.final_status != Some(EngineState::Fail) && self.verdicts.last().is_some_and(|v| v.passed)
    }

    /// Human-readable rendering for `--transcript`.
    pub fn render(&self) -> String {
        let mut out = format!("request: {}\nstates: {}\n", self.request, self.state_line());
        if let Some(status) = self.final_status {
            out.push_str(&format!("status: {status}\n"));
        }
        if let Some(why) = &self.failure {
            out.push_str(&format!("failure: {why}\n"));
        }
        for note in &self.notes {
            out.push_str(&format!("note: {note}\n"));
        }
        for (i, ctx) in self.contexts.iter().enumerate() {
            out.push_str(&format!(
                "\n--- context {} ({} / {} tokens, {} references) ---\n{}\n",
                i + 1,
                ctx.token_total,
                ctx.budget,
                ctx.references.len(),
                ctx.rendered
            ));
            if let Some(reply) = self.llm_outputs.get(i) {
                out.push_str(&format!("--- reply {} ---\n{}\n", i + 1, reply));
            }
        }
        if !self.action_log.is_empty() {
            out.push_str("\n--- actions ---\n");
            for a in &self.action_log {
                let args: Vec<String> = a.params.iter().map(|(k, v)| format!("{k}={v}")).collect();
                let status = match &a.outcome {
                    StepOutcome::Ok => "ok".to_string(),
                    StepOutcome::Error(e) => format!("error: {e}"),
                    StepOutcome::NotRun => "not run".to_string(),
                };
                out.push_str(&format!("[{}] {}({}) {}\n", a.attempt, a.action, args.join(", "), status));
            }
        }
        for (i, ev) in self.verdicts.iter().enumerate() {
            out.push_str(&format!("\n--- evaluation {} ({}) ---\n", i + 1, if ev.passed { "pass" } else { "fail" }));
            for v in &ev.verdicts {
                out.push_str(&format!("{} {}: {}\n", if v.holds { "ok  " } else { "FAIL" }, v.predicate, v.detail));
            }
        }
        out.push_str(&format!("\nwall_time: {:.3}s\n", self.wall_time));
        out
    }
}
