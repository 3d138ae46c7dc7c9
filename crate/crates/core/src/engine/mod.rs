//! Task engine: observe, propose, execute, evaluate, memorize.

pub mod actions;
pub mod checker;
pub mod executor;
pub mod state;
pub mod transcript;
pub mod workspace;

use std::collections::HashSet;
use std::time::Instant;

use serde::Serialize;
use thiserror::Error;

use crate::backends::{Backends, ChatMessage};
use crate::context::{compose, retrieve_references, ContributionReport, Reference, RetrievalConfig, DEFAULT_BUDGET};
use crate::encoder::encode;
use crate::memory::PrecisionLevel;
use crate::repository::MemoryRepository;
use crate::writer;

use actions::{parse_plan, ActionPlan, ActionRegistry};
use checker::{evaluate, Evaluation, Predicate};
use executor::{ExecResult, Executor};
use state::{step, EngineState, Event};
use transcript::{ActionRecord, ContextDigest, SessionTranscript};
use workspace::Workspace;

pub const DEFAULT_MAX_REVISIONS: usize = 3;
pub const DEFAULT_REPLY_TOKENS: u32 = 1024;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum EngineError {
    #[error("request is empty")]
    EmptyRequest,
    #[error("invalid engine config: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct EngineConfig {
    pub budget: usize,
    /// Maximum number of model proposals per session.
    pub max_revisions: usize,
    pub retrieval: RetrievalConfig,
    /// Render every reference at this level and ignore contribution ratings.
    pub precision_override: Option<PrecisionLevel>,
    /// Also summarize sessions that end in Fail.
    pub memorize_failures: bool,
    pub reply_tokens: u32,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            budget: DEFAULT_BUDGET,
            max_revisions: DEFAULT_MAX_REVISIONS,
            retrieval: RetrievalConfig::default(),
            precision_override: None,
            memorize_failures: true,
            reply_tokens: DEFAULT_REPLY_TOKENS,
        }
    }
}

impl EngineConfig {
    pub fn validate(&self) -> Result<(), EngineError> {
        if self.max_revisions == 0 {
            return Err(EngineError::InvalidConfig("max_revisions must be at least 1".into()));
        }
        if self.budget == 0 {
            return Err(EngineError::InvalidConfig("budget must be positive".into()));
        }
        Ok(())
    }
}

/// One task: the request, the starting workspace and the acceptance checks.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskInput {
    pub request: String,
    pub workspace: Workspace,
    /// An empty checker accepts any plan that executes.
    pub checker: Vec<Predicate>,
    pub ground_truth_ops: Option<usize>,
}

impl TaskInput {
    pub fn new(request: impl Into<String>) -> Self {
        Self { request: request.into(), workspace: Workspace::default(), checker: Vec::new(), ground_truth_ops: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SessionResult {
    pub status: EngineState,
    /// The final proposal's plan ran without an executor error.
    pub executed: bool,
    pub passed: bool,
    /// Generated op count over ground-truth op count, for the last parsed plan.
    pub op_ratio: Option<f64>,
    pub proposals: usize,
    /// Number of memory items written for this session.
    pub memorized: usize,
    pub transcript: SessionTranscript,
}

impl SessionResult {
    /// Copy with timing zeroed, for determinism comparisons.
    pub fn without_timing(&self) -> Self {
        let mut r = self.clone();
        r.transcript.wall_time = 0.0;
        r
    }
}

pub fn base_prompt(request: &str, ws: &Workspace, registry: &ActionRegistry) -> String {
    format!(
        "You are a spreadsheet assistant. Solve the task with the atomic actions below.\n\
         Available actions:\n{}\n\
         Reply with one fenced block tagged `actions`, one call per line, for example:\n\
         ```actions\nwrite_cell(addr=A1, value=5)\n```\n\
         You may add lines starting with RATIONALE: to explain the plan.\n\
         References are numbered from 1 in the order shown. After the block, rate how much each helped:\n\
         CONTRIBUTIONS: 1=<1-5>, 2=<1-5>, ...\n\n\
         Task: {}\nWorkspace: {}",
        registry.describe(),
        request,
        ws.summary()
    )
}

fn exec_feedback(result: &ExecResult, plan: &ActionPlan) -> String {
    match result.first_error() {
        Some((i, e)) => format!(
            "Feedback: the previous plan failed at step {} `{}`: {e}. Revise the plan.",
            i + 1,
            plan.steps[i]
        ),
        None => "Feedback: the previous plan failed.".into(),
    }
}

fn eval_feedback(evaluation: &Evaluation) -> String {
    let failed: Vec<String> = evaluation.failures().map(|v| format!("{} ({})", v.predicate, v.detail)).collect();
    format!(
        "Feedback: the previous plan executed but these checks failed: {}. Revise the plan.",
        failed.join("; ")
    )
}

/// Raise or lower each rated reference one level, matching the bundle's
/// ordinals back to `refs` by id.
fn apply_ratings(refs: &mut [Reference], shown: &[String], report: &ContributionReport) {
    for (i, id) in shown.iter().enumerate() {
        let Some(r) = refs.iter_mut().find(|r| &r.item.id == id) else { continue };
        r.level = match report.level(i + 1) {
            Some(4 | 5) => r.level.upgrade(),
            Some(1 | 2) => r.level.downgrade(),
            _ => r.level,
        };
    }
}

struct Session<'a> {
    transcript: SessionTranscript,
    state: EngineState,
    mr: &'a MemoryRepository,
    backends: &'a Backends,
}

impl Session<'_> {
    fn fire(&mut self, event: Event) {
        self.state = step(self.state, event).expect("engine follows the transition table");
        self.transcript.states.push(self.state);
    }

    fn memorize(&mut self) -> usize {
        let bundle = match writer::summarize_session(&self.transcript, self.backends.helper.as_deref()) {
            Ok(b) => b,
            Err(e) => {
                self.transcript.notes.push(format!("not memorized: {e}"));
                return 0;
            }
        };
        match writer::commit(&bundle, self.backends.embedder.as_ref(), self.mr) {
            Ok(ids) => ids.len(),
            Err(e) => {
                self.transcript.notes.push(format!("memorizing failed: {e}"));
                e.committed().len()
            }
        }
    }
}

pub fn run_task(
    task: &TaskInput,
    mr: &MemoryRepository,
    backends: &Backends,
    executor: &dyn Executor,
    config: &EngineConfig,
) -> Result<SessionResult, EngineError> {
    run_task_excluding(task, mr, backends, executor, config, &HashSet::new())
}

/// As [`run_task`], never retrieving the memories in `exclude`.
pub fn run_task_excluding(
    task: &TaskInput,
    mr: &MemoryRepository,
    backends: &Backends,
    executor: &dyn Executor,
    config: &EngineConfig,
    exclude: &HashSet<String>,
) -> Result<SessionResult, EngineError> {
    config.validate()?;
    if task.request.trim().is_empty() {
        return Err(EngineError::EmptyRequest);
    }
    let started = Instant::now();
    let mut s = Session {
        transcript: SessionTranscript::new(&task.request),
        state: EngineState::Init,
        mr,
        backends,
    };
    s.transcript.states.push(EngineState::Init);
    s.fire(Event::Start);

    // Observing
    let qo = encode(&task.request, backends.helper.as_deref()).map_err(|_| EngineError::EmptyRequest)?;
    let mut refs = match retrieve_references(&qo, mr, backends.embedder.as_ref(), &config.retrieval, exclude) {
        Ok(r) => r,
        Err(e) => {
            s.transcript.notes.push(format!("retrieval failed, continuing without references: {e}"));
            Vec::new()
        }
    };
    if let Some(level) = config.precision_override {
        refs.iter_mut().for_each(|r| r.level = level);
    }
    s.transcript.query_object = Some(qo);
    s.fire(Event::ReferencesRetrieved);

    let base = base_prompt(&task.request, &task.workspace, executor.registry());
    let mut proposals = 0;
    let mut feedback: Option<String> = None;
    let mut plan = ActionPlan::default();
    let mut executed = false;
    let mut memorized = 0;

    while !s.state.is_terminal() {
        match s.state {
            EngineState::Proposing => {
                if proposals >= config.max_revisions {
                    s.transcript.failure = Some(format!("revision cap of {} proposals reached", config.max_revisions));
                    s.fire(Event::RevisionCapReached);
                    continue;
                }
                proposals += 1;
                executed = false;
                let bundle = match compose(&base, &refs, feedback.as_deref(), config.budget) {
                    Ok(b) => b,
                    Err(e) => {
                        s.transcript.failure = Some(e.to_string());
                        s.fire(Event::ProposalFailed);
                        continue;
                    }
                };
                s.transcript.contexts.push(ContextDigest::from(&bundle));
                let messages = [ChatMessage::user(bundle.render())];
                let reply = match backends.chat.chat_complete(&messages, config.reply_tokens) {
                    Ok(r) => r,
                    Err(e) => {
                        s.transcript.failure = Some(e.to_string());
                        s.fire(Event::ProposalFailed);
                        continue;
                    }
                };
                s.transcript.llm_outputs.push(reply.clone());
                match parse_plan(&reply, executor.registry(), bundle.references.len()) {
                    Ok((parsed, report)) => {
                        if config.precision_override.is_none() {
                            let shown: Vec<String> = bundle.references.iter().map(|r| r.item.id.clone()).collect();
                            apply_ratings(&mut refs, &shown, &report);
                        }
                        s.transcript.plans.push(parsed.clone());
                        plan = parsed;
                        s.fire(Event::PlanParsed);
                    }
                    Err(e) => {
                        let lesson = format!(
                            "Feedback: the previous reply could not be used ({e}). Reply with a fenced `actions` block of registered actions."
                        );
                        s.transcript.lessons.push(lesson.clone());
                        feedback = Some(lesson);
                        s.fire(Event::PlanRejected);
                    }
                }
            }
            EngineState::Executing => {
                let result = executor.execute(&plan, &task.workspace);
                for (action, outcome) in plan.steps.iter().zip(&result.steps) {
                    s.transcript.action_log.push(ActionRecord {
                        attempt: proposals,
                        action: action.name.clone(),
                        params: action.params.iter().map(|(k, v)| (k.clone(), v.to_string())).collect(),
                        outcome: outcome.clone(),
                    });
                }
                if result.ok() {
                    executed = true;
                    s.fire(Event::StepsSucceeded);
                    // Evaluating
                    let evaluation = if task.checker.is_empty() {
                        Evaluation { passed: true, verdicts: Vec::new() }
                    } else {
                        evaluate(&result.workspace, &task.checker).expect("checker is non-empty")
                    };
                    let passed = evaluation.passed;
                    s.transcript.verdicts.push(evaluation.clone());
                    if passed {
                        s.fire(Event::EvaluationPassed);
                    } else {
                        let lesson = eval_feedback(&evaluation);
                        s.transcript.lessons.push(lesson.clone());
                        feedback = Some(lesson);
                        let revisions_remain = proposals < config.max_revisions;
                        if !revisions_remain {
                            s.transcript.failure = Some("evaluation failed with no revisions left".into());
                        }
                        s.fire(Event::EvaluationFailed { revisions_remain });
                    }
                } else {
                    let lesson = exec_feedback(&result, &plan);
                    s.transcript.lessons.push(lesson.clone());
                    feedback = Some(lesson);
                    s.fire(Event::ExecutorError);
                }
            }
            EngineState::ErrorFeedback => s.fire(Event::FeedbackPrepared),
            EngineState::Memorizing => {
                memorized = s.memorize();
                s.fire(Event::Memorized);
            }
            other => unreachable!("no handler needed for {other}"),
        }
    }

    s.transcript.final_status = Some(s.state);
    if s.state == EngineState::Fail && config.memorize_failures && !s.transcript.llm_outputs.is_empty() {
        memorized = s.memorize();
    }
    let passed = s.state == EngineState::End && s.transcript.verdicts.last().is_some_and(|v| v.passed);
    let op_ratio = match (s.transcript.plans.last(), task.ground_truth_ops) {
        (Some(p), Some(gt)) if gt > 0 => Some(p.len() as f64 / gt as f64),
        _ => None,
    };
    s.transcript.wall_time = started.elapsed().as_secs_f64();
    Ok(SessionResult {
        status: s.state,
        executed,
        passed,
        op_ratio,
        proposals,
        memorized,
        transcript: s.transcript,
    })
}
