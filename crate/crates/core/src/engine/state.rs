//! Session state machine.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum EngineState {
    Init,
    Observing,
    Proposing,
    Executing,
    ErrorFeedback,
    Evaluating,
    Memorizing,
    End,
    Fail,
}

impl EngineState {
    pub const ALL: [EngineState; 9] = [
        EngineState::Init,
        EngineState::Observing,
        EngineState::Proposing,
        EngineState::Executing,
        EngineState::ErrorFeedback,
        EngineState::Evaluating,
        EngineState::Memorizing,
        EngineState::End,
        EngineState::Fail,
    ];

    pub fn is_terminal(self) -> bool {
        matches!(self, EngineState::End | EngineState::Fail)
    }
}

impl fmt::Display for EngineState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Event {
    Start,
    ReferencesRetrieved,
    PlanParsed,
    /// The reply held no usable plan.
    PlanRejected,
    RevisionCapReached,
    /// The model could not be reached or the context could not be built.
    ProposalFailed,
    StepsSucceeded,
    ExecutorError,
    FeedbackPrepared,
    EvaluationPassed,
    EvaluationFailed { revisions_remain: bool },
    Memorized,
}

impl Event {
    pub const ALL: [Event; 13] = [
        Event::Start,
        Event::ReferencesRetrieved,
        Event::PlanParsed,
        Event::PlanRejected,
        Event::RevisionCapReached,
        Event::ProposalFailed,
        Event::StepsSucceeded,
        Event::ExecutorError,
        Event::FeedbackPrepared,
        Event::EvaluationPassed,
        Event::EvaluationFailed { revisions_remain: true },
        Event::EvaluationFailed { revisions_remain: false },
        Event::Memorized,
    ];
}

#[derive(Debug, Error, Clone, Copy, PartialEq, Eq)]
#[error("illegal transition from {state} on {event:?}")]
pub struct IllegalTransition {
    pub state: EngineState,
    pub event: Event,
}

/// The transition table. Every pair not listed is illegal.
pub fn step(state: EngineState, event: Event) -> Result<EngineState, IllegalTransition> {
    use EngineState::*;
    use Event::*;
    let next = match (state, event) {
        (Init, Start) => Observing,
        (Observing, ReferencesRetrieved) => Proposing,
        (Proposing, PlanParsed) => Executing,
        (Proposing, PlanRejected) => ErrorFeedback,
        (Proposing, RevisionCapReached) => Fail,
        (Proposing, ProposalFailed) => Fail,
        (Executing, StepsSucceeded) => Evaluating,
        (Executing, ExecutorError) => ErrorFeedback,
        (ErrorFeedback, FeedbackPrepared) => Proposing,
        (Evaluating, EvaluationPassed) => Memorizing,
        (Evaluating, EvaluationFailed { revisions_remain: true }) => ErrorFeedback,
        (Evaluating, EvaluationFailed { revisions_remain: false }) => Fail,
        (Memorizing, Memorized) => End,
        _ => return Err(IllegalTransition { state, event }),
    };
    Ok(next)
}
