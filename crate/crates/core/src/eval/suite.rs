use std::collections::{BTreeMap, HashSet};
use std::path::Path;

use serde::Deserialize;
use thiserror::Error;

use crate::engine::checker::{compile, Predicate, PredicateSpec};
use crate::engine::workspace::{CellValue, Workspace};
use crate::engine::TaskInput;

#[derive(Debug, Error)]
pub enum SuiteError {
    #[error("cannot read suite: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed suite: {0}")]
    MalformedSuite(String),
    #[error("duplicate task id '{0}'")]
    DuplicateTaskId(String),
    #[error("unknown task id '{0}'")]
    UnknownTaskId(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaskSpec {
    pub id: String,
    pub request: String,
    pub initial_workspace: Workspace,
    pub checker: Vec<Predicate>,
    pub ground_truth_ops: usize,
}

impl TaskSpec {
    pub fn to_input(&self) -> TaskInput {
        TaskInput {
            request: self.request.clone(),
            workspace: self.initial_workspace.clone(),
            checker: self.checker.clone(),
            ground_truth_ops: Some(self.ground_truth_ops),
        }
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawTask {
    id: String,
    request: String,
    #[serde(default)]
    initial_workspace: BTreeMap<String, CellValue>,
    checker: Vec<PredicateSpec>,
    ground_truth_ops: i64,
}

#[derive(Deserialize)]
struct RawSuite {
    tasks: Vec<RawTask>,
}

/// Parse and validate a suite document. Tasks keep their file order.
pub fn parse_suite(text: &str) -> Result<Vec<TaskSpec>, SuiteError> {
    let raw: RawSuite = serde_json::from_str(text).map_err(|e| SuiteError::MalformedSuite(e.to_string()))?;
    let mut seen = HashSet::new();
    let mut tasks = Vec::with_capacity(raw.tasks.len());
    for t in raw.tasks {
        let bad = |why: String| SuiteError::MalformedSuite(format!("task '{}': {why}", t.id));
        if t.id.trim().is_empty() {
            return Err(SuiteError::MalformedSuite("task with empty id".into()));
        }
        if !seen.insert(t.id.clone()) {
            return Err(SuiteError::DuplicateTaskId(t.id));
        }
        if t.request.trim().is_empty() {
            return Err(bad("request is empty".into()));
        }
        if t.ground_truth_ops < 1 {
            return Err(bad(format!("ground_truth_ops must be at least 1, got {}", t.ground_truth_ops)));
        }
        if t.checker.is_empty() {
            return Err(bad("checker is empty".into()));
        }
        let checker = compile(&t.checker).map_err(|e| bad(e.to_string()))?;
        let initial_workspace =
            Workspace::from_literal(t.initial_workspace.iter().map(|(k, v)| (k.as_str(), v.clone()))).map_err(bad)?;
        tasks.push(TaskSpec {
            id: t.id,
            request: t.request,
            initial_workspace,
            checker,
            ground_truth_ops: t.ground_truth_ops as usize,
        });
    }
    Ok(tasks)
}

pub fn load_suite(path: impl AsRef<Path>) -> Result<Vec<TaskSpec>, SuiteError> {
    parse_suite(&std::fs::read_to_string(path)?)
}

/// The tasks named in `ids`, in suite order.
pub fn select(tasks: &[TaskSpec], ids: &[String]) -> Result<Vec<TaskSpec>, SuiteError> {
    if let Some(missing) = ids.iter().find(|id| !tasks.iter().any(|t| &t.id == *id)) {
        return Err(SuiteError::UnknownTaskId(missing.clone()));
    }
    Ok(tasks.iter().filter(|t| ids.contains(&t.id)).cloned().collect())
}
