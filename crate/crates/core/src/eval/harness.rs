use std::collections::HashSet;
use std::io::{self, Write};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;

use super::metrics::{a_percentile, exec_at_1, pass_at_1, MetricError};
use super::suite::TaskSpec;
use crate::backends::Backends;
use crate::engine::executor::Executor;
use crate::engine::state::EngineState;
use crate::engine::{run_task_excluding, EngineConfig, SessionResult};
use crate::memory::request_digest;
use crate::repository::MemoryRepository;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("suite is empty")]
    EmptySuite,
    #[error("rounds must be at least 1")]
    NoRounds,
    #[error("parallelism must be at least 1")]
    NoParallelism,
    #[error(transparent)]
    Metric(#[from] MetricError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub engine: EngineConfig,
    /// Sessions run at once within a round.
    pub parallelism: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            engine: EngineConfig { memorize_failures: false, ..EngineConfig::default() },
            parallelism: 1,
        }
    }
}

/// Per-task summary of a session.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TaskDigest {
    pub task_id: String,
    pub status: Option<EngineState>,
    pub executed: bool,
    pub passed: bool,
    pub op_ratio: Option<f64>,
    pub proposals: usize,
    pub memorized: usize,
    pub wall_time: f64,
    pub failure: Option<String>,
}

impl TaskDigest {
    pub fn from_result(task_id: &str, r: &SessionResult) -> Self {
        Self {
            task_id: task_id.to_string(),
            status: Some(r.status),
            executed: r.executed,
            passed: r.passed,
            op_ratio: r.op_ratio,
            proposals: r.proposals,
            memorized: r.memorized,
            wall_time: r.transcript.wall_time,
            failure: r.transcript.failure.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundReport {
    pub round: usize,
    pub exec_at_1: f64,
    pub pass_at_1: f64,
    /// `None` when no session produced a plan.
    pub a50: Option<f64>,
    pub a90: Option<f64>,
    pub per_task: Vec<TaskDigest>,
    pub wall_time: f64,
    pub mr_size_before: usize,
    pub mr_size_after: usize,
}

impl RoundReport {
    /// Copy with all timings zeroed, for determinism comparisons.
    pub fn without_timing(&self) -> Self {
        let mut r = self.clone();
        r.wall_time = 0.0;
        r.per_task.iter_mut().for_each(|t| t.wall_time = 0.0);
        r
    }

    pub fn ratios(&self) -> Vec<f64> {
        self.per_task.iter().filter_map(|t| t.op_ratio).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundDelta {
    pub round: usize,
    pub exec_at_1: f64,
    pub pass_at_1: f64,
    pub mr_growth: i64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Experiment {
    pub rounds: Vec<RoundReport>,
    /// Change of each round against the previous one, from round 2 on.
    pub deltas: Vec<RoundDelta>,
}

fn run_one(
    task: &TaskSpec,
    mr: &MemoryRepository,
    backends: &Backends,
    executor: &dyn Executor,
    config: &EngineConfig,
    pre_round: &HashSet<String>,
) -> TaskDigest {
    let digest = request_digest(&task.request);
    let exclude: HashSet<String> = mr
        .items()
        .into_iter()
        .filter(|i| i.source_task.as_deref() == Some(digest.as_str()) && !pre_round.contains(&i.id))
        .map(|i| i.id)
        .collect();
    match run_task_excluding(&task.to_input(), mr, backends, executor, config, &exclude) {
        Ok(r) => TaskDigest::from_result(&task.id, &r),
        Err(e) => TaskDigest {
            task_id: task.id.clone(),
            status: Some(EngineState::Fail),
            failure: Some(e.to_string()),
            ..TaskDigest::default()
        },
    }
}

/// Run every task once. Memories are committed as sessions finish, and a
/// task never sees memories written for its own request during this round.
pub fn run_round(
    round: usize,
    suite: &[TaskSpec],
    mr: &MemoryRepository,
    backends: &Backends,
    executor: &dyn Executor,
    config: &ExperimentConfig,
) -> Result<RoundReport, HarnessError> {
    if suite.is_empty() {
        return Err(HarnessError::EmptySuite);
    }
    if config.parallelism == 0 {
        return Err(HarnessError::NoParallelism);
    }
    let started = Instant::now();
    let mr_size_before = mr.len();
    let pre_round: HashSet<String> = mr.items().into_iter().map(|i| i.id).collect();

    let per_task = if config.parallelism == 1 {
        suite.iter().map(|t| run_one(t, mr, backends, executor, &config.engine, &pre_round)).collect()
    } else {
        let next = AtomicUsize::new(0);
        let slots: Mutex<Vec<Option<TaskDigest>>> = Mutex::new(vec![None; suite.len()]);
        std::thread::scope(|scope| {
            for _ in 0..config.parallelism.min(suite.len()) {
                scope.spawn(|| loop {
                    let i = next.fetch_add(1, Ordering::SeqCst);
                    let Some(task) = suite.get(i) else { break };
                    let d = run_one(task, mr, backends, executor, &config.engine, &pre_round);
                    slots.lock().expect("no worker panics while holding the lock")[i] = Some(d);
                });
            }
        });
        slots
            .into_inner()
            .expect("workers joined")
            .into_iter()
            .map(|d| d.expect("every task ran"))
            .collect::<Vec<_>>()
    };

    let ratios: Vec<f64> = per_task.iter().filter_map(|t: &TaskDigest| t.op_ratio).collect();
    let (a50, a90) = if ratios.is_empty() {
        (None, None)
    } else {
        (Some(a_percentile(&ratios, 50)?), Some(a_percentile(&ratios, 90)?))
    };
    Ok(RoundReport {
        round,
        exec_at_1: exec_at_1(&per_task)?,
        pass_at_1: pass_at_1(&per_task)?,
        a50,
        a90,
        per_task,
        wall_time: started.elapsed().as_secs_f64(),
        mr_size_before,
        mr_size_after: mr.len(),
    })
}

/// Run `rounds` rounds in sequence over one persistent repository.
pub fn run_experiment(
    suite: &[TaskSpec],
    rounds: usize,
    mr: &MemoryRepository,
    backends: &Backends,
    executor: &dyn Executor,
    config: &ExperimentConfig,
) -> Result<Experiment, HarnessError> {
    if rounds == 0 {
        return Err(HarnessError::NoRounds);
    }
    let mut reports: Vec<RoundReport> = Vec::with_capacity(rounds);
    for round in 1..=rounds {
        let report = run_round(round, suite, mr, backends, executor, config)?;
        log::info!(
            "round {round}: exec@1 {:.3}, pass@1 {:.3}, memories {} -> {}",
            report.exec_at_1,
            report.pass_at_1,
            report.mr_size_before,
            report.mr_size_after
        );
        reports.push(report);
    }
    let deltas = reports
        .windows(2)
        .map(|w| RoundDelta {
            round: w[1].round,
            exec_at_1: w[1].exec_at_1 - w[0].exec_at_1,
            pass_at_1: w[1].pass_at_1 - w[0].pass_at_1,
            mr_growth: w[1].mr_size_after as i64 - w[1].mr_size_before as i64,
        })
        .collect();
    Ok(Experiment { rounds: reports, deltas })
}

/// Line-delimited report: one `task` record per session, then one `round`
/// record per round.
pub fn write_report<W: Write>(experiment: &Experiment, mut out: W) -> io::Result<()> {
    for r in &experiment.rounds {
        for t in &r.per_task {
            let mut rec = serde_json::to_value(t)?;
            rec["record"] = json!("task");
            rec["round"] = json!(r.round);
            writeln!(out, "{rec}")?;
        }
    }
    for r in &experiment.rounds {
        let delta = experiment.deltas.iter().find(|d| d.round == r.round);
        let rec = json!({
            "record": "round",
            "round": r.round,
            "exec_at_1": r.exec_at_1,
            "pass_at_1": r.pass_at_1,
            "a50": r.a50,
            "a90": r.a90,
            "tasks": r.per_task.len(),
            "wall_time": r.wall_time,
            "mr_size_before": r.mr_size_before,
            "mr_size_after": r.mr_size_after,
            "delta": delta,
        });
        writeln!(out, "{rec}")?;
    }
    out.flush()
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.2}")).unwrap_or_else(|| "-".into())
}

pub fn render_table(experiment: &Experiment) -> String {
    let mut out = format!(
        "{:>5}  {:>6}  {:>6}  {:>5}  {:>5}  {:>9}  {:>8}\n",
        "round", "exec@1", "pass@1", "A50", "A90", "memories", "time(s)"
    );
    for r in &experiment.rounds {
        out.push_str(&format!(
            "{:>5}  {:>6.3}  {:>6.3}  {:>5}  {:>5}  {:>9}  {:>8.2}\n",
            r.round,
            r.exec_at_1,
            r.pass_at_1,
            opt(r.a50),
            opt(r.a90),
            format!("{}->{}", r.mr_size_before, r.mr_size_after),
            r.wall_time
        ));
    }
    out
}
