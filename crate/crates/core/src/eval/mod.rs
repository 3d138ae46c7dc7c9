//! Task suites, multi-round experiments and their metrics.

pub mod harness;
pub mod metrics;
pub mod suite;

pub use harness::{render_table, run_experiment, run_round, write_report, Experiment, ExperimentConfig, RoundDelta, RoundReport, TaskDigest};
pub use metrics::{a_percentile, exec_at_1, pass_at_1, MetricError};
pub use suite::{load_suite, parse_suite, select, SuiteError, TaskSpec};
