use thiserror::Error;

use super::harness::TaskDigest;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricError {
    #[error("no results")]
    EmptyResults,
    #[error("no ratios")]
    EmptyRatios,
    #[error("percentile must be in 1..=100, got {0}")]
    InvalidPercentile(u32),
    #[error("ratios must be finite and positive, got {0}")]
    InvalidRatio(f64),
}

fn fraction(results: &[TaskDigest], hit: impl Fn(&TaskDigest) -> bool) -> Result<f64, MetricError> {
    if results.is_empty() {
        return Err(MetricError::EmptyResults);
    }
    Ok(results.iter().filter(|r| hit(r)).count() as f64 / results.len() as f64)
}

pub fn exec_at_1(results: &[TaskDigest]) -> Result<f64, MetricError> {
    fraction(results, |r| r.executed)
}

pub fn pass_at_1(results: &[TaskDigest]) -> Result<f64, MetricError> {
    fraction(results, |r| r.passed)
}

/// Nearest-rank percentile: the element at 1-based rank `ceil(p/100 * n)`
/// of the ascending sort.
pub fn a_percentile(ratios: &[f64], p: u32) -> Result<f64, MetricError> {
    if ratios.is_empty() {
        return Err(MetricError::EmptyRatios);
    }
    if !(1..=100).contains(&p) {
        return Err(MetricError::InvalidPercentile(p));
    }
    if let Some(bad) = ratios.iter().find(|r| !(r.is_finite() && **r > 0.0)) {
        return Err(MetricError::InvalidRatio(*bad));
    }
    let mut sorted = ratios.to_vec();
    sorted.sort_by(f64::total_cmp);
    let rank = (p as usize * sorted.len()).div_ceil(100);
    Ok(sorted[rank - 1])
}
