//! Post-execution checks on the final workspace.

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

use super::workspace::{CellAddr, CellValue, ChartKind, Column, Workspace};

pub const DEFAULT_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CheckError {
    #[error("malformed predicate '{kind}': {reason}")]
    MalformedPredicate { kind: String, reason: String },
    #[error("checker has no predicates")]
    EmptyChecker,
}

/// A predicate as written in a suite file: `{"kind": ..., "args": {...}}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredicateSpec {
    pub kind: String,
    #[serde(default)]
    pub args: Map<String, Value>,
}

impl PredicateSpec {
    pub fn new(kind: &str, args: Value) -> Self {
        let args = match args {
            Value::Object(m) => m,
            _ => Map::new(),
        };
        Self { kind: kind.to_string(), args }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SortOrder {
    Asc,
    Desc,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Predicate {
    CellEquals { addr: CellAddr, value: CellValue, tol: f64 },
    RangeSorted { col: Column, order: SortOrder },
    ChartExists { chart: ChartKind },
    CellEmpty { addr: CellAddr },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub predicate: String,
    pub holds: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub passed: bool,
    pub verdicts: Vec<Verdict>,
}

impl Evaluation {
    pub fn failures(&self) -> impl Iterator<Item = &Verdict> {
        self.verdicts.iter().filter(|v| !v.holds)
    }
}

impl Predicate {
    pub fn from_spec(spec: &PredicateSpec) -> Result<Self, CheckError> {
        let bad = |reason: String| CheckError::MalformedPredicate { kind: spec.kind.clone(), reason };
        let text = |key: &str| -> Result<String, CheckError> {
            match spec.args.get(key) {
                Some(Value::String(s)) => Ok(s.clone()),
                Some(other) => Err(bad(format!("{key} must be a string, got {other}"))),
                None => Err(bad(format!("missing {key}"))),
            }
        };
        let addr = |key: &str| -> Result<CellAddr, CheckError> {
            let raw = text(key)?;
            raw.parse().map_err(|e| bad(format!("{e}")))
        };
        let expected_keys: &[&str] = match spec.kind.as_str() {
            "cell_equals" => &["addr", "value", "tol"],
            "range_sorted" => &["col", "order"],
            "chart_exists" => &["kind"],
            "cell_empty" => &["addr"],
            other => return Err(bad(format!("unknown predicate kind '{other}'"))),
        };
        if let Some(extra) = spec.args.keys().find(|k| !expected_keys.contains(&k.as_str())) {
            return Err(bad(format!("unexpected argument {extra}")));
        }
        match spec.kind.as_str() {
            "cell_equals" => {
                let value = match spec.args.get("value") {
                    Some(Value::Number(n)) => CellValue::Number(n.as_f64().ok_or_else(|| bad("bad number".into()))?),
                    Some(Value::String(s)) => CellValue::Text(s.clone()),
                    Some(other) => return Err(bad(format!("value must be a number or string, got {other}"))),
                    None => return Err(bad("missing value".into())),
                };
                let tol = match spec.args.get("tol") {
                    None => DEFAULT_TOLERANCE,
                    Some(v) => match v.as_f64() {
                        Some(t) if t.is_finite() && t >= 0.0 => t,
                        _ => return Err(bad(format!("tol must be a non-negative number, got {v}"))),
                    },
                };
                Ok(Predicate::CellEquals { addr: addr("addr")?, value, tol })
            }
            "range_sorted" => {
                let col: Column = text("col")?.parse().map_err(|e| bad(format!("{e}")))?;
                let order = match text("order")?.to_ascii_lowercase().as_str() {
                    "asc" => SortOrder::Asc,
                    "desc" => SortOrder::Desc,
                    other => return Err(bad(format!("order must be asc or desc, got {other}"))),
                };
                Ok(Predicate::RangeSorted { col, order })
            }
            "chart_exists" => {
                let chart: ChartKind = text("kind")?.parse().map_err(bad)?;
                Ok(Predicate::ChartExists { chart })
            }
            _ => Ok(Predicate::CellEmpty { addr: addr("addr")? }),
        }
    }

    pub fn describe(&self) -> String {
        match self {
            Predicate::CellEquals { addr, value, .. } => format!("cell_equals({addr}, {value})"),
            Predicate::RangeSorted { col, order } => format!("range_sorted({col}, {order:?})").to_lowercase(),
            Predicate::ChartExists { chart } => format!("chart_exists({chart:?})").to_lowercase(),
            Predicate::CellEmpty { addr } => format!("cell_empty({addr})"),
        }
    }

    pub fn check(&self, ws: &Workspace) -> Verdict {
        let (holds, detail) = match self {
            Predicate::CellEquals { addr, value, tol } => match (ws.get(*addr), value) {
                (Some(CellValue::Number(got)), CellValue::Number(want)) => {
                    ((got - want).abs() <= *tol, format!("found {got}"))
                }
                (Some(got), want) => (got == want, format!("found {got}")),
                (None, _) => (false, "cell is empty".into()),
            },
            Predicate::RangeSorted { col, order } => {
                let values = ws.column(*col);
                let sorted = values.windows(2).all(|w| {
                    let ord = match (w[0].1, w[1].1) {
                        (CellValue::Number(a), CellValue::Number(b)) => a.partial_cmp(b),
                        (CellValue::Text(a), CellValue::Text(b)) => Some(a.cmp(b)),
                        _ => None,
                    };
                    match (ord, order) {
                        (None, _) => false,
                        (Some(o), SortOrder::Asc) => o.is_le(),
                        (Some(o), SortOrder::Desc) => o.is_ge(),
                    }
                });
                let contiguous = values.windows(2).all(|w| w[1].0 == w[0].0 + 1);
                let shown: Vec<String> = values.iter().map(|(_, v)| v.to_string()).collect();
                (sorted && contiguous, format!("column {col} is [{}]", shown.join(", ")))
            }
            Predicate::ChartExists { chart } => {
                let n = ws.charts.iter().filter(|c| c.kind == *chart).count();
                (n > 0, format!("{n} matching chart(s)"))
            }
            Predicate::CellEmpty { addr } => match ws.get(*addr) {
                None => (true, "empty".into()),
                Some(v) => (false, format!("found {v}")),
            },
        };
        Verdict { predicate: self.describe(), holds, detail }
    }
}

pub fn compile(specs: &[PredicateSpec]) -> Result<Vec<Predicate>, CheckError> {
    specs.iter().map(Predicate::from_spec).collect()
}

/// Pass iff every predicate holds.
pub fn evaluate(ws: &Workspace, checker: &[Predicate]) -> Result<Evaluation, CheckError> {
    if checker.is_empty() {
        return Err(CheckError::EmptyChecker);
    }
    let verdicts: Vec<Verdict> = checker.iter().map(|p| p.check(ws)).collect();
    Ok(Evaluation { passed: verdicts.iter().all(|v| v.holds), verdicts })
}
