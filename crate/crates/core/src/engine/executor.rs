//! Plan execution over a [`Workspace`].

use std::cmp::Ordering;
use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::actions::{ActionPlan, ActionRegistry, AtomicAction, PlanError, Scalar};
use super::workspace::{CellAddr, CellValue, Chart, ChartKind, Column, Range, Workspace, MAX_COLUMNS};

#[derive(Debug, Error, Clone, PartialEq, Serialize, Deserialize)]
pub enum ExecError {
    #[error("bad address: {0}")]
    BadAddress(String),
    #[error("type error: {0}")]
    TypeError(String),
    #[error("unknown action '{0}'")]
    UnknownAction(String),
    #[error("bad argument: {0}")]
    BadArgument(String),
}

impl From<PlanError> for ExecError {
    fn from(e: PlanError) -> Self {
        match e {
            PlanError::UnknownAction(name) => ExecError::UnknownAction(name),
            other => ExecError::BadArgument(other.to_string()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", content = "error", rename_all = "snake_case")]
pub enum StepOutcome {
    Ok,
    Error(ExecError),
    NotRun,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExecResult {
    pub steps: Vec<StepOutcome>,
    /// Final workspace, or the state before the failing step.
    pub workspace: Workspace,
}

impl ExecResult {
    pub fn ok(&self) -> bool {
        self.steps.iter().all(|s| *s == StepOutcome::Ok)
    }

    /// Index and error of the first failing step.
    pub fn first_error(&self) -> Option<(usize, &ExecError)> {
        self.steps.iter().enumerate().find_map(|(i, s)| match s {
            StepOutcome::Error(e) => Some((i, e)),
            _ => None,
        })
    }
}

pub trait Executor: Send + Sync {
    fn registry(&self) -> &ActionRegistry;

    /// Apply one action in place. On error `ws` may be partially modified;
    /// [`Executor::execute`] discards such states.
    fn apply(&self, action: &AtomicAction, ws: &mut Workspace) -> Result<(), ExecError>;

    /// Apply the steps in order, stopping at the first failure.
    fn execute(&self, plan: &ActionPlan, ws: &Workspace) -> ExecResult {
        let mut current = ws.clone();
        let mut steps = Vec::with_capacity(plan.len());
        let mut failed = false;
        for action in &plan.steps {
            if failed {
                steps.push(StepOutcome::NotRun);
                continue;
            }
            let mut next = current.clone();
            let result = self
                .registry()
                .validate(action)
                .map_err(ExecError::from)
                .and_then(|_| self.apply(action, &mut next));
            match result {
                Ok(()) => {
                    current = next;
                    steps.push(StepOutcome::Ok);
                }
                Err(e) => {
                    failed = true;
                    steps.push(StepOutcome::Error(e));
                }
            }
        }
        ExecResult { steps, workspace: current }
    }
}

/// The reference table engine.
#[derive(Debug, Clone)]
pub struct SheetExecutor {
    registry: ActionRegistry,
}

impl Default for SheetExecutor {
    fn default() -> Self {
        Self { registry: ActionRegistry::reference() }
    }
}

fn text_arg(a: &AtomicAction, key: &str) -> Result<String, ExecError> {
    a.param(key)
        .map(Scalar::as_text)
        .ok_or_else(|| ExecError::BadArgument(format!("missing {key}")))
}

fn addr_arg(a: &AtomicAction, key: &str) -> Result<CellAddr, ExecError> {
    let raw = text_arg(a, key)?;
    raw.parse().map_err(|_| ExecError::BadAddress(raw))
}

fn col_arg(a: &AtomicAction, key: &str) -> Result<Column, ExecError> {
    let raw = text_arg(a, key)?;
    raw.parse().map_err(|_| ExecError::BadAddress(raw))
}

fn range_arg(a: &AtomicAction, key: &str) -> Result<Range, ExecError> {
    let raw = text_arg(a, key)?;
    raw.parse().map_err(|_| ExecError::BadAddress(raw))
}

fn choice<'a>(a: &AtomicAction, key: &str, options: &[&'a str]) -> Result<&'a str, ExecError> {
    let raw = text_arg(a, key)?.to_ascii_lowercase();
    options
        .iter()
        .find(|o| **o == raw)
        .copied()
        .ok_or_else(|| ExecError::BadArgument(format!("{key} must be one of {options:?}, got '{raw}'")))
}

fn to_cell(v: &Scalar) -> Result<CellValue, ExecError> {
    match v {
        Scalar::Number(n) if n.is_finite() => Ok(CellValue::Number(*n)),
        Scalar::Number(n) => Err(ExecError::BadArgument(format!("non-finite number {n}"))),
        Scalar::Text(t) => Ok(CellValue::Text(t.clone())),
    }
}

/// Total order within one kind; `None` when kinds are mixed.
fn compare(a: &CellValue, b: &CellValue) -> Option<Ordering> {
    match (a, b) {
        (CellValue::Number(x), CellValue::Number(y)) => Some(x.total_cmp(y)),
        (CellValue::Text(x), CellValue::Text(y)) => Some(x.cmp(y)),
        _ => None,
    }
}

fn ensure_uniform<'a>(values: impl Iterator<Item = &'a CellValue>, what: &str) -> Result<(), ExecError> {
    let mut kinds = values.map(|v| matches!(v, CellValue::Number(_)));
    if let Some(first) = kinds.next() {
        if kinds.any(|k| k != first) {
            return Err(ExecError::TypeError(format!("{what} mixes numbers and text")));
        }
    }
    Ok(())
}

/// Replace rows `min..=max` with `order` (a list of source rows), packing
/// them upward from `min`.
fn reorder_rows(ws: &mut Workspace, min: u32, max: u32, order: &[u32]) {
    let mut by_row: BTreeMap<u32, Vec<(Column, CellValue)>> = BTreeMap::new();
    let keys: Vec<CellAddr> = ws.cells.keys().copied().filter(|a| a.row >= min && a.row <= max).collect();
    for addr in keys {
        let v = ws.cells.remove(&addr).expect("key just listed");
        by_row.entry(addr.row).or_default().push((addr.col, v));
    }
    for (i, src) in order.iter().enumerate() {
        for (col, v) in by_row.remove(src).unwrap_or_default() {
            ws.cells.insert(CellAddr { col, row: min + i as u32 }, v);
        }
    }
}

fn shift_columns<V>(map: &mut BTreeMap<CellAddr, V>, from: Column, delta: i16) {
    let moved: Vec<(CellAddr, V)> = {
        let keys: Vec<CellAddr> = map.keys().copied().filter(|a| a.col >= from).collect();
        keys.into_iter().map(|k| (k, map.remove(&k).expect("listed key"))).collect()
    };
    for (a, v) in moved {
        let col = (a.col.0 as i16 + delta) as u8;
        map.insert(CellAddr { col: Column(col), row: a.row }, v);
    }
}

impl Executor for SheetExecutor {
    fn registry(&self) -> &ActionRegistry {
        &self.registry
    }

    fn apply(&self, a: &AtomicAction, ws: &mut Workspace) -> Result<(), ExecError> {
        match a.name.as_str() {
            "write_cell" => {
                let addr = addr_arg(a, "addr")?;
                let value = to_cell(a.param("value").expect("validated"))?;
                ws.cells.insert(addr, value);
            }
            "set_formula" => {
                let addr = addr_arg(a, "addr")?;
                let op = choice(a, "op", &["sum", "avg", "min", "max"])?;
                let range = range_arg(a, "range")?;
                let mut nums = Vec::new();
                for (at, v) in ws.cells.iter().filter(|(at, _)| range.contains(**at)) {
                    match v {
                        CellValue::Number(n) => nums.push(*n),
                        CellValue::Text(_) => {
                            return Err(ExecError::TypeError(format!("{op} over text cell {at}")))
                        }
                    }
                }
                let result = match op {
                    "sum" => nums.iter().sum(),
                    _ if nums.is_empty() => {
                        return Err(ExecError::TypeError(format!("{op} over a range with no numbers")))
                    }
                    "avg" => nums.iter().sum::<f64>() / nums.len() as f64,
                    "min" => nums.iter().copied().fold(f64::INFINITY, f64::min),
                    _ => nums.iter().copied().fold(f64::NEG_INFINITY, f64::max),
                };
                ws.cells.insert(addr, CellValue::Number(result));
            }
            "sort_rows" => {
                let col = col_arg(a, "col")?;
                let descending = choice(a, "order", &["asc", "desc"])? == "desc";
                let Some((min, max)) = ws.row_span() else { return Ok(()) };
                ensure_uniform(ws.column(col).into_iter().map(|(_, v)| v), "sort column")?;
                let mut rows: Vec<u32> = (min..=max).collect();
                // stable sort; rows with an empty key stay last
                rows.sort_by(|r1, r2| {
                    let k1 = ws.get(CellAddr { col, row: *r1 });
                    let k2 = ws.get(CellAddr { col, row: *r2 });
                    match (k1, k2) {
                        (Some(x), Some(y)) => {
                            let o = compare(x, y).unwrap_or(Ordering::Equal);
                            if descending { o.reverse() } else { o }
                        }
                        (Some(_), None) => Ordering::Less,
                        (None, Some(_)) => Ordering::Greater,
                        (None, None) => Ordering::Equal,
                    }
                });
                reorder_rows(ws, min, max, &rows);
            }
            "filter_rows" => {
                let col = col_arg(a, "col")?;
                let pred = choice(a, "predicate", &["eq", "gt", "lt"])?;
                let target = to_cell(a.param("value").expect("validated"))?;
                if pred != "eq" && !matches!(target, CellValue::Number(_)) {
                    return Err(ExecError::TypeError(format!("{pred} needs a numeric value")));
                }
                let Some((min, max)) = ws.row_span() else { return Ok(()) };
                let mut keep = Vec::new();
                for row in min..=max {
                    let cell = ws.get(CellAddr { col, row });
                    let hit = match (pred, cell) {
                        (_, None) => false,
                        ("eq", Some(v)) => compare(v, &target) == Some(Ordering::Equal),
                        (_, Some(CellValue::Text(_))) => {
                            return Err(ExecError::TypeError(format!("{pred} on text in row {row}")))
                        }
                        (p, Some(v)) => {
                            let o = compare(v, &target).expect("both numeric");
                            (p == "gt" && o == Ordering::Greater) || (p == "lt" && o == Ordering::Less)
                        }
                    };
                    if hit {
                        keep.push(row);
                    }
                }
                reorder_rows(ws, min, max, &keep);
            }
            "insert_column" => {
                let col = col_arg(a, "col")?;
                let last = Column(MAX_COLUMNS - 1);
                if ws.cells.keys().chain(ws.formats.keys()).any(|k| k.col == last) {
                    return Err(ExecError::BadAddress(format!("no room to insert before {col}: column {last} is in use")));
                }
                shift_columns(&mut ws.cells, col, 1);
                shift_columns(&mut ws.formats, col, 1);
            }
            "delete_column" => {
                let col = col_arg(a, "col")?;
                ws.cells.retain(|k, _| k.col != col);
                ws.formats.retain(|k, _| k.col != col);
                shift_columns(&mut ws.cells, Column(col.0 + 1), -1);
                shift_columns(&mut ws.formats, Column(col.0 + 1), -1);
            }
            "set_format" => {
                let addr = addr_arg(a, "addr")?;
                ws.formats.insert(addr, text_arg(a, "tag")?);
            }
            "create_chart" => {
                let kind: ChartKind = text_arg(a, "kind")?.parse().map_err(ExecError::BadArgument)?;
                let range = range_arg(a, "range")?;
                ws.charts.push(Chart { kind, range });
            }
            other => return Err(ExecError::UnknownAction(other.to_string())),
        }
        Ok(())
    }
}
