//! Atomic actions, action plans, and the parser for model replies.
//!
//! A reply carries its plan in a fenced block (preferably tagged
//! `actions`), one call per line:
//!
//! ````text
//! ```actions
//! write_cell(addr=A1, value=5)
//! set_format(addr=A1, tag="currency")
//! ```
//! CONTRIBUTIONS: 1=5, 2=2
//! ````
//!
//! Quoted values are text; bare values are numbers when they parse as finite
//! floats and text otherwise.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::context::ContributionReport;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Scalar {
    Number(f64),
    Text(String),
}

impl Scalar {
    pub fn as_text(&self) -> String {
        match self {
            Scalar::Number(n) => n.to_string(),
            Scalar::Text(t) => t.clone(),
        }
    }
}

impl fmt::Display for Scalar {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Scalar::Number(n) => write!(f, "{n}"),
            Scalar::Text(t) if is_bare(t) => f.write_str(t),
            Scalar::Text(t) => write!(f, "{t:?}"),
        }
    }
}

/// Text that reads back as the same text when written without quotes.
fn is_bare(t: &str) -> bool {
    !t.is_empty()
        && t.chars().all(|c| c.is_ascii_alphanumeric() || "_:.-".contains(c))
        && t.parse::<f64>().is_err()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ActionSignature {
    pub name: &'static str,
    pub params: &'static [&'static str],
    /// Words in a request that suggest this action.
    pub keywords: &'static [&'static str],
}

impl ActionSignature {
    /// Terms the request encoder matches: the keywords plus the name itself.
    pub fn match_terms(&self) -> impl Iterator<Item = &'static str> + '_ {
        self.keywords.iter().copied().chain(std::iter::once(self.name))
    }
}

pub const REFERENCE_ACTIONS: &[ActionSignature] = &[
    ActionSignature { name: "write_cell", params: &["addr", "value"], keywords: &["write", "enter", "fill"] },
    ActionSignature { name: "set_formula", params: &["addr", "op", "range"], keywords: &["formula", "sum", "total", "average", "minimum", "maximum"] },
    ActionSignature { name: "sort_rows", params: &["col", "order"], keywords: &["sort"] },
    ActionSignature { name: "filter_rows", params: &["col", "predicate", "value"], keywords: &["filter"] },
    ActionSignature { name: "insert_column", params: &["col"], keywords: &["insert"] },
    ActionSignature { name: "delete_column", params: &["col"], keywords: &["delete", "remove"] },
    ActionSignature { name: "set_format", params: &["addr", "tag"], keywords: &["format"] },
    ActionSignature { name: "create_chart", params: &["kind", "range"], keywords: &["chart", "plot", "graph"] },
];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ActionRegistry {
    actions: Vec<ActionSignature>,
}

impl ActionRegistry {
    pub fn new(actions: Vec<ActionSignature>) -> Self {
        Self { actions }
    }

    /// The reference executor's action set.
    pub fn reference() -> Self {
        Self::new(REFERENCE_ACTIONS.to_vec())
    }

    pub fn get(&self, name: &str) -> Option<&ActionSignature> {
        self.actions.iter().find(|a| a.name == name)
    }

    pub fn iter(&self) -> impl Iterator<Item = &ActionSignature> {
        self.actions.iter()
    }

    /// One line per action, `name(param, ...)`.
    pub fn describe(&self) -> String {
        self.actions
            .iter()
            .map(|a| format!("- {}({})", a.name, a.params.join(", ")))
            .collect::<Vec<_>>()
            .join("\n")
    }

    /// Check that `action` names a registered action with exactly its
    /// parameters.
    pub fn validate(&self, action: &AtomicAction) -> Result<(), PlanError> {
        let sig = self
            .get(&action.name)
            .ok_or_else(|| PlanError::UnknownAction(action.name.clone()))?;
        let mut given: Vec<&str> = action.params.iter().map(|(k, _)| k.as_str()).collect();
        let mut expected: Vec<&str> = sig.params.to_vec();
        given.sort_unstable();
        expected.sort_unstable();
        if given != expected {
            return Err(PlanError::BadArity {
                action: action.name.clone(),
                expected: sig.params.join(", "),
                given: action.params.iter().map(|(k, _)| k.as_str()).collect::<Vec<_>>().join(", "),
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AtomicAction {
    pub name: String,
    /// Named arguments in the order they were written.
    pub params: Vec<(String, Scalar)>,
}

impl AtomicAction {
    pub fn new(name: impl Into<String>, params: &[(&str, Scalar)]) -> Self {
        Self {
            name: name.into(),
            params: params.iter().map(|(k, v)| (k.to_string(), v.clone())).collect(),
        }
    }

    pub fn param(&self, key: &str) -> Option<&Scalar> {
        self.params.iter().find(|(k, _)| k == key).map(|(_, v)| v)
    }
}

impl fmt::Display for AtomicAction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let args: Vec<String> = self.params.iter().map(|(k, v)| format!("{k}={v}")).collect();
        write!(f, "{}({})", self.name, args.join(", "))
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ActionPlan {
    pub steps: Vec<AtomicAction>,
}

impl ActionPlan {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn action_names(&self) -> Vec<&str> {
        self.steps.iter().map(|s| s.name.as_str()).collect()
    }

    /// The plan as an `actions` fenced block.
    pub fn to_block(&self) -> String {
        let mut out = String::from("```actions\n");
        for s in &self.steps {
            out.push_str(&s.to_string());
            out.push('\n');
        }
        out.push_str("```");
        out
    }
}

impl fmt::Display for ActionPlan {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let lines: Vec<String> = self.steps.iter().map(|s| s.to_string()).collect();
        f.write_str(&lines.join("\n"))
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum PlanError {
    #[error("unparseable plan: {0}")]
    UnparseablePlan(String),
    #[error("unknown action '{0}'")]
    UnknownAction(String),
    #[error("{action} takes ({expected}), got ({given})")]
    BadArity { action: String, expected: String, given: String },
}

/// Body of the `actions`-tagged fenced block, else of the first fenced block.
fn action_block(output: &str) -> Option<Vec<&str>> {
    let mut blocks: Vec<(&str, Vec<&str>)> = Vec::new();
    let mut current: Option<(&str, Vec<&str>)> = None;
    for line in output.lines() {
        let trimmed = line.trim();
        if let Some(info) = trimmed.strip_prefix("```") {
            match current.take() {
                Some(block) => blocks.push(block),
                None => current = Some((info.trim(), Vec::new())),
            }
        } else if let Some((_, body)) = current.as_mut() {
            body.push(trimmed);
        }
    }
    let pick = blocks.iter().position(|(info, _)| *info == "actions").or(if blocks.is_empty() { None } else { Some(0) })?;
    Some(blocks.swap_remove(pick).1)
}

fn parse_value(raw: &str) -> Result<Scalar, String> {
    let raw = raw.trim();
    if raw.len() >= 2 && raw.starts_with('"') && raw.ends_with('"') {
        return serde_json::from_str::<String>(raw)
            .map(Scalar::Text)
            .map_err(|e| format!("bad string literal {raw}: {e}"));
    }
    if raw.is_empty() {
        return Err("empty value".into());
    }
    match raw.parse::<f64>() {
        Ok(n) if n.is_finite() => Ok(Scalar::Number(n)),
        _ => Ok(Scalar::Text(raw.to_string())),
    }
}

/// Split on commas outside double quotes.
fn split_args(args: &str) -> Vec<&str> {
    let mut parts = Vec::new();
    let (mut start, mut quoted, mut escaped) = (0, false, false);
    for (i, c) in args.char_indices() {
        match c {
            _ if escaped => escaped = false,
            '\\' if quoted => escaped = true,
            '"' => quoted = !quoted,
            ',' if !quoted => {
                parts.push(&args[start..i]);
                start = i + 1;
            }
            _ => {}
        }
    }
    parts.push(&args[start..]);
    parts
}

pub fn parse_action(line: &str) -> Result<AtomicAction, PlanError> {
    let bad = |why: &str| PlanError::UnparseablePlan(format!("{why}: `{line}`"));
    let open = line.find('(').ok_or_else(|| bad("missing '('"))?;
    if !line.ends_with(')') {
        return Err(bad("missing ')'"));
    }
    let name = line[..open].trim();
    if name.is_empty() || !name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_') {
        return Err(bad("bad action name"));
    }
    let inner = &line[open + 1..line.len() - 1];
    let mut params = Vec::new();
    if !inner.trim().is_empty() {
        for arg in split_args(inner) {
            let (k, v) = arg.split_once('=').ok_or_else(|| bad("argument without '='"))?;
            let k = k.trim();
            if k.is_empty() {
                return Err(bad("empty parameter name"));
            }
            if params.iter().any(|(p, _): &(String, Scalar)| p == k) {
                return Err(bad("repeated parameter"));
            }
            params.push((k.to_string(), parse_value(v).map_err(|e| bad(&e))?));
        }
    }
    Ok(AtomicAction { name: name.to_string(), params })
}

/// Parse the `CONTRIBUTIONS:` line. Out-of-range entries are ignored; no
/// line at all rates every reference neutral.
pub fn parse_contributions(output: &str, reference_count: usize) -> ContributionReport {
    let Some(line) = output
        .lines()
        .map(str::trim)
        .find_map(|l| l.strip_prefix("CONTRIBUTIONS:"))
    else {
        return ContributionReport::neutral(reference_count);
    };
    let mut report = ContributionReport::default();
    for entry in line.split(',') {
        let Some((ord, lvl)) = entry.split_once('=') else { continue };
        let (Ok(ord), Ok(lvl)) = (ord.trim().parse::<usize>(), lvl.trim().parse::<u8>()) else {
            continue;
        };
        if (1..=reference_count).contains(&ord) && (1..=5).contains(&lvl) {
            report.levels.insert(ord, lvl);
        }
    }
    report
}

/// Parse a model reply into a validated plan and its contribution report.
pub fn parse_plan(
    output: &str,
    registry: &ActionRegistry,
    reference_count: usize,
) -> Result<(ActionPlan, ContributionReport), PlanError> {
    let block = action_block(output)
        .ok_or_else(|| PlanError::UnparseablePlan("no fenced action block".into()))?;
    let mut steps = Vec::new();
    for line in block {
        if line.is_empty() || line.starts_with('#') || line.starts_with("//") {
            continue;
        }
        let action = parse_action(line)?;
        registry.validate(&action)?;
        steps.push(action);
    }
    if steps.is_empty() {
        return Err(PlanError::UnparseablePlan("action block is empty".into()));
    }
    Ok((ActionPlan { steps }, parse_contributions(output, reference_count)))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn reg() -> ActionRegistry {
        ActionRegistry::reference()
    }

    #[test]
    fn two_step_plan() {
        let out = "Here you go\n```actions\nwrite_cell(addr=A1, value=5)\nset_format(addr=A1, tag=\"money, usd\")\n```\n";
        let (plan, report) = parse_plan(out, &reg(), 2).unwrap();
        assert_eq!(plan.len(), 2);
        assert_eq!(plan.steps[0].param("value"), Some(&Scalar::Number(5.0)));
        assert_eq!(plan.steps[1].param("tag"), Some(&Scalar::Text("money, usd".into())));
        assert_eq!(report, ContributionReport::neutral(2));
    }

    #[test]
    fn no_block_is_unparseable() {
        assert!(matches!(
            parse_plan("write_cell(addr=A1, value=5)", &reg(), 0),
            Err(PlanError::UnparseablePlan(_))
        ));
        assert!(matches!(parse_plan("```\n```", &reg(), 0), Err(PlanError::UnparseablePlan(_))));
    }

    #[test]
    fn unknown_and_arity() {
        let out = "```\nexplode(addr=A1)\n```";
        assert_eq!(parse_plan(out, &reg(), 0), Err(PlanError::UnknownAction("explode".into())));
        let out = "```\nwrite_cell(addr=A1)\n```";
        assert!(matches!(parse_plan(out, &reg(), 0), Err(PlanError::BadArity { .. })));
        let out = "```\nwrite_cell(addr=A1, value=1, extra=2)\n```";
        assert!(matches!(parse_plan(out, &reg(), 0), Err(PlanError::BadArity { .. })));
    }

    #[test]
    fn contributions_grammar() {
        let out = "```actions\ninsert_column(col=C)\n```\nCONTRIBUTIONS: 1=5,2=2";
        let (_, report) = parse_plan(out, &reg(), 2).unwrap();
        assert_eq!(report.levels, [(1, 5), (2, 2)].into());
        let r = parse_contributions("CONTRIBUTIONS: 1=9, 3=4, x=1, 2=1", 2);
        assert_eq!(r.levels, [(2, 1)].into());
    }

    #[test]
    fn prefers_actions_block() {
        let out = "```text\nnot a plan\n```\n```actions\ndelete_column(col=B)\n```";
        let (plan, _) = parse_plan(out, &reg(), 0).unwrap();
        assert_eq!(plan.action_names(), vec!["delete_column"]);
    }

    #[test]
    fn display_reparses() {
        let a = AtomicAction::new(
            "write_cell",
            &[("addr", Scalar::Text("A1".into())), ("value", Scalar::Text("1e3 apples".into()))],
        );
        assert_eq!(parse_action(&a.to_string()).unwrap(), a);
        let b = AtomicAction::new("write_cell", &[("addr", Scalar::Text("B2".into())), ("value", Scalar::Text("42".into()))]);
        assert_eq!(parse_action(&b.to_string()).unwrap(), b);
    }
}
