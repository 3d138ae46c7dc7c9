//! In-memory table the reference executor operates on.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

pub const MAX_COLUMNS: u8 = 26;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AddressError(pub String);

impl fmt::Display for AddressError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "bad address '{}'", self.0)
    }
}

/// Column letter A..Z as a zero-based index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Column(pub u8);

impl FromStr for Column {
    type Err = AddressError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut chars = s.trim().chars();
        match (chars.next(), chars.next()) {
            (Some(c), None) if c.is_ascii_alphabetic() => {
                Ok(Column(c.to_ascii_uppercase() as u8 - b'A'))
            }
            _ => Err(AddressError(s.to_string())),
        }
    }
}

impl fmt::Display for Column {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", (b'A' + self.0) as char)
    }
}

impl Serialize for Column {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Column {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct CellAddr {
    pub col: Column,
    pub row: u32,
}

impl CellAddr {
    pub fn new(col: u8, row: u32) -> Self {
        Self { col: Column(col), row }
    }
}

impl FromStr for CellAddr {
    type Err = AddressError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let t = s.trim();
        let bad = || AddressError(s.to_string());
        let split = t.find(|c: char| c.is_ascii_digit()).ok_or_else(bad)?;
        let col: Column = t[..split].parse().map_err(|_| bad())?;
        let row: u32 = t[split..].parse().map_err(|_| bad())?;
        if row == 0 {
            return Err(bad());
        }
        Ok(CellAddr { col, row })
    }
}

impl fmt::Display for CellAddr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}{}", self.col, self.row)
    }
}

impl Serialize for CellAddr {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for CellAddr {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Rectangular range, normalized so `start` is the top-left corner.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Range {
    pub start: CellAddr,
    pub end: CellAddr,
}

impl Range {
    pub fn contains(&self, a: CellAddr) -> bool {
        a.col >= self.start.col && a.col <= self.end.col && a.row >= self.start.row && a.row <= self.end.row
    }
}

impl FromStr for Range {
    type Err = AddressError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (a, b) = s.split_once(':').unwrap_or((s, s));
        let (a, b): (CellAddr, CellAddr) = (a.parse()?, b.parse()?);
        Ok(Range {
            start: CellAddr { col: a.col.min(b.col), row: a.row.min(b.row) },
            end: CellAddr { col: a.col.max(b.col), row: a.row.max(b.row) },
        })
    }
}

impl fmt::Display for Range {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.start, self.end)
    }
}

impl Serialize for Range {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Range {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum CellValue {
    Number(f64),
    Text(String),
}

impl fmt::Display for CellValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CellValue::Number(n) => write!(f, "{n}"),
            CellValue::Text(t) => write!(f, "{t:?}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ChartKind {
    Bar,
    Line,
}

impl FromStr for ChartKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "bar" => Ok(ChartKind::Bar),
            "line" => Ok(ChartKind::Line),
            other => Err(format!("unknown chart kind '{other}'")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Chart {
    pub kind: ChartKind,
    pub range: Range,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Workspace {
    pub cells: BTreeMap<CellAddr, CellValue>,
    #[serde(default)]
    pub charts: Vec<Chart>,
    #[serde(default)]
    pub formats: BTreeMap<CellAddr, String>,
}

impl Workspace {
    /// Build from an `address -> value` literal. Numbers must be finite.
    pub fn from_literal<'a, I>(cells: I) -> Result<Self, String>
    where
        I: IntoIterator<Item = (&'a str, CellValue)>,
    {
        let mut ws = Workspace::default();
        for (addr, value) in cells {
            let addr: CellAddr = addr.parse().map_err(|e: AddressError| e.to_string())?;
            if let CellValue::Number(n) = value {
                if !n.is_finite() {
                    return Err(format!("non-finite number at {addr}"));
                }
            }
            ws.cells.insert(addr, value);
        }
        Ok(ws)
    }

    pub fn get(&self, addr: CellAddr) -> Option<&CellValue> {
        self.cells.get(&addr)
    }

    /// Values of one column, top to bottom, with their rows.
    pub fn column(&self, col: Column) -> Vec<(u32, &CellValue)> {
        let mut v: Vec<(u32, &CellValue)> = self
            .cells
            .iter()
            .filter(|(a, _)| a.col == col)
            .map(|(a, v)| (a.row, v))
            .collect();
        v.sort_by_key(|(r, _)| *r);
        v
    }

    /// Inclusive row span covered by any cell.
    pub fn row_span(&self) -> Option<(u32, u32)> {
        let min = self.cells.keys().map(|a| a.row).min()?;
        let max = self.cells.keys().map(|a| a.row).max()?;
        Some((min, max))
    }

    /// Compact one-line rendering for prompts.
    pub fn summary(&self) -> String {
        if self.cells.is_empty() {
            return "(empty)".into();
        }
        self.cells
            .iter()
            .map(|(a, v)| format!("{a}={v}"))
            .collect::<Vec<_>>()
            .join(", ")
    }
}
