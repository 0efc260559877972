//! Tabular results with provenance and deterministic text serialization.

use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const CODE_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Cell {
    Int(i64),
    Num(f64),
    Flag(bool),
    Text(String),
    Missing,
}

impl From<Option<f64>> for Cell {
    fn from(v: Option<f64>) -> Self {
        v.map_or(Cell::Missing, Cell::Num)
    }
}

impl From<f64> for Cell {
    fn from(v: f64) -> Self {
        Cell::Num(v)
    }
}

impl From<bool> for Cell {
    fn from(v: bool) -> Self {
        Cell::Flag(v)
    }
}

impl From<&str> for Cell {
    fn from(v: &str) -> Self {
        Cell::Text(v.to_string())
    }
}

impl From<String> for Cell {
    fn from(v: String) -> Self {
        Cell::Text(v)
    }
}

impl From<usize> for Cell {
    fn from(v: usize) -> Self {
        Cell::Int(v as i64)
    }
}

impl Cell {
    pub fn as_f64(&self) -> Option<f64> {
        match self {
            Cell::Num(v) => Some(*v),
            Cell::Int(v) => Some(*v as f64),
            _ => None,
        }
    }

    /// Doubles use 17 significant digits so they round-trip exactly.
    fn csv(&self) -> String {
        match self {
            Cell::Int(v) => v.to_string(),
            Cell::Num(v) => format_double(*v),
            Cell::Flag(v) => v.to_string(),
            Cell::Text(s) if s.contains([',', '"', '\n']) => {
                format!("\"{}\"", s.replace('"', "\"\""))
            }
            Cell::Text(s) => s.clone(),
            Cell::Missing => String::new(),
        }
    }

    fn json(&self) -> Value {
        match self {
            Cell::Int(v) => json!(v),
            Cell::Num(v) if v.is_finite() => json!(v),
            Cell::Num(_) | Cell::Missing => Value::Null,
            Cell::Flag(v) => json!(v),
            Cell::Text(s) => json!(s),
        }
    }
}

pub fn format_double(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.16e}")
    } else if v.is_nan() {
        "NaN".into()
    } else if v > 0.0 {
        "inf".into()
    } else {
        "-inf".into()
    }
}

/// Where a table came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    /// SHA-256 of the canonical configuration text.
    pub config_hash: String,
    pub hbar: f64,
    pub code_version: String,
    pub seed: u64,
}

impl Provenance {
    pub fn new(canonical_config: &str, hbar: f64, seed: u64) -> Self {
        Self {
            config_hash: hex::encode(Sha256::digest(canonical_config.as_bytes())),
            hbar,
            code_version: CODE_VERSION.to_string(),
            seed,
        }
    }
}

impl Default for Provenance {
    fn default() -> Self {
        Self::new("", 1.0, 0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultTable {
    pub name: String,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<Cell>>,
    pub provenance: Provenance,
}

impl ResultTable {
    pub fn new(name: &str, columns: &[&str]) -> Self {
        Self {
            name: name.to_string(),
            columns: columns.iter().map(|c| c.to_string()).collect(),
            rows: Vec::new(),
            provenance: Provenance::default(),
        }
    }

    pub fn with_provenance(mut self, provenance: Provenance) -> Self {
        self.provenance = provenance;
        self
    }

    pub fn push_row(&mut self, row: Vec<Cell>) -> Result<()> {
        if row.len() != self.columns.len() {
            return Err(Error::DimensionMismatch {
                expected: self.columns.len(),
                found: row.len(),
            });
        }
        self.rows.push(row);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    fn index_of(&self, column: &str) -> Result<usize> {
        self.columns
            .iter()
            .position(|c| c == column)
            .ok_or_else(|| Error::invalid("column", format!("no column `{column}`")))
    }

    pub fn cell(&self, row: usize, column: &str) -> Result<&Cell> {
        Ok(&self.rows[row][self.index_of(column)?])
    }

    /// Numeric view of a column; non-numeric cells become `None`.
    pub fn column(&self, column: &str) -> Result<Vec<Option<f64>>> {
        let k = self.index_of(column)?;
        Ok(self.rows.iter().map(|r| r[k].as_f64()).collect())
    }

    pub fn to_csv(&self) -> String {
        let mut out = self.columns.join(",");
        out.push('\n');
        for row in &self.rows {
            let line: Vec<String> = row.iter().map(Cell::csv).collect();
            out.push_str(&line.join(","));
            out.push('\n');
        }
        out
    }

    pub fn to_json_value(&self) -> Value {
        let rows: Vec<Value> = self
            .rows
            .iter()
            .map(|r| {
                let obj: Map<String, Value> = self
                    .columns
                    .iter()
                    .cloned()
                    .zip(r.iter().map(Cell::json))
                    .collect();
                Value::Object(obj)
            })
            .collect();
        json!({
            "name": self.name,
            "provenance": self.provenance,
            "columns": self.columns,
            "rows": rows,
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_json_value()).expect("json values serialize")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_round_trips_doubles() {
        let mut t = ResultTable::new("t", &["x", "label", "ok", "gap"]);
        let values = [0.1, 1.0 / 3.0, -2.5e-300, 6.02214076e23, f64::MIN_POSITIVE];
        for v in values {
            t.push_row(vec![v.into(), "a,b".into(), true.into(), Cell::Missing])
                .unwrap();
        }
        let csv = t.to_csv();
        let mut lines = csv.lines();
        assert_eq!(lines.next(), Some("x,label,ok,gap"));
        for (line, v) in lines.zip(values) {
            let first = line.split(',').next().unwrap();
            assert_eq!(first.parse::<f64>().unwrap().to_bits(), v.to_bits());
            assert!(line.ends_with("\"a,b\",true,"));
        }
    }

    #[test]
    fn empty_table_is_header_only() {
        let t = ResultTable::new("t", &["a", "b"]);
        assert_eq!(t.to_csv(), "a,b\n");
    }

    #[test]
    fn row_length_checked() {
        let mut t = ResultTable::new("t", &["a", "b"]);
        assert!(t.push_row(vec![Cell::Int(1)]).is_err());
    }

    #[test]
    fn provenance_hash_tracks_config() {
        let a = Provenance::new("hbar = 1", 1.0, 0);
        let b = Provenance::new("hbar = 2", 2.0, 0);
        assert_ne!(a.config_hash, b.config_hash);
        assert_eq!(a.config_hash.len(), 64);
    }
}
