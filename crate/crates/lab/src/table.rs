//! Tabular experiment output.
//!
//! CSV is the canonical format: a header row followed by data rows, UTF-8,
//! comma-separated. Floats are serialized with 17 significant digits so a
//! rerun with the same config and seed produces a byte-identical body. Run
//! metadata (config hash, wall time, resolved config) lives in a JSON
//! sidecar next to the CSV, never in the body, so timing noise cannot break
//! reproducibility.

use crate::error::LabError;
use serde::Serialize;
use sha2::{Digest, Sha256};
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    Text(String),
    Int(i64),
    Float(f64),
}

impl Cell {
    /// Canonical string form used in both CSV and the JSON mirror.
    pub fn render(&self) -> String {
        match self {
            Cell::Text(s) => s.clone(),
            Cell::Int(i) => i.to_string(),
            // one leading digit plus 16 fractional digits: 17 significant
            Cell::Float(v) => format!("{v:.16e}"),
        }
    }

    pub fn is_finite(&self) -> bool {
        match self {
            Cell::Float(v) => v.is_finite(),
            _ => true,
        }
    }
}

impl From<f64> for Cell {
    fn from(v: f64) -> Self {
        Cell::Float(v)
    }
}

impl From<i64> for Cell {
    fn from(v: i64) -> Self {
        Cell::Int(v)
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

#[derive(Debug, Clone, Serialize)]
pub struct Metadata {
    pub experiment: String,
    pub tool_version: String,
    pub seed: u64,
    pub config_sha256: String,
    pub resolved_config: String,
    pub wall_time_s: f64,
    /// Experiment-specific scalars that are not part of the row grid.
    pub extras: serde_json::Map<String, serde_json::Value>,
}

#[derive(Debug, Clone)]
pub struct ResultTable {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<Cell>>,
    pub metadata: Metadata,
}

impl ResultTable {
    pub fn new(experiment: &str, seed: u64, resolved_config: &str, columns: &[&str]) -> Self {
        let mut hasher = Sha256::new();
        hasher.update(resolved_config.as_bytes());
        ResultTable {
            columns: columns.iter().map(|c| c.to_string()).collect(),
            rows: Vec::new(),
            metadata: Metadata {
                experiment: experiment.to_string(),
                tool_version: env!("CARGO_PKG_VERSION").to_string(),
                seed,
                config_sha256: format!("{:x}", hasher.finalize()),
                resolved_config: resolved_config.to_string(),
                wall_time_s: 0.0,
                extras: serde_json::Map::new(),
            },
        }
    }

    pub fn push_row(&mut self, row: Vec<Cell>) -> Result<(), LabError> {
        if row.len() != self.columns.len() {
            return Err(LabError::Numerical(format!(
                "row has {} cells, schema has {} columns",
                row.len(),
                self.columns.len()
            )));
        }
        if let Some(bad) = row.iter().position(|c| !c.is_finite()) {
            return Err(LabError::Numerical(format!(
                "non-finite value in column \"{}\"",
                self.columns[bad]
            )));
        }
        self.rows.push(row);
        Ok(())
    }

    pub fn extra(&mut self, key: &str, value: serde_json::Value) {
        self.metadata.extras.insert(key.to_string(), value);
    }

    /// CSV body: header plus rows, no metadata.
    pub fn csv_body(&self) -> String {
        let mut out = String::new();
        out.push_str(&self.columns.join(","));
        out.push('\n');
        for row in &self.rows {
            let line: Vec<String> = row.iter().map(Cell::render).collect();
            out.push_str(&line.join(","));
            out.push('\n');
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<(), LabError> {
        if let Some(dir) = path.parent() {
            if !dir.as_os_str().is_empty() {
                std::fs::create_dir_all(dir)?;
            }
        }
        std::fs::write(path, self.csv_body())?;
        Ok(())
    }

    /// JSON mirror of the canonical CSV: same fields, same value strings.
    pub fn to_json(&self) -> serde_json::Value {
        let rows: Vec<serde_json::Value> = self
            .rows
            .iter()
            .map(|row| {
                let cells: Vec<serde_json::Value> = row
                    .iter()
                    .map(|c| match c {
                        Cell::Text(s) => serde_json::Value::String(s.clone()),
                        Cell::Int(i) => serde_json::json!(i),
                        Cell::Float(v) => serde_json::json!(v),
                    })
                    .collect();
                serde_json::Value::Array(cells)
            })
            .collect();
        serde_json::json!({
            "columns": self.columns,
            "rows": rows,
            "metadata": self.metadata,
        })
    }

    pub fn write_json(&self, path: &Path) -> Result<(), LabError> {
        std::fs::write(path, serde_json::to_string_pretty(&self.to_json()).unwrap())?;
        Ok(())
    }

    pub fn meta_path(csv_path: &Path) -> PathBuf {
        let mut p = csv_path.as_os_str().to_owned();
        p.push(".meta.json");
        PathBuf::from(p)
    }

    pub fn write_meta(&self, csv_path: &Path) -> Result<(), LabError> {
        let path = Self::meta_path(csv_path);
        std::fs::write(
            path,
            serde_json::to_string_pretty(&self.metadata).unwrap(),
        )?;
        Ok(())
    }
}
