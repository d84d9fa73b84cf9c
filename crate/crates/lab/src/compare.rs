//! Regression comparison of two result tables.
//!
//! A column is numeric when every cell in both tables parses as a float;
//! numeric columns compare cellwise with `|a - b| <= abs_tol + rel_tol *
//! max(|a|, |b|)`, text columns must match exactly. Schemas (column names
//! and row counts) must agree before any comparison runs.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::LabError;

#[derive(Debug, Clone)]
pub struct LoadedTable {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

pub fn load_csv(path: &Path) -> Result<LoadedTable, LabError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| LabError::Config(format!("cannot read {}: {e}", path.display())))?;
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(text.as_bytes());
    let columns: Vec<String> = reader
        .headers()
        .map_err(|e| LabError::Config(format!("{}: {e}", path.display())))?
        .iter()
        .map(String::from)
        .collect();
    if columns.is_empty() {
        return Err(LabError::Config(format!("{}: no header row", path.display())));
    }
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| LabError::Config(format!("{}: {e}", path.display())))?;
        rows.push(record.iter().map(String::from).collect());
    }
    Ok(LoadedTable { columns, rows })
}

#[derive(Debug, Clone)]
pub enum ColumnReport {
    Numeric { column: String, max_abs: f64, max_rel: f64, pass: bool },
    Text { column: String, mismatches: usize },
}

impl ColumnReport {
    pub fn pass(&self) -> bool {
        match self {
            ColumnReport::Numeric { pass, .. } => *pass,
            ColumnReport::Text { mismatches, .. } => *mismatches == 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct CompareReport {
    pub columns: Vec<ColumnReport>,
}

impl CompareReport {
    pub fn pass(&self) -> bool {
        self.columns.iter().all(ColumnReport::pass)
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        for c in &self.columns {
            match c {
                ColumnReport::Numeric { column, max_abs, max_rel, pass } => {
                    let _ = writeln!(
                        out,
                        "{column}: max_abs={max_abs:.3e} max_rel={max_rel:.3e} {}",
                        if *pass { "pass" } else { "FAIL" }
                    );
                }
                ColumnReport::Text { column, mismatches } => {
                    let _ = writeln!(
                        out,
                        "{column}: text, {mismatches} mismatched {}",
                        if *mismatches == 0 { "(pass)" } else { "(FAIL)" }
                    );
                }
            }
        }
        let _ = writeln!(out, "result: {}", if self.pass() { "PASS" } else { "FAIL" });
        out
    }
}

pub fn compare_tables(
    a: &LoadedTable,
    b: &LoadedTable,
    abs_tol: f64,
    rel_tol: f64,
) -> Result<CompareReport, LabError> {
    if !(abs_tol >= 0.0 && rel_tol >= 0.0) {
        return Err(LabError::Config("tolerances must be nonnegative".to_string()));
    }
    if a.columns != b.columns {
        return Err(LabError::Config(format!(
            "schemas differ: [{}] vs [{}]",
            a.columns.join(", "),
            b.columns.join(", ")
        )));
    }
    if a.rows.len() != b.rows.len() {
        return Err(LabError::Config(format!(
            "row counts differ: {} vs {}",
            a.rows.len(),
            b.rows.len()
        )));
    }
    let mut columns = Vec::with_capacity(a.columns.len());
    for (j, name) in a.columns.iter().enumerate() {
        let parsed: Option<Vec<(f64, f64)>> = a
            .rows
            .iter()
            .zip(&b.rows)
            .map(|(ra, rb)| {
                let va = ra[j].parse::<f64>().ok()?;
                let vb = rb[j].parse::<f64>().ok()?;
                Some((va, vb))
            })
            .collect();
        match parsed {
            Some(pairs) => {
                let mut max_abs = 0.0f64;
                let mut max_rel = 0.0f64;
                let mut pass = true;
                for (va, vb) in pairs {
                    let abs = (va - vb).abs();
                    let scale = va.abs().max(vb.abs());
                    max_abs = max_abs.max(abs);
                    if scale > 0.0 {
                        max_rel = max_rel.max(abs / scale);
                    }
                    if abs > abs_tol + rel_tol * scale {
                        pass = false;
                    }
                }
                columns.push(ColumnReport::Numeric { column: name.clone(), max_abs, max_rel, pass });
            }
            None => {
                let mismatches = a
                    .rows
                    .iter()
                    .zip(&b.rows)
                    .filter(|(ra, rb)| ra[j] != rb[j])
                    .count();
                columns.push(ColumnReport::Text { column: name.clone(), mismatches });
            }
        }
    }
    Ok(CompareReport { columns })
}
