//! Mutual information between the source and its forward-processed value,
//! swept over source means and scales for a list of forward calculations.

use serde::{Deserialize, Serialize};

use crate::error::LabError;
use crate::table::ResultTable;
use quantlab_core::infotheory::info_curve;

use super::{log_grid, parse_calc};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Params {
    /// Forward kinds, `name` or `name:temperature`.
    pub calcs: Vec<String>,
    pub mu_grid: Vec<f64>,
    /// Scale grid: `sigma_points` geometric points on [sigma_min, sigma_max].
    pub sigma_min: f64,
    pub sigma_max: f64,
    pub sigma_points: usize,
}

impl Default for Params {
    fn default() -> Self {
        Params {
            calcs: ["round", "aun", "sr", "sua:5", "sua:10", "sra:5", "sra:10"]
                .map(String::from)
                .to_vec(),
            mu_grid: vec![0.0, 0.125, 0.25, 0.375, 0.5],
            sigma_min: 0.05,
            sigma_max: 2.0,
            sigma_points: 24,
        }
    }
}

pub fn run(p: &Params, seed: u64, resolved: &str) -> Result<ResultTable, LabError> {
    if p.calcs.is_empty() || p.mu_grid.is_empty() {
        return Err(LabError::Config("calcs and mu_grid must be nonempty".to_string()));
    }
    let sigma_grid = log_grid(p.sigma_min, p.sigma_max, p.sigma_points)?;
    let mut table = ResultTable::new(
        "mutual-info",
        seed,
        resolved,
        &["calc", "alpha", "mu", "sigma", "I_bits", "I_minus_round_bits"],
    );
    for name in &p.calcs {
        let (spec, alpha) = parse_calc(name)?;
        let curve = info_curve(&spec, &p.mu_grid, &sigma_grid)?;
        for (i, &mu) in p.mu_grid.iter().enumerate() {
            for (j, &sigma) in sigma_grid.iter().enumerate() {
                let v = curve.i_values[i][j];
                let b = curve.baseline[i][j];
                table.push_row(vec![
                    name.as_str().into(),
                    alpha.into(),
                    mu.into(),
                    sigma.into(),
                    v.into(),
                    (v - b).into(),
                ])?;
            }
        }
    }
    Ok(table)
}
