//! Rate-distortion training on the unit Laplace source: one system per
//! lambda for every (transform, rule, seed) combination, evaluated with
//! hard rounding after training.

use serde::{Deserialize, Serialize};

use crate::error::LabError;
use crate::table::ResultTable;
use quantlab_core::numerics::Seed;
use quantlab_core::tinynet::{train_laplace_rd, TrainConfig, TransformKind};

use super::parse_rule;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Params {
    /// Analysis/synthesis shape: `linear`, `residual`.
    pub transforms: Vec<String>,
    /// Backward rules: `ste`, `ep`.
    pub rules: Vec<String>,
    pub lambda_grid: Vec<f64>,
    /// Independent replicates; the row seed column is the replicate index.
    pub n_seeds: usize,
    pub steps: usize,
    pub batch: usize,
    pub learning_rate: f64,
    pub n_eval: usize,
}

impl Default for Params {
    fn default() -> Self {
        Params {
            transforms: ["linear", "residual"].map(String::from).to_vec(),
            rules: ["ste", "ep"].map(String::from).to_vec(),
            lambda_grid: vec![0.005, 0.02, 0.05, 0.15, 0.5, 1.0],
            n_seeds: 1,
            steps: 8000,
            batch: 64,
            learning_rate: 1e-3,
            n_eval: 100_000,
        }
    }
}

fn parse_transform(name: &str) -> Result<TransformKind, LabError> {
    match name {
        "linear" => Ok(TransformKind::Linear),
        "residual" => Ok(TransformKind::Residual),
        other => Err(LabError::Config(format!(
            "unknown transform {other:?} (expected linear or residual)"
        ))),
    }
}

pub fn run(p: &Params, seed: u64, resolved: &str) -> Result<ResultTable, LabError> {
    if p.n_seeds == 0 || p.lambda_grid.is_empty() {
        return Err(LabError::Config("need n_seeds >= 1 and a nonempty lambda_grid".to_string()));
    }
    let mut table = ResultTable::new(
        "laplace-rd",
        seed,
        resolved,
        &[
            "transform",
            "rule",
            "lambda",
            "seed",
            "rate_bits",
            "rate_se_bits",
            "distortion_mse",
            "distortion_se_mse",
            "loss",
            "loss_se",
        ],
    );
    for t_name in &p.transforms {
        let kind = parse_transform(t_name)?;
        for r_name in &p.rules {
            let rule = parse_rule(r_name)?;
            for s in 0..p.n_seeds {
                let cfg = TrainConfig {
                    steps: p.steps,
                    batch: p.batch,
                    learning_rate: p.learning_rate,
                    lambda: 1.0,
                    anneal: None,
                    seed: Seed::new(seed).stream(7000 + s as u64),
                    stop_gradient_mu: false,
                };
                let points = train_laplace_rd(kind, rule, &p.lambda_grid, &cfg, p.n_eval)?;
                for pt in points {
                    table.push_row(vec![
                        t_name.as_str().into(),
                        r_name.as_str().into(),
                        pt.lambda.into(),
                        (s as i64).into(),
                        pt.rate_bits.into(),
                        pt.rate_se.into(),
                        pt.mse.into(),
                        pt.mse_se.into(),
                        pt.loss.into(),
                        pt.loss_se.into(),
                    ])?;
                }
            }
        }
    }
    Ok(table)
}
