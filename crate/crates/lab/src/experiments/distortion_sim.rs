//! Train a small synthesis network against one forward calculation and
//! compare its held-out distortion with the matched rounding baseline.
//!
//! The three source parameters have no sensible defaults, so they are
//! required keys and validation names every one that is missing.

use serde::{Deserialize, Serialize};

use crate::error::LabError;
use crate::table::ResultTable;
use quantlab_core::numerics::Seed;
use quantlab_core::sources::Gaussian1D;
use quantlab_core::tinynet::{train_synthesis_sized, SimSource, TrainConfig};

use super::parse_calc;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Params {
    /// Forward kind, `name` or `name:temperature`. Required.
    pub calc: Option<String>,
    /// Source mean. Required.
    pub mu: Option<f64>,
    /// Source scale. Required.
    pub sigma: Option<f64>,
    pub hidden: Vec<usize>,
    pub steps: usize,
    pub batch: usize,
    pub learning_rate: f64,
    pub n_eval: usize,
}

impl Default for Params {
    fn default() -> Self {
        Params {
            calc: None,
            mu: None,
            sigma: None,
            hidden: vec![16, 16],
            steps: 6000,
            batch: 128,
            learning_rate: 3e-3,
            n_eval: 200_000,
        }
    }
}

pub fn run(p: &Params, seed: u64, resolved: &str) -> Result<ResultTable, LabError> {
    let mut missing = Vec::new();
    if p.calc.is_none() {
        missing.push("calc");
    }
    if p.mu.is_none() {
        missing.push("mu");
    }
    if p.sigma.is_none() {
        missing.push("sigma");
    }
    if !missing.is_empty() {
        return Err(LabError::Config(format!(
            "distortion-sim: missing required params: {}",
            missing.join(", ")
        )));
    }
    let (calc, mu, sigma) = (p.calc.as_deref().unwrap(), p.mu.unwrap(), p.sigma.unwrap());
    let (spec, alpha) = parse_calc(calc)?;
    let source = SimSource::Scalar(Gaussian1D::new(mu, sigma)?);
    let cfg = TrainConfig {
        steps: p.steps,
        batch: p.batch,
        learning_rate: p.learning_rate,
        lambda: 1.0,
        anneal: None,
        seed: Seed::new(seed),
        stop_gradient_mu: false,
    };
    let (_, out) = train_synthesis_sized(&spec, &source, &cfg, &p.hidden, p.n_eval)?;
    let mut table = ResultTable::new(
        "distortion-sim",
        seed,
        resolved,
        &[
            "calc",
            "alpha",
            "mu",
            "sigma",
            "d_tilde_mse",
            "d_tilde_se_mse",
            "d_round_mse",
            "d_round_se_mse",
            "delta_d_rel",
        ],
    );
    table.push_row(vec![
        calc.into(),
        alpha.into(),
        mu.into(),
        sigma.into(),
        out.d_tilde.into(),
        out.d_tilde_se.into(),
        out.d_round.into(),
        out.d_round_se.into(),
        out.delta_d_rel.into(),
    ])?;
    Ok(table)
}
