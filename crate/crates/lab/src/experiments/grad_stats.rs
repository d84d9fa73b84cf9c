//! Bias and variance of single-sample gradient estimates of the expected
//! rate, measured against the exact expected gradient at each input.
//!
//! The latent is drawn from the same Gaussian the entropy model describes,
//! so every (rule, calc) pair is probed where the model is well matched.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::LabError;
use crate::table::ResultTable;
use quantlab_core::backward::{measure_grad_stats, EstimatorSpec, RateLoss};
use quantlab_core::entropy_model::EntropyModel;
use quantlab_core::numerics::Seed;
use quantlab_core::sources::Gaussian1D;

use super::{parse_calc, parse_rule};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Params {
    /// Estimator rows, each `rule/calc` (for example `"pge/sua:5"`).
    pub estimators: Vec<String>,
    pub sigma_q: Vec<f64>,
    pub mu_q: f64,
    pub scale_floor: f64,
    /// Inputs drawn per grid point and single-sample estimates per input.
    pub n_inputs: usize,
    pub n_trials: usize,
}

impl Default for Params {
    fn default() -> Self {
        Params {
            estimators: [
                "pge/aun",
                "pge/sua:5",
                "pge/sua:10",
                "ste/sua:5",
                "ste/sua:10",
                "ste/sr",
                "ste/sra:5",
                "ste/sra:10",
            ]
            .map(String::from)
            .to_vec(),
            sigma_q: vec![0.3, 1.0],
            mu_q: 0.0,
            scale_floor: 1e-6,
            n_inputs: 512,
            n_trials: 8192,
        }
    }
}

struct Probe {
    rule: String,
    calc: String,
    alpha: f64,
    sigma_q: f64,
    est: EstimatorSpec,
}

pub fn run(p: &Params, seed: u64, resolved: &str) -> Result<ResultTable, LabError> {
    let mut probes = Vec::new();
    for name in &p.estimators {
        let (rule_name, calc_name) = name.split_once('/').ok_or_else(|| {
            LabError::Config(format!("estimator {name:?} should look like \"rule/calc\""))
        })?;
        let rule = parse_rule(rule_name)?;
        let (spec, alpha) = parse_calc(calc_name)?;
        let est = EstimatorSpec::new(spec, rule, 1)?;
        for &sigma_q in &p.sigma_q {
            probes.push(Probe {
                rule: rule_name.to_string(),
                calc: calc_name.to_string(),
                alpha,
                sigma_q,
                est,
            });
        }
    }
    let stats: Vec<_> = probes
        .par_iter()
        .enumerate()
        .map(|(i, probe)| {
            let model = EntropyModel::gaussian(p.mu_q, probe.sigma_q, p.scale_floor)?;
            let y_dist = Gaussian1D::new(p.mu_q, probe.sigma_q)?;
            let loss = RateLoss { model: &model };
            Ok(measure_grad_stats(
                &probe.est,
                &loss,
                &y_dist,
                p.n_inputs,
                p.n_trials,
                Seed::new(seed).stream(i as u64),
            )?)
        })
        .collect::<Result<Vec<_>, LabError>>()?;
    let mut table = ResultTable::new(
        "grad-stats",
        seed,
        resolved,
        &["rule", "calc", "alpha", "sigma_q", "bias", "bias_se", "var", "var_se"],
    );
    for (probe, s) in probes.iter().zip(&stats) {
        table.push_row(vec![
            probe.rule.as_str().into(),
            probe.calc.as_str().into(),
            probe.alpha.into(),
            probe.sigma_q.into(),
            s.bias.into(),
            s.bias_se.into(),
            s.variance.into(),
            s.variance_se.into(),
        ])?;
    }
    Ok(table)
}
