//! Per-point comparison of the additive-noise channel entropy, the entropy
//! of the mean-centered rounded value, and the coding rate the matched
//! zero-centered Gaussian model assigns to the noisy value.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::LabError;
use crate::table::ResultTable;
use quantlab_core::entropy_model::{expected_rate, EntropyModel, RateMethod};
use quantlab_core::infotheory::entropy_compare;
use quantlab_core::numerics::Quadrature;
use quantlab_core::sources::Gaussian1D;
use quantlab_core::surrogates::SurrogateSpec;

use super::log_grid;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Params {
    pub mu_grid: Vec<f64>,
    pub sigma_min: f64,
    pub sigma_max: f64,
    pub sigma_points: usize,
    pub scale_floor: f64,
}

impl Default for Params {
    fn default() -> Self {
        Params {
            mu_grid: vec![0.0, 0.25, 0.5],
            sigma_min: 0.05,
            sigma_max: 2.0,
            sigma_points: 20,
            scale_floor: 1e-6,
        }
    }
}

pub fn run(p: &Params, seed: u64, resolved: &str) -> Result<ResultTable, LabError> {
    if p.mu_grid.is_empty() {
        return Err(LabError::Config("mu_grid must be nonempty".to_string()));
    }
    let sigma_grid = log_grid(p.sigma_min, p.sigma_max, p.sigma_points)?;
    let points: Vec<(f64, f64)> = p
        .mu_grid
        .iter()
        .flat_map(|&mu| sigma_grid.iter().map(move |&sigma| (mu, sigma)))
        .collect();
    let method = RateMethod::Quadrature(Quadrature::default());
    let values: Vec<(f64, f64, f64)> = points
        .par_iter()
        .map(|&(mu, sigma)| {
            let (h_cont, h_disc) = entropy_compare(mu, sigma)?;
            let source = Gaussian1D::new(mu, sigma)?;
            let model = EntropyModel::gaussian(mu, sigma, p.scale_floor)?;
            let rate_zc = expected_rate(&SurrogateSpec::aun(), &source, &model, &method)?;
            Ok((rate_zc, h_cont, h_disc))
        })
        .collect::<Result<Vec<_>, LabError>>()?;
    let mut table = ResultTable::new(
        "entropy-compare",
        seed,
        resolved,
        &["mu", "sigma", "rate_zc_bits", "h_cont_bits", "h_disc_bits"],
    );
    for (&(mu, sigma), &(rate_zc, h_cont, h_disc)) in points.iter().zip(&values) {
        table.push_row(vec![
            mu.into(),
            sigma.into(),
            rate_zc.into(),
            h_cont.into(),
            h_disc.into(),
        ])?;
    }
    Ok(table)
}
