//! Expected-rate estimation error over a grid of entropy-model parameters,
//! with the model minimizing the surrogate rate reported in the metadata.

use serde::{Deserialize, Serialize};

use crate::error::LabError;
use crate::table::ResultTable;
use quantlab_core::entropy_model::{default_mu_grid, default_sigma_grid, rate_surface};
use quantlab_core::numerics::{Quadrature, Seed};
use quantlab_core::sources::Gaussian1D;

use super::parse_calc;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Params {
    /// Forward kind, `name` or `name:temperature`.
    pub calc: String,
    /// Source mean and scale.
    pub mu: f64,
    pub sigma: f64,
    /// Model grids; empty means the default grid around the source.
    pub mu_grid: Vec<f64>,
    pub sigma_grid: Vec<f64>,
    pub scale_floor: f64,
    /// Monte-Carlo sample count for kinds without a quadrature form.
    pub mc_n: usize,
}

impl Default for Params {
    fn default() -> Self {
        Params {
            calc: "aun".to_string(),
            mu: 0.0,
            sigma: 0.3,
            mu_grid: vec![],
            sigma_grid: vec![],
            scale_floor: 1e-6,
            mc_n: 200_000,
        }
    }
}

pub fn run(p: &Params, seed: u64, resolved: &str) -> Result<ResultTable, LabError> {
    let (spec, _) = parse_calc(&p.calc)?;
    let source = Gaussian1D::new(p.mu, p.sigma)?;
    let mu_grid = if p.mu_grid.is_empty() { default_mu_grid(p.mu) } else { p.mu_grid.clone() };
    let sigma_grid = if p.sigma_grid.is_empty() { default_sigma_grid() } else { p.sigma_grid.clone() };
    let surf = rate_surface(
        &spec,
        &source,
        &mu_grid,
        &sigma_grid,
        p.scale_floor,
        &Quadrature::default(),
        p.mc_n,
        Seed::new(seed),
    )?;
    let mut table = ResultTable::new(
        "rate-surface",
        seed,
        resolved,
        &["mu_q", "sigma_q", "rate_tilde_bits", "rate_round_bits", "delta_r_bits"],
    );
    for (i, &mu_q) in mu_grid.iter().enumerate() {
        for (j, &sigma_q) in sigma_grid.iter().enumerate() {
            table.push_row(vec![
                mu_q.into(),
                sigma_q.into(),
                surf.rate_tilde[i][j].into(),
                surf.rate_round[i][j].into(),
                surf.delta_r[i][j].into(),
            ])?;
        }
    }
    table.extra("q_star_mu", surf.q_star.mu.into());
    table.extra("q_star_sigma", surf.q_star.scale.into());
    table.extra("q_star_rate_bits", surf.q_star.rate.into());
    table.extra("q_star_distance", surf.q_star_distance.into());
    Ok(table)
}
