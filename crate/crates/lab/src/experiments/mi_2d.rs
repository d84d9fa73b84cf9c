//! Mutual information carried by a perfectly correlated latent pair under
//! shared-noise, independent-noise, and rounding forwards.

use serde::{Deserialize, Serialize};

use crate::error::LabError;
use crate::table::ResultTable;
use quantlab_core::infotheory::{mi_2d_correlated, CorrelatedPair};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Params {
    /// Pair kinds: `shared`, `independent`, `round`.
    pub kinds: Vec<String>,
    pub sigma_grid: Vec<f64>,
    pub rho: f64,
}

impl Default for Params {
    fn default() -> Self {
        Params {
            kinds: ["shared", "independent", "round"].map(String::from).to_vec(),
            sigma_grid: vec![0.3, 1.0],
            rho: 1.0,
        }
    }
}

fn parse_kind(name: &str) -> Result<CorrelatedPair, LabError> {
    match name {
        "shared" => Ok(CorrelatedPair::SharedNoise),
        "independent" => Ok(CorrelatedPair::IndependentNoise),
        "round" => Ok(CorrelatedPair::Rounding),
        other => Err(LabError::Config(format!(
            "unknown pair kind {other:?} (expected shared, independent, or round)"
        ))),
    }
}

pub fn run(p: &Params, seed: u64, resolved: &str) -> Result<ResultTable, LabError> {
    let mut table = ResultTable::new(
        "mi-2d",
        seed,
        resolved,
        &["kind", "sigma", "rho", "I_bits"],
    );
    for name in &p.kinds {
        let kind = parse_kind(name)?;
        for &sigma in &p.sigma_grid {
            let v = mi_2d_correlated(kind, sigma, p.rho)?;
            table.push_row(vec![name.as_str().into(), sigma.into(), p.rho.into(), v.into()])?;
        }
    }
    Ok(table)
}
