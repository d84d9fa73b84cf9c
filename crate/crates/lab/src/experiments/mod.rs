//! One module per experiment. Each exposes a serde `Params` struct (unknown
//! keys rejected, every field defaulted) and a `run` function producing a
//! [`ResultTable`](crate::table::ResultTable).

pub mod distortion_sim;
pub mod entropy_compare;
pub mod grad_stats;
pub mod laplace_rd;
pub mod lower_bound_sweep;
pub mod mi_2d;
pub mod mutual_info;
pub mod rate_surface;

use crate::error::LabError;
use quantlab_core::backward::GradRule;
use quantlab_core::surrogates::SurrogateSpec;

/// Geometric grid of `n` points from `lo` to `hi` inclusive.
pub(crate) fn log_grid(lo: f64, hi: f64, n: usize) -> Result<Vec<f64>, LabError> {
    if !(lo.is_finite() && hi.is_finite() && 0.0 < lo && lo < hi) || n < 2 {
        return Err(LabError::Config(format!(
            "log grid needs 0 < lo < hi and n >= 2, got [{lo}, {hi}] with {n} points"
        )));
    }
    Ok(quantlab_core::numerics::linspace(lo.ln(), hi.ln(), n)
        .into_iter()
        .map(f64::exp)
        .collect())
}

/// Parse a forward-calculation name such as `"aun"` or `"sua:10"` into its
/// spec plus the temperature recorded in output tables (0 for kinds without
/// one).
pub(crate) fn parse_calc(name: &str) -> Result<(SurrogateSpec, f64), LabError> {
    let bad = |msg: String| LabError::Config(format!("calc {name:?}: {msg}"));
    let (kind, alpha) = match name.split_once(':') {
        Some((k, a)) => {
            let alpha: f64 = a
                .parse()
                .map_err(|_| bad(format!("temperature {a:?} is not a number")))?;
            (k, Some(alpha))
        }
        None => (name, None),
    };
    let temp = |ctor: fn(f64) -> Result<SurrogateSpec, quantlab_core::surrogates::SurrogateError>,
                a: Option<f64>| {
        let a = a.ok_or_else(|| bad("needs a temperature, e.g. \"sua:10\"".to_string()))?;
        ctor(a).map_err(|e| bad(e.to_string()))
    };
    let plain = |spec: SurrogateSpec, a: Option<f64>| {
        if a.is_some() {
            Err(bad("kind does not take a temperature".to_string()))
        } else {
            Ok(spec)
        }
    };
    let spec = match kind {
        "round" => plain(SurrogateSpec::round(), alpha)?,
        "aun" => plain(SurrogateSpec::aun(), alpha)?,
        "uq-s" => plain(SurrogateSpec::uq_shared(), alpha)?,
        "uq-i" => plain(SurrogateSpec::uq_indep(), alpha)?,
        "sr" => plain(SurrogateSpec::sr(), alpha)?,
        "sha" => temp(SurrogateSpec::sha, alpha)?,
        "sua" => temp(SurrogateSpec::sua, alpha)?,
        "sua-n" => temp(SurrogateSpec::sua_noisy, alpha)?,
        "sra" => temp(SurrogateSpec::sra, alpha)?,
        "sga" => temp(SurrogateSpec::sga, alpha)?,
        other => return Err(bad(format!("unknown kind {other:?}"))),
    };
    Ok((spec, alpha.unwrap_or(0.0)))
}

pub(crate) fn parse_rule(name: &str) -> Result<GradRule, LabError> {
    match name {
        "standard" => Ok(GradRule::Standard),
        "pge" => Ok(GradRule::Pge),
        "ste" => Ok(GradRule::Ste),
        "ep" => Ok(GradRule::Ep),
        other => Err(LabError::Config(format!(
            "unknown gradient rule {other:?} (expected standard, pge, ste, or ep)"
        ))),
    }
}
