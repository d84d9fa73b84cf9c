//! Mutual information between a Gaussian latent and its quantized or
//! surrogate-processed version, plus the continuous/discrete entropy
//! comparison behind the zero-centering analyses.
//!
//! Everything here is deterministic quadrature or lattice summation; the
//! Monte Carlo counterparts live in the tests as independent cross-checks.

use crate::numerics::{
    integrate, integrate2d, std_normal_box_mass, Neumaier, NumericsError, Quadrature, Rect,
};
use crate::sources::{Gaussian1D, SourceError};
use crate::surrogates::{soft_inv, sra_prob_floor, SurrogateSpec};
use rayon::prelude::*;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum InfoError {
    #[error("sharpness must be positive and finite, got {0}")]
    InvalidSharpness(f64),
    #[error("unsupported case: {0}")]
    UnsupportedCase(String),
    #[error(transparent)]
    Source(#[from] SourceError),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}

/// Densities below this are treated as exact zeros inside entropy integrands.
const DENSITY_FLOOR: f64 = 1e-300;

fn default_quad() -> Quadrature {
    Quadrature::with_abs_tol(1e-10)
}

/// Integration window covering all non-negligible mass of the source.
fn span(source: &Gaussian1D) -> (f64, f64) {
    (
        source.mu - 10.0 * source.sigma - 1.0,
        source.mu + 10.0 * source.sigma + 1.0,
    )
}

fn plogp_bits(p: f64) -> f64 {
    if p < DENSITY_FLOOR {
        0.0
    } else {
        -p * p.log2()
    }
}

fn binary_entropy_bits(p: f64) -> f64 {
    plogp_bits(p) + plogp_bits(1.0 - p)
}

/// Differential entropy in bits of a density over [lo, hi], integrating
/// panel by panel between half-integers. The smoothed densities used here
/// are smooth inside each unit cell but can kink where a box edge crosses
/// an integer, and those points are exactly the half-integers.
fn diff_entropy_bits(
    density: impl Fn(f64) -> f64,
    lo: f64,
    hi: f64,
    quad: &Quadrature,
) -> Result<f64, NumericsError> {
    let integrand = |t: f64| plogp_bits(density(t));
    let mut acc = Neumaier::new();
    let mut left = lo;
    let mut edge = lo.floor() + 0.5;
    if edge <= lo {
        edge += 1.0;
    }
    while edge < hi {
        acc.add(integrate(&integrand, left, edge, quad)?);
        left = edge;
        edge += 1.0;
    }
    acc.add(integrate(&integrand, left, hi, quad)?);
    Ok(acc.total())
}

/// Standardized bin offsets for the integer lattice nearest the mean.
/// The reduction mu = m + delta with m integer and |delta| <= 1/2 is exact,
/// which makes the returned masses invariant under integer shifts of mu.
fn centered_bin_masses(source: &Gaussian1D) -> Vec<f64> {
    let delta = source.mu - source.mu.round();
    let reach = (10.0 * source.sigma + 2.0).ceil() as i64;
    (-reach..=reach)
        .map(|k| {
            let k = k as f64;
            std_normal_box_mass(
                (k - 0.5 - delta) / source.sigma,
                (k + 0.5 - delta) / source.sigma,
            )
        })
        .collect()
}

fn discrete_entropy_bits(masses: &[f64]) -> f64 {
    let mut acc = Neumaier::new();
    for &p in masses {
        acc.add(plogp_bits(p));
    }
    acc.total()
}

/// I(Y; round(Y)): rounding is deterministic, so this is the discrete
/// entropy of the bin index.
pub fn mi_rounding(source: &Gaussian1D) -> f64 {
    discrete_entropy_bits(&centered_bin_masses(source))
}

/// I(Y; Y+U) for centered unit noise: the noise has zero differential
/// entropy, so this is the differential entropy of the smoothed source.
pub fn mi_aun(source: &Gaussian1D) -> Result<f64, InfoError> {
    let (lo, hi) = span(source);
    let f = |t: f64| source.box_mass(t - 0.5, t + 0.5);
    Ok(diff_entropy_bits(f, lo, hi, &default_quad())?)
}

// Output entropy and conditional entropy for a two-point rounding law
// with P(ceil | y) given on each unit cell.
fn two_point_mi(
    source: &Gaussian1D,
    p_ceil: impl Fn(f64) -> f64,
    quad: &Quadrature,
) -> Result<f64, InfoError> {
    let (lo, hi) = span(source);
    let n_lo = lo.floor() as i64;
    let n_hi = hi.ceil() as i64;

    let mut h_out = Neumaier::new();
    for n in n_lo..=n_hi {
        let n = n as f64;
        let from_below = integrate(|y| source.pdf(y) * p_ceil(y), n - 1.0, n, quad)?;
        let from_above = integrate(|y| source.pdf(y) * (1.0 - p_ceil(y)), n, n + 1.0, quad)?;
        h_out.add(plogp_bits(from_below + from_above));
    }

    let mut h_cond = Neumaier::new();
    for n in n_lo..n_hi {
        let n = n as f64;
        h_cond.add(integrate(
            |y| source.pdf(y) * binary_entropy_bits(p_ceil(y)),
            n,
            n + 1.0,
            quad,
        )?);
    }
    Ok(h_out.total() - h_cond.total())
}

/// I(Y; Y~) for stochastic rounding: output entropy of the triangular bin
/// law minus the expected binary entropy of the fractional part.
pub fn mi_sr(source: &Gaussian1D) -> Result<f64, InfoError> {
    two_point_mi(source, |y| y - y.floor(), &default_quad())
}

/// I(Y; Y~) for annealed stochastic rounding at the given sharpness.
pub fn mi_sra(source: &Gaussian1D, alpha: f64) -> Result<f64, InfoError> {
    check_alpha(alpha)?;
    two_point_mi(source, |y| 1.0 - sra_prob_floor(y, alpha), &default_quad())
}

/// I(Y; Y~) for the soft/noise/denoise forward. The denoiser is a
/// bijection, so this equals the differential entropy of the soft-mapped
/// source plus unit noise; its density is a box probability of the source
/// through the soft map's inverse.
pub fn mi_sua(source: &Gaussian1D, alpha: f64) -> Result<f64, InfoError> {
    check_alpha(alpha)?;
    let (lo, hi) = span(source);
    let f = |t: f64| {
        source.box_mass(
            soft_inv(t - 0.5, alpha),
            soft_inv(t + 0.5, alpha),
        )
    };
    Ok(diff_entropy_bits(f, lo, hi, &default_quad())?)
}

fn check_alpha(alpha: f64) -> Result<(), InfoError> {
    if alpha.is_finite() && alpha > 0.0 {
        Ok(())
    } else {
        Err(InfoError::InvalidSharpness(alpha))
    }
}

/// Which forward is applied to a perfectly correlated zero-mean pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CorrelatedPair {
    /// Independent per-component noise (plain additive noise, or universal
    /// quantization with independent offsets; they share the information
    /// value).
    IndependentNoise,
    /// One offset shared by both components.
    SharedNoise,
    /// Deterministic rounding of both components.
    Rounding,
}

/// I((Y1,Y2); (Y1~,Y2~)) for a perfectly correlated pair (rho = 1, so both
/// components equal one zero-mean Gaussian of the given sigma).
///
/// With a shared offset the second component adds nothing beyond the first.
/// With independent offsets the total exceeds the single-component value by
/// the information the pair carries jointly, computed from the closed-form
/// overlap density of the two smoothed copies.
pub fn mi_2d_correlated(kind: CorrelatedPair, sigma: f64, rho: f64) -> Result<f64, InfoError> {
    if rho != 1.0 {
        return Err(InfoError::UnsupportedCase(format!(
            "correlated-pair analysis requires rho = 1, got {rho}"
        )));
    }
    let source = Gaussian1D::new(0.0, sigma)?;
    match kind {
        CorrelatedPair::Rounding => Ok(mi_rounding(&source)),
        CorrelatedPair::SharedNoise => mi_aun(&source),
        CorrelatedPair::IndependentNoise => {
            let h_single = mi_aun(&source)?;
            let h_joint = joint_smoothed_entropy(sigma)?;
            let cross = 2.0 * h_single - h_joint;
            Ok(2.0 * h_single - cross)
        }
    }
}

// Joint differential entropy in bits of (Y+U1, Y+U2) for zero-mean Gaussian
// Y and independent unit offsets. The joint density at (v1, v2) is the
// source mass of the overlap of the two unit boxes, which is nonzero only
// for |v1 - v2| < 1. In coordinates (u, d) = (min, gap) the overlap is
// [u + d - 1/2, u + 1/2], and symmetry in the pair gives the factor 2.
fn joint_smoothed_entropy(sigma: f64) -> Result<f64, InfoError> {
    let reach = 10.0 * sigma + 2.0;
    let f = |d: f64, u: f64| {
        let a = u + d - 0.5;
        let b = u + 0.5;
        // at d = 1 the overlap closes; rounding can put a past b by an ulp
        if a >= b {
            return 0.0;
        }
        let p = std_normal_box_mass(a / sigma, b / sigma);
        plogp_bits(p)
    };
    let rect = Rect {
        x0: 0.0,
        x1: 1.0,
        y0: -reach,
        y1: reach,
    };
    Ok(2.0 * integrate2d(f, rect, &default_quad())?)
}

/// Differential entropy of Y+U next to the discrete entropy of the
/// mean-centered rounding round(Y - mu); the first bounds the second from
/// above.
pub fn entropy_compare(mu: f64, sigma: f64) -> Result<(f64, f64), InfoError> {
    let source = Gaussian1D::new(mu, sigma)?;
    let h_cont = mi_aun(&source)?;
    let centered = Gaussian1D::new(0.0, sigma)?;
    let h_disc = mi_rounding(&centered);
    Ok((h_cont, h_disc))
}

/// Mutual information for the forward kinds whose value has a quadrature
/// form. The smooth deterministic map is a bijection (no information loss),
/// and the universal kinds are covered by the correlated-pair analysis, so
/// neither appears here.
pub fn mi_value(spec: &SurrogateSpec, source: &Gaussian1D) -> Result<f64, InfoError> {
    match *spec {
        SurrogateSpec::Round => Ok(mi_rounding(source)),
        SurrogateSpec::Aun => mi_aun(source),
        SurrogateSpec::Sr => mi_sr(source),
        SurrogateSpec::Sua { alpha } => mi_sua(source, alpha),
        SurrogateSpec::Sra { alpha } => mi_sra(source, alpha),
        ref other => Err(InfoError::UnsupportedCase(format!(
            "no mutual-information curve for {}",
            other.label()
        ))),
    }
}

/// Mutual information over a (mu, sigma) grid with the rounding value as
/// baseline at every point.
#[derive(Debug, Clone)]
pub struct InfoCurve {
    pub mu_grid: Vec<f64>,
    pub sigma_grid: Vec<f64>,
    /// i_values[i][j] is the MI at (mu_grid[i], sigma_grid[j]), in bits.
    pub i_values: Vec<Vec<f64>>,
    pub baseline: Vec<Vec<f64>>,
}

/// Evaluate one forward kind over the grid, in parallel. Sub-nanobit
/// quadrature noise is clamped so every entry is nonnegative.
pub fn info_curve(
    spec: &SurrogateSpec,
    mu_grid: &[f64],
    sigma_grid: &[f64],
) -> Result<InfoCurve, InfoError> {
    let points: Vec<(usize, usize)> = (0..mu_grid.len())
        .flat_map(|i| (0..sigma_grid.len()).map(move |j| (i, j)))
        .collect();
    let computed: Vec<Result<(f64, f64), InfoError>> = points
        .par_iter()
        .map(|&(i, j)| {
            let source = Gaussian1D::new(mu_grid[i], sigma_grid[j])?;
            Ok((mi_value(spec, &source)?.max(0.0), mi_rounding(&source)))
        })
        .collect();
    let mut i_values = vec![vec![0.0; sigma_grid.len()]; mu_grid.len()];
    let mut baseline = i_values.clone();
    for (&(i, j), r) in points.iter().zip(computed) {
        let (v, b) = r?;
        i_values[i][j] = v;
        baseline[i][j] = b;
    }
    Ok(InfoCurve {
        mu_grid: mu_grid.to_vec(),
        sigma_grid: sigma_grid.to_vec(),
        i_values,
        baseline,
    })
}
