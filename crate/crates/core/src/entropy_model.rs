//! Box-probability entropy models and rate evaluation.
//!
//! A model assigns each reconstruction value `v` the mass
//! `c(v + 0.5) - c(v - 0.5)` of a continuous CDF `c`, evaluated with the scale
//! clamped from below. The same expression is used for non-integer `v`, which
//! is what the continuous surrogates feed it during training. Rates are in
//! bits throughout.

use crate::numerics::{
    compensated_sum, golden_min, integrate, mean_se, std_normal_box_mass, std_normal_cdf, std_normal_pdf,
    NumericsError, Quadrature, Seed,
};
use crate::sources::{Gaussian1D, Gaussian2D, SourceError};
use crate::surrogates::{draw_noise, forward, round_half, sga_probs, soft_fn, soft_inv, SurrogateError, SurrogateSpec};
use rayon::prelude::*;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum EntropyModelError {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("method not supported: {0}")]
    UnsupportedMethod(String),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error(transparent)]
    Surrogate(#[from] SurrogateError),
    #[error(transparent)]
    Source(#[from] SourceError),
}

/// Smallest probability the rate ever sees; keeps `-log2` at or below 64 bits.
pub const PROB_FLOOR: f64 = 5.421010862427522e-20; // 2^-64

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Family {
    Gaussian,
    Laplacian,
}

/// A location-scale box-probability model with a scale lower bound.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EntropyModel {
    pub family: Family,
    pub mu: f64,
    pub scale: f64,
    pub scale_floor: f64,
}

/// Mass of one value together with its parameter derivatives. Derivatives
/// are zero on the clamped branches (floored mass, or scale below the floor).
#[derive(Debug, Clone, Copy)]
pub struct MassGrad {
    pub mass: f64,
    pub d_mu: f64,
    pub d_scale: f64,
    pub floored: bool,
}

impl EntropyModel {
    pub fn gaussian(mu: f64, sigma: f64, sigma_floor: f64) -> Result<Self, EntropyModelError> {
        Self::build(Family::Gaussian, mu, sigma, sigma_floor)
    }

    pub fn laplacian(mu: f64, b: f64, b_floor: f64) -> Result<Self, EntropyModelError> {
        Self::build(Family::Laplacian, mu, b, b_floor)
    }

    fn build(family: Family, mu: f64, scale: f64, scale_floor: f64) -> Result<Self, EntropyModelError> {
        if !mu.is_finite() || !(scale.is_finite() && scale > 0.0) || !(scale_floor.is_finite() && scale_floor >= 0.0) {
            return Err(EntropyModelError::InvalidParameter(format!(
                "mu {mu}, scale {scale}, floor {scale_floor}"
            )));
        }
        Ok(EntropyModel {
            family,
            mu,
            scale,
            scale_floor,
        })
    }

    /// Same family and floor, new location and scale.
    pub fn with_params(&self, mu: f64, scale: f64) -> Result<Self, EntropyModelError> {
        Self::build(self.family, mu, scale, self.scale_floor)
    }

    pub fn effective_scale(&self) -> f64 {
        self.scale.max(self.scale_floor)
    }

    pub fn cdf(&self, x: f64) -> f64 {
        let z = (x - self.mu) / self.effective_scale();
        match self.family {
            Family::Gaussian => std_normal_cdf(z),
            Family::Laplacian => {
                if z < 0.0 {
                    0.5 * z.exp()
                } else {
                    1.0 - 0.5 * (-z).exp()
                }
            }
        }
    }

    pub fn pdf(&self, x: f64) -> f64 {
        let s = self.effective_scale();
        let z = (x - self.mu) / s;
        match self.family {
            Family::Gaussian => std_normal_pdf(z) / s,
            Family::Laplacian => 0.5 * (-z.abs()).exp() / s,
        }
    }

    // cancellation-safe c(v + 0.5) - c(v - 0.5)
    fn box_mass_raw(&self, v: f64) -> f64 {
        let s = self.effective_scale();
        let za = (v - 0.5 - self.mu) / s;
        let zb = (v + 0.5 - self.mu) / s;
        match self.family {
            Family::Gaussian => std_normal_box_mass(za, zb),
            Family::Laplacian => laplace_box_mass_std(za, zb),
        }
    }

    /// Box probability of reconstruction `v`, floored at 2^-64.
    pub fn prob_mass(&self, v: f64) -> f64 {
        self.box_mass_raw(v).max(PROB_FLOOR)
    }

    /// Code length of `v` in bits.
    pub fn rate_bits(&self, v: f64) -> f64 {
        -self.prob_mass(v).log2()
    }

    /// Mass and its derivatives in (mu, scale).
    pub fn mass_with_grad(&self, v: f64) -> MassGrad {
        let s = self.effective_scale();
        let za = (v - 0.5 - self.mu) / s;
        let zb = (v + 0.5 - self.mu) / s;
        let raw = self.box_mass_raw(v);
        if raw < PROB_FLOOR {
            return MassGrad {
                mass: PROB_FLOOR,
                d_mu: 0.0,
                d_scale: 0.0,
                floored: true,
            };
        }
        let (pa, pb) = match self.family {
            Family::Gaussian => (std_normal_pdf(za), std_normal_pdf(zb)),
            Family::Laplacian => (0.5 * (-za.abs()).exp(), 0.5 * (-zb.abs()).exp()),
        };
        let d_mu = (pa - pb) / s;
        // epsilon-scale moves nothing when the clamp is active
        let d_scale = if self.scale < self.scale_floor {
            0.0
        } else {
            (za * pa - zb * pb) / s
        };
        MassGrad {
            mass: raw,
            d_mu,
            d_scale,
            floored: false,
        }
    }

    /// Rate in bits with derivatives in (mu, scale).
    pub fn rate_bits_with_grad(&self, v: f64) -> (f64, f64, f64) {
        let g = self.mass_with_grad(v);
        let rate = -g.mass.log2();
        let k = -1.0 / (g.mass * std::f64::consts::LN_2);
        (rate, k * g.d_mu, k * g.d_scale)
    }

    /// Rate in bits with its derivative in the reconstruction value itself
    /// (the training-time loss takes the code length as a function of y~).
    /// Zero on the floored branch, where the rate is pinned at 64 bits.
    pub fn rate_bits_value_grad(&self, v: f64) -> (f64, f64) {
        let raw = self.box_mass_raw(v);
        if raw < PROB_FLOOR {
            return (-PROB_FLOOR.log2(), 0.0);
        }
        let d_mass = self.pdf(v + 0.5) - self.pdf(v - 0.5);
        (-raw.log2(), -d_mass / (raw * std::f64::consts::LN_2))
    }
}

// P(za < Z <= zb) for a standard Laplace variable, exact in both tails via
// expm1 factorizations.
fn laplace_box_mass_std(za: f64, zb: f64) -> f64 {
    debug_assert!(za <= zb);
    if za >= 0.0 {
        -0.5 * (-za).exp() * (-(zb - za)).exp_m1()
    } else if zb <= 0.0 {
        0.5 * za.exp() * (zb - za).exp_m1()
    } else {
        1.0 - 0.5 * (-zb).exp() - 0.5 * za.exp()
    }
}

/// Quantize on the integer lattice shifted to the model mean.
pub fn zero_center_quantize(y: f64, mu_q: f64) -> f64 {
    round_half(y - mu_q) + mu_q
}

// ---------------------------------------------------------------------------
// Expected rate under a surrogate's output law
// ---------------------------------------------------------------------------

/// How to evaluate the expectation.
#[derive(Debug, Clone, Copy)]
pub enum RateMethod {
    Quadrature(Quadrature),
    MonteCarlo { n: usize, seed: Seed },
}

/// A Monte-Carlo mean with its standard error.
#[derive(Debug, Clone, Copy)]
pub struct McEstimate {
    pub value: f64,
    pub se: f64,
}

fn source_span(source: &Gaussian1D, margin: f64) -> (f64, f64) {
    let r = 10.0 * source.sigma + margin;
    (source.mu - r, source.mu + r)
}

fn lattice_range(source: &Gaussian1D, margin: f64) -> std::ops::RangeInclusive<i64> {
    let (lo, hi) = source_span(source, margin);
    (lo.floor() as i64)..=(hi.ceil() as i64)
}

// P(round(Y) = n) for a Gaussian source
fn round_mass(source: &Gaussian1D, n: i64) -> f64 {
    let n = n as f64;
    source.box_mass(n - 0.5, n + 0.5)
}

// P(stochastic rounding lands on n), in closed form:
// integral over (n-1, n] of p(y)(y - n + 1) dy plus
// integral over (n, n+1) of p(y)(n + 1 - y) dy.
fn sr_mass(source: &Gaussian1D, n: i64) -> f64 {
    let n = n as f64;
    let part = |a: f64, b: f64, c: f64, sign: f64| {
        // integral of p(y) * sign*(y - c) over [a, b]
        let za = (a - source.mu) / source.sigma;
        let zb = (b - source.mu) / source.sigma;
        let d_cdf = std_normal_box_mass(za, zb);
        let mean_part = source.mu * d_cdf + source.sigma * (std_normal_pdf(za) - std_normal_pdf(zb));
        sign * (mean_part - c * d_cdf)
    };
    part(n - 1.0, n, n - 1.0, 1.0) + part(n, n + 1.0, n + 1.0, -1.0)
}

/// Expected code length `E[-log2 q(y~)]` of a surrogate's output under the
/// given source and model.
///
/// Quadrature is exact-to-tolerance and available for every kind except the
/// universal-quantization ones, whose output law is not a fixed transform of
/// the source; use Monte Carlo there.
pub fn expected_rate(
    spec: &SurrogateSpec,
    source: &Gaussian1D,
    model: &EntropyModel,
    method: &RateMethod,
) -> Result<f64, EntropyModelError> {
    match method {
        RateMethod::MonteCarlo { n, seed } => Ok(expected_rate_mc(spec, source, model, *n, *seed)?.value),
        RateMethod::Quadrature(q) => expected_rate_quadrature(spec, source, model, q),
    }
}

/// Monte-Carlo expected rate with standard error. Works for every kind.
pub fn expected_rate_mc(
    spec: &SurrogateSpec,
    source: &Gaussian1D,
    model: &EntropyModel,
    n: usize,
    seed: Seed,
) -> Result<McEstimate, EntropyModelError> {
    if n == 0 {
        return Err(EntropyModelError::InvalidParameter("n = 0 samples".to_string()));
    }
    let mut rng = seed.rng();
    let mut rates = Vec::with_capacity(n);
    for _ in 0..n {
        let y = source.sample_with(&mut rng);
        let noise = draw_noise(spec, 1, &mut rng);
        let out = forward(spec, &[y], &noise)?;
        rates.push(model.rate_bits(out[0]));
    }
    let (value, se) = mean_se(&rates);
    Ok(McEstimate { value, se })
}

fn expected_rate_quadrature(
    spec: &SurrogateSpec,
    source: &Gaussian1D,
    model: &EntropyModel,
    q: &Quadrature,
) -> Result<f64, EntropyModelError> {
    match *spec {
        SurrogateSpec::Round => {
            let terms: Vec<f64> = lattice_range(source, 1.0)
                .map(|n| round_mass(source, n) * model.rate_bits(n as f64))
                .collect();
            Ok(compensated_sum(&terms))
        }
        SurrogateSpec::Sr => {
            let terms: Vec<f64> = lattice_range(source, 1.0)
                .map(|n| sr_mass(source, n) * model.rate_bits(n as f64))
                .collect();
            Ok(compensated_sum(&terms))
        }
        SurrogateSpec::Sha { alpha } => {
            let (lo, hi) = source_span(source, 1.0);
            Ok(integrate(|y| source.pdf(y) * model.rate_bits(soft_fn(y, alpha)), lo, hi, q)?)
        }
        SurrogateSpec::Aun => {
            let (lo, hi) = source_span(source, 1.5);
            Ok(integrate(
                |t| source.box_mass(t - 0.5, t + 0.5) * model.rate_bits(t),
                lo,
                hi,
                q,
            )?)
        }
        // The noisy soft value w~ = soft(Y) + U has an analytic law:
        // P(w~ in dt) = F(soft_inv(t + 0.5)) - F(soft_inv(t - 0.5)).
        SurrogateSpec::SuaNoisy { alpha } => {
            let (lo, hi) = source_span(source, 2.0);
            Ok(integrate(
                |t| {
                    let dens = source.box_mass(soft_inv(t - 0.5, alpha), soft_inv(t + 0.5, alpha));
                    dens * model.rate_bits(t)
                },
                lo,
                hi,
                q,
            )?)
        }
        // Same law pushed through the denoiser: integrate in the noisy
        // coordinate and evaluate the rate at denoise(t).
        SurrogateSpec::Sua { alpha } => {
            let (lo, hi) = source_span(source, 2.0);
            Ok(integrate(
                |t| {
                    let dens = source.box_mass(soft_inv(t - 0.5, alpha), soft_inv(t + 0.5, alpha));
                    dens * model.rate_bits(crate::surrogates::denoise(t, alpha))
                },
                lo,
                hi,
                q,
            )?)
        }
        SurrogateSpec::Sra { alpha } => {
            let probs = two_sided_lattice_masses(source, q, |y, n| {
                if y <= n {
                    soft_fn(y, alpha) - (n - 1.0)
                } else {
                    (n + 1.0) - soft_fn(y, alpha)
                }
            })?;
            Ok(rate_of_masses(model, &probs))
        }
        SurrogateSpec::Sga { tau } => {
            let probs = two_sided_lattice_masses(source, q, |y, n| {
                let (p_floor, p_ceil) = sga_probs(y, tau).expect("finite y in quadrature");
                if y <= n {
                    p_ceil
                } else {
                    p_floor
                }
            })?;
            Ok(rate_of_masses(model, &probs))
        }
        SurrogateSpec::UqShared | SurrogateSpec::UqIndep => Err(EntropyModelError::UnsupportedMethod(format!(
            "{}: no quadrature form; use Monte Carlo",
            spec.label()
        ))),
    }
}

// P(y~ = n) for two-point samplers: selection probability of n is a function
// of y on (n-1, n] (ceil branch) and (n, n+1) (floor branch).
fn two_sided_lattice_masses(
    source: &Gaussian1D,
    q: &Quadrature,
    pick_n: impl Fn(f64, f64) -> f64,
) -> Result<Vec<(i64, f64)>, EntropyModelError> {
    let mut out = Vec::new();
    for n in lattice_range(source, 1.0) {
        let nf = n as f64;
        let below = integrate(|y| source.pdf(y) * pick_n(y, nf), nf - 1.0, nf, q)?;
        let above = integrate(|y| source.pdf(y) * pick_n(y, nf), nf, nf + 1.0, q)?;
        out.push((n, below + above));
    }
    Ok(out)
}

fn rate_of_masses(model: &EntropyModel, masses: &[(i64, f64)]) -> f64 {
    let terms: Vec<f64> = masses
        .iter()
        .map(|&(n, p)| p * model.rate_bits(n as f64))
        .collect();
    compensated_sum(&terms)
}

// ---------------------------------------------------------------------------
// Rate-error surfaces
// ---------------------------------------------------------------------------

/// Model point minimizing the surrogate's expected rate.
#[derive(Debug, Clone, Copy)]
pub struct QStar {
    pub mu: f64,
    pub scale: f64,
    pub rate: f64,
}

/// Rate estimation error over a (mu_q, sigma_q) model grid: for each point,
/// the surrogate's expected rate minus the rounding rate under the same model.
#[derive(Debug, Clone)]
pub struct RateSurface {
    pub mu_grid: Vec<f64>,
    pub sigma_grid: Vec<f64>,
    /// `rate_tilde[i][j]` at `(mu_grid[i], sigma_grid[j])`
    pub rate_tilde: Vec<Vec<f64>>,
    pub rate_round: Vec<Vec<f64>>,
    pub delta_r: Vec<Vec<f64>>,
    pub q_star: QStar,
    /// Euclidean distance from q* to the source parameters.
    pub q_star_distance: f64,
}

/// Default model-mean grid: 21 points spanning one bin around the source mean.
pub fn default_mu_grid(source_mu: f64) -> Vec<f64> {
    crate::numerics::linspace(source_mu - 0.5, source_mu + 0.5, 21)
}

/// Default model-scale grid: 20 points on [0.05, 1].
pub fn default_sigma_grid() -> Vec<f64> {
    crate::numerics::linspace(0.05, 1.0, 20)
}

/// Sweep the model grid and compute the rate estimation error surface.
///
/// Quadrature-backed kinds evaluate exactly; universal-quantization kinds fall
/// back to Monte Carlo with `mc_n` samples on seed streams derived per grid
/// point, so the surface is deterministic for a given seed.
pub fn rate_surface(
    spec: &SurrogateSpec,
    source: &Gaussian1D,
    mu_grid: &[f64],
    sigma_grid: &[f64],
    scale_floor: f64,
    quad: &Quadrature,
    mc_n: usize,
    seed: Seed,
) -> Result<RateSurface, EntropyModelError> {
    if mu_grid.is_empty() || sigma_grid.is_empty() {
        return Err(EntropyModelError::InvalidParameter("empty grid".to_string()));
    }
    let needs_mc = matches!(spec, SurrogateSpec::UqShared | SurrogateSpec::UqIndep);
    let points: Vec<(usize, usize)> = (0..mu_grid.len())
        .flat_map(|i| (0..sigma_grid.len()).map(move |j| (i, j)))
        .collect();
    let evals: Vec<Result<(f64, f64), EntropyModelError>> = points
        .par_iter()
        .map(|&(i, j)| {
            let model = EntropyModel::gaussian(mu_grid[i], sigma_grid[j], scale_floor)?;
            let method = if needs_mc {
                RateMethod::MonteCarlo {
                    n: mc_n,
                    seed: seed.stream((i * sigma_grid.len() + j) as u64),
                }
            } else {
                RateMethod::Quadrature(*quad)
            };
            let r_tilde = expected_rate(spec, source, &model, &method)?;
            let r_round = expected_rate(&SurrogateSpec::Round, source, &model, &RateMethod::Quadrature(*quad))?;
            Ok((r_tilde, r_round))
        })
        .collect();

    let mut rate_tilde = vec![vec![0.0; sigma_grid.len()]; mu_grid.len()];
    let mut rate_round = vec![vec![0.0; sigma_grid.len()]; mu_grid.len()];
    let mut delta_r = vec![vec![0.0; sigma_grid.len()]; mu_grid.len()];
    for (&(i, j), ev) in points.iter().zip(evals) {
        let (rt, rr) = ev?;
        rate_tilde[i][j] = rt;
        rate_round[i][j] = rr;
        delta_r[i][j] = rt - rr;
    }

    // grid argmin of the surrogate rate, then a scale-axis refinement
    let (mut bi, mut bj) = (0, 0);
    for i in 0..mu_grid.len() {
        for j in 0..sigma_grid.len() {
            if rate_tilde[i][j] < rate_tilde[bi][bj] {
                (bi, bj) = (i, j);
            }
        }
    }
    let lo = sigma_grid[bj.saturating_sub(1)];
    let hi = sigma_grid[(bj + 1).min(sigma_grid.len() - 1)];
    let q_star = if lo < hi && !needs_mc {
        let f = |s: f64| {
            let model = EntropyModel::gaussian(mu_grid[bi], s, scale_floor).expect("positive scale");
            expected_rate(spec, source, &model, &RateMethod::Quadrature(*quad)).unwrap_or(f64::INFINITY)
        };
        let (s_best, r_best) = golden_min(f, lo, hi, 1e-6);
        if r_best <= rate_tilde[bi][bj] {
            QStar {
                mu: mu_grid[bi],
                scale: s_best,
                rate: r_best,
            }
        } else {
            QStar {
                mu: mu_grid[bi],
                scale: sigma_grid[bj],
                rate: rate_tilde[bi][bj],
            }
        }
    } else {
        QStar {
            mu: mu_grid[bi],
            scale: sigma_grid[bj],
            rate: rate_tilde[bi][bj],
        }
    };
    let q_star_distance = ((q_star.mu - source.mu).powi(2) + (q_star.scale - source.sigma).powi(2)).sqrt();
    Ok(RateSurface {
        mu_grid: mu_grid.to_vec(),
        sigma_grid: sigma_grid.to_vec(),
        rate_tilde,
        rate_round,
        delta_r,
        q_star,
        q_star_distance,
    })
}

// ---------------------------------------------------------------------------
// Correlated two-component rate under shared-dither quantization
// ---------------------------------------------------------------------------

/// Average per-component rate of a correlated standard-normal pair under
/// shared-dither universal quantization, with the second component's model
/// conditioned on the clean `y_1`: mean `rho_q * y1`, scale
/// `sqrt(1 - rho_q^2)`.
pub fn rate_uqs_2d(rho_p: f64, rho_q: f64, n_mc: usize, seed: Seed) -> Result<McEstimate, EntropyModelError> {
    if !(rho_p.abs() <= 1.0) {
        return Err(EntropyModelError::InvalidParameter(format!("rho_p = {rho_p}")));
    }
    if !(rho_q.abs() < 1.0) {
        return Err(EntropyModelError::InvalidParameter(format!("rho_q = {rho_q}")));
    }
    if n_mc == 0 {
        return Err(EntropyModelError::InvalidParameter("n_mc = 0".to_string()));
    }
    let pair_source = Gaussian2D::new(1.0, rho_p)?;
    let model1 = EntropyModel::gaussian(0.0, 1.0, 0.0)?;
    let cond_scale = (1.0 - rho_q * rho_q).sqrt();
    let mut rng = seed.rng();
    let mut rates = Vec::with_capacity(n_mc);
    for _ in 0..n_mc {
        let [y1, y2] = pair_source.sample_pair_with(&mut rng);
        let u = rng.uniform_centered();
        let t1 = round_half(y1 + u) - u;
        let t2 = round_half(y2 + u) - u;
        let model2 = EntropyModel::gaussian(rho_q * y1, cond_scale, 0.0)?;
        rates.push(0.5 * (model1.rate_bits(t1) + model2.rate_bits(t2)));
    }
    let (value, se) = mean_se(&rates);
    Ok(McEstimate { value, se })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Quadrature;

    fn quad() -> Quadrature {
        Quadrature::with_abs_tol(1e-11)
    }

    #[test]
    fn gaussian_mass_reference() {
        let m = EntropyModel::gaussian(0.0, 1.0, 0.0).unwrap();
        assert!((m.prob_mass(0.0) - 0.382_924_922_548_026_2).abs() < 1e-15);
        assert!((m.rate_bits(0.0) - 1.384_866_534_290_989_7).abs() < 1e-12);
        // the mean is the most probable reconstruction
        let m = EntropyModel::gaussian(0.37, 0.8, 0.0).unwrap();
        let at_mu = m.prob_mass(0.37);
        for k in -40..=40 {
            let v = 0.37 + k as f64 * 0.05;
            assert!(m.prob_mass(v) <= at_mu + 1e-15);
        }
    }

    #[test]
    fn laplacian_mass_reference() {
        let m = EntropyModel::laplacian(0.0, 1.0, 0.0).unwrap();
        // 1 - exp(-1/2)
        assert!((m.prob_mass(0.0) - 0.393_469_340_287_366_58).abs() < 1e-15);
    }

    #[test]
    fn scale_clamp_is_exact() {
        let clamped = EntropyModel::gaussian(0.0, 0.05, 0.11).unwrap();
        let floored = EntropyModel::gaussian(0.0, 0.11, 0.0).unwrap();
        assert_eq!(clamped.effective_scale(), 0.11);
        for k in -20..=20 {
            let v = k as f64 * 0.3;
            assert_eq!(clamped.prob_mass(v), floored.prob_mass(v));
        }
    }

    #[test]
    fn mass_floor_caps_rate() {
        let m = EntropyModel::gaussian(0.0, 0.1, 0.0).unwrap();
        assert_eq!(m.prob_mass(1000.0), PROB_FLOOR);
        assert_eq!(m.rate_bits(1000.0), 64.0);
    }

    #[test]
    fn masses_sum_to_one_over_integers() {
        for model in [
            EntropyModel::gaussian(0.3, 0.7, 0.0).unwrap(),
            EntropyModel::laplacian(-0.2, 1.3, 0.0).unwrap(),
        ] {
            let total: f64 = (-60..=60).map(|n| model.prob_mass(n as f64)).sum();
            assert!((total - 1.0).abs() < 1e-8, "sum {total}");
        }
    }

    #[test]
    fn mass_gradients_match_finite_differences() {
        let h = 1e-6;
        for family in [Family::Gaussian, Family::Laplacian] {
            // v - 0.5 and v + 0.5 stay off the Laplace density kink at mu,
            // where a finite-difference oracle loses accuracy
            for &(mu, scale, v) in &[(0.0, 1.0, 0.0), (0.3, 0.4, 1.0), (-0.7, 2.0, -2.0), (0.15, 0.25, 0.6)] {
                let build = |mu: f64, scale: f64| EntropyModel::build(family, mu, scale, 0.0).unwrap();
                let g = build(mu, scale).mass_with_grad(v);
                let fd_mu = (build(mu + h, scale).prob_mass(v) - build(mu - h, scale).prob_mass(v)) / (2.0 * h);
                let fd_s = (build(mu, scale + h).prob_mass(v) - build(mu, scale - h).prob_mass(v)) / (2.0 * h);
                assert!(
                    (g.d_mu - fd_mu).abs() < 1e-6 * fd_mu.abs().max(1e-3),
                    "{family:?} d_mu {} vs {}",
                    g.d_mu,
                    fd_mu
                );
                assert!(
                    (g.d_scale - fd_s).abs() < 1e-6 * fd_s.abs().max(1e-3),
                    "{family:?} d_scale {} vs {}",
                    g.d_scale,
                    fd_s
                );
            }
        }
    }

    #[test]
    fn clamped_branches_have_zero_gradient() {
        let m = EntropyModel::gaussian(0.0, 0.05, 0.11).unwrap();
        let g = m.mass_with_grad(0.0);
        assert_eq!(g.d_scale, 0.0);
        assert!(g.d_mu != 0.0 || g.mass > 0.0);
        let far = EntropyModel::gaussian(0.0, 0.1, 0.0).unwrap().mass_with_grad(100.0);
        assert!(far.floored);
        assert_eq!(far.d_mu, 0.0);
        assert_eq!(far.d_scale, 0.0);
    }

    #[test]
    fn rate_grad_consistent_with_mass_grad() {
        let m = EntropyModel::gaussian(0.2, 0.6, 0.0).unwrap();
        let (rate, d_mu, d_scale) = m.rate_bits_with_grad(1.0);
        assert!((rate - m.rate_bits(1.0)).abs() < 1e-14);
        let h = 1e-6;
        let up = EntropyModel::gaussian(0.2 + h, 0.6, 0.0).unwrap().rate_bits(1.0);
        let dn = EntropyModel::gaussian(0.2 - h, 0.6, 0.0).unwrap().rate_bits(1.0);
        assert!((d_mu - (up - dn) / (2.0 * h)).abs() < 1e-5);
        let up = EntropyModel::gaussian(0.2, 0.6 + h, 0.0).unwrap().rate_bits(1.0);
        let dn = EntropyModel::gaussian(0.2, 0.6 - h, 0.0).unwrap().rate_bits(1.0);
        assert!((d_scale - (up - dn) / (2.0 * h)).abs() < 1e-5);
    }

    #[test]
    fn zero_center_examples() {
        assert!((zero_center_quantize(1.3, 0.3) - 1.3).abs() < 1e-12);
        assert_eq!(zero_center_quantize(1.3, 0.0), 1.0);
        assert!((zero_center_quantize(0.7, 0.4) - 0.4).abs() < 1e-12);
        // offset residue is an integer
        let v = zero_center_quantize(2.71, 0.13);
        assert!(((v - 0.13) - (v - 0.13).round()).abs() < 1e-9);
    }

    #[test]
    fn round_rate_single_bin_limit() {
        let src = Gaussian1D::new(0.0, 1e-4).unwrap();
        let model = EntropyModel::gaussian(0.0, 1.0, 0.0).unwrap();
        let r = expected_rate(&SurrogateSpec::round(), &src, &model, &RateMethod::Quadrature(quad())).unwrap();
        assert!((r - 1.384_866_534_290_989_7).abs() < 1e-9, "rate {r}");
    }

    #[test]
    fn matched_wide_model_aun_close_to_round() {
        let src = Gaussian1D::new(0.0, 1.0).unwrap();
        let model = EntropyModel::gaussian(0.0, 1.0, 0.0).unwrap();
        let q = RateMethod::Quadrature(quad());
        let r_aun = expected_rate(&SurrogateSpec::aun(), &src, &model, &q).unwrap();
        let r_round = expected_rate(&SurrogateSpec::round(), &src, &model, &q).unwrap();
        assert!((r_aun - r_round).abs() < 0.05, "aun {r_aun} round {r_round}");
    }

    #[test]
    fn sr_rate_dominates_round_rate_matched() {
        let src = Gaussian1D::new(0.0, 0.3).unwrap();
        let model = EntropyModel::gaussian(0.0, 0.3, 0.0).unwrap();
        let q = RateMethod::Quadrature(quad());
        let r_sr = expected_rate(&SurrogateSpec::sr(), &src, &model, &q).unwrap();
        let r_round = expected_rate(&SurrogateSpec::round(), &src, &model, &q).unwrap();
        assert!(r_sr >= r_round, "sr {r_sr} round {r_round}");
    }

    #[test]
    fn round_rate_bounds_discrete_entropy() {
        // cross-entropy is at least the entropy; equality when the model's
        // integer masses equal the true rounding masses
        let src = Gaussian1D::new(0.3, 0.7).unwrap();
        let h: f64 = {
            let terms: Vec<f64> = (-30..=30)
                .map(|n| {
                    let p = round_mass(&src, n);
                    if p > 0.0 {
                        -p * p.log2()
                    } else {
                        0.0
                    }
                })
                .collect();
            compensated_sum(&terms)
        };
        let q = RateMethod::Quadrature(quad());
        let matched = EntropyModel::gaussian(0.3, 0.7, 0.0).unwrap();
        let r = expected_rate(&SurrogateSpec::round(), &src, &matched, &q).unwrap();
        assert!(r >= h - 1e-9);
        assert!((r - h).abs() < 1e-3, "gap {}", r - h);
        for model in [
            EntropyModel::gaussian(0.0, 0.7, 0.0).unwrap(),
            EntropyModel::gaussian(0.3, 1.5, 0.0).unwrap(),
            EntropyModel::laplacian(0.3, 0.7, 0.0).unwrap(),
        ] {
            let r = expected_rate(&SurrogateSpec::round(), &src, &model, &q).unwrap();
            assert!(r >= h - 1e-9, "model rate {r} < entropy {h}");
        }
    }

    #[test]
    fn mc_agrees_with_quadrature() {
        let src = Gaussian1D::new(0.1, 0.5).unwrap();
        let model = EntropyModel::gaussian(0.0, 0.4, 0.0).unwrap();
        let n = 200_000;
        for (k, spec) in [
            SurrogateSpec::round(),
            SurrogateSpec::aun(),
            SurrogateSpec::sr(),
            SurrogateSpec::sua(5.0).unwrap(),
            SurrogateSpec::sua_noisy(5.0).unwrap(),
            SurrogateSpec::sra(5.0).unwrap(),
            SurrogateSpec::sha(5.0).unwrap(),
            SurrogateSpec::sga(0.5).unwrap(),
        ]
        .iter()
        .enumerate()
        {
            let exact = expected_rate(spec, &src, &model, &RateMethod::Quadrature(quad())).unwrap();
            let mc = expected_rate_mc(spec, &src, &model, n, Seed::new(77).stream(k as u64)).unwrap();
            assert!(
                (mc.value - exact).abs() < 3.0 * mc.se.max(1e-4),
                "{}: mc {} exact {} se {}",
                spec.label(),
                mc.value,
                exact,
                mc.se
            );
        }
    }

    #[test]
    fn uq_quadrature_unsupported_mc_works() {
        let src = Gaussian1D::new(0.0, 0.5).unwrap();
        let model = EntropyModel::gaussian(0.0, 0.5, 0.0).unwrap();
        let err = expected_rate(&SurrogateSpec::uq_shared(), &src, &model, &RateMethod::Quadrature(quad()));
        assert!(matches!(err, Err(EntropyModelError::UnsupportedMethod(_))));
        let mc = expected_rate_mc(&SurrogateSpec::uq_shared(), &src, &model, 50_000, Seed::new(5)).unwrap();
        assert!(mc.value.is_finite() && mc.value > 0.0);
    }

    #[test]
    fn surface_round_is_zero_and_qstar_attains_min() {
        let src = Gaussian1D::new(0.0, 0.3).unwrap();
        let mu_grid = crate::numerics::linspace(-0.5, 0.5, 5);
        let sigma_grid = crate::numerics::linspace(0.05, 1.0, 4);
        let surf = rate_surface(
            &SurrogateSpec::round(),
            &src,
            &mu_grid,
            &sigma_grid,
            0.0,
            &quad(),
            10_000,
            Seed::new(9),
        )
        .unwrap();
        let mut min_rate = f64::INFINITY;
        for i in 0..mu_grid.len() {
            for j in 0..sigma_grid.len() {
                assert!(surf.delta_r[i][j].abs() < 1e-9);
                min_rate = min_rate.min(surf.rate_tilde[i][j]);
            }
        }
        assert!(surf.q_star.rate <= min_rate + 1e-12);
    }

    #[test]
    fn aun_surface_error_magnitude_shrinks_with_sigma_q() {
        let src = Gaussian1D::new(0.0, 0.3).unwrap();
        let mu_grid = [0.0];
        let sigma_grid = [0.05, 1.0];
        let surf = rate_surface(
            &SurrogateSpec::aun(),
            &src,
            &mu_grid,
            &sigma_grid,
            0.0,
            &quad(),
            10_000,
            Seed::new(9),
        )
        .unwrap();
        assert!(
            surf.delta_r[0][0].abs() > surf.delta_r[0][1].abs(),
            "narrow {} wide {}",
            surf.delta_r[0][0],
            surf.delta_r[0][1]
        );
    }

    #[test]
    fn sua_surface_flatter_than_aun() {
        let src = Gaussian1D::new(0.0, 0.3).unwrap();
        let mu_grid = crate::numerics::linspace(-0.5, 0.5, 3);
        let sigma_grid = crate::numerics::linspace(0.05, 1.0, 4);
        let max_abs = |spec: &SurrogateSpec| {
            let surf = rate_surface(spec, &src, &mu_grid, &sigma_grid, 0.0, &quad(), 10_000, Seed::new(9)).unwrap();
            surf.delta_r
                .iter()
                .flatten()
                .fold(0.0_f64, |acc, &v| acc.max(v.abs()))
        };
        let sua = max_abs(&SurrogateSpec::sua(12.0).unwrap());
        let aun = max_abs(&SurrogateSpec::aun());
        assert!(sua < aun, "sua {sua} aun {aun}");
    }

    #[test]
    fn uqs_2d_reduces_to_scalar_when_independent() {
        let two = rate_uqs_2d(0.0, 0.0, 120_000, Seed::new(21)).unwrap();
        let src = Gaussian1D::new(0.0, 1.0).unwrap();
        let model = EntropyModel::gaussian(0.0, 1.0, 0.0).unwrap();
        let one = expected_rate_mc(&SurrogateSpec::uq_shared(), &src, &model, 120_000, Seed::new(22)).unwrap();
        let tol = 3.0 * (two.se.powi(2) + one.se.powi(2)).sqrt();
        assert!((two.value - one.value).abs() < tol, "2d {} 1d {}", two.value, one.value);
    }

    #[test]
    fn uqs_2d_exploits_correlation() {
        let loose = rate_uqs_2d(1.0, 0.0, 150_000, Seed::new(31)).unwrap();
        let tight = rate_uqs_2d(1.0, 0.9, 150_000, Seed::new(32)).unwrap();
        let tol = 3.0 * (loose.se.powi(2) + tight.se.powi(2)).sqrt();
        assert!(tight.value < loose.value - tol, "tight {} loose {}", tight.value, loose.value);
    }

    #[test]
    fn uqs_2d_matches_direct_mc_oracle() {
        // independent evaluation of the same expectation with its own
        // sampling layout
        let (rho_p, rho_q) = (1.0, 0.5);
        let got = rate_uqs_2d(rho_p, rho_q, 200_000, Seed::new(41)).unwrap();
        let mut rng = Seed::new(42).rng();
        let src = Gaussian1D::new(0.0, 1.0).unwrap();
        let model1 = EntropyModel::gaussian(0.0, 1.0, 0.0).unwrap();
        let cond_scale = (1.0_f64 - rho_q * rho_q).sqrt();
        let mut vals = Vec::with_capacity(200_000);
        for _ in 0..200_000 {
            let y1 = src.sample_with(&mut rng);
            let y2 = y1; // rho_p = 1
            let u = rng.uniform_centered();
            let t1 = round_half(y1 + u) - u;
            let t2 = round_half(y2 + u) - u;
            let model2 = EntropyModel::gaussian(rho_q * y1, cond_scale, 0.0).unwrap();
            vals.push(0.5 * (model1.rate_bits(t1) + model2.rate_bits(t2)));
        }
        let (oracle, oracle_se) = mean_se(&vals);
        let tol = 3.0 * (got.se.powi(2) + oracle_se.powi(2)).sqrt();
        assert!((got.value - oracle).abs() < tol, "got {} oracle {oracle}", got.value);
    }

    #[test]
    fn parameter_validation() {
        assert!(EntropyModel::gaussian(0.0, 0.0, 0.0).is_err());
        assert!(EntropyModel::gaussian(f64::NAN, 1.0, 0.0).is_err());
        assert!(EntropyModel::laplacian(0.0, 1.0, -0.1).is_err());
        assert!(rate_uqs_2d(1.5, 0.0, 100, Seed::new(1)).is_err());
        assert!(rate_uqs_2d(0.5, 1.0, 100, Seed::new(1)).is_err());
    }
}
