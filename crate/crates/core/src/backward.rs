//! Gradient rules for the forward calculations, plus reference expected
//! gradients and a bias/variance measurement harness.
//!
//! Four rules cover the family:
//! * STANDARD differentiates a smooth deterministic forward directly.
//! * PGE differentiates through the noise path of a reparameterized forward
//!   (single-sample, unbiased).
//! * STE replaces the hard or denoising part of the forward by the identity
//!   and keeps any smooth factor.
//! * EP evaluates the derivative of the expected loss itself, which has a
//!   closed or low-dimensional form for every forward here.

use crate::entropy_model::EntropyModel;
use crate::numerics::{gauss_legendre, mean_se, mean_var, RngStream, Seed};
use crate::sources::Gaussian1D;
use crate::surrogates::{
    denoise, denoise_deriv, draw_noise, forward, sga_probs, soft_fn, soft_fn_deriv, sra_prob_floor, Noise,
    SurrogateError, SurrogateSpec,
};
use rayon::prelude::*;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum BackwardError {
    #[error("rule not defined for forward kind: {0}")]
    UnsupportedForward(String),
    #[error("exact expected gradient limited to 3 components, got {0}")]
    DimensionTooLarge(usize),
    #[error("invalid estimator: {0}")]
    InvalidEstimator(String),
    #[error(transparent)]
    Surrogate(#[from] SurrogateError),
}

/// Which backward rule to apply.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GradRule {
    Standard,
    Pge,
    Ste,
    Ep,
}

/// A forward kind paired with a backward rule.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EstimatorSpec {
    pub forward: SurrogateSpec,
    pub rule: GradRule,
    /// Independent single-sample gradients averaged into one estimate.
    pub samples_per_estimate: usize,
}

impl EstimatorSpec {
    pub fn new(forward: SurrogateSpec, rule: GradRule, samples_per_estimate: usize) -> Result<Self, BackwardError> {
        let spec = EstimatorSpec {
            forward,
            rule,
            samples_per_estimate,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<(), BackwardError> {
        if self.samples_per_estimate == 0 {
            return Err(BackwardError::InvalidEstimator("samples_per_estimate = 0".to_string()));
        }
        match self.rule {
            GradRule::Standard => match self.forward {
                SurrogateSpec::Sha { .. } => Ok(()),
                other => Err(BackwardError::UnsupportedForward(format!(
                    "standard rule needs a smooth deterministic forward, got {}",
                    other.label()
                ))),
            },
            GradRule::Pge => match self.forward {
                SurrogateSpec::Aun
                | SurrogateSpec::Sua { .. }
                | SurrogateSpec::SuaNoisy { .. }
                | SurrogateSpec::UqShared
                | SurrogateSpec::UqIndep => Ok(()),
                other => Err(BackwardError::UnsupportedForward(format!(
                    "no noise path to differentiate for {}",
                    other.label()
                ))),
            },
            GradRule::Ste | GradRule::Ep => Ok(()),
        }
    }
}

// ---------------------------------------------------------------------------
// Sampled rules
// ---------------------------------------------------------------------------

/// Pathwise gradient at frozen noise: `dL/dy~ * dy~/dy`, componentwise.
///
/// The universal-quantization kinds are treated through their additive-noise
/// form (the error `y~ - y` is noise independent of `y`), giving an identity
/// Jacobian like plain additive noise.
pub fn grad_pge(
    spec: &SurrogateSpec,
    loss_grad: impl Fn(&[f64]) -> Vec<f64>,
    y: &[f64],
    noise: &Noise,
) -> Result<Vec<f64>, BackwardError> {
    let jac: Vec<f64> = match *spec {
        SurrogateSpec::Aun | SurrogateSpec::UqShared | SurrogateSpec::UqIndep => vec![1.0; y.len()],
        SurrogateSpec::Sua { alpha } => match noise {
            Noise::PerComponent(us) if us.len() == y.len() => y
                .iter()
                .zip(us)
                .map(|(&v, &u)| denoise_deriv(soft_fn(v, alpha) + u, alpha) * soft_fn_deriv(v, alpha))
                .collect(),
            _ => return Err(SurrogateError::DimensionMismatch("per-component noise".to_string()).into()),
        },
        SurrogateSpec::SuaNoisy { alpha } => y.iter().map(|&v| soft_fn_deriv(v, alpha)).collect(),
        ref other => {
            return Err(BackwardError::UnsupportedForward(format!(
                "no noise path to differentiate for {}",
                other.label()
            )))
        }
    };
    let out = forward(spec, y, noise)?;
    let g = loss_grad(&out);
    Ok(g.iter().zip(jac).map(|(&gi, j)| gi * j).collect())
}

/// Straight-through gradient: evaluate `dL/dy~` at the sampled output and
/// push it through whatever smooth factor the forward has (the soft map's
/// slope for the annealed kinds, identity otherwise).
pub fn grad_ste(
    spec: &SurrogateSpec,
    loss_grad: impl Fn(&[f64]) -> Vec<f64>,
    y: &[f64],
    noise: &Noise,
) -> Result<Vec<f64>, BackwardError> {
    let out = forward(spec, y, noise)?;
    let g = loss_grad(&out);
    let factor: Vec<f64> = match *spec {
        SurrogateSpec::Sha { alpha }
        | SurrogateSpec::Sua { alpha }
        | SurrogateSpec::SuaNoisy { alpha }
        | SurrogateSpec::Sra { alpha } => y.iter().map(|&v| soft_fn_deriv(v, alpha)).collect(),
        _ => vec![1.0; y.len()],
    };
    Ok(g.iter().zip(factor).map(|(&gi, f)| gi * f).collect())
}

/// True gradient of a smooth deterministic forward (the soft map).
pub fn grad_standard(
    spec: &SurrogateSpec,
    loss_grad: impl Fn(&[f64]) -> Vec<f64>,
    y: &[f64],
) -> Result<Vec<f64>, BackwardError> {
    match *spec {
        SurrogateSpec::Sha { alpha } => {
            let out: Vec<f64> = y.iter().map(|&v| soft_fn(v, alpha)).collect();
            let g = loss_grad(&out);
            Ok(g.iter()
                .zip(y)
                .map(|(&gi, &v)| gi * soft_fn_deriv(v, alpha))
                .collect())
        }
        ref other => Err(BackwardError::UnsupportedForward(format!(
            "standard rule needs a smooth deterministic forward, got {}",
            other.label()
        ))),
    }
}

// ---------------------------------------------------------------------------
// Exact expected gradients
// ---------------------------------------------------------------------------

/// Derivative of `E_u L(y + u)` for centered unit noise: `L(y+1/2) - L(y-1/2)`.
pub fn grad_ep_scalar(loss: impl Fn(f64) -> f64, y: f64) -> f64 {
    loss(y + 0.5) - loss(y - 0.5)
}

/// Exact expected gradient of a separable term under the soft/noise/denoise
/// forward: the noise-boundary difference, scaled by the soft map's slope.
/// The denoiser maps the boundaries back to `y +- 1/2` exactly.
pub fn grad_ep_rate_sua(y: f64, alpha: f64, rate_fn: impl Fn(f64) -> f64) -> f64 {
    let s = soft_fn(y, alpha);
    soft_fn_deriv(y, alpha) * (rate_fn(denoise(s + 0.5, alpha)) - rate_fn(denoise(s - 0.5, alpha)))
}

/// Exact expected gradient of a separable term under annealed stochastic
/// rounding: slope times the two-point outcome difference.
pub fn grad_ep_rate_sra(y: f64, alpha: f64, rate_fn: impl Fn(f64) -> f64) -> f64 {
    soft_fn_deriv(y, alpha) * (rate_fn(y.ceil()) - rate_fn(y.floor()))
}

/// Exact scalar expected gradient for any forward kind.
///
/// Dispatches to the closed form each kind admits; the universal-quantization
/// kinds share the additive-noise form (their error marginal is exactly
/// centered unit noise for every y). Rounding's expected loss is piecewise
/// constant, so its expected gradient is zero away from bin boundaries.
pub fn grad_ep_reference_scalar(
    spec: &SurrogateSpec,
    loss: &(impl Fn(f64) -> f64 + ?Sized),
    y: f64,
) -> Result<f64, BackwardError> {
    match *spec {
        SurrogateSpec::Round => Ok(0.0),
        SurrogateSpec::Sha { alpha } => {
            // smooth deterministic: central difference would be redundant;
            // the exact derivative needs dL, so approximate via the slope of
            // the loss along the map with a tight stencil
            let h = 1e-6;
            let s = soft_fn(y, alpha);
            let dl = (loss(s + h) - loss(s - h)) / (2.0 * h);
            Ok(dl * soft_fn_deriv(y, alpha))
        }
        SurrogateSpec::Aun | SurrogateSpec::UqShared | SurrogateSpec::UqIndep => Ok(grad_ep_scalar(loss, y)),
        SurrogateSpec::Sua { alpha } => Ok(grad_ep_rate_sua(y, alpha, loss)),
        SurrogateSpec::SuaNoisy { alpha } => {
            let s = soft_fn(y, alpha);
            Ok(soft_fn_deriv(y, alpha) * (loss(s + 0.5) - loss(s - 0.5)))
        }
        SurrogateSpec::Sr => Ok(loss(y.ceil()) - loss(y.floor())),
        SurrogateSpec::Sra { alpha } => Ok(grad_ep_rate_sra(y, alpha, loss)),
        SurrogateSpec::Sga { tau } => {
            let (p_floor, p_ceil) = sga_probs(y, tau)?;
            let frac = y - y.floor();
            let clamp = 1.0 - 1e-6;
            let da_floor = if frac < clamp { 1.0 / (1.0 - frac * frac) } else { 0.0 };
            let da_ceil = if 1.0 - frac < clamp {
                -1.0 / (1.0 - (1.0 - frac) * (1.0 - frac))
            } else {
                0.0
            };
            let dp_floor = p_floor * p_ceil * (da_ceil - da_floor) / tau;
            Ok(dp_floor * (loss(y.floor()) - loss(y.ceil())))
        }
    }
}

/// Reference expected gradient of a vector loss, exact up to quadrature.
///
/// Stochastic rounding enumerates its corner outcomes analytically; the
/// annealed rounding enumerates outcomes and finite-differences the exact
/// expectation; the noise-based kinds integrate the noise cube with the
/// boundary-difference identity (plain noise) or piecewise Gauss-Legendre
/// panels split at the denoiser's interior kink. Inputs should stay off
/// exact integers, where the two-point laws switch branches.
pub fn grad_ep_vector_bruteforce(
    loss: &(impl Fn(&[f64]) -> f64 + Sync + ?Sized),
    y: &[f64],
    spec: &SurrogateSpec,
) -> Result<Vec<f64>, BackwardError> {
    let d = y.len();
    if d == 0 || d > 3 {
        return Err(BackwardError::DimensionTooLarge(d));
    }
    match *spec {
        SurrogateSpec::Sr => {
            // p_ceil(y) = y - floor(y) is linear, so d/dy_k of the corner sum
            // is the outcome difference weighted by the other components
            let mut g = vec![0.0; d];
            for k in 0..d {
                let others: Vec<usize> = (0..d).filter(|&i| i != k).collect();
                let mut acc = 0.0;
                for mask in 0..(1 << others.len()) {
                    let mut point = vec![0.0; d];
                    let mut weight = 1.0;
                    for (bit, &i) in others.iter().enumerate() {
                        let p_ceil = y[i] - y[i].floor();
                        if mask >> bit & 1 == 1 {
                            point[i] = y[i].floor() + 1.0;
                            weight *= p_ceil;
                        } else {
                            point[i] = y[i].floor();
                            weight *= 1.0 - p_ceil;
                        }
                    }
                    point[k] = y[k].floor() + 1.0;
                    let hi = loss(&point);
                    point[k] = y[k].floor();
                    let lo = loss(&point);
                    acc += weight * (hi - lo);
                }
                g[k] = acc;
            }
            Ok(g)
        }
        SurrogateSpec::Sra { alpha } => {
            // exact enumeration of the expectation, then a 5-point stencil;
            // deliberately independent of the soft map's analytic slope
            let expect = |yy: &[f64]| -> f64 {
                let mut total = 0.0;
                for mask in 0..(1_usize << d) {
                    let mut point = vec![0.0; d];
                    let mut weight = 1.0;
                    for i in 0..d {
                        let p_floor = sra_prob_floor(yy[i], alpha);
                        if mask >> i & 1 == 1 {
                            point[i] = yy[i].floor() + 1.0;
                            weight *= 1.0 - p_floor;
                        } else {
                            point[i] = yy[i].floor();
                            weight *= p_floor;
                        }
                    }
                    if weight != 0.0 {
                        total += weight * loss(&point);
                    }
                }
                total
            };
            Ok(five_point_grad(&expect, y, 1e-3))
        }
        SurrogateSpec::Aun => {
            // d/dy_k = E over the other noises of the u_k boundary difference
            let mut g = vec![0.0; d];
            for k in 0..d {
                let others: Vec<usize> = (0..d).filter(|&i| i != k).collect();
                let f = |uo: &[f64]| {
                    let mut hi = y.to_vec();
                    let mut lo = y.to_vec();
                    for (&i, &u) in others.iter().zip(uo) {
                        hi[i] += u;
                        lo[i] += u;
                    }
                    hi[k] += 0.5;
                    lo[k] -= 0.5;
                    loss(&hi) - loss(&lo)
                };
                g[k] = cube_integral(&f, others.len());
            }
            Ok(g)
        }
        SurrogateSpec::Sua { alpha } => {
            let expect = |yy: &[f64]| -> f64 {
                let s: Vec<f64> = yy.iter().map(|&v| soft_fn(v, alpha)).collect();
                noise_expect_sua(loss, &s, alpha, &mut Vec::with_capacity(d))
            };
            Ok(five_point_grad(&expect, y, 1e-3))
        }
        ref other => Err(BackwardError::UnsupportedForward(format!(
            "no reference form for {}",
            other.label()
        ))),
    }
}

// five-point central stencil, h^4 accurate
fn five_point_grad(f: &impl Fn(&[f64]) -> f64, y: &[f64], h: f64) -> Vec<f64> {
    let mut g = vec![0.0; y.len()];
    for k in 0..y.len() {
        let mut p = y.to_vec();
        let eval = |p: &mut Vec<f64>, dx: f64| {
            p[k] = y[k] + dx;
            f(p)
        };
        let f1 = eval(&mut p, -2.0 * h);
        let f2 = eval(&mut p, -h);
        let f3 = eval(&mut p, h);
        let f4 = eval(&mut p, 2.0 * h);
        g[k] = (f1 - 8.0 * f2 + 8.0 * f3 - f4) / (12.0 * h);
    }
    g
}

// integral of f over the centered unit cube of the given dimension
fn cube_integral(f: &impl Fn(&[f64]) -> f64, dim: usize) -> f64 {
    const NODES: usize = 48;
    match dim {
        0 => f(&[]),
        1 => gauss_legendre(&|u| f(&[u]), -0.5, 0.5, NODES),
        2 => gauss_legendre(
            &|u1| gauss_legendre(&|u2| f(&[u1, u2]), -0.5, 0.5, NODES),
            -0.5,
            0.5,
            NODES,
        ),
        _ => unreachable!("dimension checked above"),
    }
}

// E over the noise cube of loss(denoise(s + u)), dimension by dimension.
// Each axis is split at the single interior point where the denoiser's
// argument crosses an integer, keeping Gauss-Legendre panels spectral.
fn noise_expect_sua(loss: &(impl Fn(&[f64]) -> f64 + ?Sized), s: &[f64], alpha: f64, buf: &mut Vec<f64>) -> f64 {
    const NODES: usize = 48;
    let k = buf.len();
    if k == s.len() {
        return loss(buf);
    }
    let split = s[k].floor() + 0.5 - s[k]; // w = s + u - 1/2 crosses floor(s)
    let mut total = 0.0;
    for (lo, hi) in [(-0.5, split), (split, 0.5)] {
        if hi - lo < 1e-15 {
            continue;
        }
        total += gauss_legendre(
            &|u: f64| {
                let mut inner = buf.clone();
                inner.push(denoise(s[k] + u, alpha));
                noise_expect_sua(loss, s, alpha, &mut inner)
            },
            lo,
            hi,
            NODES,
        );
    }
    total
}

// ---------------------------------------------------------------------------
// Bias/variance measurement harness
// ---------------------------------------------------------------------------

/// A scalar loss with its derivative in the reconstruction value.
pub trait ScalarLoss: Sync {
    fn value(&self, t: f64) -> f64;
    fn deriv(&self, t: f64) -> f64;
}

/// The code-length term `-log2 q(y~)` of an entropy model as a training loss.
pub struct RateLoss<'a> {
    pub model: &'a EntropyModel,
}

impl ScalarLoss for RateLoss<'_> {
    fn value(&self, t: f64) -> f64 {
        self.model.rate_bits(t)
    }
    fn deriv(&self, t: f64) -> f64 {
        self.model.rate_bits_value_grad(t).1
    }
}

/// Closure-backed loss for tests and ad-hoc measurements.
pub struct FnLoss<V, D> {
    pub value: V,
    pub deriv: D,
}

impl<V: Fn(f64) -> f64 + Sync, D: Fn(f64) -> f64 + Sync> ScalarLoss for FnLoss<V, D> {
    fn value(&self, t: f64) -> f64 {
        (self.value)(t)
    }
    fn deriv(&self, t: f64) -> f64 {
        (self.deriv)(t)
    }
}

/// Bias and variance of a gradient estimator, averaged over the input draw.
/// Bias compares the per-input trial mean against the exact expected
/// gradient; variance is the per-input sample variance. Standard errors are
/// over the input draws.
#[derive(Debug, Clone, Copy)]
pub struct GradStats {
    pub bias: f64,
    pub bias_se: f64,
    pub variance: f64,
    pub variance_se: f64,
    pub n_inputs: usize,
    pub n_trials: usize,
}

fn scalar_estimate(
    est: &EstimatorSpec,
    loss: &(impl ScalarLoss + ?Sized),
    y: f64,
    rng: &mut RngStream,
) -> Result<f64, BackwardError> {
    let mut acc = 0.0;
    for _ in 0..est.samples_per_estimate {
        let g = match est.rule {
            GradRule::Standard => grad_standard(&est.forward, |t| vec![loss.deriv(t[0])], &[y])?[0],
            GradRule::Pge => {
                let noise = draw_noise(&est.forward, 1, rng);
                grad_pge(&est.forward, |t| vec![loss.deriv(t[0])], &[y], &noise)?[0]
            }
            GradRule::Ste => {
                let noise = draw_noise(&est.forward, 1, rng);
                grad_ste(&est.forward, |t| vec![loss.deriv(t[0])], &[y], &noise)?[0]
            }
            GradRule::Ep => grad_ep_reference_scalar(&est.forward, &|t| loss.value(t), y)?,
        };
        acc += g;
    }
    Ok(acc / est.samples_per_estimate as f64)
}

/// Run the estimator `n_trials` times at each of `n_inputs` draws from the
/// input distribution and aggregate bias and variance against the exact
/// expected gradient. Inputs are processed in parallel on derived seed
/// streams, so results are reproducible for a given seed.
pub fn measure_grad_stats(
    est: &EstimatorSpec,
    loss: &(impl ScalarLoss + ?Sized),
    y_dist: &Gaussian1D,
    n_inputs: usize,
    n_trials: usize,
    seed: Seed,
) -> Result<GradStats, BackwardError> {
    est.validate()?;
    if n_inputs < 2 || n_trials < 2 {
        return Err(BackwardError::InvalidEstimator(
            "need at least two inputs and two trials".to_string(),
        ));
    }
    let per_input: Vec<Result<(f64, f64), BackwardError>> = (0..n_inputs)
        .into_par_iter()
        .map(|i| {
            let mut rng = seed.stream(i as u64).rng();
            let y = y_dist.sample_with(&mut rng);
            let g_ep = grad_ep_reference_scalar(&est.forward, &|t| loss.value(t), y)?;
            let mut gs = Vec::with_capacity(n_trials);
            for _ in 0..n_trials {
                gs.push(scalar_estimate(est, loss, y, &mut rng)?);
            }
            let (mean, var) = mean_var(&gs);
            Ok(((mean - g_ep).abs(), var))
        })
        .collect();
    let mut biases = Vec::with_capacity(n_inputs);
    let mut vars = Vec::with_capacity(n_inputs);
    for r in per_input {
        let (b, v) = r?;
        biases.push(b);
        vars.push(v);
    }
    let (bias, bias_se) = mean_se(&biases);
    let (variance, variance_se) = mean_se(&vars);
    Ok(GradStats {
        bias,
        bias_se,
        variance,
        variance_se,
        n_inputs,
        n_trials,
    })
}
