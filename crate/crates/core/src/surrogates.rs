//! Forward calculations that stand in for rounding during training.
//!
//! The family includes hard rounding itself, additive uniform noise, universal
//! (dithered) quantization with shared or per-component noise, stochastic
//! rounding, a smooth "soft rounding" map, and the annealed combinations of a
//! soft map with noise or stochastic selection. All of them commute with
//! integer shifts, which is what makes them usable as quantizer surrogates.
//!
//! Notation for the soft map: with `r = y - floor(y) - 0.5`,
//! `soft(y) = floor(y) + tanh(a r) / (2 tanh(a/2)) + 0.5`. It fixes integers
//! and half-integers, is strictly increasing, and tends to rounding as the
//! sharpness `a` grows. `denoise(z) = soft_inv(z - 0.5) + 0.5` undoes an
//! additive perturbation of up to half a bin after a soft map.

use crate::numerics::RngStream;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SurrogateError {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("noise does not match forward kind or dimension: {0}")]
    DimensionMismatch(String),
    #[error("degenerate input: {0}")]
    DegenerateInput(String),
}

/// Round to nearest integer, ties away from zero.
#[inline]
pub fn round_half(y: f64) -> f64 {
    y.round()
}

#[inline]
fn check_sharpness(alpha: f64) -> f64 {
    assert!(
        alpha.is_finite() && alpha > 0.0,
        "sharpness must be positive and finite, got {alpha}"
    );
    alpha
}

// 1 - tanh(alpha/2) without cancellation; exact formula 2 / (e^alpha + 1).
#[inline]
fn tanh_gap(alpha: f64) -> f64 {
    if alpha > 40.0 {
        2.0 * (-alpha).exp()
    } else {
        2.0 / (alpha.exp() + 1.0)
    }
}

// sech^2 without the catastrophic 1 - tanh^2 cancellation
#[inline]
fn sech_sq(x: f64) -> f64 {
    let c = x.cosh();
    if c.is_infinite() {
        0.0
    } else {
        let inv = 1.0 / c;
        inv * inv
    }
}

/// Soft rounding map with sharpness `alpha`.
///
/// Panics if `alpha` is not positive and finite (parameter validation happens
/// once in [`SurrogateSpec`] construction; this is a plain math kernel).
#[inline]
pub fn soft_fn(y: f64, alpha: f64) -> f64 {
    let alpha = check_sharpness(alpha);
    let fl = y.floor();
    let r = y - fl - 0.5;
    fl + 0.5 + (alpha * r).tanh() / (2.0 * (0.5 * alpha).tanh())
}

/// Derivative of [`soft_fn`] in `y`. Strictly positive; minimal at integers
/// (where it decays like `2 alpha e^-alpha`), maximal at half-integers.
#[inline]
pub fn soft_fn_deriv(y: f64, alpha: f64) -> f64 {
    let alpha = check_sharpness(alpha);
    let r = y - y.floor() - 0.5;
    alpha * sech_sq(alpha * r) / (2.0 * (0.5 * alpha).tanh())
}

/// Inverse of [`soft_fn`].
///
/// Evaluated through `atanh` in a form that avoids the `tanh(alpha/2) -> 1`
/// rounding collapse, so exact integers map to exact integers for any
/// representable sharpness.
#[inline]
pub fn soft_inv(z: f64, alpha: f64) -> f64 {
    let alpha = check_sharpness(alpha);
    let fl = z.floor();
    let f = z - fl;
    let c = 2.0 * f - 1.0;
    let gap = tanh_gap(alpha);
    // 1 +/- c(1-gap), assembled from same-sign pieces
    let one_plus = (1.0 + c) - c * gap;
    let one_minus = (1.0 - c) + c * gap;
    fl + 0.5 + 0.5 * (one_plus / one_minus).ln() / alpha
}

/// Derivative of [`soft_inv`] in `z`.
#[inline]
pub fn soft_inv_deriv(z: f64, alpha: f64) -> f64 {
    let alpha = check_sharpness(alpha);
    let f = z - z.floor();
    let c = 2.0 * f - 1.0;
    let gap = tanh_gap(alpha);
    let one_plus = (1.0 + c) - c * gap;
    let one_minus = (1.0 - c) + c * gap;
    2.0 * (1.0 - gap) / (alpha * one_plus * one_minus)
}

/// Denoising map: pulls `soft(y) + u` back toward the nearest codepoint.
#[inline]
pub fn denoise(z: f64, alpha: f64) -> f64 {
    soft_inv(z - 0.5, alpha) + 0.5
}

/// Derivative of [`denoise`] in `z`.
#[inline]
pub fn denoise_deriv(z: f64, alpha: f64) -> f64 {
    soft_inv_deriv(z - 0.5, alpha)
}

/// Soft map followed by additive noise and denoising: one annealed sample.
#[inline]
pub fn sua_value(y: f64, u: f64, alpha: f64) -> f64 {
    denoise(soft_fn(y, alpha) + u, alpha)
}

/// Soft map plus additive noise, without the denoiser.
#[inline]
pub fn sua_noisy_value(y: f64, u: f64, alpha: f64) -> f64 {
    soft_fn(y, alpha) + u
}

const ATANH_CLAMP: f64 = 1.0 - 1e-6;

/// Floor/ceil selection probabilities of the annealed stochastic-Gumbel
/// forward at temperature `tau`: weights `exp(-atanh(d)/tau)` where `d` is
/// the distance to floor resp. ceil. The `atanh` argument is clamped to
/// `1 - 1e-6`, which turns the singularities at exact integers into the
/// correct deterministic limit. Exact half-integers give `(0.5, 0.5)`.
pub fn sga_probs(y: f64, tau: f64) -> Result<(f64, f64), SurrogateError> {
    if !y.is_finite() {
        return Err(SurrogateError::DegenerateInput(format!("y = {y}")));
    }
    if !(tau.is_finite() && tau > 0.0) {
        return Err(SurrogateError::InvalidParameter(format!("tau = {tau}")));
    }
    let frac = y - y.floor();
    let a_floor = frac.min(ATANH_CLAMP).atanh();
    let a_ceil = (1.0 - frac).min(ATANH_CLAMP).atanh();
    // p_floor = softmax of (-a_floor/tau, -a_ceil/tau), stably via the sigmoid
    let p_floor = 1.0 / (1.0 + ((a_floor - a_ceil) / tau).exp());
    Ok((p_floor, 1.0 - p_floor))
}

/// Probability that stochastic rounding keeps the floor: `ceil(y) - y`.
/// Exact integers are deterministic (both branches coincide).
#[inline]
pub fn sr_prob_floor(y: f64) -> f64 {
    y.ceil() - y
}

/// Floor probability of annealed stochastic rounding: `ceil(s) - s` with
/// `s = soft_fn(y, alpha)`. Tends to deterministic rounding as `alpha` grows.
#[inline]
pub fn sra_prob_floor(y: f64, alpha: f64) -> f64 {
    let s = soft_fn(y, alpha);
    if y == y.floor() {
        1.0
    } else {
        y.ceil() - s
    }
}

// ---------------------------------------------------------------------------
// Forward specification and vector evaluation
// ---------------------------------------------------------------------------

/// A forward calculation. Annealed kinds carry their sharpness/temperature;
/// construction validates it, so a stored spec is always usable.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SurrogateSpec {
    /// Hard rounding (no gradient of its own).
    Round,
    /// Deterministic soft rounding with sharpness `alpha`.
    Sha { alpha: f64 },
    /// Additive uniform noise on `[-0.5, 0.5)`.
    Aun,
    /// Universal quantization, one shared dither across the vector.
    UqShared,
    /// Universal quantization, independent dither per component.
    UqIndep,
    /// Stochastic rounding through an annealed two-point distribution.
    Sga { tau: f64 },
    /// Soft map + noise + denoiser.
    Sua { alpha: f64 },
    /// Soft map + noise, no denoiser.
    SuaNoisy { alpha: f64 },
    /// Unbiased stochastic rounding.
    Sr,
    /// Stochastic rounding driven by the soft map.
    Sra { alpha: f64 },
}

/// How much randomness a forward consumes for a `dim`-component input.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NoiseKind {
    /// Deterministic forward.
    None,
    /// One uniform on `[-0.5, 0.5)` shared by every component.
    SharedUniform,
    /// One uniform on `[-0.5, 0.5)` per component.
    PerComponentUniform,
    /// One selection variable on `[0, 1)` per component.
    PerComponentDecision,
}

impl SurrogateSpec {
    pub fn round() -> Self {
        SurrogateSpec::Round
    }
    pub fn aun() -> Self {
        SurrogateSpec::Aun
    }
    pub fn uq_shared() -> Self {
        SurrogateSpec::UqShared
    }
    pub fn uq_indep() -> Self {
        SurrogateSpec::UqIndep
    }
    pub fn sr() -> Self {
        SurrogateSpec::Sr
    }

    pub fn sha(alpha: f64) -> Result<Self, SurrogateError> {
        Self::valid_sharpness(alpha)?;
        Ok(SurrogateSpec::Sha { alpha })
    }
    pub fn sua(alpha: f64) -> Result<Self, SurrogateError> {
        Self::valid_sharpness(alpha)?;
        Ok(SurrogateSpec::Sua { alpha })
    }
    pub fn sua_noisy(alpha: f64) -> Result<Self, SurrogateError> {
        Self::valid_sharpness(alpha)?;
        Ok(SurrogateSpec::SuaNoisy { alpha })
    }
    pub fn sra(alpha: f64) -> Result<Self, SurrogateError> {
        Self::valid_sharpness(alpha)?;
        Ok(SurrogateSpec::Sra { alpha })
    }
    pub fn sga(tau: f64) -> Result<Self, SurrogateError> {
        if !(tau.is_finite() && tau > 0.0) {
            return Err(SurrogateError::InvalidParameter(format!("tau = {tau}")));
        }
        Ok(SurrogateSpec::Sga { tau })
    }

    fn valid_sharpness(alpha: f64) -> Result<(), SurrogateError> {
        if alpha.is_finite() && alpha > 0.0 {
            Ok(())
        } else {
            Err(SurrogateError::InvalidParameter(format!("alpha = {alpha}")))
        }
    }

    /// Sharpness/temperature parameter, if this kind has one.
    pub fn temperature(&self) -> Option<f64> {
        match *self {
            SurrogateSpec::Sha { alpha }
            | SurrogateSpec::Sua { alpha }
            | SurrogateSpec::SuaNoisy { alpha }
            | SurrogateSpec::Sra { alpha } => Some(alpha),
            SurrogateSpec::Sga { tau } => Some(tau),
            _ => None,
        }
    }

    /// Same kind with a replaced sharpness/temperature (annealing support).
    /// No-op for kinds without one.
    pub fn with_temperature(&self, t: f64) -> Self {
        match *self {
            SurrogateSpec::Sha { .. } => SurrogateSpec::Sha { alpha: t },
            SurrogateSpec::Sua { .. } => SurrogateSpec::Sua { alpha: t },
            SurrogateSpec::SuaNoisy { .. } => SurrogateSpec::SuaNoisy { alpha: t },
            SurrogateSpec::Sra { .. } => SurrogateSpec::Sra { alpha: t },
            SurrogateSpec::Sga { .. } => SurrogateSpec::Sga { tau: t },
            other => other,
        }
    }

    pub fn noise_kind(&self) -> NoiseKind {
        match self {
            SurrogateSpec::Round | SurrogateSpec::Sha { .. } => NoiseKind::None,
            SurrogateSpec::UqShared => NoiseKind::SharedUniform,
            SurrogateSpec::Aun | SurrogateSpec::UqIndep | SurrogateSpec::Sua { .. } | SurrogateSpec::SuaNoisy { .. } => {
                NoiseKind::PerComponentUniform
            }
            SurrogateSpec::Sga { .. } | SurrogateSpec::Sr | SurrogateSpec::Sra { .. } => NoiseKind::PerComponentDecision,
        }
    }

    /// Short stable name used in output tables.
    pub fn label(&self) -> &'static str {
        match self {
            SurrogateSpec::Round => "round",
            SurrogateSpec::Sha { .. } => "sha",
            SurrogateSpec::Aun => "aun",
            SurrogateSpec::UqShared => "uq_s",
            SurrogateSpec::UqIndep => "uq_i",
            SurrogateSpec::Sga { .. } => "sga",
            SurrogateSpec::Sua { .. } => "sua",
            SurrogateSpec::SuaNoisy { .. } => "sua_n",
            SurrogateSpec::Sr => "sr",
            SurrogateSpec::Sra { .. } => "sra",
        }
    }
}

/// Realized randomness for one forward evaluation. Keeping it explicit lets
/// gradient code freeze the noise while probing the forward map.
#[derive(Debug, Clone, PartialEq)]
pub enum Noise {
    None,
    Shared(f64),
    PerComponent(Vec<f64>),
    Decisions(Vec<f64>),
}

/// Draw the noise a forward consumes for a `dim`-component input.
pub fn draw_noise(spec: &SurrogateSpec, dim: usize, rng: &mut RngStream) -> Noise {
    match spec.noise_kind() {
        NoiseKind::None => Noise::None,
        NoiseKind::SharedUniform => Noise::Shared(rng.uniform_centered()),
        NoiseKind::PerComponentUniform => Noise::PerComponent((0..dim).map(|_| rng.uniform_centered()).collect()),
        NoiseKind::PerComponentDecision => Noise::Decisions((0..dim).map(|_| rng.uniform()).collect()),
    }
}

fn noise_slice<'a>(spec: &SurrogateSpec, dim: usize, noise: &'a Noise) -> Result<NoiseView<'a>, SurrogateError> {
    let mismatch = |what: &str| SurrogateError::DimensionMismatch(format!("{} for {}", what, spec.label()));
    match (spec.noise_kind(), noise) {
        (NoiseKind::None, Noise::None) => Ok(NoiseView::None),
        (NoiseKind::SharedUniform, Noise::Shared(u)) => Ok(NoiseView::Shared(*u)),
        (NoiseKind::PerComponentUniform, Noise::PerComponent(us)) if us.len() == dim => Ok(NoiseView::Per(us)),
        (NoiseKind::PerComponentDecision, Noise::Decisions(ds)) if ds.len() == dim => Ok(NoiseView::Per(ds)),
        (NoiseKind::PerComponentUniform, Noise::PerComponent(_)) => Err(mismatch("wrong noise length")),
        (NoiseKind::PerComponentDecision, Noise::Decisions(_)) => Err(mismatch("wrong decision length")),
        _ => Err(mismatch("wrong noise variant")),
    }
}

enum NoiseView<'a> {
    None,
    Shared(f64),
    Per(&'a [f64]),
}

/// Stochastic-rounding sample from a `[0,1)` decision variable. `d < p_ceil`
/// selects the ceil branch, so the ceil probability is hit exactly.
#[inline]
pub fn sr_sample(y: f64, d: f64) -> f64 {
    let fl = y.floor();
    if d < y - fl {
        fl + 1.0
    } else {
        fl
    }
}

#[inline]
pub fn sra_sample(y: f64, d: f64, alpha: f64) -> f64 {
    let fl = y.floor();
    if y == fl {
        return y;
    }
    let p_ceil = soft_fn(y, alpha) - fl;
    if d < p_ceil {
        fl + 1.0
    } else {
        fl
    }
}

#[inline]
pub fn sga_sample(y: f64, d: f64, tau: f64) -> Result<f64, SurrogateError> {
    let (_, p_ceil) = sga_probs(y, tau)?;
    let fl = y.floor();
    Ok(if d < p_ceil { fl + 1.0 } else { fl })
}

/// Universal quantization of one component with dither `u`.
#[inline]
pub fn uq_value(y: f64, u: f64) -> f64 {
    round_half(y + u) - u
}

/// Evaluate a forward calculation on a vector with frozen noise.
pub fn forward(spec: &SurrogateSpec, y: &[f64], noise: &Noise) -> Result<Vec<f64>, SurrogateError> {
    let view = noise_slice(spec, y.len(), noise)?;
    let out = match (*spec, view) {
        (SurrogateSpec::Round, NoiseView::None) => y.iter().map(|&v| round_half(v)).collect(),
        (SurrogateSpec::Sha { alpha }, NoiseView::None) => y.iter().map(|&v| soft_fn(v, alpha)).collect(),
        (SurrogateSpec::Aun, NoiseView::Per(us)) => y.iter().zip(us).map(|(&v, &u)| v + u).collect(),
        (SurrogateSpec::UqShared, NoiseView::Shared(u)) => y.iter().map(|&v| uq_value(v, u)).collect(),
        (SurrogateSpec::UqIndep, NoiseView::Per(us)) => y.iter().zip(us).map(|(&v, &u)| uq_value(v, u)).collect(),
        (SurrogateSpec::Sua { alpha }, NoiseView::Per(us)) => {
            y.iter().zip(us).map(|(&v, &u)| sua_value(v, u, alpha)).collect()
        }
        (SurrogateSpec::SuaNoisy { alpha }, NoiseView::Per(us)) => {
            y.iter().zip(us).map(|(&v, &u)| sua_noisy_value(v, u, alpha)).collect()
        }
        (SurrogateSpec::Sr, NoiseView::Per(ds)) => y.iter().zip(ds).map(|(&v, &d)| sr_sample(v, d)).collect(),
        (SurrogateSpec::Sra { alpha }, NoiseView::Per(ds)) => {
            y.iter().zip(ds).map(|(&v, &d)| sra_sample(v, d, alpha)).collect()
        }
        (SurrogateSpec::Sga { tau }, NoiseView::Per(ds)) => y
            .iter()
            .zip(ds)
            .map(|(&v, &d)| sga_sample(v, d, tau))
            .collect::<Result<Vec<_>, _>>()?,
        _ => unreachable!("noise_slice enforces the pairing"),
    };
    Ok(out)
}

/// Convenience: draw noise and evaluate in one step.
pub fn forward_sampled(spec: &SurrogateSpec, y: &[f64], rng: &mut RngStream) -> Result<Vec<f64>, SurrogateError> {
    let noise = draw_noise(spec, y.len(), rng);
    forward(spec, y, &noise)
}

/// Linear sharpness schedule used when a training loop anneals a soft forward.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AnnealSchedule {
    pub alpha_start: f64,
    pub alpha_max: f64,
    pub total_steps: usize,
}

impl AnnealSchedule {
    pub fn new(alpha_start: f64, alpha_max: f64, total_steps: usize) -> Result<Self, SurrogateError> {
        if !(alpha_start.is_finite() && alpha_start > 0.0 && alpha_max.is_finite() && alpha_max >= alpha_start) {
            return Err(SurrogateError::InvalidParameter(
                "need 0 < alpha_start <= alpha_max".to_string(),
            ));
        }
        if total_steps == 0 {
            return Err(SurrogateError::InvalidParameter("total_steps must be positive".to_string()));
        }
        Ok(AnnealSchedule {
            alpha_start,
            alpha_max,
            total_steps,
        })
    }

    /// Sharpness at `step`; `alpha(0) = alpha_start`,
    /// `alpha(total_steps - 1) = alpha_max`, linear in between.
    pub fn alpha_at(&self, step: usize) -> f64 {
        if self.total_steps <= 1 {
            return self.alpha_max;
        }
        let t = (step.min(self.total_steps - 1)) as f64 / (self.total_steps - 1) as f64;
        self.alpha_start + (self.alpha_max - self.alpha_start) * t
    }
}
