//! A small dense network with exact reverse-mode gradients, an
//! adaptive-moment optimizer, and the training loops used by the
//! distortion simulations, the scalar rate-distortion experiment, and the
//! scale-lower-bound studies.
//!
//! Training is deterministic for a given seed: batches are drawn from
//! per-step derived streams, and batch gradients are reduced over fixed
//! 32-sample chunks in chunk order with compensated summation, so thread
//! count never changes a trajectory.

use crate::backward::GradRule;
use crate::entropy_model::{EntropyModel, EntropyModelError, Family};
use crate::numerics::{
    integrate, mean_se, std_normal_box_mass, std_normal_pdf, Neumaier, NumericsError, Quadrature,
    Seed,
};
use crate::sources::{Gaussian1D, Gaussian2D, Laplace1D, SourceError};
use crate::surrogates::{
    denoise, denoise_deriv, draw_noise, forward as surrogate_forward, round_half, soft_fn,
    soft_fn_deriv, sr_sample, SurrogateError, SurrogateSpec,
};
use rayon::prelude::*;
use std::io::{Read, Write};
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TinynetError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("training failed to converge: {0}")]
    NonConvergence(String),
    #[error("bad checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Surrogate(#[from] SurrogateError),
    #[error(transparent)]
    Model(#[from] EntropyModelError),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error(transparent)]
    Source(#[from] SourceError),
}

// ---------------------------------------------------------------------------
// Dense network
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Softplus,
    Identity,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Softplus => softplus(z),
            Activation::Identity => z,
        }
    }

    fn deriv(self, z: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Softplus => sigmoid(z),
            Activation::Identity => 1.0,
        }
    }

    fn tag(self) -> u8 {
        match self {
            Activation::Relu => 0,
            Activation::Softplus => 1,
            Activation::Identity => 2,
        }
    }

    fn from_tag(t: u8) -> Option<Self> {
        match t {
            0 => Some(Activation::Relu),
            1 => Some(Activation::Softplus),
            2 => Some(Activation::Identity),
            _ => None,
        }
    }
}

pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Fully connected network. Hidden layers share one activation; the output
/// layer is always linear. Parameters live in one flat vector, laid out
/// layer by layer as a row-major weight matrix followed by its bias.
#[derive(Debug, Clone)]
pub struct Mlp {
    pub layer_sizes: Vec<usize>,
    pub activation: Activation,
    pub params: Vec<f64>,
}

/// Per-layer values saved by a cached forward pass for the backward pass.
#[derive(Debug, Clone)]
pub struct MlpCache {
    acts: Vec<Vec<f64>>,
    pres: Vec<Vec<f64>>,
}

impl Mlp {
    pub fn new(layer_sizes: &[usize], activation: Activation, seed: Seed) -> Result<Self, TinynetError> {
        if layer_sizes.len() < 2 || layer_sizes.iter().any(|&s| s == 0) {
            return Err(TinynetError::ShapeMismatch(format!(
                "need at least two nonzero layer sizes, got {layer_sizes:?}"
            )));
        }
        let mut net = Mlp {
            layer_sizes: layer_sizes.to_vec(),
            activation,
            params: vec![0.0; param_count(layer_sizes)],
        };
        let mut rng = seed.rng();
        let mut off = 0;
        for l in 0..net.layers() {
            let (inp, out) = (net.layer_sizes[l], net.layer_sizes[l + 1]);
            let limit = (6.0 / (inp + out) as f64).sqrt();
            for w in &mut net.params[off..off + out * inp] {
                *w = (2.0 * rng.uniform() - 1.0) * limit;
            }
            off += out * inp + out; // biases stay zero
        }
        Ok(net)
    }

    pub fn layers(&self) -> usize {
        self.layer_sizes.len() - 1
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    fn check_input(&self, x: &[f64]) -> Result<(), TinynetError> {
        if x.len() != self.layer_sizes[0] {
            return Err(TinynetError::ShapeMismatch(format!(
                "input length {} vs expected {}",
                x.len(),
                self.layer_sizes[0]
            )));
        }
        Ok(())
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>, TinynetError> {
        self.check_input(x)?;
        let mut a = x.to_vec();
        let mut off = 0;
        for l in 0..self.layers() {
            let (inp, out) = (self.layer_sizes[l], self.layer_sizes[l + 1]);
            let mut z = vec![0.0; out];
            for i in 0..out {
                let row = &self.params[off + i * inp..off + (i + 1) * inp];
                let mut acc = self.params[off + out * inp + i];
                for j in 0..inp {
                    acc += row[j] * a[j];
                }
                z[i] = acc;
            }
            off += out * inp + out;
            if l + 1 < self.layers() {
                for zi in &mut z {
                    *zi = self.activation.apply(*zi);
                }
            }
            a = z;
        }
        Ok(a)
    }

    pub fn forward_cached(&self, x: &[f64]) -> Result<(Vec<f64>, MlpCache), TinynetError> {
        self.check_input(x)?;
        let mut acts = Vec::with_capacity(self.layers() + 1);
        let mut pres = Vec::with_capacity(self.layers());
        acts.push(x.to_vec());
        let mut off = 0;
        for l in 0..self.layers() {
            let (inp, out) = (self.layer_sizes[l], self.layer_sizes[l + 1]);
            let a = &acts[l];
            let mut z = vec![0.0; out];
            for i in 0..out {
                let row = &self.params[off + i * inp..off + (i + 1) * inp];
                let mut acc = self.params[off + out * inp + i];
                for j in 0..inp {
                    acc += row[j] * a[j];
                }
                z[i] = acc;
            }
            off += out * inp + out;
            pres.push(z.clone());
            if l + 1 < self.layers() {
                for zi in &mut z {
                    *zi = self.activation.apply(*zi);
                }
            }
            acts.push(z);
        }
        let out = acts[self.layers()].clone();
        Ok((out, MlpCache { acts, pres }))
    }

    /// Exact reverse-mode gradients: returns the flat parameter gradient and
    /// the gradient with respect to the input, for the given upstream
    /// dL/d(output).
    pub fn backward(&self, cache: &MlpCache, upstream: &[f64]) -> Result<(Vec<f64>, Vec<f64>), TinynetError> {
        if upstream.len() != *self.layer_sizes.last().unwrap() {
            return Err(TinynetError::ShapeMismatch(format!(
                "upstream length {} vs output {}",
                upstream.len(),
                self.layer_sizes.last().unwrap()
            )));
        }
        let mut grads = vec![0.0; self.params.len()];
        let offsets = layer_offsets(&self.layer_sizes);
        let mut delta = upstream.to_vec();
        let mut input_grad = Vec::new();
        for l in (0..self.layers()).rev() {
            let (inp, out) = (self.layer_sizes[l], self.layer_sizes[l + 1]);
            let off = offsets[l];
            let a_in = &cache.acts[l];
            for i in 0..out {
                let g = delta[i];
                let grow = &mut grads[off + i * inp..off + (i + 1) * inp];
                for j in 0..inp {
                    grow[j] = g * a_in[j];
                }
            }
            for i in 0..out {
                grads[off + out * inp + i] = delta[i];
            }
            let mut d_in = vec![0.0; inp];
            for i in 0..out {
                let g = delta[i];
                let row = &self.params[off + i * inp..off + (i + 1) * inp];
                for j in 0..inp {
                    d_in[j] += g * row[j];
                }
            }
            if l > 0 {
                let pre = &cache.pres[l - 1];
                for (d, z) in d_in.iter_mut().zip(pre) {
                    *d *= self.activation.deriv(*z);
                }
                delta = d_in;
            } else {
                input_grad = d_in;
            }
        }
        Ok((grads, input_grad))
    }

    /// Convenience for scalar-to-scalar nets.
    pub fn forward1(&self, x: f64) -> f64 {
        self.forward(&[x]).expect("scalar net")[0]
    }
}

fn param_count(layer_sizes: &[usize]) -> usize {
    layer_sizes
        .windows(2)
        .map(|w| w[1] * w[0] + w[1])
        .sum()
}

fn layer_offsets(layer_sizes: &[usize]) -> Vec<usize> {
    let mut offs = Vec::with_capacity(layer_sizes.len() - 1);
    let mut off = 0;
    for w in layer_sizes.windows(2) {
        offs.push(off);
        off += w[1] * w[0] + w[1];
    }
    offs
}

// ---------------------------------------------------------------------------
// Optimizer
// ---------------------------------------------------------------------------

/// Adaptive-moment optimizer with bias correction; the usual coefficient
/// choices are fixed.
#[derive(Debug, Clone)]
pub struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

impl Adam {
    pub fn new(n: usize) -> Self {
        Adam {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    pub fn from_state(m: Vec<f64>, v: Vec<f64>, t: u64) -> Result<Self, TinynetError> {
        if m.len() != v.len() {
            return Err(TinynetError::ShapeMismatch(format!(
                "moment lengths {} vs {}",
                m.len(),
                v.len()
            )));
        }
        Ok(Adam { m, v, t })
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64], lr: f64) {
        assert_eq!(params.len(), self.m.len());
        assert_eq!(grad.len(), self.m.len());
        self.t += 1;
        let c1 = 1.0 - ADAM_BETA1.powi(self.t as i32);
        let c2 = 1.0 - ADAM_BETA2.powi(self.t as i32);
        for i in 0..params.len() {
            self.m[i] = ADAM_BETA1 * self.m[i] + (1.0 - ADAM_BETA1) * grad[i];
            self.v[i] = ADAM_BETA2 * self.v[i] + (1.0 - ADAM_BETA2) * grad[i] * grad[i];
            let mh = self.m[i] / c1;
            let vh = self.v[i] / c2;
            params[i] -= lr * mh / (vh.sqrt() + ADAM_EPS);
        }
    }
}

// ---------------------------------------------------------------------------
// Training configuration
// ---------------------------------------------------------------------------

/// Shared knobs for the training loops. The learning rate drops tenfold at
/// 80% of the steps.
#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch: usize,
    pub learning_rate: f64,
    pub lambda: f64,
    pub anneal: Option<crate::surrogates::AnnealSchedule>,
    pub seed: Seed,
    pub stop_gradient_mu: bool,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TinynetError> {
        if self.steps < 10 || self.batch == 0 {
            return Err(TinynetError::InvalidConfig(format!(
                "steps {} batch {}",
                self.steps, self.batch
            )));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(TinynetError::InvalidConfig(format!("learning rate {}", self.learning_rate)));
        }
        if !(self.lambda.is_finite() && self.lambda > 0.0) {
            return Err(TinynetError::InvalidConfig(format!("lambda {}", self.lambda)));
        }
        Ok(())
    }

    pub fn lr_at(&self, step: usize) -> f64 {
        if step >= self.steps * 4 / 5 {
            self.learning_rate / 10.0
        } else {
            self.learning_rate
        }
    }
}

/// Divergence guard: the mean loss over the final fifth of training must
/// not sit more than 5% above the mean over the fifth before it, beyond
/// what batch noise explains. A plateau passes; a blow-up does not.
pub fn convergence_check(trace: &[f64]) -> Result<(), TinynetError> {
    if trace.len() < 10 {
        return Ok(());
    }
    let n = trace.len();
    let mid = &trace[n * 3 / 5..n * 4 / 5];
    let late = &trace[n * 4 / 5..];
    let (m_mid, se_mid) = mean_se(mid);
    let (m_late, se_late) = mean_se(late);
    let slack = 0.05 * m_mid.abs() + 3.0 * (se_mid * se_mid + se_late * se_late).sqrt();
    if m_late - m_mid > slack {
        return Err(TinynetError::NonConvergence(format!(
            "mean loss rose from {m_mid:.6e} to {m_late:.6e} over the final fifth"
        )));
    }
    Ok(())
}

// per-step stream indices; evaluation draws from a far-away block
const STREAM_TRAIN_BASE: u64 = 1;
const STREAM_EVAL_BASE: u64 = 1 << 62;

const CHUNK: usize = 32;

// ordered compensated reduction of per-chunk gradient sums
fn reduce_vecs(chunks: &[Vec<f64>], n: usize) -> Vec<f64> {
    let mut out = vec![0.0; n];
    for (i, slot) in out.iter_mut().enumerate() {
        let mut acc = Neumaier::new();
        for c in chunks {
            acc.add(c[i]);
        }
        *slot = acc.total();
    }
    out
}

// ---------------------------------------------------------------------------
// Distortion simulation
// ---------------------------------------------------------------------------

/// Latent distribution for the synthesis simulations. The latent is an
/// affine image of a unit-variance source, so the clean source value is
/// recovered from the latent deterministically.
#[derive(Debug, Clone)]
pub enum SimSource {
    Scalar(Gaussian1D),
    Pair(Gaussian2D),
}

impl SimSource {
    pub fn dim(&self) -> usize {
        match self {
            SimSource::Scalar(_) => 1,
            SimSource::Pair(_) => 2,
        }
    }

    // (latent y, clean source x)
    fn draw(&self, rng: &mut crate::numerics::RngStream) -> (Vec<f64>, Vec<f64>) {
        match self {
            SimSource::Scalar(g) => {
                let y = g.sample_with(rng);
                (vec![y], vec![(y - g.mu) / g.sigma])
            }
            SimSource::Pair(g) => {
                let [y1, y2] = g.sample_pair_with(rng);
                (vec![y1, y2], vec![y1 / g.sigma, y2 / g.sigma])
            }
        }
    }
}

/// Result of one synthesis-training run, with the separately trained
/// rounding baseline it is compared against.
#[derive(Debug, Clone)]
pub struct SynthesisOutcome {
    pub d_tilde: f64,
    pub d_tilde_se: f64,
    pub d_round: f64,
    pub d_round_se: f64,
    pub delta_d_rel: f64,
    pub trace: Vec<f64>,
}

/// Train a synthesis network to reconstruct the clean source from the
/// forward-processed latent, alongside an identically configured rounding
/// baseline, and report the relative distortion estimation error
/// (D_tilde - D_round) / D_round on held-out samples.
pub fn train_synthesis(
    spec: &SurrogateSpec,
    source: &SimSource,
    cfg: &TrainConfig,
) -> Result<(Mlp, SynthesisOutcome), TinynetError> {
    train_synthesis_sized(spec, source, cfg, &[64, 64, 64], 1_000_000)
}

/// Capacity/evaluation override for quick studies; the public default uses
/// three hidden layers of 64 and a million held-out samples.
pub fn train_synthesis_sized(
    spec: &SurrogateSpec,
    source: &SimSource,
    cfg: &TrainConfig,
    hidden: &[usize],
    n_eval: usize,
) -> Result<(Mlp, SynthesisOutcome), TinynetError> {
    cfg.validate()?;
    let (net, trace) = fit_synthesis(spec, source, cfg, hidden)?;
    convergence_check(&trace)?;
    let final_spec = annealed(spec, cfg, cfg.steps);
    let (d_tilde, d_tilde_se) = eval_distortion(&net, &final_spec, source, cfg.seed, n_eval)?;
    let (d_round, d_round_se) = if matches!(spec, SurrogateSpec::Round) {
        (d_tilde, d_tilde_se)
    } else {
        let (baseline, base_trace) = fit_synthesis(&SurrogateSpec::round(), source, cfg, hidden)?;
        convergence_check(&base_trace)?;
        eval_distortion(&baseline, &SurrogateSpec::round(), source, cfg.seed, n_eval)?
    };
    let outcome = SynthesisOutcome {
        d_tilde,
        d_tilde_se,
        d_round,
        d_round_se,
        delta_d_rel: (d_tilde - d_round) / d_round,
        trace,
    };
    Ok((net, outcome))
}

fn annealed(spec: &SurrogateSpec, cfg: &TrainConfig, step: usize) -> SurrogateSpec {
    match (&cfg.anneal, spec.temperature()) {
        (Some(sched), Some(_)) => spec.with_temperature(sched.alpha_at(step)),
        _ => *spec,
    }
}

fn fit_synthesis(
    spec: &SurrogateSpec,
    source: &SimSource,
    cfg: &TrainConfig,
    hidden: &[usize],
) -> Result<(Mlp, Vec<f64>), TinynetError> {
    let dim = source.dim();
    let mut sizes = vec![dim];
    sizes.extend_from_slice(hidden);
    sizes.push(dim);
    let mut net = Mlp::new(&sizes, Activation::Softplus, cfg.seed.stream(0))?;
    let mut opt = Adam::new(net.param_count());
    let mut trace = Vec::with_capacity(cfg.steps);
    for step in 0..cfg.steps {
        let step_spec = annealed(spec, cfg, step);
        let mut rng = cfg.seed.stream(STREAM_TRAIN_BASE + step as u64).rng();
        let mut batch = Vec::with_capacity(cfg.batch);
        for _ in 0..cfg.batch {
            let (y, x) = source.draw(&mut rng);
            let noise = draw_noise(&step_spec, dim, &mut rng);
            let tilde = surrogate_forward(&step_spec, &y, &noise)?;
            batch.push((tilde, x));
        }
        let chunks: Vec<Result<(Vec<f64>, f64), TinynetError>> = batch
            .par_chunks(CHUNK)
            .map(|chunk| {
                let mut g = vec![0.0; net.param_count()];
                let mut loss = 0.0;
                for (tilde, x) in chunk {
                    let (out, cache) = net.forward_cached(tilde)?;
                    let upstream: Vec<f64> =
                        out.iter().zip(x).map(|(&o, &t)| 2.0 * (o - t)).collect();
                    loss += out.iter().zip(x).map(|(&o, &t)| (o - t) * (o - t)).sum::<f64>();
                    let (pg, _) = net.backward(&cache, &upstream)?;
                    for (gi, pgi) in g.iter_mut().zip(&pg) {
                        *gi += pgi;
                    }
                }
                Ok((g, loss))
            })
            .collect();
        let mut grad_chunks = Vec::with_capacity(chunks.len());
        let mut loss_acc = Neumaier::new();
        for c in chunks {
            let (g, l) = c?;
            grad_chunks.push(g);
            loss_acc.add(l);
        }
        let mut grad = reduce_vecs(&grad_chunks, net.param_count());
        let scale = 1.0 / cfg.batch as f64;
        for g in &mut grad {
            *g *= scale;
        }
        opt.step(&mut net.params, &grad, cfg.lr_at(step));
        trace.push(loss_acc.total() * scale);
    }
    Ok((net, trace))
}

fn eval_distortion(
    net: &Mlp,
    spec: &SurrogateSpec,
    source: &SimSource,
    seed: Seed,
    n_eval: usize,
) -> Result<(f64, f64), TinynetError> {
    let dim = source.dim();
    let mut rng = seed.stream(STREAM_EVAL_BASE).rng();
    let mut inputs = Vec::with_capacity(n_eval);
    for _ in 0..n_eval {
        let (y, x) = source.draw(&mut rng);
        let noise = draw_noise(spec, dim, &mut rng);
        let tilde = surrogate_forward(spec, &y, &noise)?;
        inputs.push((tilde, x));
    }
    let errs: Vec<Result<Vec<f64>, TinynetError>> = inputs
        .par_chunks(1024)
        .map(|chunk| {
            let mut es = Vec::with_capacity(chunk.len());
            for (tilde, x) in chunk {
                let out = net.forward(tilde)?;
                es.push(out.iter().zip(x).map(|(&o, &t)| (o - t) * (o - t)).sum::<f64>());
            }
            Ok(es)
        })
        .collect();
    let mut flat = Vec::with_capacity(n_eval);
    for e in errs {
        flat.extend(e?);
    }
    Ok(mean_se(&flat))
}

// ---------------------------------------------------------------------------
// Bayes-optimal distortion oracles (scalar latent, unit-variance source)
// ---------------------------------------------------------------------------

// mass, mean, and variance of the standard normal truncated to (a, b)
fn truncated_moments(a: f64, b: f64) -> (f64, f64, f64) {
    let z = std_normal_box_mass(a, b);
    if z < 1e-150 {
        return (0.0, 0.0, 0.0);
    }
    let (pa, pb) = (std_normal_pdf(a), std_normal_pdf(b));
    let m1 = (pa - pb) / z;
    let v = (1.0 + (a * pa - b * pb) / z - m1 * m1).max(0.0);
    (z, m1, v)
}

/// Minimum achievable reconstruction error E[Var(X | Y+U)] for the latent
/// Y = sigma X + mu with standard normal X and centered unit noise,
/// computed by quadrature. The conditional law of X is a truncated normal
/// on the window the noisy observation leaves open.
pub fn bayes_distortion_aun(source: &Gaussian1D) -> Result<f64, TinynetError> {
    let quad = Quadrature::with_abs_tol(1e-10);
    let (lo, hi) = (source.mu - 10.0 * source.sigma - 1.0, source.mu + 10.0 * source.sigma + 1.0);
    let f = |t: f64| {
        let a = (t - 0.5 - source.mu) / source.sigma;
        let b = (t + 0.5 - source.mu) / source.sigma;
        let (z, _, v) = truncated_moments(a, b);
        z * v
    };
    Ok(integrate(f, lo, hi, &quad)?)
}

/// Minimum achievable reconstruction error E[Var(X | round(Y))], a lattice
/// sum of truncated-normal variances over the rounding bins.
pub fn bayes_distortion_round(source: &Gaussian1D) -> f64 {
    let reach = (10.0 * source.sigma + 2.0).ceil() as i64;
    let center = source.mu.round() as i64;
    let mut acc = Neumaier::new();
    for n in (center - reach)..=(center + reach) {
        let a = (n as f64 - 0.5 - source.mu) / source.sigma;
        let b = (n as f64 + 0.5 - source.mu) / source.sigma;
        let (z, _, v) = truncated_moments(a, b);
        acc.add(z * v);
    }
    acc.total()
}

// ---------------------------------------------------------------------------
// Zero-center quantization with partial stop-gradient
// ---------------------------------------------------------------------------

/// Forward value and pathwise derivatives of the zero-centered
/// soft/noise/denoise forward at frozen noise.
#[derive(Debug, Clone, Copy)]
pub struct ZcPath {
    pub value: f64,
    pub d_y: f64,
    /// Pathwise derivative in the offset; exactly zero when the offset's
    /// gradient is stopped, so only the rate term (through the entropy
    /// model's own mean parameter) can move the offset.
    pub d_mu: f64,
}

/// y~ = r(s(y - mu_q) + u) + mu_q, with the offset's pathwise gradient
/// optionally stopped. The forward value is identical either way.
pub fn forward_zero_center_partial_sg(
    y: f64,
    mu_q: f64,
    alpha: f64,
    u: f64,
    stop_gradient: bool,
) -> ZcPath {
    let w = soft_fn(y - mu_q, alpha) + u;
    let value = denoise(w, alpha) + mu_q;
    let path = denoise_deriv(w, alpha) * soft_fn_deriv(y - mu_q, alpha);
    ZcPath {
        value,
        d_y: path,
        d_mu: if stop_gradient { 0.0 } else { 1.0 - path },
    }
}

// ---------------------------------------------------------------------------
// Joint rate-distortion system (scalar)
// ---------------------------------------------------------------------------

/// Analysis/synthesis transform: an affine map, optionally wrapped in
/// residual blocks.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TransformKind {
    Linear,
    Residual,
}

#[derive(Debug, Clone)]
pub struct Transform {
    pub kind: TransformKind,
    /// nets[0] is the affine path; any further nets are residual blocks
    /// applied in order as h <- h + block(h).
    pub nets: Vec<Mlp>,
}

pub struct TransformCache {
    caches: Vec<MlpCache>,
}

const RESIDUAL_BLOCKS: usize = 2;
const RESIDUAL_WIDTH: usize = 32;

impl Transform {
    // The affine path starts at the identity so a fresh system is already a
    // working code; a random small-weight start can collapse to the
    // zero-rate solution before the synthesis side learns anything, and
    // that collapse is a dead fixed point.
    pub fn linear(seed: Seed) -> Result<Self, TinynetError> {
        let mut affine = Mlp::new(&[1, 1], Activation::Identity, seed)?;
        affine.params = vec![1.0, 0.0];
        Ok(Transform {
            kind: TransformKind::Linear,
            nets: vec![affine],
        })
    }

    pub fn residual(seed: Seed) -> Result<Self, TinynetError> {
        let mut affine = Mlp::new(&[1, 1], Activation::Identity, seed.stream(0))?;
        affine.params = vec![1.0, 0.0];
        let mut nets = vec![affine];
        for b in 0..RESIDUAL_BLOCKS {
            let mut block = Mlp::new(
                &[1, RESIDUAL_WIDTH, 1],
                Activation::Softplus,
                seed.stream(1 + b as u64),
            )?;
            // damp the block output so the initial map stays near affine
            let out_off = layer_offsets(&block.layer_sizes)[1];
            for w in &mut block.params[out_off..out_off + RESIDUAL_WIDTH] {
                *w *= 0.1;
            }
            nets.push(block);
        }
        Ok(Transform { kind: TransformKind::Residual, nets })
    }

    pub fn new(kind: TransformKind, seed: Seed) -> Result<Self, TinynetError> {
        match kind {
            TransformKind::Linear => Self::linear(seed),
            TransformKind::Residual => Self::residual(seed),
        }
    }

    pub fn forward1(&self, x: f64) -> f64 {
        let mut h = self.nets[0].forward1(x);
        for b in &self.nets[1..] {
            h += b.forward1(h);
        }
        h
    }

    pub fn forward1_cached(&self, x: f64) -> Result<(f64, TransformCache), TinynetError> {
        let mut caches = Vec::with_capacity(self.nets.len());
        let (out, c) = self.nets[0].forward_cached(&[x])?;
        let mut h = out[0];
        caches.push(c);
        for b in &self.nets[1..] {
            let (out, c) = b.forward_cached(&[h])?;
            h += out[0];
            caches.push(c);
        }
        Ok((h, TransformCache { caches }))
    }

    /// Gradients per sub-net (aligned with `nets`) plus the input gradient.
    /// Each residual stage h_k = h_{k-1} + block(h_{k-1}) contributes
    /// d h_{k-1} = d h_k * (1 + block'(h_{k-1})).
    pub fn backward1(
        &self,
        cache: &TransformCache,
        d_out: f64,
    ) -> Result<(Vec<Vec<f64>>, f64), TinynetError> {
        let mut grads = vec![Vec::new(); self.nets.len()];
        let mut d = d_out;
        for k in (1..self.nets.len()).rev() {
            let (g, din) = self.nets[k].backward(&cache.caches[k], &[d])?;
            grads[k] = g;
            d += din[0];
        }
        let (g0, din0) = self.nets[0].backward(&cache.caches[0], &[d])?;
        grads[0] = g0;
        Ok((grads, din0[0]))
    }

    pub fn param_counts(&self) -> Vec<usize> {
        self.nets.iter().map(|n| n.param_count()).collect()
    }
}

#[derive(Debug, Clone)]
pub struct JointSystem {
    pub analysis: Transform,
    pub synthesis: Transform,
    pub family: Family,
    pub model_mu: f64,
    /// Raw scale parameter; the model scale is softplus of this, and the
    /// model's floor clamps it from below with a dead gradient underneath.
    pub model_theta: f64,
    pub scale_floor: f64,
}

impl JointSystem {
    pub fn new(
        kind: TransformKind,
        family: Family,
        scale_floor: f64,
        seed: Seed,
    ) -> Result<Self, TinynetError> {
        Ok(JointSystem {
            analysis: Transform::new(kind, seed.stream(101))?,
            synthesis: Transform::new(kind, seed.stream(202))?,
            family,
            model_mu: 0.0,
            model_theta: inv_softplus(1.0),
            scale_floor,
        })
    }

    pub fn model(&self) -> Result<EntropyModel, TinynetError> {
        Ok(match self.family {
            Family::Gaussian => EntropyModel::gaussian(self.model_mu, softplus(self.model_theta), self.scale_floor)?,
            Family::Laplacian => EntropyModel::laplacian(self.model_mu, softplus(self.model_theta), self.scale_floor)?,
        })
    }
}

fn inv_softplus(y: f64) -> f64 {
    // softplus(x) = y  =>  x = ln(e^y - 1)
    (y.exp() - 1.0).ln()
}

/// Source distribution for the joint rate-distortion loops.
#[derive(Debug, Clone)]
pub enum RdSource {
    Laplace(Laplace1D),
    Gaussian(Gaussian1D),
}

impl RdSource {
    fn sample_with(&self, rng: &mut crate::numerics::RngStream) -> f64 {
        match self {
            RdSource::Laplace(l) => l.sample_with(rng),
            RdSource::Gaussian(g) => g.sample_with(rng),
        }
    }
}

/// Rounded-evaluation loss of a system: code length plus weighted squared
/// error at y^ = round(analysis(x)).
#[derive(Debug, Clone, Copy)]
pub struct TrueLoss {
    pub loss: f64,
    pub loss_se: f64,
    pub rate_bits: f64,
    pub rate_se: f64,
    pub mse: f64,
    pub mse_se: f64,
}

pub fn true_loss(
    sys: &JointSystem,
    source: &RdSource,
    lambda: f64,
    n: usize,
    seed: Seed,
) -> Result<TrueLoss, TinynetError> {
    let model = sys.model()?;
    let mut rng = seed.stream(STREAM_EVAL_BASE + 7).rng();
    let xs: Vec<f64> = (0..n).map(|_| source.sample_with(&mut rng)).collect();
    let rows: Vec<(f64, f64)> = xs
        .par_chunks(1024)
        .map(|chunk| {
            chunk
                .iter()
                .map(|&x| {
                    let y = sys.analysis.forward1(x);
                    let yh = round_half(y);
                    let rate = model.rate_bits(yh);
                    let e = x - sys.synthesis.forward1(yh);
                    (rate, e * e)
                })
                .collect::<Vec<_>>()
        })
        .flatten()
        .collect();
    let rates: Vec<f64> = rows.iter().map(|r| r.0).collect();
    let mses: Vec<f64> = rows.iter().map(|r| r.1).collect();
    let losses: Vec<f64> = rows.iter().map(|r| r.0 + lambda * r.1).collect();
    let (rate_bits, rate_se) = mean_se(&rates);
    let (mse, mse_se) = mean_se(&mses);
    let (loss, loss_se) = mean_se(&losses);
    Ok(TrueLoss { loss, loss_se, rate_bits, rate_se, mse, mse_se })
}

// gradient bundle summed over one chunk
struct JGrad {
    an: Vec<Vec<f64>>,
    syn: Vec<Vec<f64>>,
    mu: f64,
    theta: f64,
    loss: f64,
}

impl JGrad {
    fn zero(sys: &JointSystem) -> Self {
        JGrad {
            an: sys.analysis.param_counts().iter().map(|&n| vec![0.0; n]).collect(),
            syn: sys.synthesis.param_counts().iter().map(|&n| vec![0.0; n]).collect(),
            mu: 0.0,
            theta: 0.0,
            loss: 0.0,
        }
    }
}

fn supported_joint(forward: &SurrogateSpec, rule: GradRule) -> Result<(), TinynetError> {
    let ok = matches!(
        (forward, rule),
        (SurrogateSpec::Round, GradRule::Ste)
            | (SurrogateSpec::Aun, GradRule::Ste)
            | (SurrogateSpec::Aun, GradRule::Pge)
            | (SurrogateSpec::Sr, GradRule::Ste)
            | (SurrogateSpec::Sr, GradRule::Ep)
            | (SurrogateSpec::Sua { .. }, GradRule::Ste)
            | (SurrogateSpec::Sua { .. }, GradRule::Pge)
    );
    if ok {
        Ok(())
    } else {
        Err(TinynetError::InvalidConfig(format!(
            "joint training supports round/plain-noise/stochastic-rounding/soft-noise forwards, got {} with {:?}",
            forward.label(),
            rule
        )))
    }
}

/// Jointly train analysis, synthesis, and entropy model on
/// L = rate + lambda * distortion with the chosen forward and the chosen
/// gradient rule at the quantizer crossing. Only the analysis gradient
/// crosses the quantizer; synthesis and model gradients are taken at the
/// sampled output, where they are already unbiased.
pub fn train_joint(
    sys: &mut JointSystem,
    forward: &SurrogateSpec,
    rule: GradRule,
    source: &RdSource,
    cfg: &TrainConfig,
) -> Result<Vec<f64>, TinynetError> {
    cfg.validate()?;
    supported_joint(forward, rule)?;
    let mut opt_an: Vec<Adam> = sys.analysis.param_counts().iter().map(|&n| Adam::new(n)).collect();
    let mut opt_syn: Vec<Adam> = sys.synthesis.param_counts().iter().map(|&n| Adam::new(n)).collect();
    let mut opt_model = Adam::new(2);
    let mut trace = Vec::with_capacity(cfg.steps);
    for step in 0..cfg.steps {
        let step_spec = annealed(forward, cfg, step);
        let mut rng = cfg.seed.stream(STREAM_TRAIN_BASE + step as u64).rng();
        // (x, auxiliary uniform) pairs; the aux value is noise or a decision
        let batch: Vec<(f64, f64)> = (0..cfg.batch)
            .map(|_| {
                let x = source.sample_with(&mut rng);
                let aux = rng.uniform();
                (x, aux)
            })
            .collect();
        let model = sys.model()?;
        let theta_chain = sigmoid(sys.model_theta);
        let scale_live = softplus(sys.model_theta) >= sys.scale_floor;
        let chunks: Vec<Result<JGrad, TinynetError>> = batch
            .par_chunks(CHUNK)
            .map(|chunk| {
                let mut acc = JGrad::zero(sys);
                for &(x, aux) in chunk {
                    let (y, an_cache) = sys.analysis.forward1_cached(x)?;
                    let (tilde, path) = match step_spec {
                        SurrogateSpec::Round => (round_half(y), 0.0),
                        SurrogateSpec::Aun => (y + aux - 0.5, 1.0),
                        SurrogateSpec::Sr => (sr_sample(y, aux), 1.0),
                        SurrogateSpec::Sua { alpha } => {
                            let w = soft_fn(y, alpha) + aux - 0.5;
                            (denoise(w, alpha), denoise_deriv(w, alpha) * soft_fn_deriv(y, alpha))
                        }
                        _ => unreachable!("guarded by supported_joint"),
                    };
                    let (rate, d_mu, d_scale) = model.rate_bits_with_grad(tilde);
                    let (_, d_rate_d_tilde) = model.rate_bits_value_grad(tilde);
                    let (xhat, syn_cache) = sys.synthesis.forward1_cached(tilde)?;
                    let err = xhat - x;
                    let (syn_grads, d_dist_d_tilde) =
                        sys.synthesis.backward1(&syn_cache, 2.0 * err * cfg.lambda)?;
                    let d_loss_d_tilde = d_rate_d_tilde + d_dist_d_tilde;
                    let g_y = match (step_spec, rule) {
                        (SurrogateSpec::Round, _) | (_, GradRule::Ste) => {
                            // straight through: soft-noise keeps its slope
                            match step_spec {
                                SurrogateSpec::Sua { alpha } => d_loss_d_tilde * soft_fn_deriv(y, alpha),
                                _ => d_loss_d_tilde,
                            }
                        }
                        (_, GradRule::Pge) => d_loss_d_tilde * path,
                        (SurrogateSpec::Sr, GradRule::Ep) => {
                            let at = |t: f64| {
                                let e = x - sys.synthesis.forward1(t);
                                model.rate_bits(t) + cfg.lambda * e * e
                            };
                            at(y.ceil()) - at(y.floor())
                        }
                        _ => unreachable!("guarded by supported_joint"),
                    };
                    let (an_grads, _) = sys.analysis.backward1(&an_cache, g_y)?;
                    for (a, g) in acc.an.iter_mut().zip(an_grads) {
                        for (ai, gi) in a.iter_mut().zip(g) {
                            *ai += gi;
                        }
                    }
                    for (a, g) in acc.syn.iter_mut().zip(syn_grads) {
                        for (ai, gi) in a.iter_mut().zip(g) {
                            *ai += gi;
                        }
                    }
                    acc.mu += d_mu;
                    if scale_live {
                        acc.theta += d_scale * theta_chain;
                    }
                    acc.loss += rate + cfg.lambda * err * err;
                }
                Ok(acc)
            })
            .collect();
        apply_joint_step(sys, chunks, cfg, step, &mut opt_an, &mut opt_syn, &mut opt_model, &mut trace, false)?;
    }
    convergence_check(&trace)?;
    Ok(trace)
}

/// Fine-tune synthesis and entropy model on truly rounded latents with the
/// analysis transform frozen and the scale floor switched to its
/// post-training value.
pub fn post_train(
    sys: &mut JointSystem,
    source: &RdSource,
    cfg: &TrainConfig,
    post_floor: f64,
) -> Result<Vec<f64>, TinynetError> {
    cfg.validate()?;
    if !(post_floor.is_finite() && post_floor >= 0.0) {
        return Err(TinynetError::InvalidConfig(format!("post floor {post_floor}")));
    }
    sys.scale_floor = post_floor;
    let mut opt_an: Vec<Adam> = sys.analysis.param_counts().iter().map(|&n| Adam::new(n)).collect();
    let mut opt_syn: Vec<Adam> = sys.synthesis.param_counts().iter().map(|&n| Adam::new(n)).collect();
    let mut opt_model = Adam::new(2);
    let mut trace = Vec::with_capacity(cfg.steps);
    for step in 0..cfg.steps {
        let mut rng = cfg.seed.stream(STREAM_TRAIN_BASE + step as u64).rng();
        let batch: Vec<f64> = (0..cfg.batch).map(|_| source.sample_with(&mut rng)).collect();
        let model = sys.model()?;
        let theta_chain = sigmoid(sys.model_theta);
        let scale_live = softplus(sys.model_theta) >= sys.scale_floor;
        let chunks: Vec<Result<JGrad, TinynetError>> = batch
            .par_chunks(CHUNK)
            .map(|chunk| {
                let mut acc = JGrad::zero(sys);
                for &x in chunk {
                    let y = sys.analysis.forward1(x);
                    let yh = round_half(y);
                    let (rate, d_mu, d_scale) = model.rate_bits_with_grad(yh);
                    let (xhat, syn_cache) = sys.synthesis.forward1_cached(yh)?;
                    let err = xhat - x;
                    let (syn_grads, _) = sys.synthesis.backward1(&syn_cache, 2.0 * err * cfg.lambda)?;
                    for (a, g) in acc.syn.iter_mut().zip(syn_grads) {
                        for (ai, gi) in a.iter_mut().zip(g) {
                            *ai += gi;
                        }
                    }
                    acc.mu += d_mu;
                    if scale_live {
                        acc.theta += d_scale * theta_chain;
                    }
                    acc.loss += rate + cfg.lambda * err * err;
                }
                Ok(acc)
            })
            .collect();
        apply_joint_step(sys, chunks, cfg, step, &mut opt_an, &mut opt_syn, &mut opt_model, &mut trace, true)?;
    }
    convergence_check(&trace)?;
    Ok(trace)
}

#[allow(clippy::too_many_arguments)]
fn apply_joint_step(
    sys: &mut JointSystem,
    chunks: Vec<Result<JGrad, TinynetError>>,
    cfg: &TrainConfig,
    step: usize,
    opt_an: &mut [Adam],
    opt_syn: &mut [Adam],
    opt_model: &mut Adam,
    trace: &mut Vec<f64>,
    freeze_analysis: bool,
) -> Result<(), TinynetError> {
    let mut bundles = Vec::with_capacity(chunks.len());
    for c in chunks {
        bundles.push(c?);
    }
    let scale = 1.0 / cfg.batch as f64;
    let lr = cfg.lr_at(step);
    if !freeze_analysis {
        for (k, opt) in opt_an.iter_mut().enumerate() {
            let parts: Vec<Vec<f64>> = bundles.iter().map(|b| b.an[k].clone()).collect();
            let mut g = reduce_vecs(&parts, sys.analysis.nets[k].param_count());
            for gi in &mut g {
                *gi *= scale;
            }
            opt.step(&mut sys.analysis.nets[k].params, &g, lr);
        }
    }
    for (k, opt) in opt_syn.iter_mut().enumerate() {
        let parts: Vec<Vec<f64>> = bundles.iter().map(|b| b.syn[k].clone()).collect();
        let mut g = reduce_vecs(&parts, sys.synthesis.nets[k].param_count());
        for gi in &mut g {
            *gi *= scale;
        }
        opt.step(&mut sys.synthesis.nets[k].params, &g, lr);
    }
    let mut mu_acc = Neumaier::new();
    let mut theta_acc = Neumaier::new();
    let mut loss_acc = Neumaier::new();
    for b in &bundles {
        mu_acc.add(b.mu);
        theta_acc.add(b.theta);
        loss_acc.add(b.loss);
    }
    let mut mt = [sys.model_mu, sys.model_theta];
    opt_model.step(
        &mut mt,
        &[mu_acc.total() * scale, theta_acc.total() * scale],
        lr,
    );
    sys.model_mu = mt[0];
    sys.model_theta = mt[1];
    trace.push(loss_acc.total() * scale);
    Ok(())
}

/// One rate-distortion point of a trained system, evaluated with rounding.
#[derive(Debug, Clone, Copy)]
pub struct RdPoint {
    pub lambda: f64,
    pub rate_bits: f64,
    pub rate_se: f64,
    pub mse: f64,
    pub mse_se: f64,
    pub loss: f64,
    pub loss_se: f64,
}

/// Train one system per lambda on the standard Laplace source with the
/// sampled-rounding forward and the chosen rule at the quantizer crossing,
/// then evaluate each with true rounding.
pub fn train_laplace_rd(
    kind: TransformKind,
    rule: GradRule,
    lambda_grid: &[f64],
    cfg: &TrainConfig,
    n_eval: usize,
) -> Result<Vec<RdPoint>, TinynetError> {
    let source = RdSource::Laplace(Laplace1D::new(0.0, 1.0)?);
    let mut points = Vec::with_capacity(lambda_grid.len());
    for (i, &lambda) in lambda_grid.iter().enumerate() {
        let mut sys = JointSystem::new(
            kind,
            Family::Laplacian,
            0.08,
            cfg.seed.stream(1000 + i as u64),
        )?;
        let mut cfg_l = cfg.clone();
        cfg_l.lambda = lambda;
        cfg_l.seed = cfg.seed.stream(2000 + i as u64);
        train_joint(&mut sys, &SurrogateSpec::sr(), rule, &source, &cfg_l)?;
        let t = true_loss(&sys, &source, lambda, n_eval, cfg_l.seed)?;
        points.push(RdPoint {
            lambda,
            rate_bits: t.rate_bits,
            rate_se: t.rate_se,
            mse: t.mse,
            mse_se: t.mse_se,
            loss: t.loss,
            loss_se: t.loss_se,
        });
    }
    Ok(points)
}

// ---------------------------------------------------------------------------
// Checkpointing
// ---------------------------------------------------------------------------

const CHECKPOINT_MAGIC: &[u8; 4] = b"TNCK";
const CHECKPOINT_VERSION: u32 = 1;

/// Binary little-endian dump of a network, its optimizer moments, and the
/// step count.
pub fn save_checkpoint(path: &Path, net: &Mlp, opt: &Adam, step: u64) -> Result<(), TinynetError> {
    let mut buf = Vec::new();
    buf.extend_from_slice(CHECKPOINT_MAGIC);
    buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    buf.push(net.activation.tag());
    buf.extend_from_slice(&(net.layer_sizes.len() as u64).to_le_bytes());
    for &s in &net.layer_sizes {
        buf.extend_from_slice(&(s as u64).to_le_bytes());
    }
    for &p in &net.params {
        buf.extend_from_slice(&p.to_le_bytes());
    }
    buf.extend_from_slice(&opt.t.to_le_bytes());
    for v in [&opt.m, &opt.v] {
        for &x in v {
            buf.extend_from_slice(&x.to_le_bytes());
        }
    }
    buf.extend_from_slice(&step.to_le_bytes());
    let mut f = std::fs::File::create(path)?;
    f.write_all(&buf)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<(Mlp, Adam, u64), TinynetError> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    let mut pos = 0_usize;
    let take = |pos: &mut usize, n: usize| -> Result<&[u8], TinynetError> {
        if *pos + n > bytes.len() {
            return Err(TinynetError::Checkpoint("truncated file".to_string()));
        }
        let s = &bytes[*pos..*pos + n];
        *pos += n;
        Ok(s)
    };
    if take(&mut pos, 4)? != CHECKPOINT_MAGIC {
        return Err(TinynetError::Checkpoint("bad magic".to_string()));
    }
    let version = u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap());
    if version != CHECKPOINT_VERSION {
        return Err(TinynetError::Checkpoint(format!("unsupported version {version}")));
    }
    let activation = Activation::from_tag(take(&mut pos, 1)?[0])
        .ok_or_else(|| TinynetError::Checkpoint("bad activation tag".to_string()))?;
    let n_sizes = u64::from_le_bytes(take(&mut pos, 8)?.try_into().unwrap()) as usize;
    if n_sizes < 2 || n_sizes > 64 {
        return Err(TinynetError::Checkpoint(format!("implausible layer count {n_sizes}")));
    }
    let mut layer_sizes = Vec::with_capacity(n_sizes);
    for _ in 0..n_sizes {
        layer_sizes.push(u64::from_le_bytes(take(&mut pos, 8)?.try_into().unwrap()) as usize);
    }
    let n_params = param_count(&layer_sizes);
    let read_f64s = |pos: &mut usize, n: usize| -> Result<Vec<f64>, TinynetError> {
        let mut v = Vec::with_capacity(n);
        for _ in 0..n {
            let b = &bytes[*pos..];
            if b.len() < 8 {
                return Err(TinynetError::Checkpoint("truncated file".to_string()));
            }
            v.push(f64::from_le_bytes(b[..8].try_into().unwrap()));
            *pos += 8;
        }
        Ok(v)
    };
    let params = read_f64s(&mut pos, n_params)?;
    let t = u64::from_le_bytes(take(&mut pos, 8)?.try_into().unwrap());
    let m = read_f64s(&mut pos, n_params)?;
    let v = read_f64s(&mut pos, n_params)?;
    let step = u64::from_le_bytes(take(&mut pos, 8)?.try_into().unwrap());
    if pos != bytes.len() {
        return Err(TinynetError::Checkpoint("trailing bytes".to_string()));
    }
    let net = Mlp { layer_sizes, activation, params };
    Ok((net, Adam::from_state(m, v, t)?, step))
}
