//! Shared numerical kernels: standard normal CDF/PDF, 1-d and 2-d quadrature,
//! counter-based random streams, and compensated summation.
//!
//! Everything downstream assumes base-2 logarithms for information quantities;
//! this module only provides the raw real-analysis pieces.

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NumericsError {
    #[error("quadrature tolerance unmet after {0} subdivisions")]
    SubdivisionLimit(usize),
    #[error("invalid integration domain [{0}, {1}]")]
    InvalidDomain(f64, f64),
}

// ---------------------------------------------------------------------------
// Standard normal CDF / PDF
// ---------------------------------------------------------------------------

const FRAC_1_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

/// Density of the standard normal distribution.
#[inline]
pub fn std_normal_pdf(x: f64) -> f64 {
    FRAC_1_SQRT_2PI * (-0.5 * x * x).exp()
}

/// CDF of the standard normal distribution, accurate to ~1e-15 absolute.
///
/// Implemented through a rational-approximation complementary error function
/// so that both tails stay relatively accurate; tail masses down to ~1e-300
/// keep full relative precision, which the rate computations rely on.
#[inline]
pub fn std_normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x * std::f64::consts::FRAC_1_SQRT_2)
}

/// Complementary error function (rational Chebyshev approximation).
pub fn erfc(x: f64) -> f64 {
    let ax = x.abs();
    if ax <= ERF_THRESH {
        return 1.0 - erf_small(x);
    }
    let v = erfc_tail(ax);
    if x < 0.0 {
        2.0 - v
    } else {
        v
    }
}

/// Error function.
pub fn erf(x: f64) -> f64 {
    if x.abs() <= ERF_THRESH {
        erf_small(x)
    } else if x > 0.0 {
        1.0 - erfc_tail(x)
    } else {
        erfc_tail(-x) - 1.0
    }
}

const ERF_THRESH: f64 = 0.46875;

const ERF_A: [f64; 5] = [
    3.16112374387056560e0,
    1.13864154151050156e2,
    3.77485237685302021e2,
    3.20937758913846947e3,
    1.85777706184603153e-1,
];
const ERF_B: [f64; 4] = [
    2.36012909523441209e1,
    2.44024637934444173e2,
    1.28261652607737228e3,
    2.84423683343917062e3,
];
const ERF_C: [f64; 9] = [
    5.64188496988670089e-1,
    8.88314979438837594e0,
    6.61191906371416295e1,
    2.98635138197400131e2,
    8.81952221241769090e2,
    1.71204761263407058e3,
    2.05107837782607147e3,
    1.23033935479799725e3,
    2.15311535474403846e-8,
];
const ERF_D: [f64; 8] = [
    1.57449261107098347e1,
    1.17693950891312499e2,
    5.37181101862009858e2,
    1.62138957456669019e3,
    3.29079923573345963e3,
    4.36261909014324716e3,
    3.43936767414372164e3,
    1.23033935480374942e3,
];
const ERF_P: [f64; 6] = [
    3.05326634961232344e-1,
    3.60344899949804439e-1,
    1.25781726111229246e-1,
    1.60837851487422766e-2,
    6.58749161529837803e-4,
    1.63153871373020978e-2,
];
const ERF_Q: [f64; 5] = [
    2.56852019228982242e0,
    1.87295284992346047e0,
    5.27905102951428412e-1,
    6.05183413124413191e-2,
    2.33520497626869185e-3,
];
const FRAC_1_SQRT_PI: f64 = 5.641_895_835_477_563e-1;

fn erf_small(x: f64) -> f64 {
    let y = x.abs();
    let ysq = if y > 1e-300 { y * y } else { 0.0 };
    let mut num = ERF_A[4] * ysq;
    let mut den = ysq;
    for i in 0..3 {
        num = (num + ERF_A[i]) * ysq;
        den = (den + ERF_B[i]) * ysq;
    }
    x * (num + ERF_A[3]) / (den + ERF_B[3])
}

// erfc on [ERF_THRESH, inf) for positive argument.
fn erfc_tail(y: f64) -> f64 {
    debug_assert!(y >= ERF_THRESH);
    if y > 26.6 {
        // underflows to zero in f64 well before this point
        return 0.0;
    }
    let r = if y <= 4.0 {
        let mut num = ERF_C[8] * y;
        let mut den = y;
        for i in 0..7 {
            num = (num + ERF_C[i]) * y;
            den = (den + ERF_D[i]) * y;
        }
        (num + ERF_C[7]) / (den + ERF_D[7])
    } else {
        let ysq = 1.0 / (y * y);
        let mut num = ERF_P[5] * ysq;
        let mut den = ysq;
        for i in 0..4 {
            num = (num + ERF_P[i]) * ysq;
            den = (den + ERF_Q[i]) * ysq;
        }
        let r = ysq * (num + ERF_P[4]) / (den + ERF_Q[4]);
        (FRAC_1_SQRT_PI - r) / y
    };
    // split exp(-y^2) to keep accuracy for large y
    let ysq16 = (y * 16.0).trunc() / 16.0;
    let del = (y - ysq16) * (y + ysq16);
    (-ysq16 * ysq16).exp() * (-del).exp() * r
}

// ---------------------------------------------------------------------------
// Quadrature
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum QuadMethod {
    /// Adaptive Simpson with interval-halving error control.
    AdaptiveSimpson,
    /// Fixed-order Gauss-Legendre rule (no error estimate, never errors).
    GaussLegendre { points: usize },
}

/// Quadrature configuration shared by all integral computations.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Quadrature {
    pub method: QuadMethod,
    pub abs_tol: f64,
    pub rel_tol: f64,
    pub max_subdivisions: usize,
}

impl Default for Quadrature {
    fn default() -> Self {
        Quadrature {
            method: QuadMethod::AdaptiveSimpson,
            abs_tol: 1e-10,
            rel_tol: 1e-8,
            max_subdivisions: 20_000,
        }
    }
}

impl Quadrature {
    /// Pure absolute-tolerance control (relative term disabled).
    pub fn with_abs_tol(abs_tol: f64) -> Self {
        Quadrature {
            abs_tol,
            rel_tol: 0.0,
            ..Quadrature::default()
        }
    }
}

/// Integrate `f` over `[a, b]`.
///
/// The adaptive method first lays down a fixed panel grid (so narrow features
/// away from the interval midpoint are not missed), then bisects each panel
/// until the local Simpson error estimate meets the tolerance budget.
pub fn integrate<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, q: &Quadrature) -> Result<f64, NumericsError> {
    if !(a.is_finite() && b.is_finite()) || a > b {
        return Err(NumericsError::InvalidDomain(a, b));
    }
    if a == b {
        return Ok(0.0);
    }
    match q.method {
        QuadMethod::GaussLegendre { points } => Ok(gauss_legendre(&f, a, b, points)),
        QuadMethod::AdaptiveSimpson => adaptive_simpson(&f, a, b, q),
    }
}

fn simpson(fa: f64, fm: f64, fb: f64, h: f64) -> f64 {
    h / 6.0 * (fa + 4.0 * fm + fb)
}

const INITIAL_PANELS: usize = 8;

fn adaptive_simpson<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, q: &Quadrature) -> Result<f64, NumericsError> {
    // coarse estimate over the initial panels to scale the relative tolerance
    let mut panels = Vec::with_capacity(INITIAL_PANELS);
    let w = (b - a) / INITIAL_PANELS as f64;
    let mut rough = 0.0_f64;
    for i in 0..INITIAL_PANELS {
        let x0 = a + i as f64 * w;
        let x1 = if i + 1 == INITIAL_PANELS { b } else { a + (i + 1) as f64 * w };
        let xm = 0.5 * (x0 + x1);
        let (f0, fm, f1) = (f(x0), f(xm), f(x1));
        let s = simpson(f0, fm, f1, x1 - x0);
        rough += s.abs();
        panels.push((x0, x1, f0, fm, f1, s));
    }
    let tol = q.abs_tol.max(q.rel_tol * rough);
    let mut budget = q.max_subdivisions as isize;
    let mut total = Neumaier::new();
    for (x0, x1, f0, fm, f1, s) in panels {
        let v = simpson_rec(f, x0, x1, f0, fm, f1, s, tol / INITIAL_PANELS as f64, 0, &mut budget)?;
        total.add(v);
    }
    Ok(total.total())
}

const MAX_DEPTH: u32 = 52;

#[allow(clippy::too_many_arguments)]
fn simpson_rec<F: Fn(f64) -> f64>(
    f: &F,
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    tol: f64,
    depth: u32,
    budget: &mut isize,
) -> Result<f64, NumericsError> {
    let m = 0.5 * (a + b);
    let lm = 0.5 * (a + m);
    let rm = 0.5 * (m + b);
    let flm = f(lm);
    let frm = f(rm);
    let left = simpson(fa, flm, fm, m - a);
    let right = simpson(fm, frm, fb, b - m);
    let delta = left + right - whole;
    if delta.abs() <= 15.0 * tol || depth >= MAX_DEPTH {
        return Ok(left + right + delta / 15.0);
    }
    *budget -= 1;
    if *budget < 0 {
        return Err(NumericsError::SubdivisionLimit(0));
    }
    let half = 0.5 * tol;
    let l = simpson_rec(f, a, m, fa, flm, fm, left, half, depth + 1, budget)?;
    let r = simpson_rec(f, m, b, fm, frm, fb, right, half, depth + 1, budget)?;
    Ok(l + r)
}

/// Fixed Gauss-Legendre rule on `[a, b]`.
pub fn gauss_legendre<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, n: usize) -> f64 {
    let n = n.max(1);
    let (nodes, weights) = legendre_nodes(n);
    let c = 0.5 * (b - a);
    let d = 0.5 * (a + b);
    let mut acc = Neumaier::new();
    for i in 0..n {
        acc.add(weights[i] * f(c * nodes[i] + d));
    }
    c * acc.total()
}

// Nodes/weights by Newton iteration on the Legendre recurrence.
fn legendre_nodes(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let m = (n + 1) / 2;
    for k in 0..m {
        let mut x = (std::f64::consts::PI * (k as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0_f64, x);
            for j in 2..=n {
                let jf = j as f64;
                let p2 = ((2.0 * jf - 1.0) * x * p1 - (jf - 1.0) * p0) / jf;
                p0 = p1;
                p1 = p2;
            }
            dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
            let dx = p1 / dp;
            x -= dx;
            if dx.abs() < 1e-15 {
                break;
            }
        }
        nodes[k] = -x;
        nodes[n - 1 - k] = x;
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        weights[k] = w;
        weights[n - 1 - k] = w;
    }
    if n % 2 == 1 {
        nodes[n / 2] = 0.0;
    }
    (nodes, weights)
}

/// Axis-aligned integration box for [`integrate2d`].
#[derive(Debug, Clone, Copy)]
pub struct Rect {
    pub x0: f64,
    pub x1: f64,
    pub y0: f64,
    pub y1: f64,
}

/// Tensor-product integration of `f(x, y)` over a rectangle.
///
/// The outer (x) integral drives adaptivity; each inner integral gets its own
/// subdivision budget. An inner failure aborts the whole computation.
pub fn integrate2d<F: Fn(f64, f64) -> f64>(f: F, r: Rect, q: &Quadrature) -> Result<f64, NumericsError> {
    let inner_err = std::cell::Cell::new(None::<NumericsError>);
    let outer = integrate(
        |x| match integrate(|y| f(x, y), r.y0, r.y1, q) {
            Ok(v) => v,
            Err(e) => {
                inner_err.set(Some(e));
                0.0
            }
        },
        r.x0,
        r.x1,
        q,
    );
    if let Some(e) = inner_err.take() {
        return Err(e);
    }
    outer
}

// ---------------------------------------------------------------------------
// Random streams
// ---------------------------------------------------------------------------

/// Root seed plus stream identifier for a counter-based generator.
///
/// Identical `(root, stream)` pairs produce bit-identical sequences across
/// runs and platforms. Derived streams ([`Seed::stream`]) are statistically
/// independent, so experiments can split one seed per grid point, per training
/// step, or per worker without coordination.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Seed {
    pub root: u64,
    pub stream: u64,
}

impl Seed {
    pub fn new(root: u64) -> Self {
        Seed { root, stream: 0 }
    }

    /// Child stream `k` of this seed.
    pub fn stream(self, k: u64) -> Self {
        Seed {
            root: self.root,
            stream: splitmix64(self.stream ^ splitmix64(k.wrapping_add(0x9E37_79B9_7F4A_7C15))),
        }
    }

    pub fn rng(self) -> RngStream {
        let mut rng = ChaCha8Rng::seed_from_u64(self.root);
        rng.set_stream(self.stream);
        RngStream(rng)
    }
}

fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Deterministic random stream (ChaCha8 keyed by root, positioned by stream id).
#[derive(Debug, Clone)]
pub struct RngStream(ChaCha8Rng);

impl RngStream {
    #[inline]
    pub fn next_u64(&mut self) -> u64 {
        self.0.next_u64()
    }

    /// Uniform in `[0, 1)` with 53 random bits.
    #[inline]
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / 9_007_199_254_740_992.0)
    }

    /// Uniform in `[-0.5, 0.5)` — the quantization noise convention.
    #[inline]
    pub fn uniform_centered(&mut self) -> f64 {
        self.uniform() - 0.5
    }
}

/// `n` i.i.d. uniforms on `[-0.5, 0.5)` from the given seed.
pub fn rng_uniform(seed: Seed, n: usize) -> Vec<f64> {
    let mut rng = seed.rng();
    (0..n).map(|_| rng.uniform_centered()).collect()
}

// ---------------------------------------------------------------------------
// Compensated summation and simple statistics
// ---------------------------------------------------------------------------

/// Neumaier compensated accumulator. Summation order is part of the contract:
/// parallel reductions must fold fixed-size chunk results in index order
/// through this accumulator to stay reproducible.
#[derive(Debug, Clone, Copy, Default)]
pub struct Neumaier {
    sum: f64,
    comp: f64,
}

impl Neumaier {
    pub fn new() -> Self {
        Neumaier::default()
    }

    #[inline]
    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    #[inline]
    pub fn total(&self) -> f64 {
        self.sum + self.comp
    }
}

/// Compensated sum of a slice.
pub fn compensated_sum(xs: &[f64]) -> f64 {
    let mut acc = Neumaier::new();
    for &x in xs {
        acc.add(x);
    }
    acc.total()
}

/// Sample mean and its standard error.
pub fn mean_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len();
    assert!(n >= 2, "need at least two samples");
    let mean = compensated_sum(xs) / n as f64;
    let mut ss = Neumaier::new();
    for &x in xs {
        let d = x - mean;
        ss.add(d * d);
    }
    let var = ss.total() / (n as f64 - 1.0);
    (mean, (var / n as f64).sqrt())
}

/// Sample mean and unbiased sample variance.
pub fn mean_var(xs: &[f64]) -> (f64, f64) {
    let n = xs.len();
    assert!(n >= 2, "need at least two samples");
    let mean = compensated_sum(xs) / n as f64;
    let mut ss = Neumaier::new();
    for &x in xs {
        let d = x - mean;
        ss.add(d * d);
    }
    (mean, ss.total() / (n as f64 - 1.0))
}

/// `P(za < Z <= zb)` for standard normal `Z`, cancellation-safe in both tails.
///
/// The naive `cdf(zb) - cdf(za)` subtracts two values near 1.0 when the box
/// sits in the upper tail, leaving sign-flipping ulp noise; evaluating the
/// mirrored survival difference there keeps full relative accuracy.
pub fn std_normal_box_mass(za: f64, zb: f64) -> f64 {
    debug_assert!(za <= zb);
    if za + zb > 0.0 {
        std_normal_cdf(-za) - std_normal_cdf(-zb)
    } else {
        std_normal_cdf(zb) - std_normal_cdf(za)
    }
}

/// `n` evenly spaced points from `a` to `b` inclusive (just `a` for n = 1).
pub fn linspace(a: f64, b: f64, n: usize) -> Vec<f64> {
    assert!(n >= 1, "need at least one point");
    if n == 1 {
        return vec![a];
    }
    let step = (b - a) / (n - 1) as f64;
    (0..n).map(|i| a + step * i as f64).collect()
}

/// Golden-section search for the minimum of a unimodal `f` on `[lo, hi]`.
/// Returns the located point and its value; accurate to `x_tol` in position.
pub fn golden_min(f: impl Fn(f64) -> f64, lo: f64, hi: f64, x_tol: f64) -> (f64, f64) {
    assert!(lo < hi && x_tol > 0.0);
    const INV_PHI: f64 = 0.618_033_988_749_894_9;
    let (mut a, mut b) = (lo, hi);
    let mut c = b - INV_PHI * (b - a);
    let mut d = a + INV_PHI * (b - a);
    let mut fc = f(c);
    let mut fd = f(d);
    while (b - a).abs() > x_tol {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - INV_PHI * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + INV_PHI * (b - a);
            fd = f(d);
        }
    }
    if fc < fd {
        (c, fc)
    } else {
        (d, fd)
    }
}
