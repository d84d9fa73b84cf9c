//! Toy sources: 1-d and 2-d Gaussians and a 1-d Laplace distribution.
//!
//! Sampling is fully deterministic per [`Seed`]: Gaussians use Box-Muller on
//! two 53-bit uniforms per draw, the Laplace uses inverse-CDF sampling.

use crate::numerics::{std_normal_box_mass, std_normal_cdf, std_normal_pdf, RngStream, Seed};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SourceError {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
}

fn require(cond: bool, msg: &str) -> Result<(), SourceError> {
    if cond {
        Ok(())
    } else {
        Err(SourceError::InvalidParameter(msg.to_string()))
    }
}

/// One standard normal draw (Box-Muller, cosine branch).
#[inline]
pub fn sample_std_normal(rng: &mut RngStream) -> f64 {
    let u1 = rng.uniform(); // [0,1) => 1-u1 in (0,1], ln stays finite
    let u2 = rng.uniform();
    (-2.0 * (1.0 - u1).ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

// uniform on the open interval (0,1); safe under ln
#[inline]
fn uniform_open(rng: &mut RngStream) -> f64 {
    (((rng.next_u64() >> 11) as f64) + 0.5) * (1.0 / 9_007_199_254_740_992.0)
}

/// Scalar Gaussian source.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Gaussian1D {
    pub mu: f64,
    pub sigma: f64,
}

impl Gaussian1D {
    pub fn new(mu: f64, sigma: f64) -> Result<Self, SourceError> {
        require(mu.is_finite() && sigma.is_finite() && sigma > 0.0, "sigma must be positive")?;
        Ok(Gaussian1D { mu, sigma })
    }

    #[inline]
    pub fn pdf(&self, x: f64) -> f64 {
        std_normal_pdf((x - self.mu) / self.sigma) / self.sigma
    }

    #[inline]
    pub fn cdf(&self, x: f64) -> f64 {
        std_normal_cdf((x - self.mu) / self.sigma)
    }

    /// `P(lo < Y <= hi)`, accurate in both tails (see
    /// [`crate::numerics::std_normal_box_mass`]).
    #[inline]
    pub fn box_mass(&self, lo: f64, hi: f64) -> f64 {
        std_normal_box_mass((lo - self.mu) / self.sigma, (hi - self.mu) / self.sigma)
    }

    #[inline]
    pub fn sample_with(&self, rng: &mut RngStream) -> f64 {
        self.mu + self.sigma * sample_std_normal(rng)
    }

    pub fn sample(&self, seed: Seed, n: usize) -> Vec<f64> {
        let mut rng = seed.rng();
        (0..n).map(|_| self.sample_with(&mut rng)).collect()
    }
}

/// Zero-mean bivariate Gaussian with equal marginal scale and correlation `rho`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Gaussian2D {
    pub sigma: f64,
    pub rho: f64,
}

impl Gaussian2D {
    pub fn new(sigma: f64, rho: f64) -> Result<Self, SourceError> {
        require(sigma.is_finite() && sigma > 0.0, "sigma must be positive")?;
        require(rho.is_finite() && (-1.0..=1.0).contains(&rho), "rho must lie in [-1, 1]")?;
        Ok(Gaussian2D { sigma, rho })
    }

    /// One correlated pair. `rho = ±1` is handled exactly: the second
    /// component is a deterministic copy (or sign flip) of the first.
    #[inline]
    pub fn sample_pair_with(&self, rng: &mut RngStream) -> [f64; 2] {
        let z1 = sample_std_normal(rng);
        let y1 = self.sigma * z1;
        let y2 = if self.rho == 1.0 {
            y1
        } else if self.rho == -1.0 {
            -y1
        } else {
            let z2 = sample_std_normal(rng);
            self.rho * y1 + self.sigma * (1.0 - self.rho * self.rho).sqrt() * z2
        };
        [y1, y2]
    }

    pub fn sample(&self, seed: Seed, n: usize) -> Vec<[f64; 2]> {
        let mut rng = seed.rng();
        (0..n).map(|_| self.sample_pair_with(&mut rng)).collect()
    }
}

/// Scalar Laplace source with location `mu` and scale `b` (variance `2 b^2`).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Laplace1D {
    pub mu: f64,
    pub b: f64,
}

impl Laplace1D {
    pub fn new(mu: f64, b: f64) -> Result<Self, SourceError> {
        require(mu.is_finite() && b.is_finite() && b > 0.0, "scale must be positive")?;
        Ok(Laplace1D { mu, b })
    }

    #[inline]
    pub fn pdf(&self, x: f64) -> f64 {
        (-(x - self.mu).abs() / self.b).exp() / (2.0 * self.b)
    }

    #[inline]
    pub fn cdf(&self, x: f64) -> f64 {
        let z = (x - self.mu) / self.b;
        if z < 0.0 {
            0.5 * z.exp()
        } else {
            1.0 - 0.5 * (-z).exp()
        }
    }

    /// Inverse-CDF draw; the uniform is confined to the open unit interval so
    /// the logarithm never sees zero.
    #[inline]
    pub fn sample_with(&self, rng: &mut RngStream) -> f64 {
        let u = uniform_open(rng);
        if u < 0.5 {
            self.mu + self.b * (2.0 * u).ln()
        } else {
            self.mu - self.b * (2.0 * (1.0 - u)).ln()
        }
    }

    pub fn sample(&self, seed: Seed, n: usize) -> Vec<f64> {
        let mut rng = seed.rng();
        (0..n).map(|_| self.sample_with(&mut rng)).collect()
    }
}

/// Conditional distribution of the second component of a unit-marginal
/// bivariate Gaussian with model correlation `model_rho`, given `y1`:
/// `N(model_rho * y1, 1 - model_rho^2)`.
pub fn conditional_gaussian(model_rho: f64, y1: f64) -> Result<Gaussian1D, SourceError> {
    require(
        model_rho.is_finite() && model_rho.abs() < 1.0,
        "conditional scale degenerates unless |model_rho| < 1",
    )?;
    Gaussian1D::new(model_rho * y1, (1.0 - model_rho * model_rho).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{mean_var, Seed};

    // two-sided Kolmogorov-Smirnov statistic against a CDF
    fn ks_stat(samples: &mut [f64], cdf: impl Fn(f64) -> f64) -> f64 {
        samples.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let n = samples.len() as f64;
        let mut d = 0.0_f64;
        for (i, &x) in samples.iter().enumerate() {
            let c = cdf(x);
            d = d.max((c - i as f64 / n).abs());
            d = d.max(((i as f64 + 1.0) / n - c).abs());
        }
        d
    }

    #[test]
    fn gaussian_cdf_pdf_consistency() {
        let g = Gaussian1D::new(0.3, 0.7).unwrap();
        assert!((g.cdf(0.3) - 0.5).abs() < 1e-15);
        // numeric derivative of cdf matches pdf
        let h = 1e-6;
        let d = (g.cdf(1.0 + h) - g.cdf(1.0 - h)) / (2.0 * h);
        assert!((d - g.pdf(1.0)).abs() < 1e-8);
    }

    #[test]
    fn gaussian_sampling_ks() {
        let g = Gaussian1D::new(-0.2, 1.3).unwrap();
        let mut xs = g.sample(Seed::new(11), 100_000);
        let d = ks_stat(&mut xs, |x| g.cdf(x));
        // 1% critical value: 1.63 / sqrt(n)
        assert!(d < 1.63 / (100_000f64).sqrt(), "KS statistic {d}");
    }

    #[test]
    fn laplace_sampling_ks_and_moments() {
        let l = Laplace1D::new(0.0, 1.0).unwrap();
        let mut xs = l.sample(Seed::new(5), 100_000);
        let (m, v) = mean_var(&xs);
        assert!(m.abs() < 0.02);
        assert!((v - 2.0).abs() < 0.06, "variance {v}");
        let d = ks_stat(&mut xs, |x| l.cdf(x));
        assert!(d < 1.63 / (100_000f64).sqrt(), "KS statistic {d}");
    }

    #[test]
    fn gaussian2d_correlation() {
        for &rho in &[-0.5, 0.0, 0.8] {
            let g = Gaussian2D::new(1.0, rho).unwrap();
            let pairs = g.sample(Seed::new(17), 200_000);
            let n = pairs.len() as f64;
            let (mut s1, mut s2, mut s12) = (0.0, 0.0, 0.0);
            for p in &pairs {
                s1 += p[0] * p[0];
                s2 += p[1] * p[1];
                s12 += p[0] * p[1];
            }
            let r = s12 / (s1 * s2).sqrt() * n / n;
            assert!((r - rho).abs() < 0.01, "rho {rho}: estimated {r}");
        }
    }

    #[test]
    fn gaussian2d_degenerate_rho_exact() {
        let g = Gaussian2D::new(0.5, 1.0).unwrap();
        for p in g.sample(Seed::new(2), 1000) {
            assert_eq!(p[0], p[1]);
        }
        let g = Gaussian2D::new(0.5, -1.0).unwrap();
        for p in g.sample(Seed::new(2), 1000) {
            assert_eq!(p[0], -p[1]);
        }
    }

    #[test]
    fn conditional_gaussian_contract() {
        let c = conditional_gaussian(0.9, 0.0).unwrap();
        assert_eq!(c.mu, 0.0);
        assert!((c.sigma - 0.19_f64.sqrt()).abs() < 1e-15);
        let c = conditional_gaussian(0.9, 2.0).unwrap();
        assert!((c.mu - 1.8).abs() < 1e-15);
        assert!(conditional_gaussian(1.0, 0.0).is_err());
    }

    #[test]
    fn invalid_parameters_rejected() {
        assert!(Gaussian1D::new(0.0, 0.0).is_err());
        assert!(Gaussian1D::new(0.0, -1.0).is_err());
        assert!(Gaussian2D::new(1.0, 1.5).is_err());
        assert!(Laplace1D::new(0.0, 0.0).is_err());
    }
}
