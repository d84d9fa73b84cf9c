//! Randomized invariants over the public API. Statistical checks use wide
//! (4-5 SE) bounds so a failing case indicates a defect, not bad luck.

use proptest::prelude::*;

use quantlab_core::entropy_model::{expected_rate, expected_rate_mc, EntropyModel, RateMethod};
use quantlab_core::infotheory::{mi_rounding, mi_value};
use quantlab_core::numerics::{integrate, std_normal_cdf, QuadMethod, Quadrature, Seed};
use quantlab_core::sources::{Gaussian1D, Gaussian2D};
use quantlab_core::surrogates::{
    forward, round_half, sga_probs, soft_fn, sra_prob_floor, Noise, NoiseKind, SurrogateSpec,
};

fn every_kind() -> Vec<SurrogateSpec> {
    vec![
        SurrogateSpec::round(),
        SurrogateSpec::aun(),
        SurrogateSpec::uq_shared(),
        SurrogateSpec::uq_indep(),
        SurrogateSpec::sr(),
        SurrogateSpec::sha(6.0).unwrap(),
        SurrogateSpec::sua(6.0).unwrap(),
        SurrogateSpec::sua_noisy(6.0).unwrap(),
        SurrogateSpec::sra(6.0).unwrap(),
        SurrogateSpec::sga(0.4).unwrap(),
    ]
}

proptest! {
    #[test]
    fn std_normal_cdf_is_symmetric(x in -12.0f64..12.0) {
        let s = std_normal_cdf(x) + std_normal_cdf(-x);
        prop_assert!((s - 1.0).abs() < 1e-12, "cdf symmetry broke at {x}: {s}");
    }

    #[test]
    fn quadrature_is_linear(a in -3.0f64..3.0, b in -3.0f64..3.0) {
        let f = |x: f64| (-x * x / 2.0).exp();
        let g = |x: f64| 1.0 / (1.0 + x * x);
        let lo = -6.0;
        let hi = 6.0;
        // A fixed rule is a linear functional of the integrand, so only
        // rounding separates the two sides. The adaptive method refines
        // the combined integrand differently and is held to its own
        // accuracy target instead.
        let gl = Quadrature {
            method: QuadMethod::GaussLegendre { points: 32 },
            ..Quadrature::default()
        };
        let scale = 1.0 + a.abs() + b.abs();
        let lhs = integrate(|x| a * f(x) + b * g(x), lo, hi, &gl).unwrap();
        let rhs = a * integrate(f, lo, hi, &gl).unwrap() + b * integrate(g, lo, hi, &gl).unwrap();
        prop_assert!((lhs - rhs).abs() < 1e-10 * scale, "{lhs} vs {rhs}");
        let q = Quadrature::default();
        let lhs = integrate(|x| a * f(x) + b * g(x), lo, hi, &q).unwrap();
        let rhs = a * integrate(f, lo, hi, &q).unwrap() + b * integrate(g, lo, hi, &q).unwrap();
        prop_assert!((lhs - rhs).abs() < 2e-6 * scale, "{lhs} vs {rhs}");
    }

    #[test]
    fn rng_streams_are_reproducible_and_distinct(root in 0u64..1_000_000, k in 1u64..1000) {
        let mut a = Seed::new(root).stream(k).rng();
        let mut b = Seed::new(root).stream(k).rng();
        let mut c = Seed::new(root).stream(k + 1).rng();
        let xs: Vec<f64> = (0..8).map(|_| a.uniform()).collect();
        let ys: Vec<f64> = (0..8).map(|_| b.uniform()).collect();
        let zs: Vec<f64> = (0..8).map(|_| c.uniform()).collect();
        prop_assert_eq!(&xs, &ys);
        prop_assert_ne!(&xs, &zs);
    }

    #[test]
    fn degenerate_pair_components_are_exact_copies(sigma in 0.05f64..2.0, draw in 0u64..10_000) {
        let g = Gaussian2D::new(sigma, 1.0).unwrap();
        let h = Gaussian2D::new(sigma, -1.0).unwrap();
        let mut rng = Seed::new(draw).rng();
        let [y1, y2] = g.sample_pair_with(&mut rng);
        prop_assert_eq!(y1, y2);
        let mut rng = Seed::new(draw).rng();
        let [z1, z2] = h.sample_pair_with(&mut rng);
        prop_assert_eq!(z1, -z2);
    }

    #[test]
    fn rounding_ties_go_away_from_zero(n in -50i64..50) {
        let y = n as f64 + 0.5;
        let r = round_half(y);
        prop_assert_eq!(r, if y >= 0.0 { y + 0.5 } else { y - 0.5 });
        prop_assert_eq!(round_half(n as f64), n as f64);
    }

    #[test]
    fn every_forward_is_integer_shift_equivariant(
        y in -8.0f64..8.0,
        u in -0.4999f64..0.4999,
        d in 0.0001f64..0.9999,
        k in -5i64..5,
    ) {
        for spec in every_kind() {
            // The same frozen noise must commute with the shift.
            let noise = match spec.noise_kind() {
                NoiseKind::None => Noise::None,
                NoiseKind::SharedUniform => Noise::Shared(u),
                NoiseKind::PerComponentUniform => Noise::PerComponent(vec![u]),
                NoiseKind::PerComponentDecision => Noise::Decisions(vec![d]),
            };
            let base = forward(&spec, &[y], &noise).unwrap();
            let shifted = forward(&spec, &[y + k as f64], &noise).unwrap();
            prop_assert!(
                (shifted[0] - base[0] - k as f64).abs() < 1e-9,
                "{}: f({y}+{k}) = {} but f({y}) + {k} = {}",
                spec.label(),
                shifted[0],
                base[0] + k as f64
            );
        }
    }

    #[test]
    fn stochastic_rounding_mean_is_the_soft_value(y in -8.0f64..8.0, alpha in 1.0f64..40.0) {
        // floor * p_floor + ceil * (1 - p_floor) telescopes to s_alpha(y).
        let p = sra_prob_floor(y, alpha);
        prop_assert!((0.0..=1.0).contains(&p));
        let mean = y.floor() * p + (y.floor() + 1.0) * (1.0 - p);
        prop_assert!((mean - soft_fn(y, alpha)).abs() < 1e-9);
    }

    #[test]
    fn gate_probabilities_form_a_distribution(y in -8.0f64..8.0, tau in 0.05f64..1.0) {
        let (p_floor, p_ceil) = sga_probs(y, tau).unwrap();
        prop_assert!((p_floor + p_ceil - 1.0).abs() < 1e-12);
        prop_assert!(p_floor >= 0.0 && p_ceil >= 0.0);
    }

    #[test]
    fn scale_clamp_freezes_the_model_below_the_bound(
        mu in -0.5f64..0.5,
        sigma in 1e-6f64..0.09,
        y in -4.0f64..4.0,
    ) {
        let floor = 0.09;
        let clamped = EntropyModel::gaussian(mu, sigma, floor).unwrap();
        let at_floor = EntropyModel::gaussian(mu, floor, floor).unwrap();
        prop_assert_eq!(clamped.rate_bits(y), at_floor.rate_bits(y));
    }

    #[test]
    fn mutual_information_is_never_negative(
        mu in 0.0f64..0.5,
        sigma in 0.05f64..2.0,
        which in 0usize..5,
    ) {
        let specs = [
            SurrogateSpec::round(),
            SurrogateSpec::aun(),
            SurrogateSpec::sr(),
            SurrogateSpec::sua(8.0).unwrap(),
            SurrogateSpec::sra(8.0).unwrap(),
        ];
        let source = Gaussian1D::new(mu, sigma).unwrap();
        let v = mi_value(&specs[which], &source).unwrap();
        prop_assert!(v >= -1e-9, "{} gave {v}", specs[which].label());
    }

    #[test]
    fn rounding_information_has_integer_shift_symmetry(n in -128i64..128, sigma in 0.05f64..2.0) {
        // Dyadic means keep mu + 1 exactly representable, so the shifted
        // bin masses are the same floats and equality is exact.
        let mu = n as f64 / 64.0;
        let a = mi_rounding(&Gaussian1D::new(mu, sigma).unwrap());
        let b = mi_rounding(&Gaussian1D::new(mu + 1.0, sigma).unwrap());
        prop_assert_eq!(a, b);
    }
}

proptest! {
    // Monte-Carlo cross-checks are costly; a handful of random configs with
    // a 5 SE bound keeps the false-alarm rate negligible.
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn monte_carlo_rate_agrees_with_quadrature(
        mu in -0.3f64..0.3,
        sigma in 0.2f64..1.5,
        mu_q in -0.5f64..0.5,
        sigma_q in 0.2f64..1.5,
        which in 0usize..4,
        seed in 0u64..10_000,
    ) {
        let specs = [
            SurrogateSpec::round(),
            SurrogateSpec::aun(),
            SurrogateSpec::sr(),
            SurrogateSpec::sua(8.0).unwrap(),
        ];
        let source = Gaussian1D::new(mu, sigma).unwrap();
        let model = EntropyModel::gaussian(mu_q, sigma_q, 1e-6).unwrap();
        let quad = expected_rate(
            &specs[which],
            &source,
            &model,
            &RateMethod::Quadrature(Quadrature::default()),
        )
        .unwrap();
        let mc = expected_rate_mc(&specs[which], &source, &model, 40_000, Seed::new(seed)).unwrap();
        prop_assert!(
            (mc.value - quad).abs() < 5.0 * mc.se.max(1e-6),
            "{}: mc {} +- {} vs quadrature {quad}",
            specs[which].label(),
            mc.value,
            mc.se
        );
    }
}
