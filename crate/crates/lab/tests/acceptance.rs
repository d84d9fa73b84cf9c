//! Acceptance gate: one test per headline property of the laboratory, each
//! pinned at an explicit tolerance. Every test ends with a single PASS line
//! carrying its measured numbers; a failed assertion is the FAIL side.

use std::collections::HashMap;

use quantlab::experiments::{grad_stats, lower_bound_sweep, mutual_info};
use quantlab::table::Cell;
use quantlab_core::backward::{
    grad_ep_rate_sra, grad_ep_rate_sua, grad_ep_scalar, grad_ep_vector_bruteforce, grad_pge,
    grad_standard, measure_grad_stats, EstimatorSpec, GradRule, RateLoss,
};
use quantlab_core::entropy_model::{
    default_mu_grid, default_sigma_grid, expected_rate, rate_surface, EntropyModel, RateMethod,
};
use quantlab_core::infotheory::{
    entropy_compare, mi_2d_correlated, mi_aun, mi_rounding, mi_sr, mi_sua, CorrelatedPair,
};
use quantlab_core::numerics::{linspace, Quadrature, Seed};
use quantlab_core::sources::Gaussian1D;
use quantlab_core::surrogates::{draw_noise, forward, soft_fn, Noise, SurrogateSpec};
use quantlab_core::tinynet::{
    bayes_distortion_aun, forward_zero_center_partial_sg, train_laplace_rd, train_synthesis_sized,
    Activation, Mlp, SimSource, TrainConfig, TransformKind,
};

fn cell_f(c: &Cell) -> f64 {
    match c {
        Cell::Float(v) => *v,
        Cell::Int(v) => *v as f64,
        Cell::Text(s) => panic!("expected a numeric cell, got {s:?}"),
    }
}

fn cell_s(c: &Cell) -> &str {
    match c {
        Cell::Text(s) => s,
        other => panic!("expected a text cell, got {other:?}"),
    }
}

// ---------------------------------------------------------------------------
// 1. Every differentiable path agrees with central finite differences.
// ---------------------------------------------------------------------------

#[test]
fn criterion_01_gradient_paths_match_finite_differences() {
    const H: f64 = 1e-5;
    // (label, analytic, central difference)
    let mut checks: Vec<(String, f64, f64)> = Vec::new();

    // network parameter and input gradients, smooth activation
    for net_seed in [11u64, 12] {
        let net = Mlp::new(&[2, 8, 6, 2], Activation::Softplus, Seed::new(net_seed)).unwrap();
        let mut rng = Seed::new(900 + net_seed).rng();
        let x: Vec<f64> = (0..2).map(|_| 2.0 * rng.uniform() - 1.0).collect();
        let c: Vec<f64> = (0..2).map(|_| 2.0 * rng.uniform() - 1.0).collect();
        let eval = |net: &Mlp, x: &[f64]| -> f64 {
            net.forward(x).unwrap().iter().zip(&c).map(|(o, ci)| o * ci).sum()
        };
        let (_, cache) = net.forward_cached(&x).unwrap();
        let (pg, xg) = net.backward(&cache, &c).unwrap();
        for i in 0..net.param_count() {
            let mut hi = net.clone();
            hi.params[i] += H;
            let mut lo = net.clone();
            lo.params[i] -= H;
            let fd = (eval(&hi, &x) - eval(&lo, &x)) / (2.0 * H);
            checks.push((format!("mlp {net_seed} param {i}"), pg[i], fd));
        }
        for k in 0..x.len() {
            let mut xh = x.clone();
            xh[k] += H;
            let mut xl = x.clone();
            xl[k] -= H;
            let fd = (eval(&net, &xh) - eval(&net, &xl)) / (2.0 * H);
            checks.push((format!("mlp {net_seed} input {k}"), xg[k], fd));
        }
    }

    // pathwise gradients at frozen noise through the noise-based forwards
    let loss_v = |t: f64| (2.0 * t).sin() + 0.3 * t * t;
    let loss_g = |t: &[f64]| vec![2.0 * (2.0 * t[0]).cos() + 0.6 * t[0]];
    let specs = [
        SurrogateSpec::aun(),
        SurrogateSpec::sua(5.0).unwrap(),
        SurrogateSpec::sua(10.0).unwrap(),
        SurrogateSpec::sua_noisy(3.0).unwrap(),
    ];
    for (si, spec) in specs.iter().enumerate() {
        let mut rng = Seed::new(7000 + si as u64).rng();
        let mut done = 0;
        while done < 10 {
            let y = 4.0 * rng.uniform() - 2.0;
            let noise = draw_noise(spec, 1, &mut rng);
            if let SurrogateSpec::Sua { alpha } = *spec {
                // the denoiser's curvature jumps at half-integers; keep the
                // stencil away so the difference quotient stays clean
                let u = match &noise {
                    Noise::PerComponent(us) => us[0],
                    _ => unreachable!(),
                };
                let w = soft_fn(y, alpha) + u;
                if (w - w.floor() - 0.5).abs() < 1e-3 {
                    continue;
                }
            }
            let g = grad_pge(spec, loss_g, &[y], &noise).unwrap()[0];
            let f = |yy: f64| loss_v(forward(spec, &[yy], &noise).unwrap()[0]);
            let fd = (f(y + H) - f(y - H)) / (2.0 * H);
            checks.push((format!("pge {} probe {done}", spec.label()), g, fd));
            done += 1;
        }
    }

    // smooth deterministic forward
    let sha = SurrogateSpec::sha(4.0).unwrap();
    let mut rng = Seed::new(7050).rng();
    for p in 0..10 {
        let y = 4.0 * rng.uniform() - 2.0;
        let g = grad_standard(&sha, loss_g, &[y]).unwrap()[0];
        let f = |yy: f64| loss_v(soft_fn(yy, 4.0));
        let fd = (f(y + H) - f(y - H)) / (2.0 * H);
        checks.push((format!("standard sha probe {p}"), g, fd));
    }

    // zero-centered forward with and without the offset gradient stopped
    let mut rng = Seed::new(7100).rng();
    let mut done = 0;
    while done < 15 {
        let y = 3.0 * rng.uniform() - 1.5;
        let mu = rng.uniform() - 0.5;
        let alpha = 4.0 + 8.0 * rng.uniform();
        let u = rng.uniform() - 0.5;
        let w = soft_fn(y - mu, alpha) + u;
        if (w - w.floor() - 0.5).abs() < 1e-3 {
            continue;
        }
        let path = forward_zero_center_partial_sg(y, mu, alpha, u, false);
        let fd_y = (forward_zero_center_partial_sg(y + H, mu, alpha, u, false).value
            - forward_zero_center_partial_sg(y - H, mu, alpha, u, false).value)
            / (2.0 * H);
        let fd_mu = (forward_zero_center_partial_sg(y, mu + H, alpha, u, false).value
            - forward_zero_center_partial_sg(y, mu - H, alpha, u, false).value)
            / (2.0 * H);
        checks.push((format!("zc d_y probe {done}"), path.d_y, fd_y));
        checks.push((format!("zc d_mu probe {done}"), path.d_mu, fd_mu));
        let stopped = forward_zero_center_partial_sg(y, mu, alpha, u, true);
        assert_eq!(stopped.value.to_bits(), path.value.to_bits());
        assert_eq!(stopped.d_mu, 0.0);
        checks.push((format!("zc stopped d_y probe {done}"), stopped.d_y, fd_y));
        done += 1;
    }

    // entropy-model code length in the value and in the model parameters
    let gauss = EntropyModel::gaussian(0.1, 0.4, 1e-6).unwrap();
    let lap = EntropyModel::laplacian(-0.2, 0.7, 1e-6).unwrap();
    for (mi, model) in [&gauss, &lap].into_iter().enumerate() {
        let mut rng = Seed::new(7200 + mi as u64).rng();
        for p in 0..10 {
            let v = 6.0 * rng.uniform() - 3.0;
            let g = model.rate_bits_value_grad(v).1;
            let fd = (model.rate_bits(v + H) - model.rate_bits(v - H)) / (2.0 * H);
            checks.push((format!("rate d_v model {mi} probe {p}"), g, fd));
        }
    }
    let mut rng = Seed::new(7300).rng();
    for p in 0..10 {
        let v = 4.0 * rng.uniform() - 2.0;
        let (_, d_mu, d_scale) = gauss.rate_bits_with_grad(v);
        let at = |mu: f64, s: f64| EntropyModel::gaussian(mu, s, 1e-6).unwrap().rate_bits(v);
        let fd_mu = (at(0.1 + H, 0.4) - at(0.1 - H, 0.4)) / (2.0 * H);
        let fd_s = (at(0.1, 0.4 + H) - at(0.1, 0.4 - H)) / (2.0 * H);
        checks.push((format!("rate d_mu probe {p}"), d_mu, fd_mu));
        checks.push((format!("rate d_scale probe {p}"), d_scale, fd_s));
    }

    assert!(checks.len() >= 100, "only {} probes", checks.len());
    let mut worst = 0.0f64;
    for (what, a, f) in &checks {
        let rel = (a - f).abs() / a.abs().max(f.abs()).max(1e-3);
        worst = worst.max(rel);
        assert!(rel < 1e-5, "{what}: analytic {a} vs fd {f} (rel {rel:.3e})");
    }
    println!(
        "criterion 01 PASS: {} finite-difference probes, worst rel err {worst:.3e}",
        checks.len()
    );
}

// ---------------------------------------------------------------------------
// 2. Closed-form expected gradients match their references.
// ---------------------------------------------------------------------------

#[test]
fn criterion_02_expected_gradient_identities() {
    // quadratic loss: the two-point boundary difference telescopes to 2y;
    // on a dyadic grid every intermediate is exactly representable
    for k in -40i64..=40 {
        let y = k as f64 / 8.0;
        let g = grad_ep_scalar(|t| t * t, y);
        assert_eq!(g, 2.0 * y, "quadratic identity at y = {y}");
    }
    let mut rng = Seed::new(501).rng();
    for _ in 0..50 {
        let y = 6.0 * rng.uniform() - 3.0;
        let g = grad_ep_scalar(|t| t * t, y);
        assert!(
            (g - 2.0 * y).abs() <= 1e-13 * (1.0 + y * y),
            "quadratic identity off-grid at y = {y}: {g}"
        );
    }

    // separable code-length term against the enumeration/quadrature reference
    let model = EntropyModel::gaussian(0.0, 0.5, 1e-6).unwrap();
    let rate = |t: f64| model.rate_bits(t);
    let vec_rate = |v: &[f64]| model.rate_bits(v[0]);
    let ys = [
        -1.73, -1.31, -0.85, -0.42, -0.11, 0.07, 0.23, 0.58, 0.94, 1.37, 1.66, 1.91,
    ];
    // at temperature 5 the reference integrator resolves the transition and
    // its stencil noise stays below 1e-9, so 1e-8 is a real comparison
    let alpha = 5.0;
    let sua = SurrogateSpec::sua(alpha).unwrap();
    let sra = SurrogateSpec::sra(alpha).unwrap();
    let mut worst = 0.0f64;
    for &y in &ys {
        let a = grad_ep_rate_sua(y, alpha, rate);
        let b = grad_ep_vector_bruteforce(&vec_rate, &[y], &sua).unwrap()[0];
        worst = worst.max((a - b).abs());
        assert!((a - b).abs() < 1e-8, "sua y {y}: {a} vs {b}");
        let a = grad_ep_rate_sra(y, alpha, rate);
        let b = grad_ep_vector_bruteforce(&vec_rate, &[y], &sra).unwrap()[0];
        worst = worst.max((a - b).abs());
        assert!((a - b).abs() < 1e-8, "sra y {y}: {a} vs {b}");
        let a = grad_ep_scalar(rate, y);
        let b = grad_ep_vector_bruteforce(&vec_rate, &[y], &SurrogateSpec::aun()).unwrap()[0];
        worst = worst.max((a - b).abs());
        assert!((a - b).abs() < 1e-8, "aun y {y}: {a} vs {b}");
    }

    // at temperature 10 the reference's own panel error (1.6e-5, amplified
    // by its difference stencil) swamps the identity, so those points are
    // pinned to 40-digit values computed independently instead
    let y = -1.73;
    let a10 = grad_ep_rate_sua(y, 10.0, rate);
    assert!(
        (a10 - -1.587_630_172_417_392_3).abs() < 1e-12,
        "sua temperature-10 anchor: {a10}"
    );
    let a10 = grad_ep_rate_sra(y, 10.0, rate);
    assert!(
        (a10 - -1.352_883_606_698_536_4).abs() < 1e-12,
        "sra temperature-10 anchor: {a10}"
    );
    println!("criterion 02 PASS: exact quadratic identity, reference gap <= {worst:.3e}, sharp anchors pinned");
}

// ---------------------------------------------------------------------------
// 3. The pathwise estimator is unbiased on the rate term.
// ---------------------------------------------------------------------------

#[test]
fn criterion_03_pathwise_estimator_unbiased_on_rate() {
    let model = EntropyModel::gaussian(0.0, 0.3, 1e-6).unwrap();
    let dist = Gaussian1D::new(0.0, 0.3).unwrap();
    let mut lines = Vec::new();
    for (spec, label) in [
        (SurrogateSpec::aun(), "aun"),
        (SurrogateSpec::sua(5.0).unwrap(), "sua:5"),
        (SurrogateSpec::sua(10.0).unwrap(), "sua:10"),
    ] {
        let est = EstimatorSpec::new(spec, GradRule::Pge, 1).unwrap();
        let stats =
            measure_grad_stats(&est, &RateLoss { model: &model }, &dist, 12, 100_000, Seed::new(31))
                .unwrap();
        // |trial mean - reference| per input scales with the trial-mean se;
        // an unbiased estimator keeps the folded statistic inside 3 of them
        let trial_se = (stats.variance / stats.n_trials as f64).sqrt();
        assert!(
            stats.bias < 3.0 * trial_se,
            "{label}: bias {} vs 3 x trial se {}",
            stats.bias,
            3.0 * trial_se
        );
        lines.push(format!("{label} bias {:.2e} < {:.2e}", stats.bias, 3.0 * trial_se));
    }
    println!("criterion 03 PASS: {}", lines.join("; "));
}

// ---------------------------------------------------------------------------
// 4. Bias and variance orderings across estimators, at 3-SE separation.
// ---------------------------------------------------------------------------

#[derive(Clone, Copy)]
struct Stats {
    bias: f64,
    bias_se: f64,
    var: f64,
    var_se: f64,
}

#[test]
fn criterion_04_estimator_bias_variance_orderings() {
    let table = grad_stats::run(&grad_stats::Params::default(), 0, "acceptance").unwrap();
    let mut cells: HashMap<(String, String, u64), Stats> = HashMap::new();
    for row in &table.rows {
        cells.insert(
            (cell_s(&row[0]).to_string(), cell_s(&row[1]).to_string(), cell_f(&row[3]).to_bits()),
            Stats {
                bias: cell_f(&row[4]),
                bias_se: cell_f(&row[5]),
                var: cell_f(&row[6]),
                var_se: cell_f(&row[7]),
            },
        );
    }
    let get = |rule: &str, calc: &str, sq: f64| {
        cells[&(rule.to_string(), calc.to_string(), sq.to_bits())]
    };
    // a exceeds b with non-overlapping 3-SE intervals
    let above = |a: f64, a_se: f64, b: f64, b_se: f64| a - 3.0 * a_se > b + 3.0 * b_se;

    for &sq in &[0.3, 1.0] {
        let (aun, s5, s10) = (get("pge", "aun", sq), get("pge", "sua:5", sq), get("pge", "sua:10", sq));
        assert!(
            above(s10.var, s10.var_se, s5.var, s5.var_se),
            "var pge sua:10 vs sua:5 at sigma_q {sq}"
        );
        assert!(
            above(s5.var, s5.var_se, aun.var, aun.var_se),
            "var pge sua:5 vs aun at sigma_q {sq}"
        );

        let (t5, t10, sr) = (get("ste", "sua:5", sq), get("ste", "sua:10", sq), get("ste", "sr", sq));
        assert!(
            above(t10.bias, t10.bias_se, t5.bias, t5.bias_se),
            "bias ste sua:10 vs sua:5 at sigma_q {sq}"
        );
        assert!(above(t5.bias, t5.bias_se, 0.0, 0.0), "bias ste sua:5 > 0 at sigma_q {sq}");
        assert!(above(sr.bias, sr.bias_se, 0.0, 0.0), "bias ste sr > 0 at sigma_q {sq}");
    }
    for (rule, calc) in [
        ("pge", "aun"),
        ("pge", "sua:5"),
        ("pge", "sua:10"),
        ("ste", "sua:5"),
        ("ste", "sua:10"),
        ("ste", "sr"),
        ("ste", "sra:5"),
        ("ste", "sra:10"),
    ] {
        let narrow = get(rule, calc, 0.3);
        let wide = get(rule, calc, 1.0);
        assert!(
            above(narrow.var, narrow.var_se, wide.var, wide.var_se),
            "{rule}/{calc}: variance should shrink from sigma_q 0.3 to 1.0"
        );
    }
    let v = |r: &str, c: &str| get(r, c, 0.3).var;
    println!(
        "criterion 04 PASS: var(pge) {:.3e} > {:.3e} > {:.3e} at sigma_q 0.3, all shifts 3-SE separated",
        v("pge", "sua:10"),
        v("pge", "sua:5"),
        v("pge", "aun")
    );
}

// ---------------------------------------------------------------------------
// 5. Scalar information curves hit their limits.
// ---------------------------------------------------------------------------

#[test]
fn criterion_05_information_limits() {
    let wide = Gaussian1D::new(0.0, 1.0).unwrap();
    let i_round = mi_rounding(&wide);
    let i_aun = mi_aun(&wide).unwrap();
    assert!(
        (i_aun - i_round).abs() < 0.05,
        "plain noise vs rounding at sigma 1: {i_aun} vs {i_round}"
    );

    let narrow_half = Gaussian1D::new(0.5, 0.02).unwrap();
    let i_half = mi_rounding(&narrow_half);
    assert!((i_half - 1.0).abs() < 0.01, "half-offset narrow source: {i_half}");

    let i_sr = mi_sr(&wide).unwrap();
    assert!(
        i_sr < i_round - 0.05,
        "stochastic rounding should lose information: {i_sr} vs {i_round}"
    );

    let mid = Gaussian1D::new(0.0, 0.5).unwrap();
    let i_sua = mi_sua(&mid, 50.0).unwrap();
    let i_round_mid = mi_rounding(&mid);
    assert!(
        (i_sua - i_round_mid).abs() < 0.02,
        "sharp annealed forward at sigma 0.5: {i_sua} vs {i_round_mid}"
    );
    println!(
        "criterion 05 PASS: |aun-round| {:.1e}, narrow {i_half:.4}, sr gap {:.3}, sua(50) gap {:.1e}",
        (i_aun - i_round).abs(),
        i_round - i_sr,
        (i_sua - i_round_mid).abs()
    );
}

// ---------------------------------------------------------------------------
// 6. Correlated-pair identity for shared vs independent noise.
// ---------------------------------------------------------------------------

#[test]
fn criterion_06_shared_noise_pair_identity() {
    let mut lines = Vec::new();
    for &sigma in &[0.3, 1.0] {
        let shared = mi_2d_correlated(CorrelatedPair::SharedNoise, sigma, 1.0).unwrap();
        let indep = mi_2d_correlated(CorrelatedPair::IndependentNoise, sigma, 1.0).unwrap();
        let scalar = mi_aun(&Gaussian1D::new(0.0, sigma).unwrap()).unwrap();
        assert!(
            (shared - scalar).abs() < 1e-6,
            "shared-noise pair at sigma {sigma}: {shared} vs scalar {scalar}"
        );
        assert!(
            indep >= shared - 1e-6,
            "independent noise below shared at sigma {sigma}: {indep} vs {shared}"
        );
        lines.push(format!(
            "sigma {sigma}: shared {shared:.6} = scalar {scalar:.6}, indep {indep:.6}"
        ));
    }
    println!("criterion 06 PASS: {}", lines.join("; "));
}

// ---------------------------------------------------------------------------
// 7. Entropy chain: code rate >= continuous entropy >= centered discrete.
// ---------------------------------------------------------------------------

#[test]
fn criterion_07_entropy_rate_chain() {
    let sigmas = linspace(0.05, 2.0, 20);
    let mut min_gap_cont = f64::INFINITY;
    let mut min_gap_rate = f64::INFINITY;
    for &mu in &[0.0, 0.25, 0.5] {
        for &sigma in &sigmas {
            let (h_cont, h_disc) = entropy_compare(mu, sigma).unwrap();
            assert!(
                h_cont >= h_disc - 1e-6,
                "continuous entropy below centered discrete at mu {mu} sigma {sigma}: {h_cont} vs {h_disc}"
            );
            let model = EntropyModel::gaussian(mu, sigma, 1e-6).unwrap();
            let src = Gaussian1D::new(mu, sigma).unwrap();
            let r = expected_rate(
                &SurrogateSpec::aun(),
                &src,
                &model,
                &RateMethod::Quadrature(Quadrature::default()),
            )
            .unwrap();
            assert!(
                r >= h_cont - 1e-6,
                "matched-model rate below entropy at mu {mu} sigma {sigma}: {r} vs {h_cont}"
            );
            min_gap_cont = min_gap_cont.min(h_cont - h_disc);
            min_gap_rate = min_gap_rate.min(r - h_cont);
        }
    }
    println!(
        "criterion 07 PASS: 60 grid points, min(H_cont - H_disc) {min_gap_cont:.2e}, min(R - H_cont) {min_gap_rate:.2e}"
    );
}

// ---------------------------------------------------------------------------
// 8. Trained synthesis: optimum reached, collapse detected, mismatch scaling.
// ---------------------------------------------------------------------------

#[test]
fn criterion_08_distortion_match_and_collapse() {
    let cfg = |seed: u64, steps: usize| TrainConfig {
        steps,
        batch: 128,
        learning_rate: 3e-3,
        lambda: 1.0,
        anneal: None,
        seed: Seed::new(seed),
        stop_gradient_mu: false,
    };

    // plain noise trains to the quadrature optimum
    let g03 = Gaussian1D::new(0.0, 0.3).unwrap();
    let (_, out) = train_synthesis_sized(
        &SurrogateSpec::aun(),
        &SimSource::Scalar(g03),
        &cfg(77, 6000),
        &[16, 16],
        200_000,
    )
    .unwrap();
    let bayes = bayes_distortion_aun(&g03).unwrap();
    let rel = (out.d_tilde - bayes).abs() / bayes;
    assert!(rel < 0.05, "trained {} vs optimum {bayes} (rel {rel:.3})", out.d_tilde);

    // the smooth bijection leaks the input and the trained error collapses
    let (_, sha_out) = train_synthesis_sized(
        &SurrogateSpec::sha(5.0).unwrap(),
        &SimSource::Scalar(Gaussian1D::new(0.0, 0.5).unwrap()),
        &cfg(13, 9000),
        &[32, 32],
        200_000,
    )
    .unwrap();
    assert!(sha_out.delta_d_rel <= -0.9, "collapse delta {}", sha_out.delta_d_rel);

    // estimation error grows when rounding dominates the latent scale
    let (_, coarse) = train_synthesis_sized(
        &SurrogateSpec::aun(),
        &SimSource::Scalar(Gaussian1D::new(0.0, 1.0).unwrap()),
        &cfg(0, 6000),
        &[16, 16],
        200_000,
    )
    .unwrap();
    let (_, fine) = train_synthesis_sized(
        &SurrogateSpec::aun(),
        &SimSource::Scalar(Gaussian1D::new(0.25, 0.1).unwrap()),
        &cfg(0, 6000),
        &[16, 16],
        200_000,
    )
    .unwrap();
    assert!(
        coarse.delta_d_rel.abs() < fine.delta_d_rel.abs(),
        "mismatch should grow at small sigma: {} vs {}",
        coarse.delta_d_rel,
        fine.delta_d_rel
    );
    println!(
        "criterion 08 PASS: optimum rel {rel:.3}, collapse {:.3}, mismatch {:.4} < {:.4}",
        sha_out.delta_d_rel,
        coarse.delta_d_rel.abs(),
        fine.delta_d_rel.abs()
    );
}

// ---------------------------------------------------------------------------
// 9. Rate estimation error surfaces and the rate-optimal model point.
// ---------------------------------------------------------------------------

#[test]
fn criterion_09_rate_error_surfaces() {
    let source = Gaussian1D::new(0.0, 0.3).unwrap();
    let mu_grid = default_mu_grid(0.0);
    let sigma_grid = default_sigma_grid();
    let quad = Quadrature::default();
    let aun = rate_surface(
        &SurrogateSpec::aun(),
        &source,
        &mu_grid,
        &sigma_grid,
        1e-6,
        &quad,
        200_000,
        Seed::new(0),
    )
    .unwrap();
    let sua = rate_surface(
        &SurrogateSpec::sua(12.0).unwrap(),
        &source,
        &mu_grid,
        &sigma_grid,
        1e-6,
        &quad,
        200_000,
        Seed::new(0),
    )
    .unwrap();

    // model mean 0 is the center of the default grid
    let mi = mu_grid.len() / 2;
    assert!((mu_grid[mi]).abs() < 1e-12);
    let dr_tight = aun.delta_r[mi][0].abs();
    let dr_wide = aun.delta_r[mi][sigma_grid.len() - 1].abs();
    assert!(
        dr_tight > dr_wide + 0.5,
        "|dR| at sigma_q 0.05 should dominate: {dr_tight} vs {dr_wide}"
    );

    let max_abs = |s: &Vec<Vec<f64>>| {
        s.iter().flatten().fold(0.0f64, |m, &v| m.max(v.abs()))
    };
    let (m_aun, m_sua) = (max_abs(&aun.delta_r), max_abs(&sua.delta_r));
    assert!(
        m_sua < m_aun,
        "sharp annealed forward should track rounding closer: {m_sua} vs {m_aun}"
    );

    // one grid step in each direction
    let step = 0.05f64;
    assert!(
        aun.q_star_distance <= (2.0 * step * step).sqrt() + 1e-9,
        "rate-optimal point {} bits at ({}, {}), distance {}",
        aun.q_star.rate,
        aun.q_star.mu,
        aun.q_star.scale,
        aun.q_star_distance
    );
    println!(
        "criterion 09 PASS: |dR| {dr_tight:.2} > {dr_wide:.2} + 0.5, max|dR| sua {m_sua:.2} < aun {m_aun:.2}, q* at ({:.2}, {:.2})",
        aun.q_star.mu, aun.q_star.scale
    );
}

// ---------------------------------------------------------------------------
// 10. Low-rate training: exact expected gradients vs straight-through.
// ---------------------------------------------------------------------------

#[test]
fn criterion_10_nonlinear_rd_estimator_gap() {
    let lambda = [0.005];
    let run_one = |kind: TransformKind, rule: GradRule, seed: u64| {
        let cfg = TrainConfig {
            steps: 8000,
            batch: 64,
            learning_rate: 1e-3,
            lambda: 1.0,
            anneal: None,
            seed: Seed::new(seed),
            stop_gradient_mu: false,
        };
        train_laplace_rd(kind, rule, &lambda, &cfg, 100_000).unwrap().remove(0)
    };
    let mut report = Vec::new();
    for (kind, name, expect_gap) in [
        (TransformKind::Residual, "residual", true),
        (TransformKind::Linear, "linear", false),
    ] {
        let mut gap_sum = 0.0;
        let mut se_sq = 0.0;
        for s in 0..3u64 {
            let ste = run_one(kind, GradRule::Ste, 40 + s);
            let ep = run_one(kind, GradRule::Ep, 40 + s);
            gap_sum += ste.loss - ep.loss;
            se_sq += ste.loss_se * ste.loss_se + ep.loss_se * ep.loss_se;
        }
        let mean_gap = gap_sum / 3.0;
        let pooled_se = se_sq.sqrt() / 3.0;
        if expect_gap {
            assert!(
                mean_gap > 3.0 * pooled_se,
                "{name}: expected straight-through to trail, gap {mean_gap} vs 3 se {}",
                3.0 * pooled_se
            );
        } else {
            assert!(
                mean_gap.abs() <= 3.0 * pooled_se,
                "{name}: rules should agree, gap {mean_gap} vs 3 se {}",
                3.0 * pooled_se
            );
        }
        report.push(format!("{name} gap {mean_gap:.2e} (3 se {:.2e})", 3.0 * pooled_se));
    }
    println!("criterion 10 PASS: {}", report.join("; "));
}

// ---------------------------------------------------------------------------
// 11. Scale lower-bound sweep: best loss sits in the middle window.
// ---------------------------------------------------------------------------

#[test]
fn criterion_11_scale_bound_window() {
    let p = lower_bound_sweep::Params {
        lambda_grid: vec![1.0],
        ..lower_bound_sweep::Params::default()
    };
    let table = lower_bound_sweep::run(&p, 2, "acceptance").unwrap();
    let mut losses: Vec<(f64, f64)> = Vec::new();
    for row in &table.rows {
        losses.push((cell_f(&row[1]), cell_f(&row[2])));
    }
    assert_eq!(losses.len(), 5);
    let loss_at = |floor: f64| {
        losses
            .iter()
            .find(|(f, _)| (f - floor).abs() < 1e-12)
            .unwrap_or_else(|| panic!("no row for floor {floor}"))
            .1
    };
    let global_best = losses.iter().map(|&(_, l)| l).fold(f64::INFINITY, f64::min);
    let window_best = [0.05, 0.11, 0.16]
        .iter()
        .map(|&f| loss_at(f))
        .fold(f64::INFINITY, f64::min);
    assert!(
        window_best <= global_best + 1e-9,
        "best bound should sit in [0.05, 0.16]: window {window_best} vs global {global_best}"
    );
    let right = loss_at(0.25);
    assert!(
        right >= window_best + 0.005,
        "over-tight bound should cost measurably: {right} vs {window_best}"
    );
    println!(
        "criterion 11 PASS: window best {window_best:.5} = global best, bound 0.25 worse by {:.4}",
        right - window_best
    );
}

// ---------------------------------------------------------------------------
// 12. Reruns with identical config and seed are byte-identical.
// ---------------------------------------------------------------------------

#[test]
fn criterion_12_byte_identical_reruns() {
    let mi_params = mutual_info::Params {
        calcs: vec!["round".into(), "aun".into(), "sua:8".into()],
        mu_grid: vec![0.0, 0.25],
        sigma_min: 0.1,
        sigma_max: 1.0,
        sigma_points: 6,
    };
    let a = mutual_info::run(&mi_params, 9, "cfg").unwrap();
    let b = mutual_info::run(&mi_params, 9, "cfg").unwrap();
    assert!(!a.rows.is_empty());
    assert_eq!(a.csv_body(), b.csv_body(), "quadrature experiment should rerun identically");

    // sampling-based experiment: parallel execution must not leak into results
    let gs_params = grad_stats::Params {
        estimators: vec!["pge/aun".into(), "ste/sua:5".into()],
        sigma_q: vec![0.3],
        n_inputs: 16,
        n_trials: 256,
        ..grad_stats::Params::default()
    };
    let c = grad_stats::run(&gs_params, 4, "cfg").unwrap();
    let d = grad_stats::run(&gs_params, 4, "cfg").unwrap();
    assert_eq!(c.csv_body(), d.csv_body(), "sampled experiment should rerun identically");
    println!(
        "criterion 12 PASS: {} + {} rows byte-identical across reruns",
        a.rows.len(),
        c.rows.len()
    );
}
