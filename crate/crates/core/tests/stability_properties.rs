use levcycle::eigen::{eigenpairs, eigenvalues, C64};
use levcycle::experiments::{bifurcation_scan, theta_sweep};
use levcycle::model::{ModelParams, State};
use levcycle::stability::{
    alpha_for_leverage, analyze, classify_regime, critical_alpha, fixed_point, jacobian,
    lyapunov_clone, lyapunov_leading, reduced_jacobian,
    spectral_radius_at_fixed_point, stochastic_critical_leverage, LyapunovSpec, Regime,
    DEFAULT_FD_STEP,
};
use levcycle::stochastic::GarchParams;
use nalgebra::DMatrix;
use proptest::prelude::*;

fn matrix(n: usize) -> impl Strategy<Value = DMatrix<f64>> {
    proptest::collection::vec(-10.0f64..10.0, n * n)
        .prop_map(move |v| DMatrix::from_row_slice(n, n, &v))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn eigenvalue_product_is_determinant(m in matrix(6)) {
        let det = m.clone().lu().determinant();
        let prod = eigenvalues(&m).unwrap().iter().fold(C64::new(1.0, 0.0), |a, e| a * e);
        let scale = det.abs().max(1e-3);
        prop_assert!((prod.re - det).abs() / scale < 1e-6, "{prod} vs {det}");
        prop_assert!(prod.im.abs() / scale < 1e-6);
    }

    #[test]
    fn eigenvalue_sum_is_trace(m in matrix(6)) {
        let sum = eigenvalues(&m).unwrap().iter().fold(C64::new(0.0, 0.0), |a, e| a + e);
        prop_assert!((sum.re - m.trace()).abs() < 1e-9 * m.norm().max(1.0));
        prop_assert!(sum.im.abs() < 1e-9 * m.norm().max(1.0));
    }

    #[test]
    fn every_eigenpair_has_small_residual(m in matrix(6)) {
        let tol = 1e-8 * m.norm().max(1.0);
        for pair in eigenpairs(&m).unwrap() {
            prop_assert!(pair.residual < tol, "residual {}", pair.residual);
        }
    }

    #[test]
    fn model_jacobians_have_small_residuals(alpha in 0.001f64..0.2, b in -0.5f64..0.5) {
        let params = ModelParams::default().with_alpha(alpha).with_b(b);
        let fp = fixed_point(&params).unwrap();
        let jac = jacobian(&params, &fp.state, DEFAULT_FD_STEP).unwrap();
        let tol = 1e-8 * jac.norm().max(1.0);
        for pair in eigenpairs(&jac).unwrap() {
            prop_assert!(pair.residual < tol);
        }
    }
}

#[test]
fn spectral_radius_is_transverse_maximum() {
    let params = ModelParams::default().with_alpha(0.005);
    let report = analyze(&params, None).unwrap();
    let max_transverse = report.transverse.iter().map(|e| e.norm()).fold(0.0, f64::max);
    assert_eq!(report.spectral_radius, max_transverse);
    // The full spectrum adds only the neutral fund-weight direction.
    assert!(report.eigenvalues.iter().any(|e| (e - C64::new(1.0, 0.0)).norm() < 1e-6));
    let fp = fixed_point(&params).unwrap();
    let jac = jacobian(&params, &fp.state, DEFAULT_FD_STEP).unwrap();
    assert_eq!(reduced_jacobian(&jac).nrows(), 5);
}

#[test]
fn critical_point_brackets_and_bisects() {
    let params = ModelParams::default();
    let cp = critical_alpha(&params, -0.5).unwrap();
    let radius = |a: f64| spectral_radius_at_fixed_point(&params.with_alpha(a)).unwrap();
    assert!(radius(cp.alpha_c / 2.0) < 1.0);
    assert!(radius(cp.alpha_c * 2.0) > 1.0);
    assert!((radius(cp.alpha_c) - 1.0).abs() < 1e-3);
}

#[test]
fn critical_leverage_same_for_opposite_cyclicality() {
    let params = ModelParams::default();
    let lo = critical_alpha(&params, -0.5).unwrap().lambda_c;
    let hi = critical_alpha(&params, 0.3).unwrap().lambda_c;
    assert!((lo / hi - 1.0).abs() < 0.02, "{lo} vs {hi}");
}

#[test]
fn critical_leverage_falls_with_adjustment_speed() {
    let rows = theta_sweep(&[0.5, 0.95, 1.5], &ModelParams::default());
    let cps: Vec<_> = rows.iter().map(|r| r.critical.clone().unwrap()).collect();
    for w in cps.windows(2) {
        assert!(w[1].lambda_c < w[0].lambda_c);
        assert!(w[1].r_c < w[0].r_c);
    }
}

#[test]
fn faster_adjustment_does_not_stabilize_a_cycle() {
    let params = ModelParams::default().with_alpha(0.02);
    assert_eq!(classify_regime(&params), Regime::Cycles);
    let mut faster = params;
    faster.theta *= 2.0;
    assert_ne!(classify_regime(&faster), Regime::Stable);
}

#[test]
fn regime_examples() {
    let base = ModelParams::default();
    assert_eq!(classify_regime(&base.with_alpha(0.005)), Regime::Stable);
    assert_eq!(classify_regime(&base), Regime::Cycles);
    let strong = base.with_b(0.4);
    let alpha = alpha_for_leverage(&strong, 20.0);
    assert_eq!(classify_regime(&strong.with_alpha(alpha)), Regime::GloballyUnstable);
}

#[test]
fn bifurcation_columns() {
    let levs: Vec<f64> = (0..29).map(|k| 1.25f64.powi(k)).collect();
    let table = bifurcation_scan(&[-0.5, 0.4], &levs, &ModelParams::default());
    let column = |b: f64| -> Vec<Regime> {
        table
            .cells
            .iter()
            .filter(|c| c.b == b)
            .map(|c| c.regime)
            .collect()
    };
    let rank = |r: &Regime| match r {
        Regime::Stable => 0,
        Regime::Cycles => 1,
        Regime::GloballyUnstable => 2,
    };
    let procyclical = column(-0.5);
    assert_eq!(procyclical[0], Regime::Stable);
    assert!(procyclical.contains(&Regime::Cycles));
    assert_eq!(*procyclical.last().unwrap(), Regime::GloballyUnstable);
    assert!(procyclical.windows(2).all(|w| rank(&w[0]) <= rank(&w[1])));
    let countercyclical = column(0.4);
    assert_eq!(countercyclical[0], Regime::Stable);
    let cycles = countercyclical.iter().filter(|r| **r == Regime::Cycles).count();
    assert!(cycles <= procyclical.iter().filter(|r| **r == Regime::Cycles).count());
    assert!(cycles <= 2, "cycles band of {cycles} cells");
    assert!(table.boundary.iter().all(|(_, r)| r.is_ok()));
}

fn deterministic(n_steps: usize) -> LyapunovSpec {
    LyapunovSpec {
        garch: GarchParams::zero(),
        seed: 0,
        n_steps,
        burn_in: n_steps / 10,
    }
}

#[test]
fn exponent_sign_follows_regime() {
    for alpha in [0.002, 0.005, 0.008, 0.03, 0.05, 0.075] {
        let params = ModelParams::default().with_alpha(alpha);
        let report = analyze(&params, Some(20_000)).unwrap();
        let lyap = report.lyapunov.unwrap();
        match report.regime {
            Regime::Stable => assert!(lyap < 0.0, "alpha {alpha}: {lyap}"),
            Regime::Cycles => assert!(lyap > 0.0, "alpha {alpha}: {lyap}"),
            Regime::GloballyUnstable => panic!("alpha {alpha} unexpectedly unstable"),
        }
    }
}

#[test]
fn clone_method_agrees_on_the_attractor() {
    let params = ModelParams::default();
    let start = State::initial(&params);
    let spec = deterministic(20_000);
    let tangent = lyapunov_leading(&params, &start, &spec).exponent;
    let clone = lyapunov_clone(&params, &start, &spec).exponent;
    assert!(tangent > 0.0 && clone > 0.0);
    assert!((tangent - clone).abs() / tangent < 0.2, "{tangent} vs {clone}");
}

#[test]
fn clone_method_agrees_under_noise() {
    let params = ModelParams::default();
    let start = State::initial(&params);
    let spec = LyapunovSpec {
        garch: GarchParams::default(),
        seed: 3,
        n_steps: 20_000,
        burn_in: 2_000,
    };
    let tangent = lyapunov_leading(&params, &start, &spec);
    let clone = lyapunov_clone(&params, &start, &spec);
    assert!(tangent.reliable && clone.reliable);
    assert_eq!(tangent.exponent > 0.0, clone.exponent > 0.0);
    assert!(
        (tangent.exponent - clone.exponent).abs() / tangent.exponent.abs() < 0.2,
        "{} vs {}",
        tangent.exponent,
        clone.exponent
    );
}

#[test]
fn zero_noise_threshold_is_deterministic_threshold() {
    let params = ModelParams::default();
    let det = critical_alpha(&params, -0.5).unwrap();
    let zero = GarchParams::new(0.0, 0.016, 0.87).unwrap();
    let th = stochastic_critical_leverage(&params, -0.5, &zero, &[1, 2, 3], 5_000, 500, 1e-3)
        .unwrap();
    assert!(
        (th.alpha / det.alpha_c - 1.0).abs() < 1e-2,
        "{} vs {}",
        th.alpha,
        det.alpha_c
    );
}
