use cbdi::drift::DriftSpec;
use cbdi::error::CbdiError;
use cbdi::generator::{apply_generator, drift_criterion_verdict, lyapunov_margin, CustomTf, DriftCriterion, Which};
use cbdi::mechanism::{LevyMeasure, Mechanism};
use proptest::prelude::*;

#[test]
fn identity_generator_is_mean_drift() {
    // f(x) = x: 𝓧f = x(−γ + ∫_{(1,∞)} h π(dh)) − I(x); for u^{-3/2} tails the
    // integral is 3 (and nothing sits at 1 for the open interval).
    let m = Mechanism::new(0.7, 0.4, LevyMeasure::pareto(1.5, 0.0, 1.0, 1.0).unwrap()).unwrap();
    let d = DriftSpec::logistic(2.0, None).unwrap();
    for x in [0.5, 2.0, 30.0] {
        let got = apply_generator(&m, &d, &CustomTf::identity(), x).unwrap();
        let want = x * (-0.4 + 3.0) - x * x;
        assert!((got - want).abs() <= 1e-6 * want.abs().max(1.0), "{x}: {got} vs {want}");
    }
}

#[test]
fn linear_drift_has_no_margin() {
    let m = Mechanism::new(1.0, 0.0, LevyMeasure::zero()).unwrap();
    let d = DriftSpec::linear(1.0, None).unwrap();
    let e = lyapunov_margin(&m, &d, Which::F2, None).unwrap_err();
    assert!(matches!(e, CbdiError::Certification(_)));
    assert_eq!(e.exit_code(), 3);
}

#[test]
fn logistic_with_log_moment_is_certified() {
    let m = Mechanism::new(0.0, 0.0, LevyMeasure::point_mass(std::f64::consts::E, 1.0).unwrap()).unwrap();
    let d = DriftSpec::logistic(2.0, None).unwrap();
    let g = lyapunov_margin(&m, &d, Which::F2, None).unwrap();
    assert!(g.c >= 0.5 && g.threshold.is_finite());
    assert!(matches!(
        drift_criterion_verdict(&m, &d),
        DriftCriterion::CdiByIii { .. }
    ));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn exponential_generator_closed_form(
        sigma in 0.0f64..2.0,
        gamma in -1.0f64..1.0,
        size in 1.0f64..5.0,
        rate in 0.0f64..3.0,
        c in 0.0f64..3.0,
        x in 0.01f64..20.0,
    ) {
        // 𝓧e^{-x} = e^{-x}(x·Ψ(1) + I(x)), with Ψ(1) in closed form
        let levy = if rate > 0.0 { LevyMeasure::point_mass(size, rate).unwrap() } else { LevyMeasure::zero() };
        let m = Mechanism::new(sigma, gamma, levy).unwrap();
        let d = DriftSpec::logistic(c.max(1e-3), None).unwrap();
        let psi1 = 0.5 * sigma * sigma + gamma + rate * ((-size).exp() - 1.0 + if size <= 1.0 { size } else { 0.0 });
        let want = (-x).exp() * (x * psi1 + d.eval(x));
        let got = apply_generator(&m, &d, &CustomTf::exp_neg(), x).unwrap();
        prop_assert!((got - want).abs() <= 1e-7 * want.abs().max(1e-3), "{} vs {}", got, want);
    }
}
