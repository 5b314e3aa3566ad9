use cbdi::drift::DriftSpec;
use cbdi::mechanism::{LevyMeasure, Mechanism};
use cbdi::passage::{cdi_certificate, clopper_pearson_upper, first_passage, mean_hitting, Direction};
use cbdi::simulator::{PathRecord, SimConfig, Simulator, Status};
use proptest::prelude::*;

fn cfg(dt: f64, t_max: f64, n_paths: usize, seed: u64) -> SimConfig {
    SimConfig {
        dt,
        t_max,
        n_paths,
        seed,
        ..SimConfig::default()
    }
}

/// Positive root of Ψ by bisection.
fn psi_root(m: &Mechanism) -> f64 {
    let (mut lo, mut hi) = (1e-6, 1e3);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if m.psi_eval(mid).unwrap() < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

#[test]
fn supercritical_survival_matches_psi_root() {
    let m = Mechanism::new(1.0, -1.0, LevyMeasure::zero()).unwrap();
    let q = psi_root(&m);
    assert!((q - 2.0).abs() < 1e-9);
    let survival = 1.0 - (-q).exp();
    let d = DriftSpec::zero();
    let n = 2000;
    let sim = Simulator::new(&m, &d, cfg(1e-3, 15.0, n, 21)).unwrap();
    let e = mean_hitting(&sim, 1.0, 0.0, Direction::Below).unwrap();
    let se = (survival * (1.0 - survival) / n as f64).sqrt();
    assert!(
        (e.censored_fraction - survival).abs() <= 3.0 * se,
        "{} vs {survival}",
        e.censored_fraction
    );
}

#[test]
fn subcritical_extinction_uncensored_for_long_horizons() {
    let m = Mechanism::new(1.0, 1.0, LevyMeasure::zero()).unwrap();
    let d = DriftSpec::zero();
    let short = Simulator::new(&m, &d, cfg(1e-3, 0.5, 500, 22)).unwrap();
    let long = Simulator::new(&m, &d, cfg(1e-3, 8.0, 500, 22)).unwrap();
    let a = mean_hitting(&short, 1.0, 0.0, Direction::Below).unwrap();
    let b = mean_hitting(&long, 1.0, 0.0, Direction::Below).unwrap();
    assert!(b.censored_fraction <= a.censored_fraction);
    assert!(b.censored_fraction < 0.01, "{}", b.censored_fraction);
}

#[test]
fn hitting_time_decreases_in_level() {
    let m = Mechanism::new(0.5, 0.0, LevyMeasure::point_mass(1.0, 1.0).unwrap()).unwrap();
    let d = DriftSpec::logistic(2.0, None).unwrap();
    let sim = Simulator::new(&m, &d, cfg(1e-3, 5.0, 400, 23)).unwrap();
    let means: Vec<f64> = [0.5, 1.0, 2.0, 4.0]
        .iter()
        .map(|&a| mean_hitting(&sim, 10.0, a, Direction::Below).unwrap().mean)
        .collect();
    assert!(means.windows(2).all(|w| w[0] >= w[1]), "{means:?}");
}

#[test]
fn linear_drift_does_not_saturate() {
    let m = Mechanism::new(0.0, 0.0, LevyMeasure::zero()).unwrap();
    let d = DriftSpec::linear(1.0, None).unwrap();
    let sim = Simulator::new(&m, &d, cfg(1e-3, 20.0, 1, 0)).unwrap();
    let r = cdi_certificate(&sim, &[10.0, 100.0, 1000.0], 1.0).unwrap();
    // τ = log x exactly
    for (x, e) in r.x_grid.iter().zip(&r.estimates) {
        assert!((e.mean - x.ln()).abs() < 5e-3 * x.ln(), "{x}: {}", e.mean);
    }
    assert!(!r.saturated);
}

#[test]
fn clopper_pearson_zero_successes() {
    for n in [10usize, 1000, 10_000] {
        let want = 1.0 - 0.05f64.powf(1.0 / n as f64);
        let got = clopper_pearson_upper(0, n, 0.95);
        assert!((got - want).abs() < 1e-9 * want.max(1e-3), "{n}: {got} vs {want}");
    }
}

proptest! {
    #[test]
    fn passage_lies_in_crossing_step(
        start in 2.0f64..10.0,
        drops in prop::collection::vec(0.0f64..1.0, 1..30),
        level in 0.5f64..10.0,
    ) {
        let mut values = vec![start];
        for d in &drops {
            let last = *values.last().unwrap();
            values.push(last - d);
        }
        let times: Vec<f64> = (0..values.len()).map(|k| k as f64 * 0.1).collect();
        let p = PathRecord {
            times: times.clone(),
            values: values.clone(),
            status: Status::Alive,
            jumps: vec![],
            jumps_truncated: false,
        };
        match first_passage(&p, level, Direction::Below) {
            None => prop_assert!(values.iter().all(|&x| x > level)),
            Some(t) => {
                let k = values.iter().position(|&x| x <= level).unwrap();
                let lo = if k == 0 { 0.0 } else { times[k - 1] };
                prop_assert!(t >= lo - 1e-12 && t <= times[k] + 1e-12);
                prop_assert!((p.value_at(t) - level).abs() < 1e-9 || k == 0);
            }
        }
    }
}
