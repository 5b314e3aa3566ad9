//! First-passage times, mean hitting times, explosion frequencies and the
//! coming-down-from-infinity certificate.

use serde::{Deserialize, Serialize};
use statrs::distribution::{Binomial, DiscreteCDF};

use crate::error::{CbdiError, Result};
use crate::simulator::{Observer, PathRecord, SimConfig, Simulator, Status, StepEvent};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Below,
    Above,
}

/// First passage time from a recorded path; continuous parts are linearly
/// interpolated, jumps cross at their recorded time.
pub fn first_passage(p: &PathRecord, level: f64, direction: Direction) -> Option<f64> {
    let hit = |x: f64| match direction {
        Direction::Below => x <= level,
        Direction::Above => x >= level,
    };
    if hit(p.values[0]) {
        return Some(p.times[0]);
    }
    for k in 1..p.times.len() {
        let (t0, t1) = (p.times[k - 1], p.times[k]);
        let (x0, x1) = (p.values[k - 1], p.values[k]);
        if !hit(x1) {
            continue;
        }
        if direction == Direction::Above {
            let inside: Vec<&(f64, f64)> = p.jumps.iter().filter(|j| j.0 > t0 && j.0 <= t1).collect();
            if !inside.is_empty() {
                let mut y = x0;
                for j in &inside {
                    y += j.1;
                    if y >= level {
                        return Some(j.0);
                    }
                }
                return Some(inside.last().unwrap().0);
            }
            if !x1.is_finite() {
                return Some(t1);
            }
        }
        if t1 == t0 || x1 == x0 {
            return Some(t1);
        }
        return Some(t0 + (t1 - t0) * (x0 - level) / (x0 - x1));
    }
    None
}

/// Full-resolution first passage, recorded during simulation.
#[derive(Clone, Copy, Debug)]
pub struct PassageObserver {
    pub level: f64,
    pub direction: Direction,
    pub hit: Option<f64>,
}

impl PassageObserver {
    pub fn new(level: f64, direction: Direction) -> Self {
        Self {
            level,
            direction,
            hit: None,
        }
    }
}

impl Observer for PassageObserver {
    fn on_step(&mut self, ev: &StepEvent<'_>) {
        if self.hit.is_some() {
            return;
        }
        let a = self.level;
        match self.direction {
            Direction::Below => {
                if ev.x0 <= a {
                    self.hit = Some(ev.t0);
                    return;
                }
                let t_end = match ev.status {
                    Status::Extinct { t } => t,
                    _ => ev.t1,
                };
                if ev.x_cont <= a {
                    self.hit = Some(ev.t0 + (t_end - ev.t0) * (ev.x0 - a) / (ev.x0 - ev.x_cont));
                }
            }
            Direction::Above => {
                if ev.x0 >= a {
                    self.hit = Some(ev.t0);
                    return;
                }
                let h = ev.t1 - ev.t0;
                let mut cum = 0.0;
                for &(tj, sz) in ev.jumps {
                    cum += sz;
                    let cont = ev.x0 + (ev.x_cont - ev.x0) * (tj - ev.t0) / h;
                    if cont + cum >= a {
                        self.hit = Some(tj);
                        return;
                    }
                }
                if let Status::Exploded { t } = ev.status {
                    self.hit = Some(t);
                } else if ev.x_cont >= a {
                    self.hit = Some(ev.t0 + h * (a - ev.x0) / (ev.x_cont - ev.x0));
                } else if ev.x1 >= a {
                    self.hit = Some(ev.t1);
                }
            }
        }
    }

    fn done(&self) -> bool {
        self.hit.is_some()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PassageEstimate {
    pub level: f64,
    pub direction: Direction,
    /// Sample mean; censored paths count as the horizon, so with censoring
    /// this is a lower bound.
    pub mean: f64,
    pub lower_bound: bool,
    /// Every path was censored.
    pub infinite: bool,
    pub stderr: f64,
    pub censored_fraction: f64,
    pub n: usize,
    pub t_max: f64,
}

/// Censoring fraction above which the horizon is doubled.
pub const CENSOR_RERUN: f64 = 0.01;
const MAX_RERUNS: usize = 2;

fn summarise(times: &[Option<f64>], level: f64, direction: Direction, t_max: f64) -> PassageEstimate {
    let n = times.len();
    let censored = times.iter().filter(|t| t.is_none()).count();
    let vals: Vec<f64> = times.iter().map(|t| t.unwrap_or(t_max)).collect();
    let (mean, stderr) = mean_stderr(&vals);
    PassageEstimate {
        level,
        direction,
        mean,
        lower_bound: censored > 0,
        infinite: censored == n,
        stderr,
        censored_fraction: censored as f64 / n.max(1) as f64,
        n,
        t_max,
    }
}

pub fn mean_stderr(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    if v.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (mean, 0.0);
    }
    let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

fn lean(cfg: &SimConfig, t_max: f64) -> SimConfig {
    SimConfig {
        t_max,
        max_records: 2,
        max_recorded_jumps: 0,
        ..cfg.clone()
    }
}

/// Mean of the first passage time over `cfg.n_paths` paths from `x0`.
pub fn mean_hitting(sim: &Simulator<'_>, x0: f64, level: f64, direction: Direction) -> Result<PassageEstimate> {
    if direction == Direction::Below && !(level < x0) {
        return Err(CbdiError::InvalidParameter(format!(
            "level {level} must lie below x0 = {x0}"
        )));
    }
    let mut t_max = sim.cfg.t_max;
    let mut est = None;
    for _ in 0..=MAX_RERUNS {
        let s = sim.with_config(lean(&sim.cfg, t_max))?;
        let times = s.ensemble(sim.cfg.n_paths, |i| {
            let mut ob = PassageObserver::new(level, direction);
            s.simulate_path_observed(x0, i, &mut ob)?;
            Ok(ob.hit)
        })?;
        let e = summarise(&times, level, direction, t_max);
        let again = e.censored_fraction > CENSOR_RERUN;
        est = Some(e);
        if !again {
            break;
        }
        t_max *= 2.0;
    }
    Ok(est.unwrap())
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CdiReport {
    pub level: f64,
    pub x_grid: Vec<f64>,
    pub estimates: Vec<PassageEstimate>,
    /// `mean(x_last) − mean(x_prev)` and the standard error of the paired
    /// difference.
    pub last_increment: f64,
    pub last_increment_stderr: f64,
    pub saturated: bool,
    pub limit: f64,
}

/// Mean `τ_a^−` along `x_grid` under coupled noise, with a saturation test on
/// the last two grid levels: `|Δ| ≤ max(3σ_Δ, 1e-3)`.
pub fn cdi_certificate(sim: &Simulator<'_>, x_grid: &[f64], level: f64) -> Result<CdiReport> {
    if x_grid.is_empty() || !(level < x_grid[0]) {
        return Err(CbdiError::InvalidParameter(
            "level must lie below the smallest grid start".into(),
        ));
    }
    let k = x_grid.len();
    let mut t_max = sim.cfg.t_max;
    let mut rows: Vec<Vec<Option<f64>>>;
    let mut reruns = 0;
    loop {
        let s = sim.with_config(lean(&sim.cfg, t_max))?;
        rows = s.ensemble(sim.cfg.n_paths, |b| {
            let mut obs: Vec<PassageObserver> = x_grid
                .iter()
                .map(|_| PassageObserver::new(level, Direction::Below))
                .collect();
            let mut refs: Vec<&mut dyn Observer> = obs.iter_mut().map(|o| o as &mut dyn Observer).collect();
            let members: Vec<_> = x_grid.iter().map(|&x| (x, s.d)).collect();
            s.simulate_coupled_members(&members, b, &mut refs)?;
            Ok(obs.iter().map(|o| o.hit).collect())
        })?;
        let censored = rows.iter().flatten().filter(|t| t.is_none()).count() as f64 / (rows.len() * k) as f64;
        if censored <= CENSOR_RERUN || reruns == MAX_RERUNS {
            break;
        }
        reruns += 1;
        t_max *= 2.0;
    }
    let estimates: Vec<PassageEstimate> = (0..k)
        .map(|i| {
            let col: Vec<Option<f64>> = rows.iter().map(|r| r[i]).collect();
            summarise(&col, level, Direction::Below, t_max)
        })
        .collect();
    for i in 1..k {
        let (a, b) = (&estimates[i - 1], &estimates[i]);
        let tol = 3.0 * (a.stderr.powi(2) + b.stderr.powi(2)).sqrt() + 1e-9 * a.mean.abs().max(1.0);
        if b.mean < a.mean - tol {
            return Err(CbdiError::Consistency(format!(
                "mean hitting time decreases from {} (x = {}) to {} (x = {})",
                a.mean,
                x_grid[i - 1],
                b.mean,
                x_grid[i]
            )));
        }
    }
    let (last_increment, last_increment_stderr) = if k >= 2 {
        let diffs: Vec<f64> = rows
            .iter()
            .map(|r| r[k - 1].unwrap_or(t_max) - r[k - 2].unwrap_or(t_max))
            .collect();
        mean_stderr(&diffs)
    } else {
        (f64::NAN, f64::NAN)
    };
    let saturated = last_increment.abs() <= (3.0 * last_increment_stderr).max(1e-3);
    Ok(CdiReport {
        level,
        x_grid: x_grid.to_vec(),
        limit: estimates[k - 1].mean,
        estimates,
        last_increment,
        last_increment_stderr,
        saturated,
    })
}

/// One-sided Clopper–Pearson upper confidence bound for a binomial
/// proportion: the `p` with `P(Bin(n, p) ≤ k) = 1 − confidence`.
pub fn clopper_pearson_upper(k: usize, n: usize, confidence: f64) -> f64 {
    if k >= n {
        return 1.0;
    }
    let alpha = 1.0 - confidence;
    let cdf = |p: f64| Binomial::new(p, n as u64).map(|b| b.cdf(k as u64)).unwrap_or(f64::NAN);
    let (mut lo, mut hi) = (k as f64 / n as f64, 1.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if cdf(mid) > alpha {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-15 * hi {
            break;
        }
    }
    0.5 * (lo + hi)
}

pub const CP_CONFIDENCE: f64 = 0.95;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CapResult {
    pub cap: f64,
    pub exploded: usize,
    pub fraction: f64,
    pub stderr: f64,
    pub cp_upper: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ExplosionReport {
    pub x0: f64,
    pub n: usize,
    pub t_max: f64,
    pub caps: Vec<CapResult>,
    /// `|f₂ − f₁| / f₁`, or 0 when neither cap saw an explosion.
    pub cap_relative_change: f64,
}

/// Fraction of paths reaching `x_explode` and `10·x_explode` before `t_max`.
pub fn explosion_probe(sim: &Simulator<'_>, x0: f64) -> Result<ExplosionReport> {
    let n = sim.cfg.n_paths;
    let mut caps = Vec::new();
    for cap in [sim.cfg.x_explode, 10.0 * sim.cfg.x_explode] {
        let s = sim.with_config(SimConfig {
            x_explode: cap,
            ..lean(&sim.cfg, sim.cfg.t_max)
        })?;
        let flags = s.ensemble(n, |i| {
            let p = s.simulate_path(x0, i)?;
            Ok(matches!(p.status, Status::Exploded { .. }))
        })?;
        let k = flags.iter().filter(|&&f| f).count();
        let f = k as f64 / n as f64;
        caps.push(CapResult {
            cap,
            exploded: k,
            fraction: f,
            stderr: (f * (1.0 - f) / n as f64).sqrt(),
            cp_upper: clopper_pearson_upper(k, n, CP_CONFIDENCE),
        });
    }
    let cap_relative_change = if caps[0].exploded == 0 && caps[1].exploded == 0 {
        0.0
    } else {
        (caps[1].fraction - caps[0].fraction).abs() / caps[0].fraction
    };
    Ok(ExplosionReport {
        x0,
        n,
        t_max: sim.cfg.t_max,
        caps,
        cap_relative_change,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::drift::DriftSpec;
    use crate::mechanism::{LevyMeasure, Mechanism};

    fn record(times: &[f64], values: &[f64]) -> PathRecord {
        PathRecord {
            times: times.to_vec(),
            values: values.to_vec(),
            status: Status::Alive,
            jumps: vec![],
            jumps_truncated: false,
        }
    }

    #[test]
    fn passage_from_records() {
        let p = record(&[0.0, 1.0, 2.0], &[5.0, 3.0, 1.0]);
        assert_eq!(first_passage(&p, 5.0, Direction::Below), Some(0.0));
        assert_eq!(first_passage(&p, 2.0, Direction::Below), Some(1.5));
        assert_eq!(first_passage(&p, 0.5, Direction::Below), None);
        let mut q = record(&[0.0, 1.0, 1.5, 2.0], &[1.0, 2.0, f64::INFINITY, f64::INFINITY]);
        q.status = Status::Exploded { t: 1.5 };
        let t = first_passage(&q, 1e6, Direction::Above).unwrap();
        assert!(t <= 1.5);
    }

    #[test]
    fn deterministic_mean_hitting() {
        let m = Mechanism::new(0.0, 0.0, LevyMeasure::zero()).unwrap();
        let d = DriftSpec::power_log(1.0, 2.0, 0.0, Some(1.0)).unwrap();
        let cfg = SimConfig {
            dt: 1e-4,
            t_max: 2.0,
            n_paths: 4,
            ..SimConfig::default()
        };
        let sim = Simulator::new(&m, &d, cfg).unwrap();
        let e = mean_hitting(&sim, 10.0, 1.0, Direction::Below).unwrap();
        assert!((e.mean - 0.9).abs() < 1e-3, "{e:?}");
        assert_eq!(e.stderr, 0.0);
        assert_eq!(e.censored_fraction, 0.0);
    }

    #[test]
    fn clopper_pearson_zero_hits() {
        let u = clopper_pearson_upper(0, 10_000, 0.95);
        assert!((u - (1.0 - 0.05f64.powf(1e-4))).abs() < 1e-9, "{u:e}");
        assert!(u < 1e-3);
        assert_eq!(clopper_pearson_upper(5, 5, 0.95), 1.0);
    }

    #[test]
    fn cdi_certificate_square_flow() {
        let m = Mechanism::new(0.0, 0.0, LevyMeasure::zero()).unwrap();
        let d = DriftSpec::power_log(1.0, 2.0, 0.0, Some(1.0)).unwrap();
        let cfg = SimConfig {
            dt: 1e-4,
            t_max: 2.0,
            n_paths: 2,
            ..SimConfig::default()
        };
        let sim = Simulator::new(&m, &d, cfg).unwrap();
        let r = cdi_certificate(&sim, &[10.0, 100.0, 1e4, 1e6], 1.0).unwrap();
        for (e, x) in r.estimates.iter().zip(&r.x_grid) {
            assert!((e.mean - (1.0 - 1.0 / x)).abs() < 1e-3, "{e:?}");
        }
        assert!(r.saturated);
        assert!((r.limit - 1.0).abs() < 1e-3);
    }
}
