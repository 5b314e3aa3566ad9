//! Euler scheme with compensated small jumps and thinned large jumps.
//!
//! At state `x` and sub-step `h` with jump cutoff `c`:
//! * deterministic part `−(γx + I(x))h − x·k(c)·h`, where `k(c) = m₁[c,1]`
//!   compensates the simulated jumps in `[c,1]` (and `k(c) = −m₁(1,c)` adds
//!   back the mean of Gaussianised jumps in `(1,c)` when `c > 1`);
//! * Gaussian part of variance `x·v(c)·h`, `v(c) = σ² + 1{gauss}·m₂(0,ε) + m₂[ε,c)`;
//! * a Poisson number of jumps of mean `x·π̄(c)·h`, sizes drawn above `c`.
//!
//! Normally `c = ε`. Sub-steps `dt/2^k` are taken when the relative drift,
//! the monotonicity of the drift map or the jump rate per step demand it;
//! when the rate is still too high after `max_halvings` halvings the cutoff
//! climbs the ladder `ε·2^{j/4}` (or the step fails, if disabled).

use rand::Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::drift::DriftSpec;
use crate::error::{CbdiError, Result};
use crate::mechanism::Mechanism;
use crate::rng::{StreamKey, Streams};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub dt: f64,
    pub eps_jump: f64,
    pub gaussian_small_jumps: bool,
    pub x_explode: f64,
    pub t_max: f64,
    pub seed: u64,
    pub n_paths: usize,
    /// Largest relative change of the state per sub-step from the drift.
    pub drift_tol: f64,
    /// Halvings allowed to bring the jump rate per step under the limit.
    pub max_halvings: u32,
    pub adaptive_cutoff: bool,
    /// Recorded points per path (at least the endpoints).
    pub max_records: usize,
    pub max_recorded_jumps: usize,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            dt: 1e-3,
            eps_jump: 0.1,
            gaussian_small_jumps: true,
            x_explode: 1e12,
            t_max: 1.0,
            seed: 0,
            n_paths: 1000,
            drift_tol: 5e-4,
            max_halvings: 20,
            adaptive_cutoff: true,
            max_records: 10_000,
            max_recorded_jumps: 10_000,
        }
    }
}

/// Jumps expected per sub-step above which the step is refined.
pub const MAX_RATE_PER_STEP: f64 = 10.0;
const MAX_DRIFT_HALVINGS: u32 = 48;

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(CbdiError::Config(m.to_string()));
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return bad("sim.dt must be > 0");
        }
        if !(self.eps_jump > 0.0 && self.eps_jump <= 1.0) {
            return bad("sim.eps_jump must lie in (0, 1]");
        }
        if !(self.x_explode > 0.0) {
            return bad("sim.x_explode must be > 0");
        }
        if !(self.t_max > 0.0 && self.t_max.is_finite()) {
            return bad("sim.t_max must be > 0");
        }
        if !(self.drift_tol > 0.0) {
            return bad("sim.drift_tol must be > 0");
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum Status {
    Alive,
    Extinct { t: f64 },
    Exploded { t: f64 },
}

impl Status {
    pub fn is_alive(&self) -> bool {
        matches!(self, Status::Alive)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PathRecord {
    pub times: Vec<f64>,
    /// `f64::INFINITY` after explosion.
    pub values: Vec<f64>,
    pub status: Status,
    pub jumps: Vec<(f64, f64)>,
    pub jumps_truncated: bool,
}

impl PathRecord {
    /// Value at `t`, linearly interpolated between records.
    pub fn value_at(&self, t: f64) -> f64 {
        let k = self.times.partition_point(|&s| s < t);
        if k == 0 {
            return self.values[0];
        }
        if k == self.times.len() {
            return *self.values.last().unwrap();
        }
        let (t0, t1) = (self.times[k - 1], self.times[k]);
        let (x0, x1) = (self.values[k - 1], self.values[k]);
        if self.times[k] == t || !x0.is_finite() || !x1.is_finite() {
            return if self.times[k] == t { x1 } else { x0 };
        }
        x0 + (x1 - x0) * (t - t0) / (t1 - t0)
    }

    pub fn final_value(&self) -> f64 {
        *self.values.last().unwrap()
    }
}

/// One sub-step of one path, as seen by an [`Observer`].
#[derive(Clone, Copy, Debug)]
pub struct StepEvent<'a> {
    pub t0: f64,
    pub t1: f64,
    pub x0: f64,
    /// End of the continuous part, before jumps (clipped at 0).
    pub x_cont: f64,
    pub x1: f64,
    /// Accepted jumps `(time, size)` in time order.
    pub jumps: &'a [(f64, f64)],
    pub status: Status,
}

pub trait Observer {
    fn on_step(&mut self, ev: &StepEvent<'_>);
    /// Whether the observer no longer needs the path.
    fn done(&self) -> bool {
        false
    }
}

pub struct NullObserver;

impl Observer for NullObserver {
    fn on_step(&mut self, _: &StepEvent<'_>) {}
}

/// `∫_0^{t} g(X_s) ds` by the trapezoid rule on sub-steps (continuous part).
pub struct IntegralObserver<G: Fn(f64) -> f64> {
    pub g: G,
    pub t_end: f64,
    pub value: f64,
}

impl<G: Fn(f64) -> f64> IntegralObserver<G> {
    pub fn new(g: G, t_end: f64) -> Self {
        Self { g, t_end, value: 0.0 }
    }
}

impl<G: Fn(f64) -> f64> Observer for IntegralObserver<G> {
    fn on_step(&mut self, ev: &StepEvent<'_>) {
        if ev.t0 >= self.t_end {
            return;
        }
        let t1 = ev.t1.min(self.t_end);
        let end = if ev.status.is_alive() { ev.x1 } else { ev.x_cont };
        self.value += 0.5 * (t1 - ev.t0) * ((self.g)(ev.x0) + (self.g)(end));
    }
}

#[derive(Clone, Copy, Debug)]
struct Level {
    cutoff: f64,
    rate: f64,
    comp: f64,
    var: f64,
}

fn build_ladder(m: &Mechanism, cfg: &SimConfig) -> Result<Vec<Level>> {
    let levy = &m.levy;
    let eps = cfg.eps_jump;
    let s2 = m.sigma * m.sigma;
    if levy.is_zero() {
        return Ok(vec![Level {
            cutoff: eps,
            rate: 0.0,
            comp: 0.0,
            var: s2,
        }]);
    }
    let below = if cfg.gaussian_small_jumps {
        levy.moment(2.0, 0.0, false, eps, false)?.value()
    } else {
        0.0
    };
    let mut ladder = Vec::new();
    for j in 0..=240 {
        let c = eps * 2f64.powf(j as f64 / 4.0);
        let comp = if c < 1.0 {
            levy.moment(1.0, c, true, 1.0, true)?.value()
        } else if c > 1.0 {
            -levy.moment(1.0, 1.0, false, c, false)?.value()
        } else {
            levy.tail(1.0) - levy.tail_right(1.0)
        };
        let gauss = if j == 0 {
            0.0
        } else {
            levy.moment(2.0, eps, true, c, false)?.value()
        };
        let rate = levy.tail(c);
        ladder.push(Level {
            cutoff: c,
            rate,
            comp,
            var: s2 + below + gauss,
        });
        if rate == 0.0 {
            break;
        }
    }
    Ok(ladder)
}

/// Prepared simulation of one mechanism under one configuration.
pub struct Simulator<'a> {
    pub m: &'a Mechanism,
    pub d: &'a DriftSpec,
    pub cfg: SimConfig,
    ladder: Vec<Level>,
}

struct Member<'a> {
    d: &'a DriftSpec,
    gamma: f64,
    x: f64,
    status: Status,
    rec: PathRecord,
}

impl Member<'_> {
    /// Drift rate `b(x)` (state decreases at rate `b`).
    fn b(&self, x: f64, comp: f64) -> f64 {
        (self.gamma + comp) * x + self.d.nonlinear(x)
    }

    fn b_deriv(&self, x: f64, comp: f64) -> f64 {
        self.gamma + comp + self.d.nonlinear_deriv(x)
    }
}

impl<'a> Simulator<'a> {
    pub fn new(m: &'a Mechanism, d: &'a DriftSpec, cfg: SimConfig) -> Result<Self> {
        cfg.validate()?;
        if let crate::drift::Check::Fail { reason, .. } = d.check_a() {
            return Err(CbdiError::InvalidParameter(format!(
                "drift fails condition A: {reason}"
            )));
        }
        let ladder = build_ladder(m, &cfg)?;
        Ok(Self { m, d, cfg, ladder })
    }

    /// Same mechanism and drift under a modified configuration; the cutoff
    /// ladder is reused when the jump settings are unchanged.
    pub fn with_config(&self, cfg: SimConfig) -> Result<Simulator<'a>> {
        cfg.validate()?;
        let ladder = if cfg.eps_jump == self.cfg.eps_jump && cfg.gaussian_small_jumps == self.cfg.gaussian_small_jumps {
            self.ladder.clone()
        } else {
            build_ladder(self.m, &cfg)?
        };
        Ok(Simulator {
            m: self.m,
            d: self.d,
            cfg,
            ladder,
        })
    }

    fn key(&self, path: u64) -> StreamKey {
        StreamKey::new(self.cfg.seed, path)
    }

    pub fn simulate_path(&self, x0: f64, path: u64) -> Result<PathRecord> {
        self.simulate_path_observed(x0, path, &mut NullObserver)
    }

    pub fn simulate_path_observed(&self, x0: f64, path: u64, obs: &mut dyn Observer) -> Result<PathRecord> {
        let mut out = self.run_bundle(&[(x0, self.d)], self.key(path), &mut [obs])?;
        Ok(out.pop().unwrap())
    }

    /// Paths from increasing `initials` driven by one noise realisation.
    pub fn simulate_coupled(&self, initials: &[f64], bundle: u64) -> Result<Vec<PathRecord>> {
        if initials.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(CbdiError::InvalidParameter(
                "initial values must be strictly increasing".into(),
            ));
        }
        let members: Vec<(f64, &DriftSpec)> = initials.iter().map(|&x| (x, self.d)).collect();
        let mut nulls: Vec<NullObserver> = initials.iter().map(|_| NullObserver).collect();
        let mut obs: Vec<&mut dyn Observer> = nulls.iter_mut().map(|o| o as &mut dyn Observer).collect();
        self.run_bundle(&members, self.key(bundle), &mut obs)
    }

    /// Paths with their own initial values and drifts under shared noise.
    pub fn simulate_coupled_members(
        &self,
        members: &[(f64, &DriftSpec)],
        bundle: u64,
        obs: &mut [&mut dyn Observer],
    ) -> Result<Vec<PathRecord>> {
        self.run_bundle(members, self.key(bundle), obs)
    }

    /// Runs `f` for path indices `0..n` in parallel; results are in index order.
    pub fn ensemble<R: Send, F: Fn(u64) -> Result<R> + Sync + Send>(&self, n: usize, f: F) -> Result<Vec<R>> {
        (0..n as u64).into_par_iter().map(f).collect()
    }

    pub fn simulate_ensemble(&self, x0: f64, n: usize) -> Result<Vec<PathRecord>> {
        self.ensemble(n, |i| self.simulate_path(x0, i))
    }

    fn choose_step(&self, members: &[Member<'_>], remaining: f64, dt: f64) -> Result<(f64, usize)> {
        let x_max = members
            .iter()
            .filter(|m| m.status.is_alive())
            .map(|m| m.x)
            .fold(0.0, f64::max);
        let level0 = self.ladder[0];
        let drift_ok = |h: f64| {
            members.iter().filter(|m| m.status.is_alive()).all(|mb| {
                let x = mb.x;
                let rel = h * mb.b(x, level0.comp).abs() <= self.cfg.drift_tol * x;
                let mono = members.len() == 1 || h * mb.b_deriv(x, level0.comp) <= 1.0;
                rel && mono
            })
        };
        let mut k = 0u32;
        let step = |k: u32| (dt / 2f64.powi(k as i32)).min(remaining);
        while !drift_ok(step(k)) && k < MAX_DRIFT_HALVINGS {
            k += 1;
        }
        let rate_ok = |h: f64, lv: &Level| x_max * lv.rate * h <= MAX_RATE_PER_STEP;
        while !rate_ok(step(k), &level0) && k < self.cfg.max_halvings {
            k += 1;
        }
        let h = step(k);
        if rate_ok(h, &level0) {
            return Ok((h, 0));
        }
        let overflow = CbdiError::RateOverflow {
            state: x_max,
            rate: x_max * level0.rate * h,
        };
        if !self.cfg.adaptive_cutoff {
            return Err(overflow);
        }
        match self.ladder.iter().position(|lv| rate_ok(h, lv)) {
            Some(j) => Ok((h, j)),
            None => Err(overflow),
        }
    }

    fn run_bundle(
        &self,
        members: &[(f64, &DriftSpec)],
        key: StreamKey,
        obs: &mut [&mut dyn Observer],
    ) -> Result<Vec<PathRecord>> {
        let cfg = &self.cfg;
        for &(x0, _) in members {
            if !(x0 >= 0.0 && x0 < cfg.x_explode) {
                return Err(CbdiError::InvalidParameter(format!(
                    "initial value {x0} must lie in [0, x_explode)"
                )));
            }
        }
        let mut st = Streams::new(key);
        let mut mbs: Vec<Member<'_>> = members
            .iter()
            .map(|&(x0, d)| Member {
                d,
                gamma: self.m.gamma + d.linear_coefficient(),
                x: x0,
                status: if x0 == 0.0 {
                    Status::Extinct { t: 0.0 }
                } else {
                    Status::Alive
                },
                rec: PathRecord {
                    times: vec![0.0],
                    values: vec![x0],
                    status: Status::Alive,
                    jumps: Vec::new(),
                    jumps_truncated: false,
                },
            })
            .collect();
        let n_outer = (cfg.t_max / cfg.dt).ceil().max(1.0) as usize;
        let stride = n_outer.div_ceil(cfg.max_records.saturating_sub(1).max(1)).max(1);
        let coupled = mbs.len() > 1;
        // member indices by current state, and each member's normal
        let mut order: Vec<usize> = Vec::new();
        let mut noise: Vec<f64> = vec![0.0; mbs.len()];
        let mut marks: Vec<(f64, f64, f64)> = Vec::new();
        let mut accepted: Vec<(f64, f64)> = Vec::new();
        let mut t = 0.0;
        let mut stopped_early = false;
        for outer in 0..n_outer {
            if mbs.iter().all(|m| !m.status.is_alive()) {
                break;
            }
            let t_end = if outer + 1 == n_outer {
                cfg.t_max
            } else {
                (outer + 1) as f64 * cfg.dt
            };
            while t < t_end && mbs.iter().any(|m| m.status.is_alive()) {
                let remaining = t_end - t;
                let (h, lvl) = self.choose_step(&mbs, remaining, cfg.dt)?;
                let h = if remaining - h <= 1e-12 * cfg.dt { remaining } else { h };
                let lv = self.ladder[lvl];
                let x_max = mbs
                    .iter()
                    .filter(|m| m.status.is_alive())
                    .map(|m| m.x)
                    .fold(0.0, f64::max);
                // Gaussian noise. Coupled members share the white noise on
                // [0, x_max]; cells are cut at the members' current states, so
                // each member's integral over [0, x] is a sum of independent
                // cell normals.
                if lv.var > 0.0 {
                    if coupled {
                        order.clear();
                        order.extend((0..mbs.len()).filter(|&j| mbs[j].status.is_alive()));
                        order.sort_by(|&a, &b| mbs[a].x.total_cmp(&mbs[b].x).then(a.cmp(&b)));
                        let (mut lo, mut acc) = (0.0, 0.0);
                        for &j in &order {
                            let x = mbs[j].x;
                            if x > lo {
                                let z: f64 = st.gaussian.sample(StandardNormal);
                                acc += (x - lo).sqrt() * z;
                                lo = x;
                            }
                            noise[j] = if x > 0.0 { acc / x.sqrt() } else { 0.0 };
                        }
                    } else {
                        noise[0] = st.gaussian.sample(StandardNormal);
                    }
                }
                // dominating marks
                marks.clear();
                let lambda = x_max * lv.rate * h;
                if lambda > 0.0 {
                    let n = Poisson::new(lambda)
                        .map_err(|_| CbdiError::RateOverflow {
                            state: x_max,
                            rate: lambda,
                        })?
                        .sample(&mut st.poisson) as usize;
                    for _ in 0..n {
                        let tm = t + h * st.mark.random::<f64>();
                        let u = x_max * st.mark.random::<f64>();
                        let size = self.m.levy.sample_jump_above(lv.cutoff, &mut st.jump)?;
                        marks.push((tm, u, size));
                    }
                    marks.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
                }
                for (j, mb) in mbs.iter_mut().enumerate() {
                    if !mb.status.is_alive() {
                        continue;
                    }
                    let x = mb.x;
                    // standard normal driving this path's continuous part
                    let w = if lv.var > 0.0 { noise[j] } else { 0.0 };
                    let sd = |y: f64| (lv.var * y.max(0.0) * h).sqrt();
                    let mut cont = x - h * mb.b(x, lv.comp) + sd(x) * w;
                    let mut t_ext = None;
                    if cont <= 0.0 {
                        // one Brownian-bridge refinement of the step
                        let z: f64 = if lv.var > 0.0 {
                            st.gaussian.sample(StandardNormal)
                        } else {
                            0.0
                        };
                        let w1 = 0.5 * w + 0.5 * z;
                        let hh = 0.5 * h;
                        let sdh = |y: f64| (lv.var * y.max(0.0) * hh).sqrt();
                        let xm = x - hh * mb.b(x, lv.comp) + sdh(x) * w1 * std::f64::consts::SQRT_2;
                        if xm <= 0.0 {
                            t_ext = Some(t + hh * x / (x - xm));
                        } else {
                            let w2 = w - w1;
                            let xe = xm - hh * mb.b(xm, lv.comp) + sdh(xm) * w2 * std::f64::consts::SQRT_2;
                            if xe <= 0.0 {
                                t_ext = Some(t + hh + hh * xm / (xm - xe));
                            } else {
                                cont = xe;
                            }
                        }
                    }
                    accepted.clear();
                    accepted.extend(marks.iter().filter(|mk| mk.1 <= x).map(|mk| (mk.0, mk.2)));
                    if let Some(te) = t_ext {
                        if accepted.first().is_some_and(|a| a.0 < te) {
                            t_ext = None;
                            cont = 0.0;
                        }
                    }
                    let mut status = Status::Alive;
                    let x1 = if let Some(te) = t_ext {
                        accepted.clear();
                        status = Status::Extinct { t: te };
                        0.0
                    } else {
                        let cont = cont.max(0.0);
                        let mut y = cont;
                        let mut hit = None;
                        for &(tj, sz) in accepted.iter() {
                            y += sz;
                            if hit.is_none() && y >= cfg.x_explode {
                                hit = Some(tj);
                            }
                        }
                        if y >= cfg.x_explode || !y.is_finite() {
                            status = Status::Exploded {
                                t: hit.unwrap_or(t + h),
                            };
                            f64::INFINITY
                        } else {
                            y
                        }
                    };
                    if mb.rec.jumps.len() < cfg.max_recorded_jumps {
                        let room = cfg.max_recorded_jumps - mb.rec.jumps.len();
                        if accepted.len() > room {
                            mb.rec.jumps_truncated = true;
                        }
                        mb.rec.jumps.extend(accepted.iter().take(room));
                    } else if !accepted.is_empty() {
                        mb.rec.jumps_truncated = true;
                    }
                    let ev = StepEvent {
                        t0: t,
                        t1: t + h,
                        x0: x,
                        x_cont: if t_ext.is_some() { 0.0 } else { cont.max(0.0) },
                        x1,
                        jumps: &accepted,
                        status,
                    };
                    obs[j].on_step(&ev);
                    mb.x = x1;
                    if !status.is_alive() {
                        let te = match status {
                            Status::Extinct { t } | Status::Exploded { t } => t,
                            Status::Alive => unreachable!(),
                        };
                        mb.status = status;
                        mb.rec.times.push(te);
                        mb.rec.values.push(x1);
                    }
                }
                t += h;
            }
            t = t_end;
            if (outer + 1) % stride == 0 || outer + 1 == n_outer {
                for mb in mbs.iter_mut().filter(|m| m.status.is_alive()) {
                    mb.rec.times.push(t);
                    mb.rec.values.push(mb.x);
                }
            }
            if !coupled && obs[0].done() {
                stopped_early = true;
                break;
            }
        }
        Ok(mbs
            .into_iter()
            .map(|mut mb| {
                // absorbed paths stay at their boundary value up to the horizon
                if !stopped_early && *mb.rec.times.last().unwrap() < cfg.t_max {
                    mb.rec.times.push(cfg.t_max);
                    mb.rec.values.push(mb.x);
                }
                mb.rec.status = mb.status;
                mb.rec
            })
            .collect())
    }
}

/// Default initial values for the from-infinity diagnostic.
pub fn default_infinity_grid() -> Vec<f64> {
    vec![1e2, 1e3, 1e4, 1e5, 1e6]
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ProbeReport {
    pub t: f64,
    /// Mean of `X^{x_k}_t` over bundles, per grid value.
    pub mean_values: Vec<f64>,
    /// Mean of `X^{x_{k+1}}_t − X^{x_k}_t` over bundles.
    pub increments: Vec<f64>,
    /// Mean over bundles of `sup_{s ∈ [t, t_max]} |e^{−X^{x_{k+1}}_s} − e^{−X^{x_k}_s}|`.
    pub rho: Vec<f64>,
    pub stabilized: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct InfinityReport {
    pub x_grid: Vec<f64>,
    pub tolerance: f64,
    pub n_bundles: usize,
    pub exploded_paths: usize,
    /// Set when coming down from infinity is not granted by the classifier.
    pub exploratory: bool,
    pub probes: Vec<ProbeReport>,
    /// Top path of the first bundle: the finite-start stand-in for `X^∞`.
    pub envelope: PathRecord,
}

/// Coupled runs from large initial values, probed at `t_probes`.
pub fn simulate_from_infinity(
    sim: &Simulator<'_>,
    x_grid: &[f64],
    t_probes: &[f64],
    tolerance: f64,
) -> Result<InfinityReport> {
    let n = sim.cfg.n_paths.max(1);
    let bundles = sim.ensemble(n, |b| sim.simulate_coupled(x_grid, b))?;
    let exploded_paths = bundles
        .iter()
        .flatten()
        .filter(|p| matches!(p.status, Status::Exploded { .. }))
        .count();
    let exploratory = !crate::classifier::classify(sim.m, sim.d).is_ok_and(|r| r.verdict_cdi.guaranteed());
    let k = x_grid.len();
    let probes = t_probes
        .iter()
        .map(|&tp| {
            let mut mean_values = vec![0.0; k];
            let mut increments = vec![0.0; k.saturating_sub(1)];
            let mut rho = vec![0.0; k.saturating_sub(1)];
            for b in &bundles {
                let vals: Vec<f64> = b.iter().map(|p| p.value_at(tp)).collect();
                for i in 0..k {
                    mean_values[i] += vals[i] / n as f64;
                }
                for i in 0..k.saturating_sub(1) {
                    increments[i] += (vals[i + 1] - vals[i]) / n as f64;
                    let (lo, hi) = (&b[i], &b[i + 1]);
                    let mut sup: f64 = 0.0;
                    for (idx, &s) in hi.times.iter().enumerate() {
                        if s >= tp {
                            sup = sup.max(((-hi.values[idx]).exp() - (-lo.value_at(s)).exp()).abs());
                        }
                    }
                    for (idx, &s) in lo.times.iter().enumerate() {
                        if s >= tp {
                            sup = sup.max(((-hi.value_at(s)).exp() - (-lo.values[idx]).exp()).abs());
                        }
                    }
                    rho[i] += sup / n as f64;
                }
            }
            let stabilized = increments.last().is_some_and(|d| d.abs() < tolerance);
            ProbeReport {
                t: tp,
                mean_values,
                increments,
                rho,
                stabilized,
            }
        })
        .collect();
    Ok(InfinityReport {
        x_grid: x_grid.to_vec(),
        tolerance,
        n_bundles: n,
        exploded_paths,
        exploratory,
        probes,
        envelope: bundles[0].last().cloned().unwrap(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mechanism::LevyMeasure;

    fn cfg(dt: f64, t_max: f64) -> SimConfig {
        SimConfig {
            dt,
            t_max,
            ..SimConfig::default()
        }
    }

    #[test]
    fn deterministic_flow() {
        let m = Mechanism::new(0.0, 0.0, LevyMeasure::zero()).unwrap();
        let d = DriftSpec::power_log(1.0, 2.0, 0.0, Some(1.0)).unwrap();
        let sim = Simulator::new(&m, &d, cfg(1e-4, 1.0)).unwrap();
        let p = sim.simulate_path(10.0, 0).unwrap();
        let x1 = p.final_value();
        assert!((x1 - 10.0 / 11.0).abs() < 1e-3 * x1, "{x1}");
        assert_eq!(p.status, Status::Alive);
    }

    #[test]
    fn zero_start_is_extinct() {
        let m = Mechanism::new(1.0, 0.0, LevyMeasure::zero()).unwrap();
        let d = DriftSpec::zero();
        let sim = Simulator::new(&m, &d, cfg(1e-2, 1.0)).unwrap();
        let p = sim.simulate_path(0.0, 0).unwrap();
        assert_eq!(p.status, Status::Extinct { t: 0.0 });
        assert!(p.values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn linear_drift_folds_into_gamma() {
        let levy = LevyMeasure::pareto(1.5, 0.0, 1.0, 1.0).unwrap();
        let m1 = Mechanism::new(0.5, 0.2, levy.clone()).unwrap();
        let m2 = Mechanism::new(0.5, 0.2 + 0.7, levy).unwrap();
        let d1 = DriftSpec::linear(0.7, Some(1.0)).unwrap();
        let d2 = DriftSpec::zero();
        let c = cfg(1e-3, 1.0);
        let a = Simulator::new(&m1, &d1, c.clone())
            .unwrap()
            .simulate_path(3.0, 7)
            .unwrap();
        let b = Simulator::new(&m2, &d2, c).unwrap().simulate_path(3.0, 7).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn coupled_point_mass_is_ordered() {
        let m = Mechanism::new(0.0, 0.0, LevyMeasure::point_mass(1.0, 1.0).unwrap()).unwrap();
        let d = DriftSpec::zero();
        let c = SimConfig {
            max_records: 100_000,
            ..cfg(1e-2, 2.0)
        };
        let sim = Simulator::new(&m, &d, c).unwrap();
        for b in 0..50 {
            let ps = sim.simulate_coupled(&[1.0, 5.0], b).unwrap();
            for (x, y) in ps[0].values.iter().zip(&ps[1].values) {
                assert!(x <= y);
            }
        }
    }

    #[test]
    fn rate_overflow_without_adaptive_cutoff() {
        let m = Mechanism::new(0.0, 0.0, LevyMeasure::pareto(0.5, 0.0, 1.0, 1.0).unwrap()).unwrap();
        let d = DriftSpec::zero();
        let c = SimConfig {
            adaptive_cutoff: false,
            max_halvings: 2,
            ..cfg(1.0, 1.0)
        };
        let sim = Simulator::new(&m, &d, c).unwrap();
        assert!(matches!(sim.simulate_path(1e3, 0), Err(CbdiError::RateOverflow { .. })));
    }

    #[test]
    fn deterministic_given_seed() {
        let m = Mechanism::new(1.0, 0.3, LevyMeasure::pareto(1.2, 0.0, 1.0, 1.0).unwrap()).unwrap();
        let d = DriftSpec::logistic(1.0, None).unwrap();
        let sim = Simulator::new(&m, &d, cfg(1e-3, 1.0)).unwrap();
        let a = sim.simulate_ensemble(2.0, 8).unwrap();
        let b = sim.simulate_ensemble(2.0, 8).unwrap();
        assert_eq!(a, b);
        assert_ne!(a[0], a[1]);
    }
}
