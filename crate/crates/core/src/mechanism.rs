//! Branching mechanism: the triplet (σ, γ, π) and its Lévy measure.
//!
//! Every functional of π is computed from the tail `π̄(u) = π([u, ∞))` by
//! integration by parts, so the families only need to supply a tail, its
//! right-continuous version (they differ at atoms) and an inverse.

use rand::Rng;
use serde::ser::SerializeStruct;
use serde::{Deserialize, Serialize, Serializer};

use crate::asymptotic::Asymptotic;
use crate::error::{CbdiError, Result};
use crate::quad::{self, Estimate, Tolerance};

/// A value that may be infinite by construction rather than by overflow.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Extended {
    Finite { value: f64, residual: f64 },
    Infinite,
}

impl Extended {
    pub fn finite(e: Estimate) -> Self {
        Extended::Finite {
            value: e.value,
            residual: e.residual,
        }
    }

    pub fn is_finite(&self) -> bool {
        matches!(self, Extended::Finite { .. })
    }

    pub fn value(&self) -> f64 {
        match *self {
            Extended::Finite { value, .. } => value,
            Extended::Infinite => f64::INFINITY,
        }
    }

    pub fn residual(&self) -> f64 {
        match *self {
            Extended::Finite { residual, .. } => residual,
            Extended::Infinite => f64::INFINITY,
        }
    }

    pub fn add(self, other: Extended) -> Extended {
        match (self, other) {
            (Extended::Finite { value: a, residual: ra }, Extended::Finite { value: b, residual: rb }) => {
                Extended::Finite {
                    value: a + b,
                    residual: ra + rb,
                }
            }
            _ => Extended::Infinite,
        }
    }
}

impl Serialize for Extended {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match *self {
            Extended::Finite { value, residual } => {
                let mut st = s.serialize_struct("Extended", 3)?;
                st.serialize_field("finite", &true)?;
                st.serialize_field("value", &value)?;
                st.serialize_field("residual", &residual)?;
                st.end()
            }
            Extended::Infinite => {
                let mut st = s.serialize_struct("Extended", 1)?;
                st.serialize_field("finite", &false)?;
                st.end()
            }
        }
    }
}

/// Optional jump mass on `(0, u₀)` for [`LevyFamily::ParetoLogTail`].
#[derive(Clone, Copy, Debug, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SmallJumps {
    #[default]
    None,
    /// Density `coeff·α·h^{-1-α}` on `(0, u₀)`; infinite activity.
    Stable { alpha: f64, coeff: f64 },
    /// Total mass `rate` spread uniformly on `(0, u₀)`.
    Uniform { rate: f64 },
}

fn one() -> f64 {
    1.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum LevyFamily {
    Zero,
    PointMass {
        size: f64,
        rate: f64,
    },
    /// `π̄(u) = coeff·u^{-α}·(log u)^β` for `u ≥ cutoff`.
    ParetoLogTail {
        alpha: f64,
        #[serde(default)]
        beta: f64,
        #[serde(default = "one")]
        coeff: f64,
        #[serde(default = "one")]
        cutoff: f64,
        #[serde(default)]
        small: SmallJumps,
    },
    /// `(u, π̄(u))` pairs, log-log interpolated; no mass below the first point,
    /// last segment's slope extrapolated.
    TabulatedTail {
        points: Vec<[f64; 2]>,
    },
}

/// A validated Lévy measure on `(0, ∞)` with no mass at `∞`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "LevyFamily", into = "LevyFamily")]
pub struct LevyMeasure {
    family: LevyFamily,
    slopes: Vec<f64>,
}

impl From<LevyMeasure> for LevyFamily {
    fn from(m: LevyMeasure) -> Self {
        m.family
    }
}

impl TryFrom<LevyFamily> for LevyMeasure {
    type Error = CbdiError;
    fn try_from(f: LevyFamily) -> Result<Self> {
        LevyMeasure::new(f)
    }
}

fn invalid(msg: impl Into<String>) -> CbdiError {
    CbdiError::InvalidParameter(msg.into())
}

fn check_finite(name: &str, v: f64) -> Result<()> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(invalid(format!("{name} must be finite, got {v}")))
    }
}

impl LevyMeasure {
    pub fn new(family: LevyFamily) -> Result<Self> {
        let mut slopes = Vec::new();
        match &family {
            LevyFamily::Zero => {}
            LevyFamily::PointMass { size, rate } => {
                check_finite("size", *size)?;
                check_finite("rate", *rate)?;
                if *size <= 0.0 || *rate <= 0.0 {
                    return Err(invalid("point mass needs size > 0 and rate > 0"));
                }
                if *size < 1.0 {
                    return Err(invalid(
                        "a non-zero measure needs tail(1) > 0, so point-mass size must be >= 1",
                    ));
                }
            }
            LevyFamily::ParetoLogTail {
                alpha,
                beta,
                coeff,
                cutoff,
                small,
            } => {
                for (n, v) in [("alpha", alpha), ("beta", beta), ("coeff", coeff), ("cutoff", cutoff)] {
                    check_finite(n, *v)?;
                }
                if !(0.0..=2.0).contains(alpha) {
                    return Err(invalid(format!("alpha must lie in [0, 2], got {alpha}")));
                }
                if *alpha == 0.0 && *beta >= 0.0 {
                    return Err(invalid("alpha = 0 needs beta < 0 for the tail to vanish"));
                }
                if *coeff <= 0.0 {
                    return Err(invalid("coeff must be positive"));
                }
                if *cutoff < 1.0 {
                    return Err(invalid("cutoff must be >= 1"));
                }
                if *beta != 0.0 {
                    if *cutoff <= 1.0 {
                        return Err(invalid("a log factor needs cutoff > 1"));
                    }
                    if alpha * cutoff.ln() < *beta {
                        return Err(invalid(format!(
                            "tail is not monotone on [cutoff, inf): need alpha*ln(cutoff) >= beta, cutoff >= {}",
                            (beta / alpha).exp()
                        )));
                    }
                }
                match *small {
                    SmallJumps::None => {}
                    SmallJumps::Stable { alpha, coeff } => {
                        check_finite("small.alpha", alpha)?;
                        check_finite("small.coeff", coeff)?;
                        if !(alpha > 0.0 && alpha < 2.0) || coeff <= 0.0 {
                            return Err(invalid("stable small jumps need alpha in (0,2) and coeff > 0"));
                        }
                    }
                    SmallJumps::Uniform { rate } => {
                        check_finite("small.rate", rate)?;
                        if rate <= 0.0 {
                            return Err(invalid("uniform small jumps need rate > 0"));
                        }
                    }
                }
            }
            LevyFamily::TabulatedTail { points } => {
                if points.len() < 2 {
                    return Err(invalid("tabulated tail needs at least two points"));
                }
                for p in points {
                    check_finite("point", p[0])?;
                    check_finite("point", p[1])?;
                    if p[0] <= 0.0 || p[1] <= 0.0 {
                        return Err(invalid("tabulated points must be positive"));
                    }
                }
                for w in points.windows(2) {
                    if w[1][0] <= w[0][0] {
                        return Err(invalid("tabulated abscissae must increase strictly"));
                    }
                    if w[1][1] > w[0][1] {
                        return Err(invalid("tabulated tail must be non-increasing"));
                    }
                    slopes.push((w[1][1] / w[0][1]).ln() / (w[1][0] / w[0][0]).ln());
                }
                if *slopes.last().unwrap() >= 0.0 {
                    return Err(invalid("last tabulated segment must decay for the tail to vanish"));
                }
            }
        }
        let m = LevyMeasure { family, slopes };
        m.validate_numerically()?;
        Ok(m)
    }

    pub fn zero() -> Self {
        LevyMeasure {
            family: LevyFamily::Zero,
            slopes: Vec::new(),
        }
    }

    pub fn point_mass(size: f64, rate: f64) -> Result<Self> {
        Self::new(LevyFamily::PointMass { size, rate })
    }

    pub fn pareto(alpha: f64, beta: f64, coeff: f64, cutoff: f64) -> Result<Self> {
        Self::new(LevyFamily::ParetoLogTail {
            alpha,
            beta,
            coeff,
            cutoff,
            small: SmallJumps::None,
        })
    }

    pub fn family(&self) -> &LevyFamily {
        &self.family
    }

    pub fn is_zero(&self) -> bool {
        matches!(self.family, LevyFamily::Zero)
    }

    fn validate_numerically(&self) -> Result<()> {
        if self.is_zero() {
            return Ok(());
        }
        if self.tail(1.0) <= 0.0 {
            return Err(invalid("tail(1) must be positive for a non-zero measure"));
        }
        if !self.tail_shape().vanishes() {
            return Err(invalid("tail does not vanish at infinity"));
        }
        let mut prev = f64::INFINITY;
        let mut u = 1e-6;
        while u < 1e12 {
            let t = self.tail(u);
            if t > prev * (1.0 + 1e-12) {
                return Err(invalid(format!("tail increases near u = {u}")));
            }
            prev = t;
            u *= 1.1;
        }
        // ∫ (1 ∧ h²) π(dh) = m₂((0,1]) + π((1,∞))
        match self.moment(2.0, 0.0, false, 1.0, true)? {
            Extended::Finite { value, .. } if value.is_finite() => Ok(()),
            _ => Err(invalid("the measure does not integrate 1 ∧ h²")),
        }
    }

    fn pareto_upper(alpha: f64, beta: f64, coeff: f64, u: f64) -> f64 {
        let base = coeff * u.powf(-alpha);
        if beta == 0.0 {
            base
        } else {
            base * u.ln().powf(beta)
        }
    }

    /// `π̄(u) = π([u, ∞))`.
    pub fn tail(&self, u: f64) -> f64 {
        match &self.family {
            LevyFamily::Zero => 0.0,
            LevyFamily::PointMass { size, rate } => {
                if u <= *size {
                    *rate
                } else {
                    0.0
                }
            }
            LevyFamily::ParetoLogTail {
                alpha,
                beta,
                coeff,
                cutoff,
                small,
            } => {
                if u >= *cutoff {
                    return Self::pareto_upper(*alpha, *beta, *coeff, u);
                }
                let at_cut = Self::pareto_upper(*alpha, *beta, *coeff, *cutoff);
                match *small {
                    SmallJumps::None => at_cut,
                    SmallJumps::Stable { alpha: a, coeff: c } => at_cut + c * (u.powf(-a) - cutoff.powf(-a)),
                    SmallJumps::Uniform { rate } => at_cut + rate * (cutoff - u.max(0.0)) / cutoff,
                }
            }
            LevyFamily::TabulatedTail { points } => {
                if u <= points[0][0] {
                    return points[0][1];
                }
                let i = match points.iter().position(|p| p[0] > u) {
                    Some(j) => j - 1,
                    None => points.len() - 1,
                };
                let s = self.slopes[i.min(self.slopes.len() - 1)];
                points[i][1] * (u / points[i][0]).powf(s)
            }
        }
    }

    /// `π((u, ∞))`.
    pub fn tail_right(&self, u: f64) -> f64 {
        match &self.family {
            LevyFamily::PointMass { size, rate } => {
                if u < *size {
                    *rate
                } else {
                    0.0
                }
            }
            _ => self.tail(u),
        }
    }

    /// Asymptotic form of `π̄` at infinity.
    pub fn tail_shape(&self) -> Asymptotic {
        match &self.family {
            LevyFamily::Zero | LevyFamily::PointMass { .. } => Asymptotic::Vanishing,
            LevyFamily::ParetoLogTail { alpha, beta, coeff, .. } => Asymptotic::power_log(*coeff, -alpha, *beta),
            LevyFamily::TabulatedTail { points } => {
                let s = *self.slopes.last().unwrap();
                let last = points[points.len() - 1];
                Asymptotic::power_log(last[1] * last[0].powf(-s), s, 0.0)
            }
        }
    }

    /// Density of the absolutely continuous part of π (atoms excluded).
    pub fn density(&self, h: f64) -> f64 {
        if !(h > 0.0) {
            return 0.0;
        }
        match &self.family {
            LevyFamily::Zero | LevyFamily::PointMass { .. } => 0.0,
            LevyFamily::ParetoLogTail {
                alpha,
                beta,
                coeff,
                cutoff,
                small,
            } => {
                if h >= *cutoff {
                    if *beta == 0.0 {
                        coeff * alpha * h.powf(-alpha - 1.0)
                    } else {
                        let l = h.ln();
                        coeff * h.powf(-alpha - 1.0) * l.powf(beta - 1.0) * (alpha * l - beta)
                    }
                } else {
                    match *small {
                        SmallJumps::None => 0.0,
                        SmallJumps::Stable { alpha: a, coeff: c } => c * a * h.powf(-a - 1.0),
                        SmallJumps::Uniform { rate } => rate / cutoff,
                    }
                }
            }
            LevyFamily::TabulatedTail { points } => {
                if h < points[0][0] {
                    return 0.0;
                }
                let i = match points.iter().position(|p| p[0] > h) {
                    Some(j) => j - 1,
                    None => points.len() - 1,
                };
                let s = self.slopes[i.min(self.slopes.len() - 1)];
                -s * self.tail(h) / h
            }
        }
    }

    /// Leading asymptotic form of the density at infinity.
    pub fn density_shape(&self) -> Asymptotic {
        match &self.family {
            LevyFamily::Zero | LevyFamily::PointMass { .. } => Asymptotic::Vanishing,
            LevyFamily::ParetoLogTail { alpha, beta, coeff, .. } => {
                if *alpha > 0.0 {
                    Asymptotic::power_log(coeff * alpha, -alpha - 1.0, *beta)
                } else {
                    Asymptotic::power_log(-coeff * beta, -1.0, beta - 1.0)
                }
            }
            LevyFamily::TabulatedTail { points } => {
                let s = *self.slopes.last().unwrap();
                let last = points[points.len() - 1];
                Asymptotic::power_log(-s * last[1] * last[0].powf(-s), s - 1.0, 0.0)
            }
        }
    }

    /// Index `a` with `π̄(u) ~ u^{-a}` as `u → 0` (0 for finite activity).
    pub fn activity_index(&self) -> f64 {
        match &self.family {
            LevyFamily::ParetoLogTail {
                small: SmallJumps::Stable { alpha, .. },
                ..
            } => *alpha,
            _ => 0.0,
        }
    }

    /// Points where the tail changes formula (beyond which it is exact).
    pub fn breakpoints(&self) -> Vec<f64> {
        match &self.family {
            LevyFamily::Zero => vec![],
            LevyFamily::PointMass { size, .. } => vec![*size],
            LevyFamily::ParetoLogTail { cutoff, .. } => vec![*cutoff],
            LevyFamily::TabulatedTail { points } => points.iter().map(|p| p[0]).collect(),
        }
    }

    /// Atoms `(position, mass)`.
    pub fn atoms(&self) -> Vec<(f64, f64)> {
        match &self.family {
            LevyFamily::PointMass { size, rate } => vec![(*size, *rate)],
            _ => vec![],
        }
    }

    /// `∫_a^b f(u) du` split at the tail's breakpoints, with logarithmic
    /// substitutions at `0` and `∞`.
    pub fn integrate_split<F: Fn(f64) -> f64>(&self, f: F, a: f64, b: f64, tol: Tolerance) -> Result<Estimate> {
        if b <= a {
            return Ok(Estimate::ZERO);
        }
        let mut nodes = vec![a];
        let mut inner: Vec<f64> = self
            .breakpoints()
            .into_iter()
            .chain([1.0])
            .filter(|&p| p > a && p < b)
            .collect();
        inner.sort_by(|x, y| x.partial_cmp(y).unwrap());
        inner.dedup();
        if inner.is_empty() && (a == 0.0 || b.is_infinite()) {
            if a == 0.0 && b.is_finite() {
                inner.push(0.5 * b);
            } else if a == 0.0 {
                inner.push(1.0);
            } else {
                inner.push(2.0 * a);
            }
        }
        nodes.extend(inner);
        nodes.push(b);
        let mut total = Estimate::ZERO;
        for w in nodes.windows(2) {
            let (l, r) = (w[0], w[1]);
            let part = if l == 0.0 {
                quad::integrate_log_from_zero(&f, r, tol)?
            } else if r.is_infinite() {
                quad::integrate_log_to_infinity(&f, l, tol)?
            } else if r > 10.0 * l {
                quad::integrate_geometric(&f, l, r, &[], tol)?
            } else {
                quad::integrate(&f, l, r, tol)?
            };
            total = total + part;
        }
        Ok(total)
    }

    /// `∫ h^p π(dh)` over the interval from `a` to `b` with the given endpoint
    /// inclusions. `b` may be infinite.
    pub fn moment(&self, p: f64, a: f64, a_closed: bool, b: f64, b_closed: bool) -> Result<Extended> {
        if !(p > 0.0) || !(a >= 0.0) || !(b > a) {
            return Err(invalid(format!(
                "moment needs p > 0 and 0 <= a < b, got p={p}, a={a}, b={b}"
            )));
        }
        if self.is_zero() {
            return Ok(Extended::Finite {
                value: 0.0,
                residual: 0.0,
            });
        }
        if b.is_infinite()
            && !self
                .tail_shape()
                .mul(Asymptotic::power_log(1.0, p - 1.0, 0.0))
                .integrable()
        {
            return Ok(Extended::Infinite);
        }
        if a == 0.0 && p <= self.activity_index() {
            return Ok(Extended::Infinite);
        }
        let left = if a == 0.0 {
            0.0
        } else if a_closed {
            a.powf(p) * self.tail(a)
        } else {
            a.powf(p) * self.tail_right(a)
        };
        let right = if b.is_infinite() {
            0.0
        } else if b_closed {
            b.powf(p) * self.tail_right(b)
        } else {
            b.powf(p) * self.tail(b)
        };
        let body = self.integrate_split(|u| p * u.powf(p - 1.0) * self.tail(u), a, b, Tolerance::default())?;
        Ok(Extended::Finite {
            value: left - right + body.value,
            residual: body.residual,
        })
    }

    /// `∫_{[a,b]} h^p π(dh)`; `b` may be `∞`.
    pub fn truncated_moment(&self, p: f64, a: f64, b: f64) -> Result<Extended> {
        self.moment(p, a, true, b, true)
    }

    /// The `h ≥ eps` with `π̄(h) = q·π̄(eps)` for `q ∈ (0, 1]`.
    pub fn quantile_above(&self, eps: f64, q: f64) -> Result<f64> {
        let total = self.tail(eps);
        if !(total > 0.0) {
            return Err(CbdiError::EmptyMeasure(eps));
        }
        if !total.is_finite() {
            return Err(invalid(format!("tail is infinite at eps = {eps}")));
        }
        let q = q.clamp(f64::MIN_POSITIVE, 1.0);
        let t = q * total;
        let h = match &self.family {
            LevyFamily::Zero => unreachable!(),
            LevyFamily::PointMass { size, .. } => *size,
            LevyFamily::ParetoLogTail {
                alpha,
                beta,
                coeff,
                cutoff,
                small,
            } => {
                let at_cut = Self::pareto_upper(*alpha, *beta, *coeff, *cutoff);
                if t <= at_cut {
                    if *beta == 0.0 {
                        (coeff / t).powf(1.0 / alpha)
                    } else {
                        Self::invert_log_tail(*alpha, *beta, *coeff, *cutoff, t)
                    }
                } else {
                    let excess = t - at_cut;
                    match *small {
                        SmallJumps::None => *cutoff,
                        SmallJumps::Stable { alpha: a, coeff: c } => (excess / c + cutoff.powf(-a)).powf(-1.0 / a),
                        SmallJumps::Uniform { rate } => cutoff - excess * cutoff / rate,
                    }
                }
            }
            LevyFamily::TabulatedTail { points } => {
                if t >= points[0][1] {
                    points[0][0]
                } else {
                    let i = points
                        .iter()
                        .rposition(|p| p[1] > t)
                        .unwrap_or(0)
                        .min(self.slopes.len() - 1);
                    let s = self.slopes[i];
                    if s == 0.0 {
                        // flat segment: no mass inside, the next point carries it
                        points[i + 1][0]
                    } else {
                        points[i][0] * (t / points[i][1]).powf(1.0 / s)
                    }
                }
            }
        };
        Ok(h.max(eps))
    }

    fn invert_log_tail(alpha: f64, beta: f64, coeff: f64, cutoff: f64, t: f64) -> f64 {
        // solve ln c − α v + β ln v = ln t for v = ln u ≥ ln(cutoff)
        let g = |v: f64| coeff.ln() - alpha * v + beta * v.ln() - t.ln();
        let mut lo = cutoff.ln();
        let mut hi = lo.max(1.0) * 2.0;
        while g(hi) > 0.0 {
            hi *= 2.0;
            if hi > 709.0 {
                return f64::MAX;
            }
        }
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if g(mid) > 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
            if hi - lo <= 1e-15 * hi {
                break;
            }
        }
        (0.5 * (lo + hi)).exp()
    }

    /// Draws `h ~ π(· ∩ [eps, ∞)) / π̄(eps)` by inverse-tail sampling.
    pub fn sample_jump_above<R: Rng + ?Sized>(&self, eps: f64, rng: &mut R) -> Result<f64> {
        let u: f64 = rng.random();
        self.quantile_above(eps, 1.0 - u)
    }
}

/// Branching triplet `(σ, γ, π)`; the killing rate is fixed at zero.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawMechanism", into = "RawMechanism")]
pub struct Mechanism {
    pub sigma: f64,
    pub gamma: f64,
    pub levy: LevyMeasure,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawMechanism {
    #[serde(default)]
    pub sigma: f64,
    #[serde(default)]
    pub gamma: f64,
    #[serde(default = "zero_levy")]
    pub levy: LevyMeasure,
}

fn zero_levy() -> LevyMeasure {
    LevyMeasure::zero()
}

impl From<Mechanism> for RawMechanism {
    fn from(m: Mechanism) -> Self {
        RawMechanism {
            sigma: m.sigma,
            gamma: m.gamma,
            levy: m.levy,
        }
    }
}

impl TryFrom<RawMechanism> for Mechanism {
    type Error = CbdiError;
    fn try_from(r: RawMechanism) -> Result<Self> {
        Mechanism::new(r.sigma, r.gamma, r.levy)
    }
}

impl Mechanism {
    pub fn new(sigma: f64, gamma: f64, levy: LevyMeasure) -> Result<Self> {
        check_finite("sigma", sigma)?;
        check_finite("gamma", gamma)?;
        if sigma < 0.0 {
            return Err(invalid("sigma must be >= 0"));
        }
        let m = Mechanism { sigma, gamma, levy };
        m.check_convex()?;
        Ok(m)
    }

    fn check_convex(&self) -> Result<()> {
        if self.levy.is_zero() {
            return Ok(());
        }
        let zs = [0.0, 0.125, 0.25, 0.5, 1.0, 2.0, 4.0, 8.0, 16.0];
        let mut vals = Vec::with_capacity(zs.len());
        for &z in &zs {
            vals.push(self.psi_estimate(z)?);
        }
        for i in 1..zs.len() - 1 {
            let (z1, z2, z3) = (zs[i - 1], zs[i], zs[i + 1]);
            let w = (z2 - z1) / (z3 - z1);
            let interp = (1.0 - w) * vals[i - 1].value + w * vals[i + 1].value;
            let slack = vals[i - 1].residual + vals[i].residual + vals[i + 1].residual + 1e-9 * (1.0 + interp.abs());
            if vals[i].value > interp + slack {
                return Err(CbdiError::Consistency(format!("psi fails convexity at z = {z2}")));
            }
        }
        Ok(())
    }

    /// `Ψ(z)` with its quadrature residual.
    pub fn psi_estimate(&self, z: f64) -> Result<Estimate> {
        if !(z >= 0.0) {
            return Err(invalid(format!("psi needs z >= 0, got {z}")));
        }
        let poly = 0.5 * self.sigma * self.sigma * z * z + self.gamma * z;
        if z == 0.0 || self.levy.is_zero() {
            return Ok(Estimate::exact(poly));
        }
        let levy = &self.levy;
        let t1 = levy.tail_right(1.0);
        // (0,1]: ∫ z(1 − e^{−zu}) π([u,1]) du
        let small = levy.integrate_split(
            |u| {
                let w = z * -(-z * u).exp_m1();
                w * (levy.tail(u) - t1)
            },
            0.0,
            1.0,
            Tolerance::default(),
        )?;
        // (1,∞): (e^{−z} − 1) π((1,∞)) − ∫_1^∞ z e^{−zu} π̄(u) du
        let large_body = levy.integrate_split(
            |u| z * (-z * u).exp() * levy.tail(u),
            1.0,
            f64::INFINITY,
            Tolerance::default(),
        )?;
        let value = poly + small.value + (-z).exp_m1() * t1 - large_body.value;
        Ok(Estimate {
            value,
            residual: small.residual + large_body.residual,
        })
    }

    pub fn psi_eval(&self, z: f64) -> Result<f64> {
        self.psi_estimate(z).map(|e| e.value)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;
    use std::ops::Neg;

    #[test]
    fn psi_closed_forms() {
        let m = Mechanism::new(2.0, 1.0, LevyMeasure::zero()).unwrap();
        assert_eq!(m.psi_eval(1.0).unwrap(), 3.0);
        assert_eq!(m.psi_eval(0.0).unwrap(), 0.0);
        let m = Mechanism::new(0.0, 0.0, LevyMeasure::point_mass(2.0, 1.0).unwrap()).unwrap();
        let v = m.psi_eval(1.0).unwrap();
        assert!((v - ((-2.0f64).exp() - 1.0)).abs() < 1e-12, "{v}");
    }

    #[test]
    fn psi_compensated_atom() {
        // atom at h = 1 is compensated: e^{-z} − 1 + z
        let m = Mechanism::new(0.0, 0.0, LevyMeasure::point_mass(1.0, 2.0).unwrap()).unwrap();
        let z: f64 = 3.0;
        let want = 2.0 * ((-z).exp() - 1.0 + z);
        assert!((m.psi_eval(z).unwrap() - want).abs() < 1e-10);
    }

    #[test]
    fn psi_stable_small_jumps() {
        // density α c h^{-1-α} on (0,1), α=1.5, c=1: Ψ(z) = c Γ(2−α)/(α−1)... checked by direct quadrature instead
        let levy = LevyMeasure::new(LevyFamily::ParetoLogTail {
            alpha: 1.5,
            beta: 0.0,
            coeff: 1.0,
            cutoff: 1.0,
            small: SmallJumps::Stable { alpha: 1.5, coeff: 1.0 },
        })
        .unwrap();
        let m = Mechanism::new(0.0, 0.0, levy).unwrap();
        let z = 2.0;
        let dens = |h: f64| 1.5 * h.powf(-2.5);
        let k = |h: f64| {
            let x = z * h;
            if h > 1.0 {
                x.neg().exp_m1()
            } else if x < 1e-3 {
                x * x * (0.5 - x / 6.0 + x * x / 24.0)
            } else {
                x.neg().exp_m1() + x
            }
        };
        let a = quad::integrate_log_from_zero(|h| k(h) * dens(h), 1.0, Tolerance::default()).unwrap();
        let b = quad::integrate_log_to_infinity(|h| k(h) * dens(h), 1.0, Tolerance::default()).unwrap();
        let v = m.psi_eval(z).unwrap();
        assert!((v - a.value - b.value).abs() < 1e-7, "{v} vs {}", a.value + b.value);
    }

    #[test]
    fn tails() {
        let pm = LevyMeasure::point_mass(2.0, 1.0).unwrap();
        assert_eq!(pm.tail(1.0), 1.0);
        assert_eq!(pm.tail(3.0), 0.0);
        assert_eq!(pm.tail(2.0), 1.0);
        assert_eq!(pm.tail_right(2.0), 0.0);
        let p = LevyMeasure::pareto(0.5, 0.0, 1.0, 1.0).unwrap();
        assert!((p.tail(4.0) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn moments() {
        let pm = LevyMeasure::point_mass(2.0, 3.0).unwrap();
        let m = pm.truncated_moment(1.0, 1.0, f64::INFINITY).unwrap();
        assert!((m.value() - 6.0).abs() < 1e-12);
        let z = LevyMeasure::zero().truncated_moment(2.0, 0.0, 5.0).unwrap();
        assert_eq!(z.value(), 0.0);
        let p = LevyMeasure::pareto(0.5, 0.0, 1.0, 1.0).unwrap();
        assert_eq!(p.truncated_moment(1.0, 1.0, f64::INFINITY).unwrap(), Extended::Infinite);
        // α = 2: ∫_1^∞ h · 2h^{-3} dh = 2
        let p2 = LevyMeasure::pareto(2.0, 0.0, 1.0, 1.0).unwrap();
        let m = p2.truncated_moment(1.0, 1.0, f64::INFINITY).unwrap();
        assert!((m.value() - 2.0).abs() < 1e-8, "{m:?}");
    }

    #[test]
    fn quantiles() {
        let p = LevyMeasure::pareto(1.0, 0.0, 1.0, 1.0).unwrap();
        assert!((p.quantile_above(1.0, 0.5).unwrap() - 2.0).abs() < 1e-14);
        let pm = LevyMeasure::point_mass(2.0, 1.0).unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(1);
        for _ in 0..10 {
            assert_eq!(pm.sample_jump_above(1.0, &mut rng).unwrap(), 2.0);
        }
        let lg = LevyMeasure::pareto(1.0, 0.5, 1.0, 3.0).unwrap();
        for q in [0.9, 0.5, 0.1, 1e-4] {
            let h = lg.quantile_above(3.0, q).unwrap();
            assert!((lg.tail(h) / lg.tail(3.0) - q).abs() < 1e-9);
        }
        let tab = LevyMeasure::new(LevyFamily::TabulatedTail {
            points: vec![[1.0, 2.0], [2.0, 1.0], [4.0, 0.25]],
        })
        .unwrap();
        for q in [0.9, 0.5, 0.1, 1e-3] {
            let h = tab.quantile_above(1.0, q).unwrap();
            assert!((tab.tail(h) / 2.0 - q).abs() < 1e-12);
        }
    }

    #[test]
    fn density_integrates_to_tail() {
        let fams = [
            LevyMeasure::pareto(1.5, 0.0, 2.0, 1.0).unwrap(),
            LevyMeasure::pareto(0.8, 1.0, 1.0, 5.0).unwrap(),
            LevyMeasure::pareto(0.0, -2.0, 1.0, 3.0).unwrap(),
            LevyMeasure::new(LevyFamily::TabulatedTail {
                points: vec![[1.0, 2.0], [2.0, 1.0], [4.0, 0.25]],
            })
            .unwrap(),
        ];
        for m in &fams {
            let from = m.breakpoints().into_iter().fold(1.0, f64::max);
            let d = quad::integrate_log_range(|h| m.density(h), from, 1e50, Tolerance::default()).unwrap();
            let want = m.tail(from) - m.tail(1e50);
            assert!((d.value - want).abs() < 1e-7 * want, "{:?}", m.family());
        }
    }

    #[test]
    fn empty_measure_error() {
        let pm = LevyMeasure::point_mass(2.0, 1.0).unwrap();
        assert!(matches!(pm.quantile_above(3.0, 0.5), Err(CbdiError::EmptyMeasure(_))));
    }

    #[test]
    fn rejects_bad_parameters() {
        assert!(LevyMeasure::point_mass(0.5, 1.0).is_err());
        assert!(LevyMeasure::pareto(2.5, 0.0, 1.0, 1.0).is_err());
        assert!(LevyMeasure::pareto(0.0, 0.0, 1.0, 1.0).is_err());
        assert!(LevyMeasure::pareto(1.0, 1.0, 1.0, 1.0).is_err());
        assert!(LevyMeasure::pareto(0.0, -1.0, 1.0, std::f64::consts::E).is_ok());
        assert!(Mechanism::new(-1.0, 0.0, LevyMeasure::zero()).is_err());
    }

    #[test]
    fn serde_round_trip() {
        let m = Mechanism::new(1.0, 0.5, LevyMeasure::pareto(1.5, 0.0, 2.0, 1.0).unwrap()).unwrap();
        let s = serde_json::to_string(&m).unwrap();
        let back: Mechanism = serde_json::from_str(&s).unwrap();
        assert_eq!(m, back);
    }
}
