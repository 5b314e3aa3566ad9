//! Extended generator `𝓧` on C² test functions and Lyapunov certification.
//!
//! The jump part is evaluated in integrated-by-parts form, which only needs
//! `f′`:
//! `∫(f(x+h) − f(x) − h f′(x) 1_{h≤1}) π(dh)
//!    = ∫_0^1 (f′(x+u) − f′(x)) π([u,1]) du + ∫_0^∞ f′(x+u) π((u∨1, ∞)) du`.

use std::sync::Arc;

use serde::Serialize;

use crate::asymptotic::Asymptotic;
use crate::classifier::{flow_integral, positive_on};
use crate::drift::{geometric_grid, DriftSpec, Z_MAX};
use crate::error::{CbdiError, Result};
use crate::mechanism::{LevyMeasure, Mechanism};
use crate::quad::{self, Estimate, Tolerance};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum TfTag {
    LyapunovF1,
    LyapunovF2,
    Custom,
}

pub trait TestFunction: Send + Sync {
    fn tag(&self) -> TfTag;
    fn value(&self, x: f64) -> f64;
    fn d1(&self, x: f64) -> f64;
    fn d2(&self, x: f64) -> f64;
    /// Asymptotic form of `f′` at infinity, if known.
    fn deriv_shape(&self) -> Option<Asymptotic> {
        None
    }
}

type Eval = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// User-supplied test function.
#[derive(Clone)]
pub struct CustomTf {
    f: Eval,
    df: Eval,
    d2f: Eval,
    shape: Option<Asymptotic>,
}

impl CustomTf {
    pub fn new(
        f: impl Fn(f64) -> f64 + Send + Sync + 'static,
        df: impl Fn(f64) -> f64 + Send + Sync + 'static,
        d2f: impl Fn(f64) -> f64 + Send + Sync + 'static,
    ) -> Self {
        Self {
            f: Arc::new(f),
            df: Arc::new(df),
            d2f: Arc::new(d2f),
            shape: None,
        }
    }

    pub fn with_deriv_shape(mut self, s: Asymptotic) -> Self {
        self.shape = Some(s);
        self
    }

    pub fn constant(c: f64) -> Self {
        Self::new(move |_| c, |_| 0.0, |_| 0.0).with_deriv_shape(Asymptotic::Vanishing)
    }

    pub fn identity() -> Self {
        Self::new(|x| x, |_| 1.0, |_| 0.0).with_deriv_shape(Asymptotic::constant(1.0))
    }

    /// `e^{−x}`, bounded with all derivatives bounded on `[0, ∞)`.
    pub fn exp_neg() -> Self {
        Self::new(|x| (-x).exp(), |x| -(-x).exp(), |x| (-x).exp())
    }
}

impl TestFunction for CustomTf {
    fn tag(&self) -> TfTag {
        TfTag::Custom
    }
    fn value(&self, x: f64) -> f64 {
        (self.f)(x)
    }
    fn d1(&self, x: f64) -> f64 {
        (self.df)(x)
    }
    fn d2(&self, x: f64) -> f64 {
        (self.d2f)(x)
    }
    fn deriv_shape(&self) -> Option<Asymptotic> {
        self.shape
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Which {
    F1,
    F2,
}

const TABLE_END: f64 = 1e60;

/// `f₁(z) = ∫_κ^z u/I(u) du` or `f₂(z) = ∫_κ^z du/I(u)` on `[κ, ∞)`, extended
/// below κ by the cubic `a z² + b z³` matching value and slope at κ.
#[derive(Clone)]
pub struct LyapunovFn {
    which: Which,
    d: DriftSpec,
    nodes: Vec<f64>,
    cum: Vec<f64>,
}

impl LyapunovFn {
    pub fn new(d: &DriftSpec, which: Which) -> Result<Self> {
        positive_on(d)?;
        let mut lf = Self {
            which,
            d: d.clone(),
            nodes: vec![d.kappa],
            cum: vec![0.0],
        };
        let mut nodes = vec![d.kappa];
        let mut z = d.kappa;
        while z < TABLE_END {
            z *= 2.0;
            nodes.push(z);
        }
        nodes.extend(d.breakpoints().into_iter().filter(|&b| b > d.kappa && b < z));
        nodes.sort_by(|a, b| a.partial_cmp(b).unwrap());
        nodes.dedup();
        let mut cum = vec![0.0];
        for w in nodes.windows(2) {
            let p = quad::integrate(|u| lf.g(u), w[0], w[1], tight())?;
            cum.push(cum.last().unwrap() + p.value);
        }
        lf.nodes = nodes;
        lf.cum = cum;
        Ok(lf)
    }

    pub fn f1(d: &DriftSpec) -> Result<Self> {
        Self::new(d, Which::F1)
    }

    pub fn f2(d: &DriftSpec) -> Result<Self> {
        Self::new(d, Which::F2)
    }

    pub fn which(&self) -> Which {
        self.which
    }

    /// Integrand on `[κ, ∞)`.
    fn g(&self, u: f64) -> f64 {
        match self.which {
            Which::F1 => u / self.d.eval(u),
            Which::F2 => 1.0 / self.d.eval(u),
        }
    }

    fn cubic(&self) -> (f64, f64) {
        let k = self.d.kappa;
        let s = self.g(k);
        (-s / k, s / (k * k))
    }
}

fn tight() -> Tolerance {
    Tolerance::default().with_abs(1e-14).with_rel(1e-12)
}

impl TestFunction for LyapunovFn {
    fn tag(&self) -> TfTag {
        match self.which {
            Which::F1 => TfTag::LyapunovF1,
            Which::F2 => TfTag::LyapunovF2,
        }
    }

    fn value(&self, x: f64) -> f64 {
        if x < self.d.kappa {
            let (a, b) = self.cubic();
            return x * x * (a + b * x);
        }
        let k = self.nodes.partition_point(|&z| z <= x) - 1;
        let z = self.nodes[k];
        if x == z {
            return self.cum[k];
        }
        let part = if x > 10.0 * z {
            quad::integrate_geometric(|u| self.g(u), z, x, &[], tight())
        } else {
            quad::integrate(|u| self.g(u), z, x, tight())
        };
        self.cum[k]
            + match part {
                Ok(e) => e.value,
                Err(CbdiError::Quadrature { estimate, .. }) => estimate,
                Err(_) => f64::NAN,
            }
    }

    fn d1(&self, x: f64) -> f64 {
        if x < self.d.kappa {
            let (a, b) = self.cubic();
            return x * (2.0 * a + 3.0 * b * x);
        }
        self.g(x)
    }

    fn d2(&self, x: f64) -> f64 {
        if x < self.d.kappa {
            let (a, b) = self.cubic();
            return 2.0 * a + 6.0 * b * x;
        }
        let i = self.d.eval(x);
        let di = self.d.eval_deriv(x).unwrap_or(f64::NAN);
        match self.which {
            Which::F1 => (i - x * di) / (i * i),
            Which::F2 => -di / (i * i),
        }
    }

    fn deriv_shape(&self) -> Option<Asymptotic> {
        let num = match self.which {
            Which::F1 => Asymptotic::power_log(1.0, 1.0, 0.0),
            Which::F2 => Asymptotic::constant(1.0),
        };
        num.div(self.d.shape()?)
    }
}

/// The three pieces of the jump integral at a state `x`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct JumpParts {
    /// `∫_0^1 (f′(x+u) − f′(x)) π([u,1]) du`
    pub small: f64,
    /// `π((1,∞)) ∫_0^1 f′(x+u) du`
    pub unit: f64,
    /// `∫_1^∞ f′(x+u) π̄(u) du`
    pub large: f64,
    pub residual: f64,
}

impl JumpParts {
    pub fn total(&self) -> f64 {
        self.small + self.unit + self.large
    }
}

fn decade_tail<F: Fn(f64) -> f64>(f: F, levy: &LevyMeasure) -> Result<Estimate> {
    let mut total = Estimate::ZERO;
    let mut sums = Vec::new();
    let mut lo = 1.0;
    for _ in 0..40 {
        let hi = lo * 10.0;
        let s = levy.integrate_split(&f, lo, hi, Tolerance::default())?;
        total = total + s;
        sums.push(total.value);
        if s.value.abs() <= 1e-13 * total.value.abs().max(1e-300) || (s.value == 0.0 && lo > 1e3) {
            return Ok(total);
        }
        lo = hi;
    }
    Err(CbdiError::Divergent { partial_sums: sums })
}

pub fn jump_parts<T: TestFunction + ?Sized>(levy: &LevyMeasure, tf: &T, x: f64) -> Result<JumpParts> {
    if levy.is_zero() {
        return Ok(JumpParts {
            small: 0.0,
            unit: 0.0,
            large: 0.0,
            residual: 0.0,
        });
    }
    let t1 = levy.tail_right(1.0);
    let d1x = tf.d1(x);
    let delta = 1e-3 * x.max(1e-12);
    let small = levy.integrate_split(
        |u| {
            let diff = if u < delta {
                u * tf.d2(x + 0.5 * u)
            } else {
                tf.d1(x + u) - d1x
            };
            diff * (levy.tail(u) - t1)
        },
        0.0,
        1.0,
        Tolerance::default(),
    )?;
    let unit = if t1 > 0.0 {
        quad::integrate(|u| tf.d1(x + u), 0.0, 1.0, tight())?.scale(t1)
    } else {
        Estimate::ZERO
    };
    let integrand = |u: f64| tf.d1(x + u) * levy.tail(u);
    let large = match tf.deriv_shape() {
        Some(s) => {
            let shape = s.mul(levy.tail_shape());
            if !shape.integrable() {
                let mut sums = Vec::new();
                let mut acc = 0.0;
                let mut lo = 1.0;
                for _ in 0..12 {
                    acc += levy
                        .integrate_split(integrand, lo, lo * 10.0, Tolerance::default())?
                        .value;
                    sums.push(acc);
                    lo *= 10.0;
                }
                return Err(CbdiError::Divergent { partial_sums: sums });
            }
            let far = levy.breakpoints().into_iter().fold(0.0, f64::max);
            let t = Z_MAX.max(100.0 * x).max(10.0 * far);
            let body = quad::integrate_geometric(integrand, 1.0, t, &levy.breakpoints(), Tolerance::default())?;
            let rem = shape.remainder(t)?;
            let at = shape.eval(t);
            let r = if at != 0.0 { integrand(t) / at } else { 1.0 };
            body + Estimate {
                value: r * rem.value,
                residual: r.abs() * rem.residual + (r - 1.0).abs() * rem.value.abs(),
            }
        }
        None => decade_tail(integrand, levy)?,
    };
    Ok(JumpParts {
        small: small.value,
        unit: unit.value,
        large: large.value,
        residual: small.residual + unit.residual + large.residual,
    })
}

/// `𝓧f(x)` with its quadrature residual.
pub fn generator_estimate<T: TestFunction + ?Sized>(m: &Mechanism, d: &DriftSpec, tf: &T, x: f64) -> Result<Estimate> {
    if !(x > 0.0) {
        return Err(CbdiError::InvalidParameter(format!("generator needs x > 0, got {x}")));
    }
    let d1 = tf.d1(x);
    let local =
        -(d.eval(x) + m.gamma * x) * d1 + 0.5 * m.sigma * m.sigma * x * if m.sigma == 0.0 { 0.0 } else { tf.d2(x) };
    let j = jump_parts(&m.levy, tf, x)?;
    Ok(Estimate {
        value: local + x * j.total(),
        residual: x * j.residual,
    })
}

pub fn apply_generator<T: TestFunction + ?Sized>(m: &Mechanism, d: &DriftSpec, tf: &T, x: f64) -> Result<f64> {
    generator_estimate(m, d, tf, x).map(|e| e.value)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ResidualPoint {
    pub z: f64,
    pub xf: f64,
    pub residual: f64,
    /// `ε₁(z)` for f₁, `ε₂(z)` for f₂.
    pub eps: f64,
}

/// `𝓧f` along `grid` together with the empirical remainder term:
/// f₁: `ε₁ = 𝓧f₁(z)/z + 1 − (σ²/2)(I − zI′)/I²`; f₂: `ε₂ = 𝓧f₂(z) + 1`.
pub fn residual_curve(m: &Mechanism, d: &DriftSpec, which: Which, grid: &[f64]) -> Result<Vec<ResidualPoint>> {
    let tf = LyapunovFn::new(d, which)?;
    grid.iter()
        .map(|&z| {
            let e = generator_estimate(m, d, &tf, z)?;
            let eps = match which {
                Which::F1 => {
                    let i = d.eval(z);
                    let di = d.eval_deriv(z).unwrap_or(f64::NAN);
                    e.value / z + 1.0 - 0.5 * m.sigma * m.sigma * (i - z * di) / (i * i)
                }
                Which::F2 => e.value + 1.0,
            };
            Ok(ResidualPoint {
                z,
                xf: e.value,
                residual: e.residual,
                eps,
            })
        })
        .collect()
}

pub fn default_margin_grid(d: &DriftSpec) -> Vec<f64> {
    geometric_grid(d.kappa.max(1.0), Z_MAX, 2f64.powf(0.25))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Margin {
    pub which: Which,
    /// Smallest grid point beyond which `𝓧f ≤ −c` on the grid.
    pub threshold: f64,
    pub c: f64,
    pub points: Vec<ResidualPoint>,
}

/// Slack subtracted from the certified level.
pub const C_SLACK: f64 = 1e-3;

fn suffix_max(points: &[ResidualPoint]) -> Vec<f64> {
    let mut s = vec![f64::NEG_INFINITY; points.len()];
    let mut acc = f64::NEG_INFINITY;
    for i in (0..points.len()).rev() {
        let up = points[i].xf + points[i].residual;
        acc = acc.max(if up.is_nan() { f64::INFINITY } else { up });
        s[i] = acc;
    }
    s
}

/// Certifies `𝓧f ≤ −c` beyond a grid threshold.
///
/// The target level is `0.9·min(c_tail, 1)`, where `c_tail` is the certified
/// level at the end of the grid; the threshold is the first grid point whose
/// suffix maximum (value plus residual) reaches it, and `c` is that suffix
/// maximum minus [`C_SLACK`].
pub fn lyapunov_margin(m: &Mechanism, d: &DriftSpec, which: Which, grid: Option<&[f64]>) -> Result<Margin> {
    let b1 = d.check_b1();
    if let crate::drift::Check::Fail { reason, .. } = &b1 {
        return Err(CbdiError::Certification(format!("condition B1 fails: {reason}")));
    }
    if which == Which::F2 {
        if let crate::drift::Check::Fail { reason, .. } = d.check_b2() {
            return Err(CbdiError::Certification(format!("condition B2 fails: {reason}")));
        }
    }
    let default;
    let grid = match grid {
        Some(g) => g,
        None => {
            default = default_margin_grid(d);
            &default
        }
    };
    let points = match residual_curve(m, d, which, grid) {
        Ok(p) => p,
        Err(CbdiError::Divergent { .. }) => {
            return Err(CbdiError::Certification("generator jump integral diverges".into()))
        }
        Err(e) => return Err(e),
    };
    certify(which, points)
}

fn certify(which: Which, points: Vec<ResidualPoint>) -> Result<Margin> {
    if points.is_empty() {
        return Err(CbdiError::Certification("empty grid".into()));
    }
    let s = suffix_max(&points);
    let c_tail = -s[s.len() - 1];
    if !(c_tail > 2.0 * C_SLACK) {
        return Err(CbdiError::Certification(format!(
            "Xf at the end of the grid is {:.6e}; no level c >= {C_SLACK} certified",
            -c_tail
        )));
    }
    let target = 0.9 * c_tail.min(1.0);
    let k = s.iter().position(|&v| v <= -target).unwrap();
    let c = -s[k] - C_SLACK;
    if c < C_SLACK {
        return Err(CbdiError::Certification(format!(
            "certified level {c:.3e} below {C_SLACK}"
        )));
    }
    Ok(Margin {
        which,
        threshold: points[k].z,
        c,
        points,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
#[serde(tag = "verdict", rename_all = "snake_case")]
pub enum DriftCriterion {
    /// f₂ certified and bounded: `𝔼_∞[τ_{x₀}^−] < ∞`.
    CdiByIii {
        x0: f64,
    },
    /// f₁ certified: non-explosion and `𝔼_x[τ_{x₀}^−] < ∞`.
    MeanHitByIi {
        x0: f64,
    },
    /// `𝓧f₁ ≤ 0 ≤ c f₁` beyond `x0` on the grid, without a positive margin.
    NonExplosiveByI {
        x0: f64,
    },
    None,
}

impl DriftCriterion {
    pub fn x0(&self) -> Option<f64> {
        match *self {
            DriftCriterion::CdiByIii { x0 }
            | DriftCriterion::MeanHitByIi { x0 }
            | DriftCriterion::NonExplosiveByI { x0 } => Some(x0),
            DriftCriterion::None => None,
        }
    }
}

pub fn drift_criterion_verdict(m: &Mechanism, d: &DriftSpec) -> DriftCriterion {
    if let Ok(mg) = lyapunov_margin(m, d, Which::F2, None) {
        if flow_integral(d).is_ok_and(|f| f.is_finite()) {
            return DriftCriterion::CdiByIii { x0: mg.threshold };
        }
    }
    if !d.check_b1().passed() {
        return DriftCriterion::None;
    }
    let grid = default_margin_grid(d);
    let points = match residual_curve(m, d, Which::F1, &grid) {
        Ok(p) => p,
        Err(_) => return DriftCriterion::None,
    };
    let s = suffix_max(&points);
    match certify(Which::F1, points.clone()) {
        Ok(mg) => DriftCriterion::MeanHitByIi { x0: mg.threshold },
        Err(_) => match s.iter().position(|&v| v <= 0.0) {
            Some(k) => DriftCriterion::NonExplosiveByI { x0: points[k].z },
            None => DriftCriterion::None,
        },
    }
}
