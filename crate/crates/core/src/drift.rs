//! Interaction drift `I` and the structural conditions [A], (B1)–(B3).

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::asymptotic::{Asymptotic, EXPONENT_TOL};
use crate::error::{CbdiError, Result};

/// Default right end of the verification window.
pub const Z_MAX: f64 = 1e8;
/// Geometric grid ratio for condition checks.
pub const GRID_RATIO: f64 = 1.090_507_732_665_257_7; // 2^{1/8}

type Eval = Arc<dyn Fn(f64) -> f64 + Send + Sync>;
type EvalOpt = Arc<dyn Fn(f64) -> Option<f64> + Send + Sync>;

/// A drift given by evaluators; the derivative may be undefined at kinks.
#[derive(Clone)]
pub struct CustomDrift {
    pub name: String,
    pub value: Eval,
    pub deriv: EvalOpt,
    /// Asymptotic form of `I` at infinity, when known.
    pub shape: Option<Asymptotic>,
    /// Asymptotic form of `I′` at infinity, when known.
    pub deriv_shape: Option<Asymptotic>,
}

impl CustomDrift {
    pub fn new(
        name: impl Into<String>,
        value: impl Fn(f64) -> f64 + Send + Sync + 'static,
        deriv: impl Fn(f64) -> Option<f64> + Send + Sync + 'static,
    ) -> Self {
        Self {
            name: name.into(),
            value: Arc::new(value),
            deriv: Arc::new(deriv),
            shape: None,
            deriv_shape: None,
        }
    }

    pub fn with_shape(mut self, shape: Asymptotic, deriv_shape: Asymptotic) -> Self {
        self.shape = Some(shape);
        self.deriv_shape = Some(deriv_shape);
        self
    }
}

impl fmt::Debug for CustomDrift {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CustomDrift")
            .field("name", &self.name)
            .field("shape", &self.shape)
            .finish()
    }
}

impl PartialEq for CustomDrift {
    fn eq(&self, other: &Self) -> bool {
        Arc::ptr_eq(&self.value, &other.value)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum DriftFamily {
    /// `c·z^p·(log z)^q` for `z ≥ join`, cubic blend to 0 below.
    PowerLog {
        coeff: f64,
        power: f64,
        #[serde(default)]
        log_power: f64,
        #[serde(default)]
        join: Option<f64>,
    },
    /// `(c/2)·z²`.
    Logistic { c: f64 },
    /// `a·z`.
    Linear { a: f64 },
    /// `Σ coeffs[k]·z^k`.
    Polynomial { coeffs: Vec<f64> },
    #[serde(skip)]
    Custom(CustomDrift),
}

/// Where κ came from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KappaSource {
    Declared,
    Grid,
    Analytic,
    /// No grid point qualified; κ = 1 was used.
    Fallback,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DriftSpec {
    #[serde(flatten)]
    pub family: DriftFamily,
    pub kappa: f64,
    #[serde(skip)]
    pub kappa_source: KappaSource,
    #[serde(skip)]
    blend: Option<(f64, f64, f64)>,
}

#[derive(Deserialize)]
struct RawDrift {
    #[serde(flatten)]
    family: DriftFamily,
    #[serde(default)]
    kappa: Option<f64>,
}

impl<'de> Deserialize<'de> for DriftSpec {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let raw = RawDrift::deserialize(d)?;
        DriftSpec::new(raw.family, raw.kappa).map_err(serde::de::Error::custom)
    }
}

/// Outcome of a condition check.
#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(tag = "outcome", rename_all = "snake_case")]
pub enum Check {
    Pass,
    Fail { reason: String, witness: Option<f64> },
}

impl Check {
    pub fn passed(&self) -> bool {
        matches!(self, Check::Pass)
    }

    fn fail(reason: impl Into<String>, witness: Option<f64>) -> Self {
        Check::Fail {
            reason: reason.into(),
            witness,
        }
    }
}

/// Outcome of the one-sided Lipschitz check.
#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(tag = "outcome", rename_all = "snake_case")]
pub enum CheckB3 {
    Pass { b: f64 },
    Fail { reason: String, witness: Option<f64> },
}

impl CheckB3 {
    pub fn constant(&self) -> Option<f64> {
        match self {
            CheckB3::Pass { b } => Some(*b),
            CheckB3::Fail { .. } => None,
        }
    }
}

fn invalid(msg: impl Into<String>) -> CbdiError {
    CbdiError::InvalidParameter(msg.into())
}

/// Geometric grid `lo, lo·r, …` up to and including `hi`.
pub fn geometric_grid(lo: f64, hi: f64, ratio: f64) -> Vec<f64> {
    let mut g = Vec::new();
    let mut k = 0i32;
    loop {
        let z = lo * ratio.powi(k);
        if z > hi * (1.0 + 1e-12) {
            break;
        }
        g.push(z);
        k += 1;
    }
    if g.last().is_some_and(|&z| z < hi) {
        g.push(hi);
    }
    g
}

impl DriftSpec {
    /// Builds a drift; `kappa = None` selects κ from the condition grid.
    pub fn new(family: DriftFamily, kappa: Option<f64>) -> Result<Self> {
        let blend = Self::validate(&family)?;
        let mut d = DriftSpec {
            family,
            kappa: 1.0,
            kappa_source: KappaSource::Fallback,
            blend,
        };
        match kappa {
            Some(k) => {
                if !(k >= 0.0 && k.is_finite()) {
                    return Err(invalid(format!("kappa must be finite and >= 0, got {k}")));
                }
                d.kappa = k;
                d.kappa_source = KappaSource::Declared;
            }
            None => {
                let (k, src) = d.default_kappa();
                d.kappa = k;
                d.kappa_source = src;
            }
        }
        Ok(d)
    }

    pub fn power_log(coeff: f64, power: f64, log_power: f64, kappa: Option<f64>) -> Result<Self> {
        Self::new(
            DriftFamily::PowerLog {
                coeff,
                power,
                log_power,
                join: None,
            },
            kappa,
        )
    }

    pub fn logistic(c: f64, kappa: Option<f64>) -> Result<Self> {
        Self::new(DriftFamily::Logistic { c }, kappa)
    }

    pub fn linear(a: f64, kappa: Option<f64>) -> Result<Self> {
        Self::new(DriftFamily::Linear { a }, kappa)
    }

    /// `I ≡ 0`.
    pub fn zero() -> Self {
        Self::linear(0.0, Some(1.0)).expect("zero drift is valid")
    }

    pub fn polynomial(coeffs: Vec<f64>, kappa: Option<f64>) -> Result<Self> {
        Self::new(DriftFamily::Polynomial { coeffs }, kappa)
    }

    pub fn custom(c: CustomDrift, kappa: Option<f64>) -> Result<Self> {
        Self::new(DriftFamily::Custom(c), kappa)
    }

    pub fn with_kappa(&self, kappa: f64) -> Result<Self> {
        Self::new(self.family.clone(), Some(kappa))
    }

    fn validate(family: &DriftFamily) -> Result<Option<(f64, f64, f64)>> {
        match family {
            DriftFamily::PowerLog {
                coeff,
                power,
                log_power,
                join,
            } => {
                if !(coeff.is_finite() && power.is_finite() && log_power.is_finite()) {
                    return Err(invalid("power-log parameters must be finite"));
                }
                if *coeff <= 0.0 {
                    return Err(invalid("power-log coeff must be positive"));
                }
                let z0 = match join {
                    Some(z) => *z,
                    None if *log_power == 0.0 && *power >= 1.0 => 0.0,
                    None if *log_power == 0.0 => 1.0,
                    None => std::f64::consts::E,
                };
                if !(z0 >= 0.0 && z0.is_finite()) {
                    return Err(invalid("join must be finite and >= 0"));
                }
                if *log_power != 0.0 && z0 <= 1.0 {
                    return Err(invalid("a log factor needs join > 1"));
                }
                if z0 == 0.0 {
                    if *power < 1.0 {
                        return Err(invalid("power < 1 needs a join point > 0 to stay Lipschitz"));
                    }
                    return Ok(None);
                }
                let i0 = Self::power_log_value(*coeff, *power, *log_power, z0);
                let d0 = Self::power_log_deriv(*coeff, *power, *log_power, z0);
                let b = (3.0 * i0 - z0 * d0) / (z0 * z0);
                let c = (z0 * d0 - 2.0 * i0) / (z0 * z0 * z0);
                Ok(Some((z0, b, c)))
            }
            DriftFamily::Logistic { c } => {
                if !(c.is_finite() && *c > 0.0) {
                    return Err(invalid("logistic c must be positive"));
                }
                Ok(None)
            }
            DriftFamily::Linear { a } => {
                if !a.is_finite() {
                    return Err(invalid("linear a must be finite"));
                }
                Ok(None)
            }
            DriftFamily::Polynomial { coeffs } => {
                if coeffs.is_empty() || coeffs.iter().any(|c| !c.is_finite()) {
                    return Err(invalid("polynomial needs finite coefficients"));
                }
                Ok(None)
            }
            DriftFamily::Custom(_) => Ok(None),
        }
    }

    fn power_log_value(c: f64, p: f64, q: f64, z: f64) -> f64 {
        let base = c * z.powf(p);
        if q == 0.0 {
            base
        } else {
            base * z.ln().powf(q)
        }
    }

    fn power_log_deriv(c: f64, p: f64, q: f64, z: f64) -> f64 {
        if q == 0.0 {
            c * p * z.powf(p - 1.0)
        } else {
            let l = z.ln();
            c * z.powf(p - 1.0) * l.powf(q - 1.0) * (p * l + q)
        }
    }

    /// `I(z)`.
    pub fn eval(&self, z: f64) -> f64 {
        match &self.family {
            DriftFamily::PowerLog {
                coeff,
                power,
                log_power,
                ..
            } => match self.blend {
                Some((z0, b, c)) if z < z0 => z * z * (b + c * z),
                _ => {
                    if z == 0.0 {
                        0.0
                    } else {
                        Self::power_log_value(*coeff, *power, *log_power, z)
                    }
                }
            },
            DriftFamily::Logistic { c } => 0.5 * c * z * z,
            DriftFamily::Linear { a } => a * z,
            DriftFamily::Polynomial { coeffs } => coeffs.iter().rev().fold(0.0, |acc, &k| acc * z + k),
            DriftFamily::Custom(cd) => (cd.value)(z),
        }
    }

    /// `I′(z)`; an error where the derivative is undefined.
    pub fn eval_deriv(&self, z: f64) -> Result<f64> {
        let v = match &self.family {
            DriftFamily::PowerLog {
                coeff,
                power,
                log_power,
                ..
            } => match self.blend {
                Some((z0, b, c)) if z < z0 => z * (2.0 * b + 3.0 * c * z),
                _ => {
                    if z == 0.0 {
                        if *power == 1.0 {
                            *coeff
                        } else {
                            0.0
                        }
                    } else {
                        Self::power_log_deriv(*coeff, *power, *log_power, z)
                    }
                }
            },
            DriftFamily::Logistic { c } => c * z,
            DriftFamily::Linear { a } => *a,
            DriftFamily::Polynomial { coeffs } => coeffs
                .iter()
                .enumerate()
                .skip(1)
                .rev()
                .fold(0.0, |acc, (k, &c)| acc * z + k as f64 * c),
            DriftFamily::Custom(cd) => (cd.deriv)(z).ok_or(CbdiError::UndefinedDerivative(z))?,
        };
        if v.is_finite() {
            Ok(v)
        } else {
            Err(CbdiError::UndefinedDerivative(z))
        }
    }

    /// The part of `I` that is linear in `z` and can be folded into `γ`.
    pub fn linear_coefficient(&self) -> f64 {
        match self.family {
            DriftFamily::Linear { a } => a,
            _ => 0.0,
        }
    }

    /// `I(z) − linear_coefficient·z`.
    pub fn nonlinear(&self, z: f64) -> f64 {
        match self.family {
            DriftFamily::Linear { .. } => 0.0,
            _ => self.eval(z),
        }
    }

    pub fn nonlinear_deriv(&self, z: f64) -> f64 {
        match self.family {
            DriftFamily::Linear { .. } => 0.0,
            _ => self.eval_deriv(z).unwrap_or(0.0),
        }
    }

    /// Asymptotic form of `I` at infinity, when known.
    pub fn shape(&self) -> Option<Asymptotic> {
        match &self.family {
            DriftFamily::PowerLog {
                coeff,
                power,
                log_power,
                ..
            } => Some(Asymptotic::power_log(*coeff, *power, *log_power)),
            DriftFamily::Logistic { c } => Some(Asymptotic::power_log(0.5 * c, 2.0, 0.0)),
            DriftFamily::Linear { a } => {
                if *a == 0.0 {
                    Some(Asymptotic::Vanishing)
                } else {
                    Some(Asymptotic::power_log(*a, 1.0, 0.0))
                }
            }
            DriftFamily::Polynomial { coeffs } => match coeffs.iter().rposition(|&c| c != 0.0) {
                Some(k) => Some(Asymptotic::power_log(coeffs[k], k as f64, 0.0)),
                None => Some(Asymptotic::Vanishing),
            },
            DriftFamily::Custom(cd) => cd.shape,
        }
    }

    /// Asymptotic form of `I′` at infinity, when known.
    pub fn deriv_shape(&self) -> Option<Asymptotic> {
        match &self.family {
            DriftFamily::PowerLog {
                coeff,
                power,
                log_power,
                ..
            } => {
                if power.abs() > EXPONENT_TOL {
                    Some(Asymptotic::power_log(coeff * power, power - 1.0, *log_power))
                } else if *log_power != 0.0 {
                    Some(Asymptotic::power_log(coeff * log_power, -1.0, log_power - 1.0))
                } else {
                    Some(Asymptotic::Vanishing)
                }
            }
            DriftFamily::Logistic { c } => Some(Asymptotic::power_log(*c, 1.0, 0.0)),
            DriftFamily::Linear { a } => Some(Asymptotic::constant(*a)),
            DriftFamily::Polynomial { coeffs } => match coeffs.iter().rposition(|&c| c != 0.0) {
                Some(k) if k >= 1 => Some(Asymptotic::power_log(k as f64 * coeffs[k], k as f64 - 1.0, 0.0)),
                _ => Some(Asymptotic::Vanishing),
            },
            DriftFamily::Custom(cd) => cd.deriv_shape,
        }
    }

    /// Points where the formula for `I` changes.
    pub fn breakpoints(&self) -> Vec<f64> {
        match self.blend {
            Some((z0, _, _)) => vec![z0],
            None => vec![],
        }
    }

    fn ratio_nondecreasing_from(&self, grid: &[f64]) -> Option<usize> {
        // smallest index from which I > 0 and I(z)/z is nondecreasing
        let mut start = 0usize;
        let mut prev = f64::NEG_INFINITY;
        for (i, &z) in grid.iter().enumerate() {
            let v = self.eval(z);
            if !(v > 0.0) {
                start = i + 1;
                prev = f64::NEG_INFINITY;
                continue;
            }
            let r = v / z;
            if r < prev - 1e-12 * prev.abs() {
                start = i;
            }
            prev = r;
        }
        (start < grid.len()).then_some(start)
    }

    fn default_kappa(&self) -> (f64, KappaSource) {
        let grid = geometric_grid(1e-3, Z_MAX, GRID_RATIO);
        if let DriftFamily::PowerLog { power, log_power, .. } = self.family {
            if power > 1.0 {
                let analytic = (-log_power / (power - 1.0)).exp();
                if analytic > Z_MAX {
                    return (analytic.max(self.blend.map_or(0.0, |b| b.0)), KappaSource::Analytic);
                }
            }
        }
        match self.ratio_nondecreasing_from(&grid) {
            Some(i) => (grid[i], KappaSource::Grid),
            None => (1.0, KappaSource::Fallback),
        }
    }

    fn check_grid(&self) -> Vec<f64> {
        geometric_grid(self.kappa.max(1e-3), Z_MAX.max(self.kappa * 10.0), GRID_RATIO)
    }

    /// [A]: `I(0) ≤ 0` and bounded difference quotients on dyadic blocks.
    pub fn check_a(&self) -> Check {
        let i0 = self.eval(0.0);
        if !(i0 <= 0.0) {
            return Check::fail(format!("I(0) = {i0} > 0"), Some(0.0));
        }
        let quotient = |lo: f64, hi: f64, n: usize| -> (f64, f64) {
            let h = (hi - lo) / n as f64;
            let mut worst = (0.0, lo);
            let mut prev = self.eval(lo);
            for k in 1..=n {
                let z = lo + h * k as f64;
                let v = self.eval(z);
                let q = ((v - prev) / h).abs();
                if !q.is_finite() {
                    return (f64::INFINITY, z);
                }
                if q > worst.0 {
                    worst = (q, z);
                }
                prev = v;
            }
            worst
        };
        let mut k = -10;
        while 2f64.powi(k) < Z_MAX {
            let (lo, hi) = (2f64.powi(k), 2f64.powi(k + 1));
            let coarse = quotient(lo, hi, 64);
            let fine = quotient(lo, hi, 1024);
            if !fine.0.is_finite() {
                return Check::fail("non-finite difference quotient", Some(fine.1));
            }
            // Lipschitz blocks keep their quotient under refinement; a
            // square-root type singularity grows like 4× over 16× refinement
            let scale = 1e-12 * (self.eval(lo).abs() + self.eval(hi).abs()) / (hi - lo);
            if fine.0 > 2.0 * coarse.0 + scale + 1e-12 {
                return Check::fail("difference quotients grow under refinement", Some(fine.1));
            }
            k += 1;
        }
        Check::Pass
    }

    /// (B1): `I ∈ C¹`, `I > 0`, `I(z)/z` nondecreasing and unbounded on
    /// `[κ, ∞)`, and `∫_κ^∞ u/I(u) du = ∞`.
    pub fn check_b1(&self) -> Check {
        let grid = self.check_grid();
        let mut prev = f64::NEG_INFINITY;
        for &z in &grid {
            let v = self.eval(z);
            if !(v > 0.0) {
                return Check::fail("I is not positive on [kappa, inf)", Some(z));
            }
            if self.eval_deriv(z).is_err() {
                return Check::fail("I is not differentiable on [kappa, inf)", Some(z));
            }
            let r = v / z;
            if r < prev - 1e-12 * prev.abs() {
                return Check::fail("I(z)/z is not nondecreasing", Some(z));
            }
            prev = r;
        }
        let ratio_unbounded = match self.shape() {
            Some(s) => s
                .div(Asymptotic::power_log(1.0, 1.0, 0.0))
                .is_some_and(|r| r.diverges()),
            None => {
                let z1 = grid[grid.len() - 1];
                let z0 = z1 / 100.0;
                self.eval(z1) / z1 >= 2.0 * self.eval(z0) / z0
            }
        };
        if !ratio_unbounded {
            return Check::fail("I(z)/z does not tend to infinity", None);
        }
        let flow_u_divergent = match self.shape() {
            Some(s) => match Asymptotic::power_log(1.0, 1.0, 0.0).div(s) {
                Some(r) => !r.integrable(),
                None => true,
            },
            None => match self.empirical_slope(|z| z / self.eval(z)) {
                Some(s) if s > -1.0 + 0.05 => true,
                Some(s) if s < -1.0 - 0.05 => false,
                _ => return Check::fail("integrability of u/I(u) is undecidable from the grid", None),
            },
        };
        if !flow_u_divergent {
            return Check::fail("the integral of u/I(u) is finite", None);
        }
        Check::Pass
    }

    fn empirical_slope(&self, f: impl Fn(f64) -> f64) -> Option<f64> {
        let z1 = Z_MAX;
        let z0 = Z_MAX / 100.0;
        let (a, b) = (f(z0), f(z1));
        if a > 0.0 && b > 0.0 {
            Some((b / a).ln() / (z1 / z0).ln())
        } else {
            None
        }
    }

    /// (B2): `I′(z)/z` bounded on `[κ, ∞)`.
    pub fn check_b2(&self) -> Check {
        let grid = self.check_grid();
        for &z in &grid {
            match self.eval_deriv(z) {
                Ok(d) => {
                    if !(d / z).is_finite() {
                        return Check::fail("I'(z)/z is not finite", Some(z));
                    }
                }
                Err(_) => return Check::fail("I' is undefined", Some(z)),
            }
        }
        let bounded = match self.deriv_shape() {
            Some(s) => s.div(Asymptotic::power_log(1.0, 1.0, 0.0)).is_some_and(|r| r.bounded()),
            None => match self.empirical_slope(|z| self.eval_deriv(z).map_or(f64::NAN, |d| (d / z).abs())) {
                Some(s) => s <= 0.05,
                None => true,
            },
        };
        if bounded {
            Check::Pass
        } else {
            Check::fail("I'(z)/z grows without bound", Some(grid[grid.len() - 1]))
        }
    }

    fn b3_on(&self, z_max: f64) -> (f64, f64) {
        // −min I′ on a 1-D grid, refined locally, and −min (I(y+z)−I(y))/z on a 2-D grid
        let n = 2048;
        let mut pts: Vec<f64> = (0..=n).map(|k| z_max * k as f64 / n as f64).collect();
        pts.extend(geometric_grid(1e-6 * z_max, z_max, GRID_RATIO));
        pts.extend(self.breakpoints());
        pts.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let mut worst = (0.0f64, 0.0f64);
        let mut arg = 0usize;
        for (i, &z) in pts.iter().enumerate() {
            if let Ok(d) = self.eval_deriv(z) {
                if -d > worst.0 {
                    worst = (-d, z);
                    arg = i;
                }
            }
        }
        if worst.0 > 0.0 {
            // golden-section refinement of min I′ around the grid minimizer
            let lo = pts[arg.saturating_sub(1)];
            let hi = pts[(arg + 1).min(pts.len() - 1)];
            let g = |z: f64| self.eval_deriv(z).unwrap_or(0.0);
            let (mut a, mut b) = (lo, hi);
            let phi = 0.618_033_988_749_894_9;
            for _ in 0..100 {
                let c = b - phi * (b - a);
                let d = a + phi * (b - a);
                if g(c) < g(d) {
                    b = d;
                } else {
                    a = c;
                }
            }
            let m = 0.5 * (a + b);
            if -g(m) > worst.0 {
                worst = (-g(m), m);
            }
        }
        let m = 96;
        let axis: Vec<f64> = (0..=m).map(|k| z_max * (k as f64 / m as f64).powi(2)).collect();
        for &y in &axis {
            for &z in axis.iter().skip(1) {
                if y + z > z_max {
                    break;
                }
                let q = (self.eval(y + z) - self.eval(y)) / z;
                if -q > worst.0 {
                    worst = (-q, y);
                }
            }
        }
        worst
    }

    /// (B3): smallest grid-certified `b ≥ 0` with `I(y+z) − I(y) ≥ −b·z` on `[0, z_max]`.
    pub fn check_b3(&self, z_max: f64) -> CheckB3 {
        match self.family {
            DriftFamily::Logistic { .. } => return CheckB3::Pass { b: 0.0 },
            DriftFamily::Linear { a } => return CheckB3::Pass { b: (-a).max(0.0) },
            _ => {}
        }
        let (b_full, w_full) = self.b3_on(z_max);
        let (b_quarter, _) = self.b3_on(0.25 * z_max);
        if b_full > 2.0 * b_quarter + 1e-9 * (1.0 + b_quarter) {
            return CheckB3::Fail {
                reason: "one-sided Lipschitz constant grows with the window".into(),
                witness: Some(w_full),
            };
        }
        CheckB3::Pass { b: b_full }
    }
}
