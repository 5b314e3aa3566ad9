//! Boundary classification integrals and sufficient-condition verdicts.
//!
//! `𝓘 = ∫_κ^∞ u·π̄(u)/I(u) du`, `𝓙 = ∫_κ^∞ (1 + u·π̄(u))/I(u) du` and the
//! flow integral `∫_κ^∞ du/I(u)` are computed as quadrature on `[κ, T]`
//! plus an asymptotic remainder, after an exponent test has decided
//! finiteness. Verdicts are one-directional: `Guaranteed` or `Inconclusive`.

use serde::Serialize;

use crate::asymptotic::{Asymptotic, EXPONENT_TOL};
use crate::drift::{geometric_grid, Check, CheckB3, DriftSpec, KappaSource, GRID_RATIO, Z_MAX};
use crate::error::{CbdiError, Result};
use crate::mechanism::{Extended, LevyMeasure, Mechanism};
use crate::quad::{self, Estimate, Tolerance};

/// Quadrature cut for the classification integrals.
pub const T_CUT: f64 = 1e8;
/// Quadrature cut for the moment form; the rest is closed analytically.
const T_FAR: f64 = 1e100;
/// Window for the one-sided Lipschitz check in reports.
pub const B3_WINDOW: f64 = 1e4;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Guaranteed,
    Inconclusive,
}

impl Verdict {
    fn from_bool(b: bool) -> Self {
        if b {
            Verdict::Guaranteed
        } else {
            Verdict::Inconclusive
        }
    }

    pub fn guaranteed(self) -> bool {
        self == Verdict::Guaranteed
    }
}

/// Rows of the power-log regime table.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Row {
    A1,
    A2,
    A3,
    A4,
    A5,
    B1,
    B2,
    B3,
    B4,
    B5,
}

impl Row {
    pub fn is_cdi(self) -> bool {
        matches!(self, Row::B1 | Row::B2 | Row::B3 | Row::B4 | Row::B5)
    }

    pub fn tag(self) -> &'static str {
        match self {
            Row::A1 => "a1",
            Row::A2 => "a2",
            Row::A3 => "a3",
            Row::A4 => "a4",
            Row::A5 => "a5",
            Row::B1 => "b1",
            Row::B2 => "b2",
            Row::B3 => "b3",
            Row::B4 => "b4",
            Row::B5 => "b5",
        }
    }
}

/// Rows satisfied by `π̄ ~ c_B u^{-α}(log u)^β`, `I ~ c_I z^{α̂}(log z)^{β̂}`.
pub fn regime_table(alpha: f64, beta: f64, alpha_hat: f64, beta_hat: f64) -> Vec<Row> {
    let eq = |x: f64, y: f64| (x - y).abs() <= EXPONENT_TOL;
    let gt = |x: f64, y: f64| x > y + EXPONENT_TOL;
    let in12 = gt(alpha_hat, 1.0) && gt(2.0, alpha_hat);
    let mut rows = Vec::new();
    if gt(alpha + alpha_hat, 2.0) && in12 {
        rows.extend([Row::A1, Row::B1]);
    }
    if gt(alpha, 1.0) && eq(alpha_hat, 1.0) {
        if gt(beta_hat, 0.0) {
            rows.push(Row::A2);
        }
        if gt(beta_hat, 1.0) {
            rows.push(Row::B2);
        }
    }
    if eq(alpha_hat, 2.0) {
        rows.extend([Row::A3, Row::B3]);
    }
    if eq(alpha + alpha_hat, 2.0) && in12 && gt(beta_hat - beta, 1.0) {
        rows.extend([Row::A4, Row::B4]);
    }
    if eq(alpha, 1.0) && eq(alpha_hat, 1.0) && gt(beta_hat - beta, 1.0) {
        if gt(beta_hat, 0.0) {
            rows.push(Row::A5);
        }
        if gt(beta_hat, 1.0) {
            rows.push(Row::B5);
        }
    }
    rows.sort();
    rows
}

/// Power-log exponents `(α, β, α̂, β̂)` when both asymptotic forms are known.
pub fn table_parameters(levy: &LevyMeasure, d: &DriftSpec) -> Option<(f64, f64, f64, f64)> {
    match (levy.tail_shape(), d.shape()?) {
        (
            Asymptotic::PowerLog {
                coeff: cb,
                power,
                log_power,
            },
            Asymptotic::PowerLog {
                coeff: ci,
                power: ah,
                log_power: bh,
            },
        ) if cb > 0.0 && ci > 0.0 && -power > 0.0 && -power <= 2.0 => Some((-power, log_power, ah, bh)),
        _ => None,
    }
}

pub(crate) fn positive_on(d: &DriftSpec) -> Result<()> {
    if !(d.kappa > 0.0) {
        return Err(CbdiError::InvalidParameter(
            "classification integrals need kappa > 0".into(),
        ));
    }
    for z in geometric_grid(d.kappa, Z_MAX.max(10.0 * d.kappa), GRID_RATIO) {
        if !(d.eval(z) > 0.0) {
            return Err(CbdiError::InvalidParameter(format!(
                "I is not positive on [kappa, inf): I({z}) = {}",
                d.eval(z)
            )));
        }
    }
    Ok(())
}

fn breaks_for(levy: &LevyMeasure, d: &DriftSpec) -> Vec<f64> {
    let mut b = levy.breakpoints();
    b.extend(d.breakpoints());
    b
}

/// `∫_a^∞ f`, with `shape` the asymptotic form of `f` (empirical if `None`).
fn improper<F: Fn(f64) -> f64>(f: F, shape: Option<Asymptotic>, a: f64, breaks: &[f64]) -> Result<Extended> {
    let far_break = breaks.iter().copied().filter(|b| b.is_finite()).fold(0.0, f64::max);
    let t = T_CUT.max(10.0 * far_break).max(10.0 * a);
    let tail_part = match shape {
        Some(s) => {
            if !s.integrable() {
                return Ok(Extended::Infinite);
            }
            let rem = s.remainder(t)?;
            let at = s.eval(t);
            let r = if at != 0.0 { f(t) / at } else { 1.0 };
            Estimate {
                value: r * rem.value,
                residual: r.abs() * rem.residual + (r - 1.0).abs() * rem.value.abs(),
            }
        }
        None => {
            let (f0, f1) = (f(t / 100.0), f(t));
            if f0 == 0.0 && f1 == 0.0 {
                Estimate::ZERO
            } else if f0 > 0.0 && f1 > 0.0 {
                let slope = (f1 / f0).ln() / 100f64.ln();
                if slope > -1.0 + 0.05 {
                    return Ok(Extended::Infinite);
                }
                if slope >= -1.0 - 0.05 {
                    return Err(CbdiError::UndecidableTail(format!(
                        "empirical log-log slope {slope:.4} is within 0.05 of -1"
                    )));
                }
                let rem = f1 * t / (-slope - 1.0);
                Estimate {
                    value: rem,
                    residual: rem,
                }
            } else {
                return Err(CbdiError::UndecidableTail("integrand changes sign near the cut".into()));
            }
        }
    };
    let body = quad::integrate_geometric(&f, a, t, breaks, Tolerance::default())?;
    Ok(Extended::finite(body + tail_part))
}

fn u_over(s: Option<Asymptotic>) -> Option<Asymptotic> {
    Asymptotic::power_log(1.0, 1.0, 0.0).div(s?)
}

/// `𝓘 = ∫_κ^∞ u·π̄(u)/I(u) du`.
pub fn integral_i(levy: &LevyMeasure, d: &DriftSpec) -> Result<Extended> {
    if levy.is_zero() {
        return Ok(Extended::Finite {
            value: 0.0,
            residual: 0.0,
        });
    }
    positive_on(d)?;
    let tail = levy.tail_shape();
    let shape = match tail {
        Asymptotic::Vanishing => Some(Asymptotic::Vanishing),
        _ => u_over(d.shape()).map(|s| s.mul(tail)),
    };
    improper(|u| u * levy.tail(u) / d.eval(u), shape, d.kappa, &breaks_for(levy, d))
}

/// `∫_κ^∞ du/I(u)`.
pub fn flow_integral(d: &DriftSpec) -> Result<Extended> {
    positive_on(d)?;
    let shape = d.shape().and_then(|s| Asymptotic::constant(1.0).div(s));
    improper(|u| 1.0 / d.eval(u), shape, d.kappa, &d.breakpoints())
}

/// `𝓙 = flow + 𝓘`.
pub fn integral_j(levy: &LevyMeasure, d: &DriftSpec) -> Result<Extended> {
    Ok(flow_integral(d)?.add(integral_i(levy, d)?))
}

/// `G(h) = ∫_κ^h u/I(u) du`.
pub fn moment_g(d: &DriftSpec, h: f64) -> Result<f64> {
    if !(h >= d.kappa) {
        return Err(CbdiError::InvalidParameter(format!("G needs h >= kappa, got {h}")));
    }
    if h == d.kappa {
        return Ok(0.0);
    }
    match d.family {
        crate::drift::DriftFamily::Logistic { c } => return Ok(2.0 / c * (h / d.kappa).ln()),
        crate::drift::DriftFamily::PowerLog {
            coeff,
            power,
            log_power,
            ..
        } if log_power == 0.0 && d.breakpoints().iter().all(|&z0| d.kappa >= z0) => {
            let k = d.kappa;
            return Ok(if power == 2.0 {
                (h / k).ln() / coeff
            } else {
                (h.powf(2.0 - power) - k.powf(2.0 - power)) / (coeff * (2.0 - power))
            });
        }
        _ => {}
    }
    positive_on(d)?;
    Ok(quad::integrate_geometric(|u| u / d.eval(u), d.kappa, h, &d.breakpoints(), Tolerance::default())?.value)
}

/// Cumulative table of `G` on a doubling grid.
struct GTable<'a> {
    d: &'a DriftSpec,
    nodes: Vec<f64>,
    cum: Vec<f64>,
}

impl<'a> GTable<'a> {
    fn new(d: &'a DriftSpec, upto: f64) -> Result<Self> {
        let mut nodes = vec![d.kappa];
        let mut z = d.kappa;
        while z < upto {
            z *= 2.0;
            nodes.push(z);
        }
        nodes.extend(d.breakpoints().into_iter().filter(|&b| b > d.kappa && b < z));
        nodes.sort_by(|a, b| a.partial_cmp(b).unwrap());
        nodes.dedup();
        let tight = Tolerance::default().with_abs(1e-14).with_rel(1e-12);
        let mut cum = vec![0.0];
        for w in nodes.windows(2) {
            let p = quad::integrate(|u| u / d.eval(u), w[0], w[1], tight)?;
            cum.push(cum.last().unwrap() + p.value);
        }
        Ok(Self { d, nodes, cum })
    }

    fn eval(&self, h: f64) -> f64 {
        let k = match self.nodes.partition_point(|&z| z <= h) {
            0 => return 0.0,
            k => k - 1,
        };
        let z = self.nodes[k];
        if h == z {
            return self.cum[k];
        }
        let tight = Tolerance::default().with_abs(1e-14).with_rel(1e-12);
        let part = quad::integrate(|u| u / self.d.eval(u), z, h, tight)
            .map(|e| e.value)
            .unwrap_or_else(|e| match e {
                CbdiError::Quadrature { estimate, .. } => estimate,
                _ => f64::NAN,
            });
        self.cum[k] + part
    }
}

/// Asymptotic form of an antiderivative of `s` (or a positive constant when
/// `s` is integrable).
fn antiderivative_shape(s: Asymptotic) -> Asymptotic {
    match s {
        Asymptotic::Vanishing => Asymptotic::constant(1.0),
        Asymptotic::PowerLog {
            coeff,
            power,
            log_power,
        } => {
            if s.integrable() {
                Asymptotic::constant(1.0)
            } else if power > -1.0 + EXPONENT_TOL {
                Asymptotic::power_log(coeff / (power + 1.0), power + 1.0, log_power)
            } else if log_power > -1.0 + EXPONENT_TOL {
                Asymptotic::power_log(coeff / (log_power + 1.0), 0.0, log_power + 1.0)
            } else {
                // log log growth: dominated by any positive log power
                Asymptotic::power_log(coeff, 0.0, 1e-6)
            }
        }
    }
}

/// `∫_{[κ,∞)} G(h) π(dh)`, computed against the jump density and atoms; its
/// finiteness must agree with [`integral_i`].
pub fn moment_criterion(levy: &LevyMeasure, d: &DriftSpec) -> Result<Extended> {
    if levy.is_zero() {
        return Ok(Extended::Finite {
            value: 0.0,
            residual: 0.0,
        });
    }
    positive_on(d)?;
    let i_val = integral_i(levy, d)?;
    let g_shape = match u_over(d.shape()) {
        Some(s) => antiderivative_shape(s),
        None => {
            return Err(CbdiError::UndecidableTail(
                "drift has no declared asymptotic form".into(),
            ))
        }
    };
    let finite = levy.density_shape().mul(g_shape).integrable();
    if finite != i_val.is_finite() {
        return Err(CbdiError::Consistency(format!(
            "moment criterion finiteness {finite} disagrees with I finiteness {}",
            i_val.is_finite()
        )));
    }
    if !finite {
        return Ok(Extended::Infinite);
    }
    let table = GTable::new(d, T_FAR)?;
    let mut total = Estimate::ZERO;
    for (h, mass) in levy.atoms() {
        if h >= d.kappa {
            total = total + Estimate::exact(table.eval(h) * mass);
        }
    }
    let mut nodes = vec![d.kappa];
    let mut inner: Vec<f64> = breaks_for(levy, d)
        .into_iter()
        .filter(|&b| b > d.kappa && b < T_FAR)
        .collect();
    inner.sort_by(|a, b| a.partial_cmp(b).unwrap());
    inner.dedup();
    nodes.extend(inner);
    nodes.push(T_FAR);
    for w in nodes.windows(2) {
        let part = quad::integrate_log_range(|h| table.eval(h) * levy.density(h), w[0], w[1], Tolerance::default())?;
        total = total + part;
    }
    // beyond T_FAR: ∫_{(T,∞)} G dπ = G(T)π̄(T) + ∫_T^∞ u π̄(u)/I(u) du
    let i_shape = u_over(d.shape()).map(|s| s.mul(levy.tail_shape()));
    if let Some(s) = i_shape {
        let rem = s.remainder(T_FAR)?;
        let at = s.eval(T_FAR);
        let r = if at != 0.0 {
            T_FAR * levy.tail(T_FAR) / d.eval(T_FAR) / at
        } else {
            1.0
        };
        total = total
            + Estimate {
                value: table.eval(T_FAR) * levy.tail(T_FAR) + r * rem.value,
                residual: rem.residual + (r - 1.0).abs() * rem.value.abs(),
            };
    }
    Ok(Extended::finite(total))
}

/// A drift `c·z²` below the given one on `[κ′, ∞)`, used through CP2.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Comparison {
    pub coeff: f64,
    pub kappa: f64,
    pub verdict_nonexplosion: Verdict,
    pub verdict_cdi: Verdict,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ClassificationReport {
    pub kappa: f64,
    pub kappa_source: KappaSource,
    pub i_value: Option<Extended>,
    pub j_value: Option<Extended>,
    pub flow_integral: Option<Extended>,
    pub b1: Check,
    pub b2: Check,
    pub b3: CheckB3,
    pub verdict_nonexplosion: Verdict,
    pub verdict_cdi: Verdict,
    pub comparison: Option<Comparison>,
    pub table_row: Option<Row>,
    pub table_rows: Vec<Row>,
    /// Lyapunov-certified threshold standing in for the existential `x₀`.
    pub x0_lyapunov_standin: Option<f64>,
}

struct Direct {
    i: Option<Extended>,
    j: Option<Extended>,
    flow: Option<Extended>,
    b1: Check,
    b2: Check,
    nonexpl: bool,
    cdi: bool,
}

fn classify_direct(m: &Mechanism, d: &DriftSpec) -> Result<Direct> {
    let b1 = d.check_b1();
    let b2 = d.check_b2();
    let (i, flow) = if positive_on(d).is_ok() {
        (Some(integral_i(&m.levy, d)?), Some(flow_integral(d)?))
    } else {
        (None, None)
    };
    let j = match (i, flow) {
        (Some(i), Some(f)) => Some(f.add(i)),
        _ => None,
    };
    let nonexpl = b1.passed() && i.is_some_and(|v| v.is_finite());
    let cdi = b1.passed() && b2.passed() && j.is_some_and(|v| v.is_finite());
    Ok(Direct {
        i,
        j,
        flow,
        b1,
        b2,
        nonexpl,
        cdi,
    })
}

fn try_comparison(m: &Mechanism, d: &DriftSpec) -> Result<Option<Comparison>> {
    let Some(Asymptotic::PowerLog {
        coeff,
        power,
        log_power,
    }) = d.shape()
    else {
        return Ok(None);
    };
    let at_least_quadratic =
        coeff > 0.0 && (power > 2.0 + EXPONENT_TOL || ((power - 2.0).abs() <= EXPONENT_TOL && log_power >= 0.0));
    if !at_least_quadratic {
        return Ok(None);
    }
    let kappa = d.kappa.max(std::f64::consts::E);
    let grid = geometric_grid(kappa, Z_MAX, GRID_RATIO);
    let c = grid.iter().map(|&z| d.eval(z) / (z * z)).fold(f64::INFINITY, f64::min);
    if !(c > 0.0 && c.is_finite()) {
        return Ok(None);
    }
    let comp = DriftSpec::power_log(c, 2.0, 0.0, Some(kappa))?;
    let r = classify_direct(m, &comp)?;
    Ok(Some(Comparison {
        coeff: c,
        kappa,
        verdict_nonexplosion: Verdict::from_bool(r.nonexpl),
        verdict_cdi: Verdict::from_bool(r.cdi),
    }))
}

/// Sufficient-condition verdicts for non-explosion and coming down from infinity.
pub fn classify(m: &Mechanism, d: &DriftSpec) -> Result<ClassificationReport> {
    let direct = classify_direct(m, d)?;
    let mut nonexpl = direct.nonexpl;
    let mut cdi = direct.cdi;
    let mut comparison = None;
    if !(nonexpl && cdi) {
        if let Some(c) = try_comparison(m, d)? {
            nonexpl |= c.verdict_nonexplosion.guaranteed();
            cdi |= c.verdict_cdi.guaranteed();
            comparison = Some(c);
        }
    }
    let table_rows = table_parameters(&m.levy, d)
        .map(|(a, b, ah, bh)| regime_table(a, b, ah, bh))
        .unwrap_or_default();
    let table_row = table_rows
        .iter()
        .copied()
        .filter(|r| r.is_cdi())
        .chain(table_rows.iter().copied())
        .next();
    Ok(ClassificationReport {
        kappa: d.kappa,
        kappa_source: d.kappa_source,
        i_value: direct.i,
        j_value: direct.j,
        flow_integral: direct.flow,
        b1: direct.b1,
        b2: direct.b2,
        b3: d.check_b3(B3_WINDOW),
        verdict_nonexplosion: Verdict::from_bool(nonexpl),
        verdict_cdi: Verdict::from_bool(cdi),
        comparison,
        table_row,
        table_rows,
        x0_lyapunov_standin: None,
    })
}

/// Cross-check of 𝓙 finiteness against `∫_κ^∞ (1 + u|Ψ(1/u)|)/I(u) du` for
/// stable-like tails with index in `(0, 1)`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RegularVariation {
    pub index: f64,
    /// `None` when the estimated exponent is too close to the boundary.
    pub psi_form_finite: Option<bool>,
    pub j_finite: bool,
    pub agrees: Option<bool>,
}

pub fn regular_variation_check(m: &Mechanism, d: &DriftSpec) -> Result<RegularVariation> {
    let alpha = match table_parameters(&m.levy, d) {
        Some((a, ..)) if a > 0.0 && a < 1.0 => a,
        _ => {
            return Err(CbdiError::InvalidParameter(
                "regular-variation check needs a power-log tail with index in (0,1)".into(),
            ))
        }
    };
    let (z0, z1) = (1e-7, 1e-5);
    let (p0, p1) = (m.psi_eval(z0)?.abs(), m.psi_eval(z1)?.abs());
    let index = (p1 / p0).ln() / (z1 / z0).ln();
    let Some(Asymptotic::PowerLog {
        power: ah,
        log_power: bh,
        ..
    }) = d.shape()
    else {
        return Err(CbdiError::UndecidableTail("drift has no power-log form".into()));
    };
    let j_finite = integral_j(&m.levy, d)?.is_finite();
    // u|Ψ(1/u)|/I(u) ~ u^{1 − index − α̂}
    let e = 1.0 - index - ah;
    let flow_finite = Asymptotic::power_log(1.0, -ah, -bh).integrable();
    let psi_form_finite = if (e + 1.0).abs() < 0.02 {
        None
    } else {
        Some(flow_finite && e < -1.0)
    };
    let _ = alpha;
    Ok(RegularVariation {
        index,
        psi_form_finite,
        j_finite,
        agrees: psi_form_finite.map(|f| f == j_finite),
    })
}
