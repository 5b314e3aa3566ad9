//! Power-log asymptotic forms `c·u^p·(log u)^q` as `u → ∞`.
//!
//! Used to decide integrability at infinity by exponent arithmetic and to
//! close improper integrals with an exact remainder beyond a cut point.

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::quad::{self, Estimate, Tolerance};

/// Exponents closer than this are treated as equal.
pub const EXPONENT_TOL: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Asymptotic {
    /// Identically zero beyond some finite point.
    Vanishing,
    PowerLog {
        coeff: f64,
        power: f64,
        log_power: f64,
    },
}

impl Asymptotic {
    pub fn power_log(coeff: f64, power: f64, log_power: f64) -> Self {
        Asymptotic::PowerLog {
            coeff,
            power,
            log_power,
        }
    }

    pub fn constant(c: f64) -> Self {
        Self::power_log(c, 0.0, 0.0)
    }

    pub fn mul(self, other: Asymptotic) -> Asymptotic {
        match (self, other) {
            (Asymptotic::Vanishing, _) | (_, Asymptotic::Vanishing) => Asymptotic::Vanishing,
            (
                Asymptotic::PowerLog {
                    coeff: c1,
                    power: p1,
                    log_power: q1,
                },
                Asymptotic::PowerLog {
                    coeff: c2,
                    power: p2,
                    log_power: q2,
                },
            ) => Asymptotic::power_log(c1 * c2, p1 + p2, q1 + q2),
        }
    }

    /// `self / other`; `other` must not vanish.
    pub fn div(self, other: Asymptotic) -> Option<Asymptotic> {
        match (self, other) {
            (_, Asymptotic::Vanishing) => None,
            (Asymptotic::Vanishing, _) => Some(Asymptotic::Vanishing),
            (
                Asymptotic::PowerLog {
                    coeff: c1,
                    power: p1,
                    log_power: q1,
                },
                Asymptotic::PowerLog {
                    coeff: c2,
                    power: p2,
                    log_power: q2,
                },
            ) => Some(Asymptotic::power_log(c1 / c2, p1 - p2, q1 - q2)),
        }
    }

    pub fn eval(&self, u: f64) -> f64 {
        match *self {
            Asymptotic::Vanishing => 0.0,
            Asymptotic::PowerLog {
                coeff,
                power,
                log_power,
            } => {
                let lp = if log_power == 0.0 { 1.0 } else { u.ln().powf(log_power) };
                coeff * u.powf(power) * lp
            }
        }
    }

    /// Whether `∫^∞ |form| du < ∞`.
    pub fn integrable(&self) -> bool {
        match *self {
            Asymptotic::Vanishing => true,
            Asymptotic::PowerLog {
                coeff,
                power,
                log_power,
            } => {
                if coeff == 0.0 {
                    return true;
                }
                let p = power + 1.0;
                if p < -EXPONENT_TOL {
                    true
                } else if p > EXPONENT_TOL {
                    false
                } else {
                    log_power < -1.0 - EXPONENT_TOL
                }
            }
        }
    }

    /// Whether the form tends to zero.
    pub fn vanishes(&self) -> bool {
        match *self {
            Asymptotic::Vanishing => true,
            Asymptotic::PowerLog {
                coeff,
                power,
                log_power,
            } => coeff == 0.0 || power < -EXPONENT_TOL || (power.abs() <= EXPONENT_TOL && log_power < 0.0),
        }
    }

    /// Whether the form tends to `+∞` (coefficient assumed positive).
    pub fn diverges(&self) -> bool {
        match *self {
            Asymptotic::Vanishing => false,
            Asymptotic::PowerLog {
                coeff,
                power,
                log_power,
            } => coeff > 0.0 && (power > EXPONENT_TOL || (power.abs() <= EXPONENT_TOL && log_power > 0.0)),
        }
    }

    /// Whether the form stays bounded.
    pub fn bounded(&self) -> bool {
        match *self {
            Asymptotic::Vanishing => true,
            Asymptotic::PowerLog {
                coeff,
                power,
                log_power,
            } => coeff == 0.0 || !(power > EXPONENT_TOL || (power.abs() <= EXPONENT_TOL && log_power > 0.0)),
        }
    }

    /// `∫_T^∞ form(u) du` for `T > 1`; only meaningful when [`integrable`](Self::integrable).
    pub fn remainder(&self, t: f64) -> Result<Estimate> {
        debug_assert!(t > 1.0);
        match *self {
            Asymptotic::Vanishing => Ok(Estimate::ZERO),
            Asymptotic::PowerLog {
                coeff,
                power,
                log_power,
            } => {
                if coeff == 0.0 {
                    return Ok(Estimate::ZERO);
                }
                let l = t.ln();
                let s = -(power + 1.0);
                if s.abs() <= EXPONENT_TOL {
                    // ∫_L^∞ v^q dv with q < -1
                    let q1 = log_power + 1.0;
                    return Ok(Estimate::exact(coeff * l.powf(q1) / -q1));
                }
                if log_power == 0.0 {
                    return Ok(Estimate::exact(coeff * t.powf(power + 1.0) / s));
                }
                // ∫_L^∞ e^{-s v} v^q dv = e^{-sL}/s ∫_0^∞ e^{-w} (L + w/s)^q dw
                let g = |w: f64| (-w).exp() * (l + w / s).powf(log_power);
                let inner = quad::integrate_to_infinity(g, 0.0, Tolerance::default())?;
                let k = coeff * t.powf(power + 1.0) / s;
                Ok(inner.scale(k))
            }
        }
    }
}
