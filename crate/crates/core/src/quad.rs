//! Adaptive Gauss–Kronrod quadrature.
//!
//! Every routine returns an [`Estimate`] carrying the value and a residual
//! (absolute error estimate). Non-convergence is an error that still carries
//! the best estimate so callers can report it.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use crate::error::{CbdiError, Result};

#[allow(clippy::excessive_precision)]
const XGK: [f64; 11] = [
    0.995_657_163_025_808_080_735_527_280_689_003,
    0.973_906_528_517_171_720_077_964_012_084_452,
    0.930_157_491_355_708_226_001_207_180_059_508,
    0.865_063_366_688_984_510_732_096_688_423_493,
    0.780_817_726_586_416_897_063_717_578_345_042,
    0.679_409_568_299_024_406_234_327_365_114_874,
    0.562_757_134_668_604_683_339_000_099_272_694,
    0.433_395_394_129_247_190_799_265_943_165_784,
    0.294_392_862_701_460_198_131_126_603_103_866,
    0.148_874_338_981_631_210_884_826_001_129_720,
    0.0,
];

#[allow(clippy::excessive_precision)]
const WG: [f64; 5] = [
    0.066_671_344_308_688_137_593_568_809_893_332,
    0.149_451_349_150_580_593_145_776_339_657_697,
    0.219_086_362_515_982_043_995_534_934_228_163,
    0.269_266_719_309_996_355_091_226_921_569_469,
    0.295_524_224_714_752_870_173_892_994_651_338,
];

#[allow(clippy::excessive_precision)]
const WGK: [f64; 11] = [
    0.011_694_638_867_371_874_278_064_396_062_192,
    0.032_558_162_307_964_727_478_818_972_459_390,
    0.054_755_896_574_351_996_031_381_300_244_580,
    0.075_039_674_810_919_952_767_043_140_916_190,
    0.093_125_454_583_697_605_535_065_465_083_366,
    0.109_387_158_802_297_641_899_210_590_325_805,
    0.123_491_976_262_065_851_077_958_109_831_074,
    0.134_709_217_311_473_325_928_054_001_771_707,
    0.142_775_938_577_060_080_797_094_273_138_717,
    0.147_739_104_901_338_491_374_841_515_972_068,
    0.149_445_554_002_916_905_664_936_468_389_821,
];

/// Absolute/relative stopping tolerance and subdivision budget.
#[derive(Clone, Copy, Debug)]
pub struct Tolerance {
    pub abs: f64,
    pub rel: f64,
    pub max_intervals: usize,
}

impl Default for Tolerance {
    fn default() -> Self {
        Self {
            abs: 1e-10,
            rel: 1e-8,
            max_intervals: 4000,
        }
    }
}

impl Tolerance {
    pub fn with_abs(mut self, abs: f64) -> Self {
        self.abs = abs;
        self
    }

    pub fn with_rel(mut self, rel: f64) -> Self {
        self.rel = rel;
        self
    }
}

/// A quadrature value together with its residual (absolute error estimate).
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Estimate {
    pub value: f64,
    pub residual: f64,
}

impl Estimate {
    pub const ZERO: Estimate = Estimate {
        value: 0.0,
        residual: 0.0,
    };

    pub fn exact(value: f64) -> Self {
        Self { value, residual: 0.0 }
    }

    pub fn scale(self, k: f64) -> Self {
        Self {
            value: self.value * k,
            residual: self.residual * k.abs(),
        }
    }
}

impl std::ops::Add for Estimate {
    type Output = Estimate;
    fn add(self, rhs: Estimate) -> Estimate {
        Estimate {
            value: self.value + rhs.value,
            residual: self.residual + rhs.residual,
        }
    }
}

impl std::iter::Sum for Estimate {
    fn sum<I: Iterator<Item = Estimate>>(iter: I) -> Estimate {
        iter.fold(Estimate::ZERO, |a, b| a + b)
    }
}

fn rescale_error(err: f64, result_abs: f64, result_asc: f64) -> f64 {
    let mut err = err.abs();
    if result_asc != 0.0 && err != 0.0 {
        let scale = (200.0 * err / result_asc).powf(1.5);
        err = if scale < 1.0 { result_asc * scale } else { result_asc };
    }
    if result_abs > f64::MIN_POSITIVE / (50.0 * f64::EPSILON) {
        let min_err = 50.0 * f64::EPSILON * result_abs;
        if min_err > err {
            err = min_err;
        }
    }
    err
}

/// One 21-point Kronrod panel with its embedded 10-point Gauss error estimate.
pub fn gk21<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> Estimate {
    let center = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    let fc = f(center);
    let mut res_k = fc * WGK[10];
    let mut res_g = 0.0;
    let mut res_abs = res_k.abs();
    let mut fv1 = [0.0; 10];
    let mut fv2 = [0.0; 10];
    for j in 0..5 {
        let jtw = 2 * j + 1;
        let dx = half * XGK[jtw];
        let f1 = f(center - dx);
        let f2 = f(center + dx);
        fv1[jtw] = f1;
        fv2[jtw] = f2;
        res_g += WG[j] * (f1 + f2);
        res_k += WGK[jtw] * (f1 + f2);
        res_abs += WGK[jtw] * (f1.abs() + f2.abs());
    }
    for j in 0..5 {
        let jtwm1 = 2 * j;
        let dx = half * XGK[jtwm1];
        let f1 = f(center - dx);
        let f2 = f(center + dx);
        fv1[jtwm1] = f1;
        fv2[jtwm1] = f2;
        res_k += WGK[jtwm1] * (f1 + f2);
        res_abs += WGK[jtwm1] * (f1.abs() + f2.abs());
    }
    let mean = 0.5 * res_k;
    let mut res_asc = WGK[10] * (fc - mean).abs();
    for j in 0..10 {
        res_asc += WGK[j] * ((fv1[j] - mean).abs() + (fv2[j] - mean).abs());
    }
    let abs_half = half.abs();
    let err = rescale_error((res_k - res_g) * half, res_abs * abs_half, res_asc * abs_half);
    Estimate {
        value: res_k * half,
        residual: err,
    }
}

struct Panel {
    a: f64,
    b: f64,
    est: Estimate,
}

impl PartialEq for Panel {
    fn eq(&self, other: &Self) -> bool {
        self.est.residual == other.est.residual
    }
}
impl Eq for Panel {}
impl PartialOrd for Panel {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Panel {
    fn cmp(&self, other: &Self) -> Ordering {
        self.est
            .residual
            .partial_cmp(&other.est.residual)
            .unwrap_or(Ordering::Equal)
    }
}

/// Integrates `f` over `[a, b]`, pre-splitting at the interior `breaks`.
pub fn integrate_with_breaks<F: Fn(f64) -> f64>(
    f: F,
    a: f64,
    b: f64,
    breaks: &[f64],
    tol: Tolerance,
) -> Result<Estimate> {
    if a == b {
        return Ok(Estimate::ZERO);
    }
    if a > b {
        return integrate_with_breaks(f, b, a, breaks, tol).map(|e| e.scale(-1.0));
    }
    let mut points = vec![a];
    let mut inner: Vec<f64> = breaks
        .iter()
        .copied()
        .filter(|&p| p > a && p < b && p.is_finite())
        .collect();
    inner.sort_by(|x, y| x.partial_cmp(y).unwrap());
    inner.dedup();
    points.extend(inner);
    points.push(b);

    let mut heap = BinaryHeap::new();
    let mut settled = Estimate::ZERO;
    let mut total = Estimate::ZERO;
    for w in points.windows(2) {
        let est = gk21(&f, w[0], w[1]);
        if !est.value.is_finite() || !est.residual.is_finite() {
            return Err(CbdiError::Quadrature {
                estimate: est.value,
                residual: f64::INFINITY,
            });
        }
        total = total + est;
        heap.push(Panel { a: w[0], b: w[1], est });
    }

    let mut n_panels = heap.len();
    loop {
        let target = tol.abs.max(tol.rel * total.value.abs());
        if total.residual <= target {
            break;
        }
        let Some(worst) = heap.pop() else { break };
        let mid = 0.5 * (worst.a + worst.b);
        if !(mid > worst.a && mid < worst.b)
            || (worst.b - worst.a) <= 4.0 * f64::EPSILON * worst.a.abs().max(worst.b.abs())
        {
            // cannot be split further: keep its contribution as settled
            settled = settled + worst.est;
            if heap.is_empty() {
                break;
            }
            continue;
        }
        if n_panels >= tol.max_intervals {
            heap.push(worst);
            let value: f64 = heap.iter().map(|p| p.est.value).sum::<f64>() + settled.value;
            let residual: f64 = heap.iter().map(|p| p.est.residual).sum::<f64>() + settled.residual;
            return Err(CbdiError::Quadrature {
                estimate: value,
                residual,
            });
        }
        let left = gk21(&f, worst.a, mid);
        let right = gk21(&f, mid, worst.b);
        if !left.value.is_finite() || !right.value.is_finite() {
            return Err(CbdiError::Quadrature {
                estimate: total.value,
                residual: f64::INFINITY,
            });
        }
        total.value += left.value + right.value - worst.est.value;
        total.residual += left.residual + right.residual - worst.est.residual;
        heap.push(Panel {
            a: worst.a,
            b: mid,
            est: left,
        });
        heap.push(Panel {
            a: mid,
            b: worst.b,
            est: right,
        });
        n_panels += 1;
    }
    // recompute from the panels to avoid drift in the running sums
    let value: f64 = heap.iter().map(|p| p.est.value).sum::<f64>() + settled.value;
    let residual: f64 = heap.iter().map(|p| p.est.residual).sum::<f64>() + settled.residual;
    if residual > tol.abs.max(tol.rel * value.abs()) {
        return Err(CbdiError::Quadrature {
            estimate: value,
            residual,
        });
    }
    Ok(Estimate { value, residual })
}

pub fn integrate<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, tol: Tolerance) -> Result<Estimate> {
    integrate_with_breaks(f, a, b, &[], tol)
}

/// Integrates over `[a, b]` with `0 < a < b`, splitting into geometric panels
/// so that integrands varying over many decades are resolved.
pub fn integrate_geometric<F: Fn(f64) -> f64>(
    f: F,
    a: f64,
    b: f64,
    extra_breaks: &[f64],
    tol: Tolerance,
) -> Result<Estimate> {
    debug_assert!(a > 0.0);
    let mut breaks: Vec<f64> = extra_breaks.to_vec();
    let mut p = a * 10.0;
    while p < b {
        breaks.push(p);
        p *= 10.0;
    }
    let mut tol = tol;
    tol.max_intervals = tol.max_intervals.max(breaks.len() * 50);
    integrate_with_breaks(f, a, b, &breaks, tol)
}

/// Integrates over `[a, ∞)` with `a > 0` through `h = a·e^v`, `v = s/(1-s)`.
///
/// Suited to algebraically or logarithmically decaying integrands.
pub fn integrate_log_to_infinity<F: Fn(f64) -> f64>(f: F, a: f64, tol: Tolerance) -> Result<Estimate> {
    debug_assert!(a > 0.0);
    let g = |s: f64| {
        if s >= 1.0 {
            return 0.0;
        }
        let v = s / (1.0 - s);
        let h = a * v.exp();
        if !h.is_finite() {
            return 0.0;
        }
        let val = f(h) * h / ((1.0 - s) * (1.0 - s));
        if val.is_finite() {
            val
        } else {
            0.0
        }
    };
    integrate_with_breaks(g, 0.0, 1.0, &[0.25, 0.5, 0.75, 0.9, 0.97], tol)
}

/// Integrates over `(0, c]` through `h = c·e^{-v}`, resolving integrable
/// power singularities at the origin.
pub fn integrate_log_from_zero<F: Fn(f64) -> f64>(f: F, c: f64, tol: Tolerance) -> Result<Estimate> {
    debug_assert!(c > 0.0);
    let g = |s: f64| {
        if s >= 1.0 {
            return 0.0;
        }
        let v = s / (1.0 - s);
        let h = c * (-v).exp();
        if h <= 0.0 {
            return 0.0;
        }
        let val = f(h) * h / ((1.0 - s) * (1.0 - s));
        if val.is_finite() {
            val
        } else {
            0.0
        }
    };
    integrate_with_breaks(g, 0.0, 1.0, &[0.25, 0.5, 0.75, 0.9, 0.97], tol)
}

/// Integrates over `[a, b]` with `0 < a < b` in the variable `w = ln h`,
/// split every few units of `w`; suited to ranges spanning many decades.
pub fn integrate_log_range<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, tol: Tolerance) -> Result<Estimate> {
    debug_assert!(a > 0.0 && b > a);
    let (wa, wb) = (a.ln(), b.ln());
    let mut breaks = Vec::new();
    let mut w = wa + 2.0;
    while w < wb {
        breaks.push(w);
        w += 2.0;
    }
    let mut tol = tol;
    tol.max_intervals = tol.max_intervals.max(breaks.len() * 50);
    integrate_with_breaks(
        |w: f64| {
            let h = w.exp();
            let v = f(h) * h;
            if v.is_finite() {
                v
            } else {
                0.0
            }
        },
        wa,
        wb,
        &breaks,
        tol,
    )
}

/// Integrates over `[a, ∞)` through `x = a + s/(1-s)`.
pub fn integrate_to_infinity<F: Fn(f64) -> f64>(f: F, a: f64, tol: Tolerance) -> Result<Estimate> {
    let g = |s: f64| {
        if s >= 1.0 {
            return 0.0;
        }
        let x = a + s / (1.0 - s);
        let val = f(x) / ((1.0 - s) * (1.0 - s));
        if val.is_finite() {
            val
        } else {
            0.0
        }
    };
    integrate_with_breaks(g, 0.0, 1.0, &[0.5, 0.9], tol)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn polynomial_exact() {
        let e = integrate(|x| x * x, 0.0, 3.0, Tolerance::default()).unwrap();
        assert!((e.value - 9.0).abs() < 1e-13);
    }

    #[test]
    fn endpoint_singularity() {
        let e = integrate(|x: f64| x.powf(-0.5), 0.0, 1.0, Tolerance::default()).unwrap();
        assert!((e.value - 2.0).abs() < 1e-8, "{:?}", e);
    }

    #[test]
    fn semi_infinite_power() {
        let e = integrate_log_to_infinity(|x: f64| x.powf(-1.5), 1.0, Tolerance::default()).unwrap();
        assert!((e.value - 2.0).abs() < 1e-8, "{:?}", e);
        let e = integrate_to_infinity(|x: f64| (-x).exp(), 0.0, Tolerance::default()).unwrap();
        assert!((e.value - 1.0).abs() < 1e-10);
    }

    #[test]
    fn divergent_reports_failure() {
        let r = integrate_to_infinity(|x: f64| 1.0 / (1.0 + x), 0.0, Tolerance::default());
        assert!(matches!(r, Err(CbdiError::Quadrature { .. })));
    }

    #[test]
    fn reversed_bounds() {
        let e = integrate(|x| x, 1.0, 0.0, Tolerance::default()).unwrap();
        assert!((e.value + 0.5).abs() < 1e-14);
    }
}
