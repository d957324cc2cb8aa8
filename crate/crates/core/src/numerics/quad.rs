//! Globally adaptive 10/21-point Gauss–Kronrod quadrature.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerances for the adaptive integrators.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct QuadSpec {
    pub rel_tol: f64,
    pub abs_tol: f64,
    pub max_subdivisions: usize,
}

impl Default for QuadSpec {
    fn default() -> Self {
        Self {
            rel_tol: 1e-10,
            abs_tol: 1e-12,
            max_subdivisions: 2000,
        }
    }
}

impl QuadSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.rel_tol > 0.0) || !(self.abs_tol > 0.0) {
            return Err(Error::invalid("quadrature tolerances must be positive"));
        }
        if self.max_subdivisions == 0 {
            return Err(Error::invalid("max_subdivisions must be at least 1"));
        }
        Ok(())
    }
}

// 21-point Kronrod abscissae (positive half) and weights; Gauss 10-point weights
// on the odd Kronrod nodes. Values from QUADPACK qk21.
const XGK: [f64; 11] = [
    0.995657163025808080735527280689003,
    0.973906528517171720077964012084452,
    0.930157491355708226001207180059508,
    0.865063366688984510732096688423493,
    0.780817726586416897063717578345042,
    0.679409568299024406234327365114874,
    0.562757134668604683339000099272694,
    0.433395394129247190799265943165784,
    0.294392862701460198131126603103866,
    0.148874338981631210884826001129720,
    0.000000000000000000000000000000000,
];
const WGK: [f64; 11] = [
    0.011694638867371874278064396062192,
    0.032558162307964727478818972459390,
    0.054755896574351996031381300244580,
    0.075039674810919952767043140916190,
    0.093125454583697605535065465083366,
    0.109387158802297641899210590325805,
    0.123491976262065851077208980050550,
    0.134709217311473325928054001771707,
    0.142775938577060080797094273138717,
    0.147739104901338491374841515972068,
    0.149445554002916905664936468389821,
];
const WG: [f64; 5] = [
    0.066671344308688137593568809893332,
    0.149451349150580593145776339657697,
    0.219086362515982043995534934228163,
    0.269266719309996355091226921569469,
    0.295524224714752870173892994651338,
];

struct Segment {
    a: f64,
    b: f64,
    value: f64,
    error: f64,
}

impl PartialEq for Segment {
    fn eq(&self, other: &Self) -> bool {
        self.error.total_cmp(&other.error) == Ordering::Equal
    }
}
impl Eq for Segment {}
impl PartialOrd for Segment {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Segment {
    fn cmp(&self, other: &Self) -> Ordering {
        self.error.total_cmp(&other.error)
    }
}

fn gk21<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> (f64, f64) {
    let center = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    let fc = f(center);
    let mut res_k = WGK[10] * fc;
    let mut res_abs = res_k.abs();
    let mut res_g = 0.0;
    let mut fv1 = [0.0; 10];
    let mut fv2 = [0.0; 10];
    for j in 0..10 {
        let dx = half * XGK[j];
        let f1 = f(center - dx);
        let f2 = f(center + dx);
        fv1[j] = f1;
        fv2[j] = f2;
        res_k += WGK[j] * (f1 + f2);
        res_abs += WGK[j] * (f1.abs() + f2.abs());
        if j % 2 == 1 {
            res_g += WG[j / 2] * (f1 + f2);
        }
    }
    let mean = 0.5 * res_k;
    let mut res_asc = WGK[10] * (fc - mean).abs();
    for j in 0..10 {
        res_asc += WGK[j] * ((fv1[j] - mean).abs() + (fv2[j] - mean).abs());
    }
    let value = res_k * half;
    res_abs *= half.abs();
    res_asc *= half.abs();
    let mut err = ((res_k - res_g) * half).abs();
    if res_asc != 0.0 && err != 0.0 {
        err = res_asc * (200.0 * err / res_asc).powf(1.5).min(1.0);
    }
    if res_abs > f64::MIN_POSITIVE / (50.0 * f64::EPSILON) {
        err = err.max(50.0 * f64::EPSILON * res_abs);
    }
    (value, err)
}

/// Integrates `f` over the finite interval `[a, b]`.
///
/// Converges when the summed error estimate drops below
/// `max(abs_tol, rel_tol·|result|)`.
pub fn integrate<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, spec: &QuadSpec) -> Result<f64> {
    spec.validate()?;
    if !a.is_finite() || !b.is_finite() {
        return Err(Error::invalid("finite interval required; use integrate_from"));
    }
    if a == b {
        return Ok(0.0);
    }
    let (v, e) = gk21(&f, a, b);
    if !v.is_finite() {
        return Err(Error::NumericalDomain(format!(
            "integrand is not finite on [{a}, {b}]"
        )));
    }
    let mut heap = BinaryHeap::new();
    heap.push(Segment { a, b, value: v, error: e });
    let mut total = v;
    let mut total_err = e;
    let mut subdivisions = 1;
    loop {
        let tol = spec.abs_tol.max(spec.rel_tol * total.abs());
        if total_err <= tol {
            return Ok(total);
        }
        if subdivisions >= spec.max_subdivisions {
            return Err(Error::Convergence {
                estimate: total,
                error_bound: total_err,
            });
        }
        let worst = heap.pop().expect("heap is never empty");
        let mid = 0.5 * (worst.a + worst.b);
        if mid <= worst.a || mid >= worst.b {
            // Interval can no longer be split in floating point.
            return Err(Error::Convergence {
                estimate: total,
                error_bound: total_err,
            });
        }
        let (v1, e1) = gk21(&f, worst.a, mid);
        let (v2, e2) = gk21(&f, mid, worst.b);
        total += v1 + v2 - worst.value;
        total_err += e1 + e2 - worst.error;
        heap.push(Segment { a: worst.a, b: mid, value: v1, error: e1 });
        heap.push(Segment { a: mid, b: worst.b, value: v2, error: e2 });
        subdivisions += 1;
        if subdivisions % 64 == 0 {
            // Re-sum to shed accumulated cancellation in the running totals.
            total = heap.iter().map(|s| s.value).sum();
            total_err = heap.iter().map(|s| s.error).sum();
        }
    }
}

/// Integrates `f` over `[a, ∞)` through the map t = a + (1 - x)/x, x ∈ (0, 1].
pub fn integrate_from<F: Fn(f64) -> f64>(f: F, a: f64, spec: &QuadSpec) -> Result<f64> {
    if !a.is_finite() {
        return Err(Error::invalid("lower limit must be finite"));
    }
    let g = |x: f64| {
        if x <= 0.0 {
            return 0.0;
        }
        let t = a + (1.0 - x) / x;
        let v = f(t) / (x * x);
        if v.is_finite() {
            v
        } else {
            0.0
        }
    };
    integrate(g, 0.0, 1.0, spec)
}

/// Integrates `f` over `[0, ∞)`.
pub fn integrate_semi_infinite<F: Fn(f64) -> f64>(f: F, spec: &QuadSpec) -> Result<f64> {
    integrate_from(f, 0.0, spec)
}

/// Integrates over `[0, ∞)` an integrand concentrated around `center` with
/// characteristic `width`: the window `center ± span·width` is integrated as a
/// finite interval so the adaptive scheme cannot step over the peak.
pub fn integrate_peaked<F: Fn(f64) -> f64>(
    f: F,
    center: f64,
    width: f64,
    spec: &QuadSpec,
) -> Result<f64> {
    const SPAN: f64 = 12.0;
    if !(width > 0.0) || !center.is_finite() {
        return Err(Error::invalid("peak width must be positive and center finite"));
    }
    let lo = (center - SPAN * width).max(0.0);
    let hi = center.max(0.0) + SPAN * width;
    // Pieces share the absolute tolerance.
    let piece_spec = QuadSpec {
        abs_tol: spec.abs_tol / 3.0,
        ..*spec
    };
    let mut total = 0.0;
    if lo > 0.0 {
        total += integrate(&f, 0.0, lo, &piece_spec)?;
    }
    total += integrate(&f, lo, hi, &piece_spec)?;
    total += integrate_from(&f, hi, &piece_spec)?;
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::bessel_i0;

    #[test]
    fn exponential_tail() {
        let v = integrate_semi_infinite(|t| (-t).exp(), &QuadSpec::default()).unwrap();
        assert!((v - 1.0).abs() < 1e-10);
    }

    #[test]
    fn gaussian_moment() {
        let v = integrate_semi_infinite(|t| t * (-t * t).exp(), &QuadSpec::default()).unwrap();
        assert!((v - 0.5).abs() < 1e-10);
    }

    #[test]
    fn bessel_laplace_identity_single_case() {
        // ∫ exp(bt) I0(a√t) dt = -exp(-a²/(4b))/b; with a = 2, b = -2 the
        // exponent is +1/2.
        let v = integrate_semi_infinite(
            |t| (-2.0 * t).exp() * bessel_i0(2.0 * t.sqrt()).unwrap(),
            &QuadSpec::default(),
        )
        .unwrap();
        let expected = 0.5f64.exp() / 2.0;
        assert!(((v - expected) / expected).abs() < 1e-10, "{v} vs {expected}");
    }

    #[test]
    fn bessel_laplace_identity_grid() {
        let spec = QuadSpec::default();
        for a in [0.0, 1.0, 2.0] {
            for b in [-0.5, -1.0, -2.0] {
                let v = integrate_semi_infinite(
                    |t: f64| (b * t).exp() * bessel_i0(a * t.sqrt()).unwrap(),
                    &spec,
                )
                .unwrap();
                let expected = -(-a * a / (4.0 * b)).exp() / b;
                assert!(
                    ((v - expected) / expected).abs() < spec.rel_tol * 10.0,
                    "a={a} b={b}: {v} vs {expected}"
                );
            }
        }
    }

    #[test]
    fn finite_polynomial_is_exact() {
        let v = integrate(|x| x * x * x - 2.0 * x, -1.0, 3.0, &QuadSpec::default()).unwrap();
        assert!((v - 12.0).abs() < 1e-12);
    }

    #[test]
    fn narrow_peak_needs_hint() {
        let c = 5000.0;
        let f = |t: f64| (-(t - c) * (t - c)).exp();
        let expected = std::f64::consts::PI.sqrt();
        let v = integrate_peaked(f, c, 1.0, &QuadSpec::default()).unwrap();
        assert!((v - expected).abs() < 1e-9);
    }

    #[test]
    fn reports_non_convergence() {
        let spec = QuadSpec {
            max_subdivisions: 3,
            ..QuadSpec::default()
        };
        let err = integrate(|x: f64| (1.0 / x).sin(), 1e-6, 1.0, &spec).unwrap_err();
        assert!(matches!(err, Error::Convergence { .. }));
    }

    #[test]
    fn rejects_bad_spec() {
        let spec = QuadSpec {
            rel_tol: 0.0,
            ..QuadSpec::default()
        };
        assert!(integrate(|x| x, 0.0, 1.0, &spec).is_err());
    }
}
