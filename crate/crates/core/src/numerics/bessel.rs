//! Modified Bessel function of the first kind, order zero.
//!
//! Power series below [`SWITCHOVER`], Hankel asymptotic expansion above it.
//! The exponentially scaled and log forms never overflow.

use crate::error::{Error, Result};

/// Argument at which evaluation switches from the power series to the
/// asymptotic expansion.
pub(crate) const SWITCHOVER: f64 = 30.0;

fn series(x: f64) -> f64 {
    // Σ (x²/4)^q / (q!)², all terms positive.
    let y = 0.25 * x * x;
    let mut term = 1.0;
    let mut sum = 1.0;
    let mut q = 1.0;
    loop {
        term *= y / (q * q);
        sum += term;
        if term < sum * 1e-17 {
            break;
        }
        q += 1.0;
    }
    sum
}

/// Σ_k ((2k-1)!!)² / (k! (8x)^k), the bracket of the asymptotic form
/// I0(x) ≈ e^x / sqrt(2πx) · Σ.
fn asymptotic_bracket(x: f64) -> f64 {
    let mut term = 1.0;
    let mut sum = 1.0;
    for k in 1..60 {
        let kf = k as f64;
        let prev = term;
        term *= (2.0 * kf - 1.0) * (2.0 * kf - 1.0) / (8.0 * kf * x);
        if term > prev {
            break;
        }
        sum += term;
        if term < sum * 1e-17 {
            break;
        }
    }
    sum
}

/// e^{-x} I0(x) for x ≥ 0.
pub(crate) fn i0e_unchecked(x: f64) -> f64 {
    let x = x.abs();
    if x < SWITCHOVER {
        series(x) * (-x).exp()
    } else {
        asymptotic_bracket(x) / (2.0 * std::f64::consts::PI * x).sqrt()
    }
}

/// ln I0(x) for x ≥ 0.
pub(crate) fn i0_log_unchecked(x: f64) -> f64 {
    let x = x.abs();
    if x < SWITCHOVER {
        series(x).ln()
    } else {
        x - 0.5 * (2.0 * std::f64::consts::PI * x).ln() + asymptotic_bracket(x).ln()
    }
}

fn check(x: f64) -> Result<f64> {
    if x.is_finite() {
        Ok(x.abs())
    } else {
        Err(Error::invalid(format!("bessel argument must be finite, got {x}")))
    }
}

/// I0(x). Overflows to +∞ beyond x ≈ 713; use [`bessel_i0_log`] there.
pub fn bessel_i0(x: f64) -> Result<f64> {
    let x = check(x)?;
    if x < SWITCHOVER {
        Ok(series(x))
    } else {
        Ok(i0_log_unchecked(x).exp())
    }
}

/// ln I0(x), finite for every finite x.
pub fn bessel_i0_log(x: f64) -> Result<f64> {
    check(x).map(i0_log_unchecked)
}

/// Exponentially scaled e^{-|x|} I0(x).
pub fn bessel_i0e(x: f64) -> Result<f64> {
    check(x).map(i0e_unchecked)
}
