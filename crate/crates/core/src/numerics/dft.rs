//! Discrete Fourier transforms with the sign convention
//! X[k] = Σ_n x[n]·exp(−j2πkn/K).
//!
//! Lengths below [`DIRECT_DFT_MAX_LEN`] use the direct O(K²) sum, which is what
//! the short Doppler axes need; longer inputs go through `rustfft`.

use std::cell::RefCell;
use std::f64::consts::PI;

use ndarray::{Array2, Axis};
use rustfft::FftPlanner;

use super::ComplexSample;
use crate::error::{Error, Result};

/// Inputs shorter than this are transformed by direct summation.
pub const DIRECT_DFT_MAX_LEN: usize = 64;

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

fn direct(x: &[ComplexSample], inverse: bool) -> Vec<ComplexSample> {
    let k_len = x.len();
    let sign = if inverse { 1.0 } else { -1.0 };
    // Twiddles indexed by k·n mod K keep every phase argument small.
    let twiddle: Vec<ComplexSample> = (0..k_len)
        .map(|i| ComplexSample::from_polar(1.0, sign * 2.0 * PI * i as f64 / k_len as f64))
        .collect();
    (0..k_len)
        .map(|k| {
            x.iter()
                .enumerate()
                .map(|(n, &v)| v * twiddle[(k * n) % k_len])
                .sum()
        })
        .collect()
}

pub(crate) fn fft_in_place(buf: &mut [ComplexSample], inverse: bool) {
    PLANNER.with(|p| {
        let mut p = p.borrow_mut();
        let plan = if inverse {
            p.plan_fft_inverse(buf.len())
        } else {
            p.plan_fft_forward(buf.len())
        };
        plan.process(buf);
    });
}

/// Forward DFT of `x`.
pub fn dft_1d(x: &[ComplexSample]) -> Result<Vec<ComplexSample>> {
    if x.is_empty() {
        return Err(Error::invalid("dft of an empty sequence"));
    }
    if x.len() < DIRECT_DFT_MAX_LEN {
        Ok(direct(x, false))
    } else {
        let mut buf = x.to_vec();
        fft_in_place(&mut buf, false);
        Ok(buf)
    }
}

/// Inverse DFT, normalized by 1/K so that `idft_1d(dft_1d(x)) == x`.
pub fn idft_1d(x: &[ComplexSample]) -> Result<Vec<ComplexSample>> {
    if x.is_empty() {
        return Err(Error::invalid("inverse dft of an empty sequence"));
    }
    let scale = 1.0 / x.len() as f64;
    let mut out = if x.len() < DIRECT_DFT_MAX_LEN {
        direct(x, true)
    } else {
        let mut buf = x.to_vec();
        fft_in_place(&mut buf, true);
        buf
    };
    out.iter_mut().for_each(|v| *v *= scale);
    Ok(out)
}

/// Separable 2D DFT: along axis 0 (pulses) and then axis 1 (subpulses).
pub fn dft_2d(x: &Array2<ComplexSample>) -> Result<Array2<ComplexSample>> {
    let (rows, cols) = x.dim();
    if rows == 0 || cols == 0 {
        return Err(Error::invalid(format!("degenerate {rows}x{cols} grid")));
    }
    let mut out = x.clone();
    for axis in [Axis(0), Axis(1)] {
        for mut lane in out.lanes_mut(axis) {
            let v: Vec<_> = lane.iter().copied().collect();
            let t = dft_1d(&v)?;
            lane.iter_mut().zip(t).for_each(|(d, s)| *d = s);
        }
    }
    Ok(out)
}
