//! Numerical kernels shared by the rest of the crate.

mod bessel;
mod correlate;
mod dft;
mod quad;
mod rng;

pub use bessel::{bessel_i0, bessel_i0_log, bessel_i0e};
pub(crate) use bessel::{i0_log_unchecked, i0e_unchecked};
pub use correlate::{cross_correlation, matched_filter};
pub use dft::{dft_1d, dft_2d, idft_1d, DIRECT_DFT_MAX_LEN};
pub use quad::{integrate, integrate_from, integrate_peaked, integrate_semi_infinite, QuadSpec};
pub use rng::{gaussian, RngStream};

/// A complex baseband sample.
pub type ComplexSample = num_complex::Complex64;

/// Natural log of the binomial coefficient C(n, k).
pub fn ln_binomial(n: usize, k: usize) -> f64 {
    if k > n {
        return f64::NEG_INFINITY;
    }
    let k = k.min(n - k);
    (0..k)
        .map(|i| ((n - i) as f64).ln() - ((i + 1) as f64).ln())
        .sum()
}

/// Neumaier-compensated sum.
#[derive(Debug, Default, Clone, Copy)]
pub(crate) struct CompensatedSum {
    sum: f64,
    comp: f64,
}

impl CompensatedSum {
    pub(crate) fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub(crate) fn value(&self) -> f64 {
        self.sum + self.comp
    }
}
