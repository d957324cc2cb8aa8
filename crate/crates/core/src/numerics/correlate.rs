use super::dft::fft_in_place;
use super::{ComplexSample, DIRECT_DFT_MAX_LEN};
use crate::error::{Error, Result};

/// Full-overlap matched filter: `y[k] = Σ_n rx[k+n]·conj(replica[n])` for
/// `k ∈ 0..=rx.len()-replica.len()`.
///
/// Replicas shorter than [`DIRECT_DFT_MAX_LEN`] are correlated directly; longer
/// ones go through an FFT of length `rx.len().next_power_of_two()`, which is
/// long enough that the circular correlation never wraps on the returned lags.
pub fn matched_filter(rx: &[ComplexSample], replica: &[ComplexSample]) -> Result<Vec<ComplexSample>> {
    if replica.is_empty() {
        return Err(Error::invalid("empty replica"));
    }
    if replica.len() > rx.len() {
        return Err(Error::invalid(format!(
            "replica ({} samples) longer than received signal ({} samples)",
            replica.len(),
            rx.len()
        )));
    }
    let lags = rx.len() - replica.len() + 1;
    if replica.len() < DIRECT_DFT_MAX_LEN {
        let conj: Vec<_> = replica.iter().map(|v| v.conj()).collect();
        return Ok((0..lags)
            .map(|k| {
                rx[k..k + conj.len()]
                    .iter()
                    .zip(&conj)
                    .map(|(a, b)| a * b)
                    .sum()
            })
            .collect());
    }
    let n = rx.len().next_power_of_two();
    let zero = ComplexSample::new(0.0, 0.0);
    let mut a = rx.to_vec();
    a.resize(n, zero);
    let mut b = replica.to_vec();
    b.resize(n, zero);
    fft_in_place(&mut a, false);
    fft_in_place(&mut b, false);
    a.iter_mut().zip(&b).for_each(|(x, y)| *x *= y.conj());
    fft_in_place(&mut a, true);
    let scale = 1.0 / n as f64;
    Ok(a[..lags].iter().map(|v| v * scale).collect())
}

/// Cross-correlation over every lag with any overlap:
/// `c[k] = Σ_n a[n+k]·conj(b[n])` for `k ∈ -(b.len()-1) ..= a.len()-1`.
///
/// Returns the values and the lag of the first element.
pub fn cross_correlation(a: &[ComplexSample], b: &[ComplexSample]) -> Result<(Vec<ComplexSample>, isize)> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::invalid("cross-correlation of an empty sequence"));
    }
    let first = -(b.len() as isize - 1);
    let last = a.len() as isize - 1;
    let values = (first..=last)
        .map(|k| {
            b.iter()
                .enumerate()
                .filter_map(|(n, bv)| {
                    let i = n as isize + k;
                    (i >= 0 && (i as usize) < a.len()).then(|| a[i as usize] * bv.conj())
                })
                .sum()
        })
        .collect();
    Ok((values, first))
}
