//! Doppler bin folding and unfolding with the classic Chinese remainder theorem.
//!
//! Each PRF channel observes the true Doppler bin `b_d` only modulo its pulse
//! count `M_i`. With pairwise coprime pulse counts and a Doppler bin spacing
//! `ΔD = PRF_i / M_i` shared by every channel, the residues determine `b_d`
//! uniquely modulo `Θ = Π M_i`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Geometry of one PRF channel.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrfChannel {
    pub prf_hz: f64,
    pub num_pulses: usize,
    pub num_subpulses: usize,
}

impl PrfChannel {
    pub fn new(prf_hz: f64, num_pulses: usize, num_subpulses: usize) -> Result<Self> {
        let ch = Self {
            prf_hz,
            num_pulses,
            num_subpulses,
        };
        ch.validate()?;
        Ok(ch)
    }

    /// Channel whose PRF is `num_pulses · bin_spacing_hz`.
    pub fn with_bin_spacing(bin_spacing_hz: f64, num_pulses: usize, num_subpulses: usize) -> Result<Self> {
        Self::new(bin_spacing_hz * num_pulses as f64, num_pulses, num_subpulses)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.prf_hz > 0.0) || !self.prf_hz.is_finite() {
            return Err(Error::invalid(format!("PRF must be positive, got {}", self.prf_hz)));
        }
        if self.num_pulses == 0 || self.num_subpulses == 0 {
            return Err(Error::invalid("pulse and subpulse counts must be at least 1"));
        }
        Ok(())
    }

    /// ΔD = PRF / M.
    pub fn bin_spacing(&self) -> f64 {
        self.prf_hz / self.num_pulses as f64
    }

    pub fn pri_s(&self) -> f64 {
        1.0 / self.prf_hz
    }
}

/// Simultaneous congruences `b ≡ residues[i] (mod moduli[i])`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CongruenceSystem {
    moduli: Vec<u64>,
    residues: Vec<u64>,
}

impl CongruenceSystem {
    pub fn new(moduli: Vec<u64>, residues: Vec<u64>) -> Result<Self> {
        if moduli.is_empty() || moduli.len() != residues.len() {
            return Err(Error::invalid(format!(
                "need one residue per modulus ({} moduli, {} residues)",
                moduli.len(),
                residues.len()
            )));
        }
        for (i, (&m, &r)) in moduli.iter().zip(&residues).enumerate() {
            if m == 0 {
                return Err(Error::invalid(format!("modulus {i} is zero")));
            }
            if r >= m {
                return Err(Error::invalid(format!("residue {r} not below modulus {m}")));
            }
        }
        check_pairwise_coprime(&moduli)?;
        Ok(Self { moduli, residues })
    }

    pub fn moduli(&self) -> &[u64] {
        &self.moduli
    }

    pub fn residues(&self) -> &[u64] {
        &self.residues
    }

    /// Θ = Π M_i.
    pub fn theta(&self) -> u64 {
        self.moduli.iter().product()
    }
}

pub fn gcd(mut a: u64, mut b: u64) -> u64 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

/// Fails with [`Error::NotInvertible`] naming the first offending pair.
pub fn check_pairwise_coprime(moduli: &[u64]) -> Result<()> {
    for (i, &a) in moduli.iter().enumerate() {
        for &b in &moduli[i + 1..] {
            let g = gcd(a, b);
            if g != 1 {
                return Err(Error::NotInvertible { a, m: b, gcd: g });
            }
        }
    }
    Ok(())
}

/// Smallest `b ∈ [1, m)` with `a·b ≡ 1 (mod m)`, by the extended Euclidean
/// algorithm. For `m = 1` every integer is congruent and 0 is returned.
pub fn modular_inverse(a: u64, m: u64) -> Result<u64> {
    if m == 0 {
        return Err(Error::invalid("modulus must be at least 1"));
    }
    if m == 1 {
        return Ok(0);
    }
    let (mut old_r, mut r) = ((a % m) as i128, m as i128);
    let (mut old_s, mut s) = (1i128, 0i128);
    while r != 0 {
        let q = old_r / r;
        (old_r, r) = (r, old_r - q * r);
        (old_s, s) = (s, old_s - q * s);
    }
    if old_r != 1 {
        return Err(Error::NotInvertible {
            a,
            m,
            gcd: old_r as u64,
        });
    }
    Ok(old_s.rem_euclid(m as i128) as u64)
}

/// b_d = (Σ b_ap,i · β_i) mod Θ, with β_i = b_i · Θ/M_i and b_i the inverse of
/// Θ/M_i modulo M_i.
pub fn ccrt_solve(sys: &CongruenceSystem) -> Result<u64> {
    let theta = sys.theta() as u128;
    let mut acc: u128 = 0;
    for (&m, &r) in sys.moduli.iter().zip(&sys.residues) {
        let partial = theta / m as u128;
        let inv = modular_inverse((partial % m as u128) as u64, m)? as u128;
        let beta = (inv * partial) % theta;
        acc = (acc + (r as u128 * beta) % theta) % theta;
    }
    Ok(acc as u64)
}

/// Apparent Doppler bin of an in-window frequency, with truncation toward zero:
/// `⌊|f|/ΔD⌋` for `f ≥ 0` and `M − ⌊|f|/ΔD⌋` for `f < 0`, the latter wrapping
/// `M` to 0.
pub fn apparent_bin(f_ap_hz: f64, channel: &PrfChannel) -> Result<usize> {
    let limit = channel.prf_hz / 2.0;
    if !f_ap_hz.is_finite() || f_ap_hz.abs() > limit {
        return Err(Error::OutOfWindow {
            freq_hz: f_ap_hz,
            limit_hz: limit,
        });
    }
    let m = channel.num_pulses;
    let k = ((f_ap_hz.abs() / channel.bin_spacing()).floor() as usize).min(m);
    let bin = if f_ap_hz >= 0.0 { k } else { m - k };
    Ok(bin % m)
}

/// Frequency the channel observes after aliasing into `[-PRF/2, PRF/2)`.
pub fn fold_frequency(f_hz: f64, channel: &PrfChannel) -> f64 {
    let prf = channel.prf_hz;
    (f_hz + prf / 2.0).rem_euclid(prf) - prf / 2.0
}

/// Residue `b_d mod M` the channel observes for true bin `b_d`.
pub fn fold_bin(b_d: u64, channel: &PrfChannel) -> u64 {
    b_d % channel.num_pulses as u64
}

/// Index of the slow-time DFT bin nearest to `f_hz`, i.e. where a peak picker
/// finds a tone of that frequency: `round(f/ΔD) mod M`.
pub fn nearest_bin(f_hz: f64, channel: &PrfChannel) -> usize {
    let k = (f_hz / channel.bin_spacing()).round() as i64;
    k.rem_euclid(channel.num_pulses as i64) as usize
}

pub fn doppler_to_velocity(f_d_hz: f64, wavelength_m: f64) -> Result<f64> {
    check_wavelength(wavelength_m)?;
    Ok(f_d_hz * wavelength_m / 2.0)
}

pub fn velocity_to_doppler(velocity_mps: f64, wavelength_m: f64) -> Result<f64> {
    check_wavelength(wavelength_m)?;
    Ok(2.0 * velocity_mps / wavelength_m)
}

fn check_wavelength(wavelength_m: f64) -> Result<()> {
    if wavelength_m > 0.0 && wavelength_m.is_finite() {
        Ok(())
    } else {
        Err(Error::invalid(format!("wavelength must be positive, got {wavelength_m}")))
    }
}

/// Shared bin spacing of `channels`, or a validation error when any channel's
/// ΔD differs from the first by more than `rel_tol` (relative).
pub fn common_bin_spacing(channels: &[PrfChannel], rel_tol: f64) -> Result<f64> {
    let first = channels
        .first()
        .ok_or_else(|| Error::invalid("at least one channel required"))?
        .bin_spacing();
    for (i, ch) in channels.iter().enumerate().skip(1) {
        let d = ch.bin_spacing();
        if ((d - first) / first).abs() > rel_tol {
            return Err(Error::validation(
                format!("channels[{i}].prf_hz"),
                format!(
                    "bin spacing PRF/M = {d} Hz differs from channel 0's {first} Hz; \
                     exact CCRT needs PRF_i = M_i·ΔD for one shared ΔD \
                     (or enable the tolerance coincidence mode)"
                ),
            ));
        }
    }
    Ok(first)
}

/// Largest Doppler shift the subpulse axis can represent: `N/(2τ)` for the
/// channel with most subpulses.
pub fn subpulse_window_hz(channels: &[PrfChannel], pulse_width_s: f64) -> f64 {
    let n = channels.iter().map(|c| c.num_subpulses).max().unwrap_or(1);
    n as f64 / (2.0 * pulse_width_s)
}

/// Outcome of unfolding a set of residues.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UnfoldResult {
    /// CCRT solution in `[0, Θ)`.
    pub bin: u64,
    pub doppler_hz: f64,
    /// `None` when no wavelength was supplied.
    pub velocity_mps: Option<f64>,
    /// True when exactly one candidate is nearest to the coarse estimate.
    pub sign_resolved: bool,
    pub coarse_hz: f64,
}

/// Unfolds per-channel residues to a signed Doppler frequency.
///
/// Candidates are `(b_d + qΘ)·ΔD` for integer `q` with `|f| ≤ max_doppler_hz`;
/// the one closest to `coarse_hz` (the subpulse estimate) wins.
pub fn unfold(
    residues: &[usize],
    channels: &[PrfChannel],
    coarse_hz: f64,
    max_doppler_hz: f64,
    wavelength_m: Option<f64>,
) -> Result<UnfoldResult> {
    if residues.len() != channels.len() {
        return Err(Error::invalid("one residue per channel required"));
    }
    let spacing = common_bin_spacing(channels, 1e-9)?;
    let sys = CongruenceSystem::new(
        channels.iter().map(|c| c.num_pulses as u64).collect(),
        residues.iter().map(|&r| r as u64).collect(),
    )?;
    let bin = ccrt_solve(&sys)?;
    let theta = sys.theta() as f64;
    let base = bin as f64;
    let q_lo = ((-max_doppler_hz / spacing - base) / theta).ceil() as i64;
    let q_hi = ((max_doppler_hz / spacing - base) / theta).floor() as i64;
    let candidates: Vec<f64> = (q_lo..=q_hi)
        .map(|q| (base + q as f64 * theta) * spacing)
        .filter(|f| f.abs() <= max_doppler_hz * (1.0 + 1e-12))
        .collect();
    let (doppler_hz, sign_resolved) = pick_nearest(&candidates, coarse_hz)
        .ok_or(Error::WindowExceeded { limit_hz: max_doppler_hz })?;
    let velocity_mps = wavelength_m.map(|w| doppler_to_velocity(doppler_hz, w)).transpose()?;
    Ok(UnfoldResult {
        bin,
        doppler_hz,
        velocity_mps,
        sign_resolved,
        coarse_hz,
    })
}

fn pick_nearest(candidates: &[f64], target: f64) -> Option<(f64, bool)> {
    let best = candidates
        .iter()
        .copied()
        .min_by(|a, b| (a - target).abs().total_cmp(&(b - target).abs()))?;
    let d = (best - target).abs();
    let ties = candidates
        .iter()
        .filter(|&&c| ((c - target).abs() - d).abs() <= 1e-9 * d.max(1.0))
        .count();
    Some((best, ties == 1))
}

/// Coincidence unfolding for channels that do not share a bin spacing.
///
/// Scans candidate frequencies on a grid of the finest channel bin spacing over
/// `±max_doppler_hz` and keeps those whose predicted nearest bin lies within
/// `tolerance_bins` (circularly) of every measured residue; the surviving
/// candidate closest to `coarse_hz` is returned.
pub fn unfold_coincidence(
    residues: &[usize],
    channels: &[PrfChannel],
    coarse_hz: f64,
    max_doppler_hz: f64,
    tolerance_bins: usize,
    wavelength_m: Option<f64>,
) -> Result<UnfoldResult> {
    if residues.len() != channels.len() || channels.is_empty() {
        return Err(Error::invalid("one residue per channel required"));
    }
    let step = channels
        .iter()
        .map(PrfChannel::bin_spacing)
        .fold(f64::INFINITY, f64::min);
    let n = (max_doppler_hz / step).floor() as i64;
    let matches = |f: f64| {
        residues.iter().zip(channels).all(|(&r, ch)| {
            let m = ch.num_pulses as i64;
            let d = (nearest_bin(f, ch) as i64 - r as i64).rem_euclid(m);
            d.min(m - d) as usize <= tolerance_bins
        })
    };
    let candidates: Vec<f64> = (-n..=n).map(|i| i as f64 * step).filter(|&f| matches(f)).collect();
    // Adjacent grid points matching the same target form one cluster; keep centers.
    let mut centers = Vec::new();
    let mut start = 0;
    for i in 1..=candidates.len() {
        if i == candidates.len() || candidates[i] - candidates[i - 1] > 1.5 * step {
            if start < candidates.len() {
                centers.push(0.5 * (candidates[start] + candidates[i - 1]));
            }
            start = i;
        }
    }
    let (doppler_hz, sign_resolved) = pick_nearest(&centers, coarse_hz)
        .ok_or(Error::WindowExceeded { limit_hz: max_doppler_hz })?;
    let bin = (doppler_hz / step).round() as i64;
    let theta: i64 = channels.iter().map(|c| c.num_pulses as i64).product();
    let velocity_mps = wavelength_m.map(|w| doppler_to_velocity(doppler_hz, w)).transpose()?;
    Ok(UnfoldResult {
        bin: bin.rem_euclid(theta) as u64,
        doppler_hz,
        velocity_mps,
        sign_resolved,
        coarse_hz,
    })
}
