//! Waveform-level simulation of the pulse (PP) and subpulse (SP) processing
//! chains: LFM transmit pulse, delayed Doppler-shifted echoes in white noise,
//! range compression, datacubes, Doppler maps, peak picking and unfolding.
//!
//! Array layouts are range-major throughout: a datacube is indexed
//! `[range, pulse, subpulse]` and a Doppler map `[range, k′, l′]`.

use std::fs;
use std::io::Write;
use std::path::Path;

use ndarray::{Array2, Array3, ArrayView2, Axis, Dimension};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ccrt::{self, PrfChannel, UnfoldResult};
use crate::error::{Error, Result};
use crate::numerics::{dft_1d, matched_filter, ComplexSample, RngStream};
use crate::SPEED_OF_LIGHT;

const MIN_PULSE_SAMPLES: f64 = 8.0;
/// Smallest accepted ratio of a map peak to the map median.
pub const DETECTION_THRESHOLD: f64 = 3.0;
/// Probability that a noise-only map of any size crosses the threshold.
pub const MAP_FALSE_ALARM: f64 = 1e-3;

/// Peak-to-median ratio a map of `cells` Rayleigh noise cells exceeds with
/// probability about [`MAP_FALSE_ALARM`], floored at [`DETECTION_THRESHOLD`].
///
/// A Rayleigh cell exceeds `x` with probability `exp(-x²/s²)` and its median
/// is `s·√ln 2`, so the ratio is `√(ln(cells/P)/ln 2)`.
pub fn detection_threshold(cells: usize) -> f64 {
    let ratio = ((cells as f64 / MAP_FALSE_ALARM).ln() / std::f64::consts::LN_2).sqrt();
    ratio.max(DETECTION_THRESHOLD)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RadarSetup {
    pub carrier_hz: f64,
    pub wavelength_m: f64,
    pub pulse_width_s: f64,
    pub bandwidth_hz: f64,
    pub sample_rate_hz: f64,
    pub channels: Vec<PrfChannel>,
    /// Listening time per pulse; the full PRI of each channel when absent.
    #[serde(default)]
    pub receive_window_s: Option<f64>,
}

impl RadarSetup {
    /// Setup with `λ = c/f_R` and `Fs = 4B`.
    pub fn new(carrier_hz: f64, pulse_width_s: f64, bandwidth_hz: f64, channels: Vec<PrfChannel>) -> Result<Self> {
        let setup = Self {
            carrier_hz,
            wavelength_m: SPEED_OF_LIGHT / carrier_hz,
            pulse_width_s,
            bandwidth_hz,
            sample_rate_hz: 4.0 * bandwidth_hz,
            channels,
            receive_window_s: None,
        };
        setup.validate()?;
        Ok(setup)
    }

    pub fn with_sample_rate(mut self, sample_rate_hz: f64) -> Result<Self> {
        self.sample_rate_hz = sample_rate_hz;
        self.validate()?;
        Ok(self)
    }

    pub fn with_receive_window(mut self, window_s: f64) -> Result<Self> {
        self.receive_window_s = Some(window_s);
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::validation(name, format!("must be positive, got {v}")))
            }
        };
        positive("carrier_hz", self.carrier_hz)?;
        positive("wavelength_m", self.wavelength_m)?;
        positive("pulse_width_s", self.pulse_width_s)?;
        positive("sample_rate_hz", self.sample_rate_hz)?;
        if !(self.bandwidth_hz >= 0.0) || !self.bandwidth_hz.is_finite() {
            return Err(Error::validation("bandwidth_hz", "must be finite and non-negative"));
        }
        let expected = SPEED_OF_LIGHT / self.carrier_hz;
        if ((self.wavelength_m - expected) / expected).abs() > 1e-6 {
            return Err(Error::validation(
                "wavelength_m",
                format!("{} m does not match c/f_R = {expected} m", self.wavelength_m),
            ));
        }
        if self.sample_rate_hz < 2.0 * self.bandwidth_hz {
            return Err(Error::validation(
                "sample_rate_hz",
                format!("{} Hz is below twice the bandwidth", self.sample_rate_hz),
            ));
        }
        if self.pulse_width_s * self.sample_rate_hz < MIN_PULSE_SAMPLES {
            return Err(Error::validation(
                "pulse_width_s",
                "pulse must span at least 8 samples at the sample rate",
            ));
        }
        if self.channels.is_empty() {
            return Err(Error::validation("channels", "at least one channel required"));
        }
        for (i, ch) in self.channels.iter().enumerate() {
            ch.validate()
                .map_err(|e| Error::validation(format!("channels[{i}]"), e.to_string()))?;
            if ch.pri_s() < self.pulse_width_s {
                return Err(Error::validation(
                    format!("channels[{i}].prf_hz"),
                    "PRI is shorter than the pulse",
                ));
            }
            if ch.num_subpulses > self.pulse_samples() {
                return Err(Error::validation(
                    format!("channels[{i}].num_subpulses"),
                    "more subpulses than pulse samples",
                ));
            }
        }
        if let Some(w) = self.receive_window_s {
            let min_pri = self.channels.iter().map(PrfChannel::pri_s).fold(f64::INFINITY, f64::min);
            if !(w >= self.pulse_width_s && w <= min_pri) {
                return Err(Error::validation(
                    "receive_window_s",
                    format!("{w} s must lie between the pulse width and the shortest PRI ({min_pri} s)"),
                ));
            }
        }
        Ok(())
    }

    pub fn pulse_samples(&self) -> usize {
        (self.pulse_width_s * self.sample_rate_hz).round() as usize
    }

    /// Receive samples per pulse for `channel`.
    pub fn window_samples(&self, channel: &PrfChannel) -> usize {
        let w = self.receive_window_s.unwrap_or_else(|| channel.pri_s());
        (w * self.sample_rate_hz).floor() as usize
    }

    /// Velocity spacing of one fine Doppler bin, `λ·ΔD/2`.
    pub fn fine_velocity_quantum(&self) -> Result<f64> {
        let spacing = ccrt::common_bin_spacing(&self.channels, 1e-9)?;
        Ok(self.wavelength_m * spacing / 2.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TargetTruth {
    pub range_m: f64,
    /// Negative for receding targets.
    pub velocity_mps: f64,
    pub amplitude: f64,
}

/// Unit-magnitude LFM pulse `exp(jπ(B/τ)t²)` sampled at `t ∈ [-τ/2, τ/2)`.
pub fn make_lfm(setup: &RadarSetup) -> Vec<ComplexSample> {
    let n = setup.pulse_samples();
    let tau = setup.pulse_width_s;
    let rate = setup.bandwidth_hz / tau;
    (0..n)
        .map(|i| {
            let t = -tau / 2.0 + i as f64 / setup.sample_rate_hz;
            ComplexSample::from_polar(1.0, std::f64::consts::PI * rate * t * t)
        })
        .collect()
}

/// `[start, end)` of `n` contiguous segments of a `len`-sample pulse; the
/// final segment absorbs the remainder.
fn subpulse_bounds(len: usize, n: usize) -> Vec<(usize, usize)> {
    let base = len / n;
    (0..n)
        .map(|i| {
            let start = i * base;
            let end = if i + 1 == n { len } else { start + base };
            (start, end)
        })
        .collect()
}

pub fn split_subpulses(replica: &[ComplexSample], n: usize) -> Result<Vec<Vec<ComplexSample>>> {
    if n == 0 || n > replica.len() {
        return Err(Error::invalid(format!(
            "cannot split {} samples into {n} subpulses",
            replica.len()
        )));
    }
    Ok(subpulse_bounds(replica.len(), n)
        .into_iter()
        .map(|(a, b)| replica[a..b].to_vec())
        .collect())
}

/// Received samples of each pulse in `channel`'s CPI: the echo of `replica`
/// delayed by the two-way travel time and rotated by the Doppler phase
/// `2πf_d(m/PRF + k/Fs)` (slow time plus intra-pulse time), plus complex white
/// noise of per-component variance `noise_sigma²/2`.
pub fn synth_echo(
    setup: &RadarSetup,
    channel: &PrfChannel,
    truth: &TargetTruth,
    replica: &[ComplexSample],
    rng: &mut RngStream,
    noise_sigma: f64,
) -> Result<Vec<Vec<ComplexSample>>> {
    if !(noise_sigma >= 0.0) {
        return Err(Error::invalid("noise sigma must be non-negative"));
    }
    let fs = setup.sample_rate_hz;
    let window = setup.window_samples(channel);
    let delay = (2.0 * truth.range_m / SPEED_OF_LIGHT * fs).round();
    if !(truth.range_m > 0.0) || delay as usize + replica.len() > window {
        return Err(Error::invalid(format!(
            "target range {} m puts the echo outside the {window}-sample receive window",
            truth.range_m
        )));
    }
    let delay = delay as usize;
    let f_d = ccrt::velocity_to_doppler(truth.velocity_mps, setup.wavelength_m)?;
    let two_pi = 2.0 * std::f64::consts::PI;
    let noise_scale = noise_sigma * std::f64::consts::FRAC_1_SQRT_2;
    let mut pulses = Vec::with_capacity(channel.num_pulses);
    for m in 0..channel.num_pulses {
        let mut rx: Vec<ComplexSample> = if noise_sigma > 0.0 {
            (0..window)
                .map(|_| ComplexSample::new(noise_scale * rng.standard_normal(), noise_scale * rng.standard_normal()))
                .collect()
        } else {
            vec![ComplexSample::new(0.0, 0.0); window]
        };
        let slow = m as f64 / channel.prf_hz;
        for (k, s) in replica.iter().enumerate() {
            let phase = two_pi * f_d * (slow + k as f64 / fs);
            rx[delay + k] += truth.amplitude * s * ComplexSample::from_polar(1.0, phase);
        }
        pulses.push(rx);
    }
    Ok(pulses)
}

/// Pulse-processing range compression: each pulse against the full replica.
/// Row `m` holds pulse `m`'s profile; column `r` is the echo delay in samples.
pub fn compress_pp(rx: &[Vec<ComplexSample>], replica: &[ComplexSample]) -> Result<Array2<ComplexSample>> {
    let profiles = rx
        .iter()
        .map(|p| matched_filter(p, replica))
        .collect::<Result<Vec<_>>>()?;
    let len = profiles.first().map_or(0, Vec::len);
    if profiles.is_empty() || profiles.iter().any(|r| r.len() != len) {
        return Err(Error::invalid("pulses must be non-empty and of equal length"));
    }
    let flat: Vec<_> = profiles.into_iter().flatten().collect();
    Array2::from_shape_vec((rx.len(), len), flat).map_err(|e| Error::invalid(e.to_string()))
}

/// Subpulse-processing range compression: each pulse against every subpulse
/// replica, with sub-profile `n` shifted by its segment's offset so that all
/// share the full-pulse range axis. Output is `[pulse, subpulse, range]`;
/// summing over subpulses reproduces [`compress_pp`].
pub fn compress_sp(rx: &[Vec<ComplexSample>], replica: &[ComplexSample], n: usize) -> Result<Array3<ComplexSample>> {
    if n == 0 || n > replica.len() {
        return Err(Error::invalid(format!("cannot split {} samples into {n} subpulses", replica.len())));
    }
    let bounds = subpulse_bounds(replica.len(), n);
    let Some(first) = rx.first() else {
        return Err(Error::invalid("no pulses"));
    };
    if first.len() < replica.len() {
        return Err(Error::invalid("receive window shorter than the replica"));
    }
    let ranges = first.len() - replica.len() + 1;
    let mut out = Array3::zeros((rx.len(), n, ranges));
    for (m, pulse) in rx.iter().enumerate() {
        if pulse.len() != first.len() {
            return Err(Error::invalid("pulses must have equal length"));
        }
        for (j, &(a, b)) in bounds.iter().enumerate() {
            let y = matched_filter(pulse, &replica[a..b])?;
            out.slice_mut(ndarray::s![m, j, ..])
                .iter_mut()
                .zip(&y[a..a + ranges])
                .for_each(|(d, s)| *d = *s);
        }
    }
    Ok(out)
}

/// Compressed samples of one channel, range-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Datacube {
    pub channel: PrfChannel,
    /// `[range, pulse]`.
    pub pp: Array2<ComplexSample>,
    /// `[range, pulse, subpulse]`.
    pub sp: Array3<ComplexSample>,
}

/// Assembles a datacube from PP profiles `[pulse, range]` and SP profiles
/// `[pulse, subpulse, range]`.
pub fn build_datacube(
    channel: PrfChannel,
    pp: &Array2<ComplexSample>,
    sp: &Array3<ComplexSample>,
) -> Result<Datacube> {
    let (m, r) = pp.dim();
    let (m2, n, r2) = sp.dim();
    if m != channel.num_pulses || m2 != m || n != channel.num_subpulses || r2 != r {
        return Err(Error::invalid(format!(
            "profile shapes {:?}/{:?} do not match channel (M={}, N={})",
            pp.dim(),
            sp.dim(),
            channel.num_pulses,
            channel.num_subpulses
        )));
    }
    Ok(Datacube {
        channel,
        pp: pp.t().as_standard_layout().into_owned(),
        sp: sp.view().permuted_axes([2, 0, 1]).as_standard_layout().into_owned(),
    })
}

/// Magnitude spectra of one channel, range-major.
#[derive(Debug, Clone, PartialEq)]
pub struct DopplerMap {
    /// `[range, k′]`: slow-time DFT magnitude of the PP profiles.
    pub pp_map: Array2<f64>,
    /// `[range, k′, l′]`: 2D DFT magnitude over (pulse, subpulse).
    pub sp_map: Array3<f64>,
}

impl DopplerMap {
    /// Largest value, its index, and the ratio to the map median.
    pub fn pp_peak(&self) -> (f64, (usize, usize), f64) {
        let (v, idx) = argmax(self.pp_map.indexed_iter().map(|(i, &v)| (i, v)));
        (v, idx, v / median(self.pp_map.iter().copied()))
    }

    pub fn sp_peak(&self) -> (f64, (usize, usize, usize), f64) {
        let (v, idx) = argmax(self.sp_map.indexed_iter().map(|(i, &v)| (i, v)));
        (v, idx, v / median(self.sp_map.iter().copied()))
    }
}

fn argmax<I: Copy + Default>(it: impl Iterator<Item = (I, f64)>) -> (f64, I) {
    it.fold((f64::NEG_INFINITY, I::default()), |acc, (i, v)| if v > acc.0 { (v, i) } else { acc })
}

fn median(it: impl Iterator<Item = f64>) -> f64 {
    let mut v: Vec<f64> = it.collect();
    let mid = v.len() / 2;
    let (_, m, _) = v.select_nth_unstable_by(mid, f64::total_cmp);
    *m
}

fn dft_along<D: Dimension>(a: &mut ndarray::Array<ComplexSample, D>, axis: usize) -> Result<()> {
    for mut lane in a.lanes_mut(Axis(axis)) {
        let v: Vec<_> = lane.iter().copied().collect();
        let t = dft_1d(&v)?;
        lane.iter_mut().zip(t).for_each(|(d, s)| *d = s);
    }
    Ok(())
}

pub fn doppler_maps(cube: &Datacube) -> Result<DopplerMap> {
    let mut pp = cube.pp.clone();
    dft_along(&mut pp, 1)?;
    let mut sp = cube.sp.clone();
    dft_along(&mut sp, 1)?;
    dft_along(&mut sp, 2)?;
    Ok(DopplerMap {
        pp_map: pp.mapv(|c| c.norm()),
        sp_map: sp.mapv(|c| c.norm()),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelDetection {
    pub apparent_bin: usize,
    pub coarse_bin: usize,
    pub coarse_hz: f64,
    pub peak_range_bin: usize,
    pub pp_peak_to_median: f64,
    pub sp_peak_to_median: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionReport {
    pub channels: Vec<ChannelDetection>,
    pub fused: UnfoldResult,
    pub velocity_mps: f64,
}

/// Signed frequency of subpulse DFT bin `l` for `n` subpulses of a `tau`-long
/// pulse; bins above `n/2` wrap to negative frequencies.
pub fn coarse_bin_hz(l: usize, n: usize, tau: f64) -> f64 {
    let signed = if 2 * l > n { l as isize - n as isize } else { l as isize };
    signed as f64 / tau
}

/// Peak-picks every channel's maps, unfolds the apparent bins with the median
/// coarse estimate, and converts to velocity.
pub fn detect_and_unfold(maps: &[DopplerMap], setup: &RadarSetup) -> Result<DetectionReport> {
    detect_and_unfold_with(maps, setup, None)
}

/// As [`detect_and_unfold`]; with `tolerance_bins` set, channels need not
/// share a bin spacing and residues are matched by coincidence within that
/// many bins.
pub fn detect_and_unfold_with(
    maps: &[DopplerMap],
    setup: &RadarSetup,
    tolerance_bins: Option<usize>,
) -> Result<DetectionReport> {
    if maps.len() != setup.channels.len() {
        return Err(Error::invalid(format!(
            "{} maps for {} channels",
            maps.len(),
            setup.channels.len()
        )));
    }
    let mut channels = Vec::with_capacity(maps.len());
    for (i, (map, ch)) in maps.iter().zip(&setup.channels).enumerate() {
        let (_, (range, k), pp_ratio) = map.pp_peak();
        if !(pp_ratio >= detection_threshold(map.pp_map.len())) {
            return Err(Error::NoDetection {
                channel: i,
                ratio: pp_ratio,
            });
        }
        let (_, _, sp_ratio) = map.sp_peak();
        let slice = map.sp_map.slice(ndarray::s![range, k, ..]);
        let (_, l) = argmax(slice.indexed_iter().map(|(i, &v)| (i, v)));
        channels.push(ChannelDetection {
            apparent_bin: k,
            coarse_bin: l,
            coarse_hz: coarse_bin_hz(l, ch.num_subpulses, setup.pulse_width_s),
            peak_range_bin: range,
            pp_peak_to_median: pp_ratio,
            sp_peak_to_median: sp_ratio,
        });
    }
    let coarse = median_of(channels.iter().map(|c| c.coarse_hz).collect());
    let residues: Vec<usize> = channels.iter().map(|c| c.apparent_bin).collect();
    let limit = ccrt::subpulse_window_hz(&setup.channels, setup.pulse_width_s);
    let wavelength = Some(setup.wavelength_m);
    let fused = match tolerance_bins {
        None => ccrt::unfold(&residues, &setup.channels, coarse, limit, wavelength)?,
        Some(tol) => ccrt::unfold_coincidence(&residues, &setup.channels, coarse, limit, tol, wavelength)?,
    };
    Ok(DetectionReport {
        channels,
        velocity_mps: fused.velocity_mps.unwrap_or_default(),
        fused,
    })
}

fn median_of(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Everything one simulated dwell produces.
#[derive(Debug, Clone)]
pub struct SimulationOutput {
    pub cubes: Vec<Datacube>,
    pub maps: Vec<DopplerMap>,
    pub report: Result<DetectionReport>,
}

/// Simulates all channels (channel `i` draws noise from stream `(seed, i)`),
/// builds their maps and runs detection.
pub fn simulate(setup: &RadarSetup, truth: &TargetTruth, seed: u64, noise_sigma: f64) -> Result<SimulationOutput> {
    simulate_with(setup, truth, seed, noise_sigma, None)
}

pub fn simulate_with(
    setup: &RadarSetup,
    truth: &TargetTruth,
    seed: u64,
    noise_sigma: f64,
    tolerance_bins: Option<usize>,
) -> Result<SimulationOutput> {
    setup.validate()?;
    let replica = make_lfm(setup);
    let per_channel = setup
        .channels
        .par_iter()
        .enumerate()
        .map(|(i, ch)| {
            let mut rng = RngStream::new(seed, i as u64);
            let rx = synth_echo(setup, ch, truth, &replica, &mut rng, noise_sigma)?;
            let pp = compress_pp(&rx, &replica)?;
            let sp = compress_sp(&rx, &replica, ch.num_subpulses)?;
            let cube = build_datacube(*ch, &pp, &sp)?;
            let map = doppler_maps(&cube)?;
            Ok((cube, map))
        })
        .collect::<Result<Vec<_>>>()?;
    let (cubes, maps): (Vec<_>, Vec<_>) = per_channel.into_iter().unzip();
    let report = detect_and_unfold_with(&maps, setup, tolerance_bins);
    Ok(SimulationOutput { cubes, maps, report })
}

/// JSON sidecar of a float32 export.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSidecar {
    pub file: String,
    pub dtype: String,
    pub byte_order: String,
    pub shape: Vec<usize>,
    pub axes: Vec<String>,
    pub description: String,
}

/// Writes `values` (row-major in `shape`) as little-endian float32 to
/// `dir/name.f32` with a JSON sidecar `dir/name.json`.
pub fn write_f32_grid(
    dir: &Path,
    name: &str,
    values: impl Iterator<Item = f64>,
    shape: &[usize],
    axes: &[&str],
    description: &str,
) -> Result<GridSidecar> {
    if shape.len() != axes.len() {
        return Err(Error::invalid("one axis name per dimension required"));
    }
    fs::create_dir_all(dir)?;
    let file = format!("{name}.f32");
    let mut bytes = Vec::with_capacity(shape.iter().product::<usize>() * 4);
    for v in values {
        bytes.extend_from_slice(&(v as f32).to_le_bytes());
    }
    if bytes.len() != shape.iter().product::<usize>() * 4 {
        return Err(Error::invalid("value count does not match shape"));
    }
    fs::File::create(dir.join(&file))?.write_all(&bytes)?;
    let sidecar = GridSidecar {
        file,
        dtype: "float32".into(),
        byte_order: "little".into(),
        shape: shape.to_vec(),
        axes: axes.iter().map(|s| s.to_string()).collect(),
        description: description.into(),
    };
    let json = serde_json::to_string_pretty(&sidecar).map_err(|e| Error::Io(e.to_string()))?;
    fs::write(dir.join(format!("{name}.json")), json)?;
    Ok(sidecar)
}

/// Exports channel `index`'s cube (real and imaginary parts as a trailing
/// axis) and both magnitude maps.
pub fn export_channel(dir: &Path, index: usize, cube: &Datacube, map: &DopplerMap) -> Result<Vec<GridSidecar>> {
    let (r, m, n) = cube.sp.dim();
    let ch = format!("channel{index}");
    let parts = |c: &ComplexSample| [c.re, c.im];
    Ok(vec![
        write_f32_grid(
            dir,
            &format!("{ch}_cube_sp"),
            cube.sp.iter().flat_map(parts),
            &[r, m, n, 2],
            &["range", "pulse", "subpulse", "re_im"],
            "subpulse-compressed samples",
        )?,
        write_f32_grid(
            dir,
            &format!("{ch}_cube_pp"),
            cube.pp.iter().flat_map(parts),
            &[r, m, 2],
            &["range", "pulse", "re_im"],
            "pulse-compressed samples",
        )?,
        write_f32_grid(
            dir,
            &format!("{ch}_map_pp"),
            map.pp_map.iter().copied(),
            &[r, m],
            &["range", "doppler_bin"],
            "slow-time DFT magnitude",
        )?,
        write_f32_grid(
            dir,
            &format!("{ch}_map_sp"),
            map.sp_map.iter().copied(),
            &[r, m, n],
            &["range", "doppler_bin", "subpulse_bin"],
            "2D DFT magnitude over pulses and subpulses",
        )?,
    ])
}

/// Total energy of a 2D block of samples.
pub fn energy(a: ArrayView2<ComplexSample>) -> f64 {
    a.iter().map(|c| c.norm_sqr()).sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn published_channels(n: usize) -> Vec<PrfChannel> {
        [11, 13, 17, 19]
            .iter()
            .map(|&m| PrfChannel::with_bin_spacing(100.0, m, n).unwrap())
            .collect()
    }

    fn setup() -> RadarSetup {
        RadarSetup::new(6e9, 25e-6, 2e6, published_channels(8))
            .unwrap()
            .with_receive_window(150e-6)
            .unwrap()
    }

    fn unmodulated(n: usize) -> RadarSetup {
        let s = RadarSetup {
            carrier_hz: 6e9,
            wavelength_m: SPEED_OF_LIGHT / 6e9,
            pulse_width_s: 25e-6,
            bandwidth_hz: 0.0,
            sample_rate_hz: 8e6,
            channels: published_channels(n),
            receive_window_s: Some(150e-6),
        };
        s.validate().unwrap();
        s
    }

    #[test]
    fn setup_validation() {
        let s = setup();
        assert_eq!(s.sample_rate_hz, 8e6);
        assert_eq!(s.pulse_samples(), 200);
        assert!(s.clone().with_sample_rate(3e6).is_err());
        let mut bad = s.clone();
        bad.wavelength_m = 0.05;
        assert!(matches!(bad.validate(), Err(Error::Validation { .. })));
        assert!(s.clone().with_receive_window(1e-3).is_err());
        assert!(RadarSetup::new(6e9, 0.5e-6, 2e6, published_channels(8)).is_err());
    }

    #[test]
    fn lfm_has_unit_magnitude_and_narrow_mainlobe() {
        let s = setup();
        let x = make_lfm(&s);
        assert_eq!(x.len(), 200);
        assert!(x.iter().all(|v| (v.norm() - 1.0).abs() < 1e-12));
        let (c, first) = crate::numerics::cross_correlation(&x, &x).unwrap();
        let zero = (-first) as usize;
        let peak = c[zero].norm();
        assert!((peak - 200.0).abs() < 1e-9);
        // Main-lobe width between the -4 dB points, in samples.
        let level = peak * 10f64.powf(-4.0 / 20.0);
        let right = (zero..c.len()).find(|&i| c[i].norm() < level).unwrap() - zero;
        let left = zero - (0..=zero).rev().find(|&i| c[i].norm() < level).unwrap();
        let width = (left + right) as f64;
        let expected = s.sample_rate_hz / s.bandwidth_hz;
        assert!((width - expected).abs() <= 1.0 + 0.25 * expected, "{width} vs {expected}");
    }

    #[test]
    fn zero_bandwidth_is_constant_phase() {
        let x = make_lfm(&unmodulated(8));
        assert!(x.iter().all(|v| (v - ComplexSample::new(1.0, 0.0)).norm() < 1e-12));
    }

    #[test]
    fn split_examples() {
        let x: Vec<_> = (0..400).map(|i| ComplexSample::new(i as f64, 0.0)).collect();
        let s = split_subpulses(&x, 8).unwrap();
        assert!(s.iter().all(|p| p.len() == 50));
        let y: Vec<_> = (0..401).map(|i| ComplexSample::new(i as f64, 0.0)).collect();
        let s = split_subpulses(&y, 8).unwrap();
        assert_eq!(s.iter().map(Vec::len).collect::<Vec<_>>(), vec![50, 50, 50, 50, 50, 50, 50, 51]);
        assert_eq!(s.concat(), y);
        assert_eq!(split_subpulses(&y, 1).unwrap(), vec![y.clone()]);
        assert!(split_subpulses(&y[..3], 4).is_err());
    }

    fn noiseless(setup: &RadarSetup, ch: usize, truth: &TargetTruth) -> Vec<Vec<ComplexSample>> {
        let replica = make_lfm(setup);
        let mut rng = RngStream::new(0, 0);
        synth_echo(setup, &setup.channels[ch], truth, &replica, &mut rng, 0.0).unwrap()
    }

    fn delay_bin(setup: &RadarSetup, range_m: f64) -> usize {
        (2.0 * range_m / SPEED_OF_LIGHT * setup.sample_rate_hz).round() as usize
    }

    #[test]
    fn stationary_echo_compresses_to_delay_bin() {
        let s = setup();
        let truth = TargetTruth {
            range_m: 10_000.0,
            velocity_mps: 0.0,
            amplitude: 1.0,
        };
        let rx = noiseless(&s, 0, &truth);
        let pp = compress_pp(&rx, &make_lfm(&s)).unwrap();
        for row in pp.rows() {
            let (v, i) = argmax(row.iter().enumerate().map(|(i, c)| (i, c.norm())));
            assert_eq!(i, delay_bin(&s, 10_000.0));
            assert!((v - 200.0).abs() < 1e-9);
        }
    }

    #[test]
    fn doppler_phase_follows_velocity() {
        let s = setup();
        let f_d = ccrt::velocity_to_doppler(900.0, s.wavelength_m).unwrap();
        assert!((f_d - 36_000.0).abs() / 36_000.0 < 1e-3);
        let truth = TargetTruth {
            range_m: 10_000.0,
            velocity_mps: 900.0,
            amplitude: 1.0,
        };
        let rx = noiseless(&s, 1, &truth);
        let replica = make_lfm(&s);
        let delay = delay_bin(&s, 10_000.0);
        let prf = s.channels[1].prf_hz;
        for (m, pulse) in rx.iter().enumerate() {
            for (k, r) in replica.iter().enumerate() {
                let t = m as f64 / prf + k as f64 / s.sample_rate_hz;
                let want = r * ComplexSample::from_polar(1.0, 2.0 * std::f64::consts::PI * f_d * t);
                assert!((pulse[delay + k] - want).norm() < 1e-9);
            }
        }
    }

    #[test]
    fn echo_beyond_window_rejected() {
        let s = setup();
        let replica = make_lfm(&s);
        let truth = TargetTruth {
            range_m: 30_000.0,
            velocity_mps: 0.0,
            amplitude: 1.0,
        };
        let mut rng = RngStream::new(0, 0);
        assert!(synth_echo(&s, &s.channels[0], &truth, &replica, &mut rng, 0.0).is_err());
    }

    #[test]
    fn noise_only_compression_is_rayleigh() {
        let s = setup();
        let replica = make_lfm(&s);
        let truth = TargetTruth {
            range_m: 10_000.0,
            velocity_mps: 0.0,
            amplitude: 0.0,
        };
        let sigma = 0.7;
        let mut mags = Vec::new();
        let mut rng = RngStream::new(77, 0);
        while mags.len() < 100_000 {
            let rx = synth_echo(&s, &s.channels[3], &truth, &replica, &mut rng, sigma).unwrap();
            let pp = compress_pp(&rx, &replica).unwrap();
            // Lags a full replica apart see disjoint noise samples.
            for row in pp.rows() {
                mags.extend(row.iter().step_by(200).map(|c| c.norm()));
            }
        }
        let scale_sq = sigma * sigma * 200.0;
        for q in [0.1, 0.5, 0.9] {
            let x = (-scale_sq * (1.0f64 - q).ln()).sqrt();
            let frac = mags.iter().filter(|&&v| v <= x).count() as f64 / mags.len() as f64;
            let se = (q * (1.0 - q) / mags.len() as f64).sqrt();
            assert!((frac - q).abs() < 4.0 * se, "q={q}: {frac}");
        }
    }

    #[test]
    fn subpulse_peaks_split_the_pulse_peak() {
        let s = setup();
        let truth = TargetTruth {
            range_m: 10_000.0,
            velocity_mps: 0.0,
            amplitude: 1.0,
        };
        let rx = noiseless(&s, 0, &truth);
        let replica = make_lfm(&s);
        let sp = compress_sp(&rx, &replica, 8).unwrap();
        let delay = delay_bin(&s, 10_000.0);
        for j in 0..8 {
            let v = sp[[0, j, delay]].norm();
            assert!((v - 25.0).abs() / 25.0 < 1e-6, "{v}");
        }
        let pp = compress_pp(&rx, &replica).unwrap();
        let summed = sp.sum_axis(Axis(1));
        assert!(summed.iter().zip(pp.iter()).all(|(a, b)| (a - b).norm() < 1e-9));
    }

    #[test]
    fn single_subpulse_is_bit_identical_to_pp() {
        let s = setup();
        let truth = TargetTruth {
            range_m: 9_000.0,
            velocity_mps: -700.0,
            amplitude: 1.0,
        };
        let replica = make_lfm(&s);
        let mut rng = RngStream::new(5, 0);
        let rx = synth_echo(&s, &s.channels[0], &truth, &replica, &mut rng, 1.0).unwrap();
        let pp = compress_pp(&rx, &replica).unwrap();
        let sp = compress_sp(&rx, &replica, 1).unwrap();
        assert_eq!(sp.index_axis(Axis(1), 0), pp);
    }

    fn sinc(x: f64) -> f64 {
        if x == 0.0 {
            1.0
        } else {
            (std::f64::consts::PI * x).sin() / (std::f64::consts::PI * x)
        }
    }

    #[test]
    fn subpulse_compression_tolerates_doppler() {
        let s = unmodulated(8);
        let f_d = 0.9 / s.pulse_width_s;
        let truth = TargetTruth {
            range_m: 10_000.0,
            velocity_mps: ccrt::doppler_to_velocity(f_d, s.wavelength_m).unwrap(),
            amplitude: 1.0,
        };
        let rx = noiseless(&s, 0, &truth);
        let replica = make_lfm(&s);
        let delay = delay_bin(&s, 10_000.0);
        let pp = compress_pp(&rx, &replica).unwrap()[[0, delay]].norm();
        let sp = compress_sp(&rx, &replica, 8).unwrap();
        let sub = sp.slice(ndarray::s![0, .., delay]).iter().map(|c| c.norm()).fold(0.0, f64::max);
        assert!(sub > pp);
        let model = (sinc(0.9 / 8.0) / (8.0 * sinc(0.9))).abs();
        assert!((sub / pp / model - 1.0).abs() < 0.2, "{} vs {model}", sub / pp);
    }

    #[test]
    fn noiseless_target_lands_in_folded_bins_and_unfolds() {
        let s = setup();
        let truth = TargetTruth {
            range_m: 10_000.0,
            velocity_mps: -900.0,
            amplitude: 1.0,
        };
        let report = simulate(&s, &truth, 1, 0.0).unwrap().report.unwrap();
        let f_d = ccrt::velocity_to_doppler(-900.0, s.wavelength_m).unwrap();
        for (det, ch) in report.channels.iter().zip(&s.channels) {
            assert_eq!(det.apparent_bin, ccrt::nearest_bin(f_d, ch));
        }
        let q = s.fine_velocity_quantum().unwrap();
        assert!((report.velocity_mps + 900.0).abs() <= q / 2.0, "{}", report.velocity_mps);
    }

    #[test]
    fn stationary_target_unfolds_to_zero() {
        let truth = TargetTruth {
            range_m: 10_000.0,
            velocity_mps: 0.0,
            amplitude: 1.0,
        };
        let report = simulate(&setup(), &truth, 1, 0.0).unwrap().report.unwrap();
        assert!(report.channels.iter().all(|c| c.apparent_bin == 0));
        assert_eq!(report.velocity_mps, 0.0);
    }

    #[test]
    fn noise_only_is_not_detected() {
        let truth = TargetTruth {
            range_m: 10_000.0,
            velocity_mps: 0.0,
            amplitude: 0.0,
        };
        let out = simulate(&setup(), &truth, 3, 1.0).unwrap();
        assert!(matches!(out.report, Err(Error::NoDetection { .. })));
    }

    #[test]
    fn threshold_grows_with_map_size() {
        assert!(detection_threshold(1) >= DETECTION_THRESHOLD);
        let t = detection_threshold(15_000);
        assert!(t > 4.5 && t < 5.5, "{t}");
    }

    #[test]
    fn zero_input_gives_zero_maps() {
        let ch = PrfChannel::with_bin_spacing(100.0, 3, 2).unwrap();
        let cube = build_datacube(ch, &Array2::zeros((3, 5)), &Array3::zeros((3, 2, 5))).unwrap();
        let maps = doppler_maps(&cube).unwrap();
        assert!(maps.pp_map.iter().all(|&v| v == 0.0));
        assert!(maps.sp_map.iter().all(|&v| v == 0.0));
        assert!(build_datacube(ch, &Array2::zeros((4, 5)), &Array3::zeros((3, 2, 5))).is_err());
    }

    #[test]
    fn maps_satisfy_parseval() {
        let truth = TargetTruth {
            range_m: 10_000.0,
            velocity_mps: 400.0,
            amplitude: 1.0,
        };
        let out = simulate(&setup(), &truth, 9, 1.0).unwrap();
        let (cube, map) = (&out.cubes[2], &out.maps[2]);
        let (m, n) = (cube.channel.num_pulses as f64, cube.channel.num_subpulses as f64);
        for r in [0, 100, 400] {
            let e_pp = energy(cube.pp.slice(ndarray::s![r..r + 1, ..]));
            let e_map: f64 = map.pp_map.row(r).iter().map(|v| v * v).sum();
            assert!((e_map / m - e_pp).abs() < 1e-9 * e_pp.max(1.0));
            let e_sp = energy(cube.sp.index_axis(Axis(0), r));
            let e_sp_map: f64 = map.sp_map.index_axis(Axis(0), r).iter().map(|v| v * v).sum();
            assert!((e_sp_map / (m * n) - e_sp).abs() < 1e-9 * e_sp.max(1.0));
        }
    }

    #[test]
    fn sp_peak_never_below_pp_peak() {
        for v in [300.0, 600.0, 900.0] {
            let truth = TargetTruth {
                range_m: 10_000.0,
                velocity_mps: v,
                amplitude: 1.0,
            };
            let out = simulate(&setup(), &truth, 0, 0.0).unwrap();
            for map in &out.maps {
                assert!(map.sp_peak().0 >= map.pp_peak().0 - 1e-9);
            }
        }
        // Without frequency modulation PP suffers the full Doppler mismatch
        // loss and SP is strictly better.
        let truth = TargetTruth {
            range_m: 10_000.0,
            velocity_mps: 900.0,
            amplitude: 1.0,
        };
        let out = simulate(&unmodulated(8), &truth, 0, 0.0).unwrap();
        for map in &out.maps {
            assert!(map.sp_peak().0 > 1.5 * map.pp_peak().0);
        }
    }

    #[test]
    fn simulation_is_deterministic() {
        let truth = TargetTruth {
            range_m: 10_000.0,
            velocity_mps: -900.0,
            amplitude: 0.3,
        };
        let a = simulate(&setup(), &truth, 17, 1.0).unwrap();
        let b = simulate(&setup(), &truth, 17, 1.0).unwrap();
        assert_eq!(a.cubes, b.cubes);
        assert_eq!(a.report, b.report);
    }

    #[test]
    fn export_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let truth = TargetTruth {
            range_m: 10_000.0,
            velocity_mps: -900.0,
            amplitude: 1.0,
        };
        let out = simulate(&setup(), &truth, 2, 0.1).unwrap();
        let side = export_channel(dir.path(), 0, &out.cubes[0], &out.maps[0]).unwrap();
        let map_side = &side[2];
        let bytes = fs::read(dir.path().join(&map_side.file)).unwrap();
        assert_eq!(bytes.len(), map_side.shape.iter().product::<usize>() * 4);
        let first = f32::from_le_bytes(bytes[..4].try_into().unwrap());
        assert_eq!(first, out.maps[0].pp_map[[0, 0]] as f32);
        let json: GridSidecar =
            serde_json::from_str(&fs::read_to_string(dir.path().join("channel0_map_pp.json")).unwrap()).unwrap();
        assert_eq!(&json, map_side);
    }
}
