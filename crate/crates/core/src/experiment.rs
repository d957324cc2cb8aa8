//! JSON-configured experiments: parameter sweeps of the closed forms with
//! their oracles, Monte Carlo validation, the exhaustive CCRT check and the
//! waveform simulation. Every run writes a CSV table and a JSON manifest.
//!
//! # Configuration
//!
//! Only `mode` is required; every omitted section takes the published
//! defaults for that mode (see [`ExperimentConfig::defaults`]).
//!
//! ```json
//! {
//!   "mode": "pd_sweep",
//!   "grid": {
//!     "snr_db": { "start": -5, "stop": 15, "step": 1 },
//!     "lambda1": 0.5, "lambda2": 0.99,
//!     "channels": [ { "num_pulses": 7, "num_subpulses": 8 } ]
//!   },
//!   "snr_mapping": { "noise_power": 0.04 },
//!   "mc": { "enabled": true, "trials": 1000000, "seed": 7 },
//!   "output_path": "out/pd.csv"
//! }
//! ```
//!
//! The manifest (`<output_path>` with a `.json` extension) echoes the fully
//! resolved configuration; feeding that echo back reproduces the CSV byte for
//! byte.
//!
//! # CSV schemas
//!
//! | mode | columns |
//! |------|---------|
//! | `pd_sweep` | snr1_db, channel, num_pulses, num_subpulses, m, pd_closed, pd_oracle, abs_diff, pd_printed_xi_factored, pd_mc, stderr_pd |
//! | `pfa_sweep` | snr1_db, channel, num_pulses, num_subpulses, m, pfa_closed, pfa_oracle, abs_diff, pfa_printed_diagonal, pfa_mc, stderr_pfa |
//! | `fused_sweep` | snr1_db, required, total, pd_fused, pfa_fused, pd_fused_pp_only, pfa_fused_pp_only |
//! | `mc_validate` | snr1_db, channel, num_pulses, num_subpulses, trials, seed, pd_closed, pd_mc, stderr_pd, pd_z, pfa_closed, pfa_mc, stderr_pfa, pfa_z |
//! | `ccrt_check` | check, moduli, cases, passed, failed |
//! | `simulate` | run, seed, detected, velocity_mps, velocity_error_mps, fused_bin, coarse_hz, sign_resolved, pp_peak_to_median, sp_peak_to_median |
//!
//! Reals are written with 17 significant digits; values that do not exist for
//! a row (Monte Carlo disabled, no detection) are written as `NA`.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::ccrt::{self, check_pairwise_coprime, gcd, CongruenceSystem, PrfChannel};
use crate::detection::{
    combine_m_of_l, pd_closed_form, pd_oracle, pd_printed_xi_factored, pfa_closed_form, pfa_oracle,
    pfa_printed_diagonal, ChannelStats, FusionRule, SnrMapping,
};
use crate::error::{Error, Result};
use crate::montecarlo::{binomial_stderr, estimate, McConfig};
use crate::numerics::QuadSpec;
use crate::radar_sim::{self, RadarSetup, TargetTruth};
use crate::SPEED_OF_LIGHT;

/// Closed form and oracle must agree to this absolute tolerance.
pub const ORACLE_TOLERANCE: f64 = 1e-6;
/// Monte Carlo points fail their check beyond this many standard errors.
pub const MC_GATE_SIGMAS: f64 = 4.0;
const MAX_EXHAUSTIVE_THETA: u64 = 50_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    PdSweep,
    PfaSweep,
    FusedSweep,
    McValidate,
    CcrtCheck,
    Simulate,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::PdSweep => "pd_sweep",
            Mode::PfaSweep => "pfa_sweep",
            Mode::FusedSweep => "fused_sweep",
            Mode::McValidate => "mc_validate",
            Mode::CcrtCheck => "ccrt_check",
            Mode::Simulate => "simulate",
        }
    }
}

/// Inclusive SNR range in dB.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SnrRange {
    pub start: f64,
    pub stop: f64,
    pub step: f64,
}

impl SnrRange {
    pub fn single(db: f64) -> Self {
        Self {
            start: db,
            stop: db,
            step: 1.0,
        }
    }

    pub fn values(&self) -> Vec<f64> {
        if !(self.step > 0.0) || self.stop < self.start {
            return Vec::new();
        }
        let n = ((self.stop - self.start) / self.step + 1e-9).floor() as usize + 1;
        (0..n).map(|i| self.start + i as f64 * self.step).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StatsChannel {
    pub num_pulses: usize,
    pub num_subpulses: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub snr_db: SnrRange,
    pub lambda1: f64,
    pub lambda2: f64,
    pub channels: Vec<StatsChannel>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct McSection {
    /// Adds Monte Carlo columns to the PD/PFA sweeps.
    pub enabled: bool,
    pub trials: u64,
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CcrtSection {
    pub random_systems: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationSection {
    pub target: TargetTruth,
    /// Per-pulse SNR after range compression, `A²·L/σ²`.
    pub compressed_snr_db: f64,
    pub runs: u64,
    pub export_dir: Option<PathBuf>,
}

impl SimulationSection {
    /// Noise standard deviation giving the configured compressed SNR.
    pub fn noise_sigma(&self, pulse_samples: usize) -> f64 {
        let energy = self.target.amplitude.powi(2) * pulse_samples as f64;
        (energy / 10f64.powf(self.compressed_snr_db / 10.0)).sqrt()
    }
}

/// A fully resolved experiment.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentConfig {
    pub mode: Mode,
    pub grid: GridConfig,
    pub snr_mapping: SnrMapping,
    pub fusion: FusionRule,
    pub mc: McSection,
    pub quad: QuadSpec,
    pub ccrt: CcrtSection,
    pub radar: RadarSetup,
    pub simulation: SimulationSection,
    /// Enables coincidence unfolding for channels without a shared bin spacing.
    pub tolerance_bins: Option<usize>,
    pub output_path: PathBuf,
}

/// Radar section as written in a file: sample rate and wavelength may be
/// omitted, and PRFs may be given through a common bin spacing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RadarInput {
    pub carrier_hz: f64,
    pub pulse_width_s: f64,
    pub bandwidth_hz: f64,
    #[serde(default)]
    pub sample_rate_hz: Option<f64>,
    #[serde(default)]
    pub wavelength_m: Option<f64>,
    #[serde(default)]
    pub receive_window_s: Option<f64>,
    #[serde(default)]
    pub bin_spacing_hz: Option<f64>,
    pub channels: Vec<RadarChannelInput>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RadarChannelInput {
    #[serde(default)]
    pub prf_hz: Option<f64>,
    pub num_pulses: usize,
    pub num_subpulses: usize,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    mode: Option<Mode>,
    grid: Option<RawGrid>,
    snr_mapping: Option<SnrMapping>,
    fusion: Option<RawFusion>,
    mc: Option<RawMc>,
    quad: Option<QuadSpec>,
    ccrt: Option<RawCcrt>,
    radar: Option<RadarInput>,
    simulation: Option<RawSimulation>,
    tolerance_bins: Option<usize>,
    output_path: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawGrid {
    snr_db: Option<RawSnr>,
    lambda1: Option<f64>,
    lambda2: Option<f64>,
    channels: Option<Vec<StatsChannel>>,
}

#[derive(Debug, Clone, Copy, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSnr {
    start: Option<f64>,
    stop: Option<f64>,
    step: Option<f64>,
}

#[derive(Debug, Clone, Copy, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawCcrt {
    random_systems: Option<usize>,
    seed: Option<u64>,
}

#[derive(Debug, Clone, Copy, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawFusion {
    required: Option<usize>,
    total: Option<usize>,
}

#[derive(Debug, Clone, Copy, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawTarget {
    range_m: Option<f64>,
    velocity_mps: Option<f64>,
    amplitude: Option<f64>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawMc {
    enabled: Option<bool>,
    trials: Option<u64>,
    seed: Option<u64>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSimulation {
    target: Option<RawTarget>,
    compressed_snr_db: Option<f64>,
    runs: Option<u64>,
    export_dir: Option<PathBuf>,
}

const SWEEP_PULSES: [usize; 4] = [7, 11, 13, 17];
const CCRT_PULSES: [usize; 4] = [11, 13, 17, 19];

fn channels_of(pulses: &[usize], n: usize) -> Vec<StatsChannel> {
    pulses
        .iter()
        .map(|&m| StatsChannel {
            num_pulses: m,
            num_subpulses: n,
        })
        .collect()
}

/// The published radar: 6 GHz carrier, 25 µs LFM pulse of 2 MHz, channels of
/// 11, 13, 17 and 19 pulses with 8 subpulses on a shared 100 Hz bin spacing,
/// and a 150 µs receive window.
pub fn default_radar_input() -> RadarInput {
    RadarInput {
        carrier_hz: 6e9,
        pulse_width_s: 25e-6,
        bandwidth_hz: 2e6,
        sample_rate_hz: None,
        wavelength_m: None,
        receive_window_s: Some(150e-6),
        bin_spacing_hz: Some(100.0),
        channels: CCRT_PULSES
            .iter()
            .map(|&m| RadarChannelInput {
                prf_hz: None,
                num_pulses: m,
                num_subpulses: 8,
            })
            .collect(),
    }
}

impl RadarInput {
    pub fn resolve(&self) -> Result<RadarSetup> {
        let channels = self
            .channels
            .iter()
            .enumerate()
            .map(|(i, c)| {
                let prf = match (c.prf_hz, self.bin_spacing_hz) {
                    (Some(p), _) => p,
                    (None, Some(d)) => d * c.num_pulses as f64,
                    (None, None) => {
                        return Err(Error::validation(
                            format!("radar.channels[{i}].prf_hz"),
                            "missing, and no radar.bin_spacing_hz to derive it from",
                        ))
                    }
                };
                PrfChannel::new(prf, c.num_pulses, c.num_subpulses)
                    .map_err(|e| Error::validation(format!("radar.channels[{i}]"), e.to_string()))
            })
            .collect::<Result<Vec<_>>>()?;
        let setup = RadarSetup {
            carrier_hz: self.carrier_hz,
            wavelength_m: self.wavelength_m.unwrap_or(SPEED_OF_LIGHT / self.carrier_hz),
            pulse_width_s: self.pulse_width_s,
            bandwidth_hz: self.bandwidth_hz,
            sample_rate_hz: self.sample_rate_hz.unwrap_or(4.0 * self.bandwidth_hz),
            channels,
            receive_window_s: self.receive_window_s,
        };
        setup.validate().map_err(prefix_field("radar"))?;
        Ok(setup)
    }
}

fn prefix_field(prefix: &'static str) -> impl Fn(Error) -> Error {
    move |e| match e {
        Error::Validation { field, message } => Error::Validation {
            field: format!("{prefix}.{field}"),
            message,
        },
        other => other,
    }
}

impl ExperimentConfig {
    /// Published parameters for `mode`: λ₁ = 0.5, λ₂ = 0.99, N = 8; pulse
    /// counts {7, 11, 13, 17} for the PD/PFA sweeps and {11, 13, 17, 19} for
    /// the CCRT modes; 10⁶ Monte Carlo trials.
    pub fn defaults(mode: Mode) -> Self {
        Self::resolve(RawConfig {
            mode: Some(mode),
            ..RawConfig::default()
        })
        .expect("built-in defaults are valid")
    }

    fn resolve(raw: RawConfig) -> Result<Self> {
        let mode = raw
            .mode
            .ok_or_else(|| Error::validation("mode", "required"))?;
        let (pulses, snr) = match mode {
            Mode::PdSweep | Mode::McValidate => (&SWEEP_PULSES[..], SnrRange { start: -5.0, stop: 15.0, step: 1.0 }),
            Mode::PfaSweep => (&SWEEP_PULSES[..], SnrRange { start: -5.0, stop: 15.0, step: 1.0 }),
            Mode::FusedSweep => (&CCRT_PULSES[..], SnrRange { start: -5.0, stop: 15.0, step: 1.0 }),
            Mode::CcrtCheck | Mode::Simulate => (&CCRT_PULSES[..], SnrRange::single(10.0)),
        };
        let sim = raw.simulation.unwrap_or_default();
        let g = raw.grid.unwrap_or_default();
        let r = g.snr_db.unwrap_or_default();
        let grid = GridConfig {
            snr_db: SnrRange {
                start: r.start.unwrap_or(snr.start),
                stop: r.stop.unwrap_or(snr.stop),
                step: r.step.unwrap_or(snr.step),
            },
            lambda1: g.lambda1.unwrap_or(0.5),
            lambda2: g.lambda2.unwrap_or(0.99),
            channels: g.channels.unwrap_or_else(|| channels_of(pulses, 8)),
        };
        let fusion = raw.fusion.unwrap_or_default();
        let total = fusion.total.unwrap_or(grid.channels.len());
        let target = sim.target.unwrap_or_default();
        let mc = raw.mc.unwrap_or_default();
        let ccrt = raw.ccrt.unwrap_or_default();
        let radar = raw.radar.unwrap_or_else(default_radar_input).resolve()?;
        let config = Self {
            mode,
            snr_mapping: raw.snr_mapping.unwrap_or_default(),
            fusion: FusionRule {
                required: fusion.required.unwrap_or(total),
                total,
            },
            mc: McSection {
                enabled: mc.enabled.unwrap_or(mode == Mode::McValidate),
                trials: mc.trials.unwrap_or(1_000_000),
                seed: mc.seed,
            },
            quad: raw.quad.unwrap_or_default(),
            ccrt: CcrtSection {
                random_systems: ccrt.random_systems.unwrap_or(1000),
                seed: ccrt.seed.unwrap_or(0),
            },
            simulation: SimulationSection {
                target: TargetTruth {
                    range_m: target.range_m.unwrap_or(10_000.0),
                    velocity_mps: target.velocity_mps.unwrap_or(-900.0),
                    amplitude: target.amplitude.unwrap_or(1.0),
                },
                compressed_snr_db: sim.compressed_snr_db.unwrap_or(20.0),
                runs: sim.runs.unwrap_or(1),
                export_dir: sim.export_dir,
            },
            radar,
            tolerance_bins: raw.tolerance_bins,
            output_path: raw
                .output_path
                .unwrap_or_else(|| PathBuf::from(format!("{}.csv", mode.name()))),
            grid,
        };
        Ok(config)
    }

    /// Checks every cross-field invariant and names the offending field.
    pub fn validate(&self) -> Result<()> {
        let g = &self.grid;
        let r = &g.snr_db;
        if !(r.step > 0.0) || !r.step.is_finite() {
            return Err(Error::validation("grid.snr_db.step", format!("must be positive, got {}", r.step)));
        }
        if !r.start.is_finite() || !r.stop.is_finite() {
            return Err(Error::validation("grid.snr_db", "bounds must be finite"));
        }
        if r.values().is_empty() {
            return Err(Error::validation(
                "grid.snr_db",
                format!("empty grid: start {} exceeds stop {}", r.start, r.stop),
            ));
        }
        for (name, l) in [("grid.lambda1", g.lambda1), ("grid.lambda2", g.lambda2)] {
            if !(l > 0.0 && l < 1.0) {
                return Err(Error::validation(name, format!("must lie in (0, 1), got {l}")));
            }
        }
        if g.channels.is_empty() {
            return Err(Error::validation("grid.channels", "at least one channel required"));
        }
        for (i, c) in g.channels.iter().enumerate() {
            if c.num_pulses == 0 || c.num_subpulses == 0 {
                return Err(Error::validation(
                    format!("grid.channels[{i}]"),
                    "num_pulses and num_subpulses must be at least 1",
                ));
            }
        }
        coprime_or_named("grid.channels", g.channels.iter().map(|c| c.num_pulses as u64))?;
        self.snr_mapping
            .validate()
            .map_err(|e| Error::validation("snr_mapping.noise_power", e.to_string()))?;
        self.quad.validate().map_err(|e| Error::validation("quad", e.to_string()))?;
        if self.fusion.total != g.channels.len() {
            return Err(Error::validation(
                "fusion.total",
                format!("{} does not match the {} grid channels", self.fusion.total, g.channels.len()),
            ));
        }
        self.fusion
            .validate()
            .map_err(|e| Error::validation("fusion.required", e.to_string()))?;
        if self.mc.trials == 0 {
            return Err(Error::validation("mc.trials", "must be at least 1"));
        }
        let needs_seed = matches!(self.mode, Mode::McValidate | Mode::Simulate)
            || (self.mc.enabled && matches!(self.mode, Mode::PdSweep | Mode::PfaSweep));
        if needs_seed && self.mc.seed.is_none() {
            return Err(Error::validation("mc.seed", "required for randomized runs"));
        }
        self.radar.validate().map_err(prefix_field("radar"))?;
        coprime_or_named("radar.channels", self.radar.channels.iter().map(|c| c.num_pulses as u64))?;
        if self.tolerance_bins.is_none() {
            ccrt::common_bin_spacing(&self.radar.channels, 1e-9).map_err(prefix_field("radar"))?;
        }
        let s = &self.simulation;
        if !s.compressed_snr_db.is_finite() {
            return Err(Error::validation("simulation.compressed_snr_db", "must be finite"));
        }
        if s.runs == 0 {
            return Err(Error::validation("simulation.runs", "must be at least 1"));
        }
        if !(s.target.range_m > 0.0) || !s.target.velocity_mps.is_finite() || !(s.target.amplitude >= 0.0) {
            return Err(Error::validation(
                "simulation.target",
                "range must be positive, velocity finite, amplitude non-negative",
            ));
        }
        if self.output_path.as_os_str().is_empty() {
            return Err(Error::validation("output_path", "must not be empty"));
        }
        Ok(())
    }

    pub fn manifest_path(&self) -> PathBuf {
        self.output_path.with_extension("json")
    }
}

fn coprime_or_named(field: &str, moduli: impl Iterator<Item = u64>) -> Result<()> {
    let moduli: Vec<u64> = moduli.collect();
    check_pairwise_coprime(&moduli).map_err(|e| match e {
        Error::NotInvertible { a, m, gcd } => Error::validation(
            field,
            format!("pulse counts {a} and {m} are not coprime (common factor {gcd})"),
        ),
        other => other,
    })
}

/// Maps a JSON error to a position-reporting parse error.
fn parse_error(e: serde_json::Error) -> Error {
    Error::Parse {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    }
}

/// Parses and validates a configuration document.
pub fn parse_config(text: &str) -> Result<ExperimentConfig> {
    let raw: RawConfig = serde_json::from_str(text).map_err(parse_error)?;
    let config = ExperimentConfig::resolve(raw)?;
    config.validate()?;
    Ok(config)
}

/// Resolves an optional configuration document with `overrides` merged on
/// top (objects merge key by key, anything else replaces). A `mode` in the
/// document must agree with the one in `overrides`.
pub fn parse_config_with_overrides(text: Option<&str>, overrides: &serde_json::Value) -> Result<ExperimentConfig> {
    let mut base = match text {
        Some(t) => {
            // Positions only exist in the original text, so check it first.
            serde_json::from_str::<RawConfig>(t).map_err(parse_error)?;
            serde_json::from_str::<serde_json::Value>(t).map_err(parse_error)?
        }
        None => json!({}),
    };
    if let (Some(a), Some(b)) = (base.get("mode"), overrides.get("mode")) {
        if a != b {
            return Err(Error::validation(
                "mode",
                format!("configuration is for {a} but {b} was requested"),
            ));
        }
    }
    merge(&mut base, overrides);
    let raw: RawConfig = serde_json::from_value(base).map_err(|e| Error::validation("overrides", e.to_string()))?;
    let config = ExperimentConfig::resolve(raw)?;
    config.validate()?;
    Ok(config)
}

fn merge(base: &mut serde_json::Value, patch: &serde_json::Value) {
    match (base, patch) {
        (serde_json::Value::Object(b), serde_json::Value::Object(p)) => {
            for (k, v) in p {
                merge(b.entry(k.clone()).or_insert(serde_json::Value::Null), v);
            }
        }
        (b, p) => *b = p.clone(),
    }
}

pub fn load_config(path: &Path) -> Result<ExperimentConfig> {
    let text = fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    parse_config(&text)
}

/// One CSV value.
#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    Int(i64),
    Real(f64),
    Bool(bool),
    Text(String),
    Na,
}

impl Cell {
    fn real(v: Option<f64>) -> Cell {
        match v {
            Some(x) if x.is_finite() => Cell::Real(x),
            _ => Cell::Na,
        }
    }

    fn render(&self, out: &mut String) {
        match self {
            Cell::Int(v) => write!(out, "{v}"),
            Cell::Real(v) if v.is_finite() => write!(out, "{v:.16e}"),
            Cell::Real(_) | Cell::Na => write!(out, "NA"),
            Cell::Bool(b) => write!(out, "{b}"),
            Cell::Text(s) => write!(out, "{s}"),
        }
        .expect("writing to a String cannot fail");
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub columns: Vec<&'static str>,
    pub rows: Vec<Vec<Cell>>,
}

impl Table {
    pub fn to_csv(&self) -> String {
        let mut out = self.columns.join(",");
        out.push('\n');
        for row in &self.rows {
            for (i, c) in row.iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                c.render(&mut out);
            }
            out.push('\n');
        }
        out
    }
}

/// Outcome of one internal cross-check.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    fn new(name: &str, passed: bool, detail: String) -> Self {
        Self {
            name: name.into(),
            passed,
            detail,
        }
    }
}

/// Everything a mode produces.
#[derive(Debug, Clone)]
pub struct ModeResult {
    pub table: Table,
    pub checks: Vec<Check>,
    pub details: serde_json::Value,
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub csv_path: PathBuf,
    pub manifest_path: PathBuf,
    pub result: ModeResult,
    pub passed: bool,
}

/// Seed for grid point `index`, so points draw unrelated streams.
pub fn point_seed(seed: u64, index: usize) -> u64 {
    seed.wrapping_add((index as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

struct Point {
    snr_db: f64,
    channel: usize,
    spec: StatsChannel,
}

fn grid_points(config: &ExperimentConfig) -> Vec<Point> {
    config
        .grid
        .snr_db
        .values()
        .into_iter()
        .flat_map(|snr_db| {
            config
                .grid
                .channels
                .iter()
                .enumerate()
                .map(move |(channel, &spec)| Point { snr_db, channel, spec })
        })
        .collect()
}

fn stats_at(config: &ExperimentConfig, snr_db: f64, spec: StatsChannel) -> Result<ChannelStats> {
    ChannelStats::from_snr_with(
        config.snr_mapping,
        snr_db,
        config.grid.lambda1,
        config.grid.lambda2,
        spec.num_pulses,
        spec.num_subpulses,
    )
}

/// Standard error of a Monte Carlo fraction under the model probability,
/// floored at one trial's worth so degenerate probabilities stay comparable.
fn model_stderr(p: f64, trials: u64) -> f64 {
    binomial_stderr(p, trials).max(1.0 / trials as f64)
}

#[derive(Clone, Copy)]
enum Quantity {
    Pd,
    Pfa,
}

fn sweep(config: &ExperimentConfig, q: Quantity) -> Result<ModeResult> {
    let points = grid_points(config);
    let rows = points
        .par_iter()
        .enumerate()
        .map(|(i, p)| {
            let s = stats_at(config, p.snr_db, p.spec)?;
            let (closed, oracle, printed) = match q {
                Quantity::Pd => (pd_closed_form(&s)?, pd_oracle(&s, &config.quad)?, pd_printed_xi_factored(&s).ok()),
                Quantity::Pfa => (pfa_closed_form(&s)?, pfa_oracle(&s, &config.quad)?, pfa_printed_diagonal(&s).ok()),
            };
            let mc = match (config.mc.enabled, config.mc.seed) {
                (true, Some(seed)) => {
                    let est = estimate(&McConfig {
                        trials: config.mc.trials,
                        seed: point_seed(seed, i),
                        stats: s,
                    })?;
                    Some(match q {
                        Quantity::Pd => (est.pd_hat, est.stderr_pd),
                        Quantity::Pfa => (est.pfa_hat, est.stderr_pfa),
                    })
                }
                _ => None,
            };
            Ok((p.snr_db, p.channel, p.spec, s.m(), closed, oracle, printed, mc))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut max_diff: f64 = 0.0;
    let mut worst_z: f64 = 0.0;
    let mut table_rows = Vec::with_capacity(rows.len());
    for &(snr, ch, spec, m, closed, oracle, printed, mc) in &rows {
        let diff = (closed - oracle).abs();
        max_diff = max_diff.max(diff);
        if let Some((hat, _)) = mc {
            worst_z = worst_z.max((hat - closed).abs() / model_stderr(closed, config.mc.trials));
        }
        table_rows.push(vec![
            Cell::Real(snr),
            Cell::Int(ch as i64),
            Cell::Int(spec.num_pulses as i64),
            Cell::Int(spec.num_subpulses as i64),
            Cell::Real(m),
            Cell::Real(closed),
            Cell::Real(oracle),
            Cell::Real(diff),
            Cell::real(printed),
            Cell::real(mc.map(|v| v.0)),
            Cell::real(mc.map(|v| v.1)),
        ]);
    }
    let columns = match q {
        Quantity::Pd => vec![
            "snr1_db", "channel", "num_pulses", "num_subpulses", "m", "pd_closed", "pd_oracle", "abs_diff",
            "pd_printed_xi_factored", "pd_mc", "stderr_pd",
        ],
        Quantity::Pfa => vec![
            "snr1_db", "channel", "num_pulses", "num_subpulses", "m", "pfa_closed", "pfa_oracle", "abs_diff",
            "pfa_printed_diagonal", "pfa_mc", "stderr_pfa",
        ],
    };
    let mut checks = vec![Check::new(
        "oracle_agreement",
        max_diff <= ORACLE_TOLERANCE,
        format!("max |closed - oracle| = {max_diff:.3e} (tolerance {ORACLE_TOLERANCE:e})"),
    )];
    if config.mc.enabled {
        checks.push(Check::new(
            "monte_carlo_agreement",
            worst_z <= MC_GATE_SIGMAS,
            format!("largest deviation {worst_z:.2} standard errors (gate {MC_GATE_SIGMAS})"),
        ));
    }
    Ok(ModeResult {
        table: Table {
            columns,
            rows: table_rows,
        },
        checks,
        details: serde_json::Value::Null,
    })
}

fn fused_sweep(config: &ExperimentConfig) -> Result<ModeResult> {
    let snrs = config.grid.snr_db.values();
    let rows = snrs
        .par_iter()
        .map(|&snr| {
            let mut pd = Vec::new();
            let mut pfa = Vec::new();
            let mut pd_pp = Vec::new();
            let mut pfa_pp = Vec::new();
            let mut diff: f64 = 0.0;
            for &spec in &config.grid.channels {
                let s = stats_at(config, snr, spec)?;
                let (a, b) = (pd_closed_form(&s)?, pfa_closed_form(&s)?);
                diff = diff
                    .max((a - pd_oracle(&s, &config.quad)?).abs())
                    .max((b - pfa_oracle(&s, &config.quad)?).abs());
                pd.push(a);
                pfa.push(b);
                let pp = stats_at(
                    config,
                    snr,
                    StatsChannel {
                        num_subpulses: 1,
                        ..spec
                    },
                )?;
                pd_pp.push(pd_closed_form(&pp)?);
                pfa_pp.push(pfa_closed_form(&pp)?);
            }
            let rule = config.fusion;
            Ok((
                snr,
                [
                    combine_m_of_l(&pd, rule)?,
                    combine_m_of_l(&pfa, rule)?,
                    combine_m_of_l(&pd_pp, rule)?,
                    combine_m_of_l(&pfa_pp, rule)?,
                ],
                diff,
            ))
        })
        .collect::<Result<Vec<_>>>()?;
    let max_diff = rows.iter().map(|r| r.2).fold(0.0, f64::max);
    let table_rows = rows
        .iter()
        .map(|(snr, v, _)| {
            let mut row = vec![
                Cell::Real(*snr),
                Cell::Int(config.fusion.required as i64),
                Cell::Int(config.fusion.total as i64),
            ];
            row.extend(v.iter().map(|&x| Cell::Real(x)));
            row
        })
        .collect();
    Ok(ModeResult {
        table: Table {
            columns: vec![
                "snr1_db",
                "required",
                "total",
                "pd_fused",
                "pfa_fused",
                "pd_fused_pp_only",
                "pfa_fused_pp_only",
            ],
            rows: table_rows,
        },
        checks: vec![Check::new(
            "oracle_agreement",
            max_diff <= ORACLE_TOLERANCE,
            format!("max per-channel |closed - oracle| = {max_diff:.3e}"),
        )],
        details: serde_json::Value::Null,
    })
}

fn mc_validate(config: &ExperimentConfig) -> Result<ModeResult> {
    let seed = config
        .mc
        .seed
        .ok_or_else(|| Error::validation("mc.seed", "required for randomized runs"))?;
    let trials = config.mc.trials;
    let points = grid_points(config);
    let rows = points
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let s = stats_at(config, p.snr_db, p.spec)?;
            let pd = pd_closed_form(&s)?;
            let pfa = pfa_closed_form(&s)?;
            let est = estimate(&McConfig {
                trials,
                seed: point_seed(seed, i),
                stats: s,
            })?;
            Ok((p, pd, pfa, est))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut worst: f64 = 0.0;
    let mut within3 = 0usize;
    let mut table_rows = Vec::new();
    for (p, pd, pfa, est) in &rows {
        let pd_z = (est.pd_hat - pd).abs() / model_stderr(*pd, trials);
        let pfa_z = (est.pfa_hat - pfa).abs() / model_stderr(*pfa, trials);
        worst = worst.max(pd_z).max(pfa_z);
        within3 += usize::from(pd_z <= 3.0) + usize::from(pfa_z <= 3.0);
        table_rows.push(vec![
            Cell::Real(p.snr_db),
            Cell::Int(p.channel as i64),
            Cell::Int(p.spec.num_pulses as i64),
            Cell::Int(p.spec.num_subpulses as i64),
            Cell::Int(trials as i64),
            Cell::Text(est.seed.to_string()),
            Cell::Real(*pd),
            Cell::Real(est.pd_hat),
            Cell::Real(est.stderr_pd),
            Cell::Real(pd_z),
            Cell::Real(*pfa),
            Cell::Real(est.pfa_hat),
            Cell::Real(est.stderr_pfa),
            Cell::Real(pfa_z),
        ]);
    }
    let total = 2 * rows.len();
    Ok(ModeResult {
        table: Table {
            columns: vec![
                "snr1_db",
                "channel",
                "num_pulses",
                "num_subpulses",
                "trials",
                "seed",
                "pd_closed",
                "pd_mc",
                "stderr_pd",
                "pd_z",
                "pfa_closed",
                "pfa_mc",
                "stderr_pfa",
                "pfa_z",
            ],
            rows: table_rows,
        },
        checks: vec![Check::new(
            "monte_carlo_agreement",
            worst <= MC_GATE_SIGMAS,
            format!(
                "{within3}/{total} estimates within 3 standard errors; largest deviation {worst:.2} (gate {MC_GATE_SIGMAS})"
            ),
        )],
        details: serde_json::Value::Null,
    })
}

/// Result of the exhaustive round trip over `[0, Θ)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct RoundTrip {
    pub cases: u64,
    pub passed: u64,
}

/// Folds every bin of `[0, Θ)` onto `moduli` and solves it back.
pub fn exhaustive_round_trip(moduli: &[u64]) -> Result<RoundTrip> {
    check_pairwise_coprime(moduli)?;
    let theta: u64 = moduli.iter().product();
    if theta > MAX_EXHAUSTIVE_THETA {
        return Err(Error::invalid(format!(
            "Θ = {theta} is too large for exhaustive enumeration (limit {MAX_EXHAUSTIVE_THETA})"
        )));
    }
    let passed = (0..theta)
        .into_par_iter()
        .map(|b| {
            let residues = moduli.iter().map(|m| b % m).collect();
            let sys = CongruenceSystem::new(moduli.to_vec(), residues).expect("residues below moduli");
            u64::from(ccrt::ccrt_solve(&sys).ok() == Some(b))
        })
        .sum();
    Ok(RoundTrip { cases: theta, passed })
}

/// Random coprime systems with 2 to 5 moduli no larger than 50, each checked
/// against a brute-force search.
pub fn random_systems_check(count: usize, seed: u64) -> Result<RoundTrip> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut passed = 0;
    for _ in 0..count {
        let k = rng.random_range(2..=5);
        let mut moduli: Vec<u64> = Vec::with_capacity(k);
        while moduli.len() < k {
            let m = rng.random_range(2..=50u64);
            if moduli.iter().all(|&x| gcd(x, m) == 1) {
                moduli.push(m);
            }
        }
        let residues: Vec<u64> = moduli.iter().map(|&m| rng.random_range(0..m)).collect();
        let theta: u64 = moduli.iter().product();
        let brute = (0..theta).find(|b| moduli.iter().zip(&residues).all(|(m, r)| b % m == *r));
        let sys = CongruenceSystem::new(moduli, residues)?;
        if brute == Some(ccrt::ccrt_solve(&sys)?) {
            passed += 1;
        }
    }
    Ok(RoundTrip {
        cases: count as u64,
        passed,
    })
}

fn ccrt_check(config: &ExperimentConfig) -> Result<ModeResult> {
    let moduli: Vec<u64> = config.grid.channels.iter().map(|c| c.num_pulses as u64).collect();
    let text = moduli.iter().map(u64::to_string).collect::<Vec<_>>().join(";");
    let exhaustive = exhaustive_round_trip(&moduli)?;
    let random = random_systems_check(config.ccrt.random_systems, config.ccrt.seed)?;
    let row = |name: &str, moduli: &str, r: RoundTrip| {
        vec![
            Cell::Text(name.into()),
            Cell::Text(moduli.into()),
            Cell::Int(r.cases as i64),
            Cell::Int(r.passed as i64),
            Cell::Int((r.cases - r.passed) as i64),
        ]
    };
    Ok(ModeResult {
        table: Table {
            columns: vec!["check", "moduli", "cases", "passed", "failed"],
            rows: vec![
                row("exhaustive_round_trip", &text, exhaustive),
                row("random_systems", "random", random),
            ],
        },
        checks: vec![
            Check::new(
                "exhaustive_round_trip",
                exhaustive.passed == exhaustive.cases,
                format!("{}/{} bins", exhaustive.passed, exhaustive.cases),
            ),
            Check::new(
                "random_systems",
                random.passed == random.cases,
                format!("{}/{} systems", random.passed, random.cases),
            ),
        ],
        details: serde_json::Value::Null,
    })
}

fn simulate(config: &ExperimentConfig) -> Result<ModeResult> {
    let seed = config
        .mc
        .seed
        .ok_or_else(|| Error::validation("mc.seed", "required for randomized runs"))?;
    let setup = &config.radar;
    let sim = &config.simulation;
    let sigma = sim.noise_sigma(setup.pulse_samples());
    let quantum = match config.tolerance_bins {
        None => setup.fine_velocity_quantum()?,
        Some(_) => {
            let d = setup
                .channels
                .iter()
                .map(PrfChannel::bin_spacing)
                .fold(f64::INFINITY, f64::min);
            setup.wavelength_m * d / 2.0
        }
    };
    let mut rows = Vec::new();
    let mut reports = Vec::new();
    let mut recovered = 0u64;
    for run in 0..sim.runs {
        let run_seed = seed.wrapping_add(run);
        let out = radar_sim::simulate_with(setup, &sim.target, run_seed, sigma, config.tolerance_bins)?;
        if run == 0 {
            if let Some(dir) = &sim.export_dir {
                for (i, (cube, map)) in out.cubes.iter().zip(&out.maps).enumerate() {
                    radar_sim::export_channel(dir, i, cube, map)?;
                }
            }
        }
        let mean = |f: &dyn Fn(&radar_sim::DopplerMap) -> f64| out.maps.iter().map(f).sum::<f64>() / out.maps.len() as f64;
        let pp_ratio = mean(&|m| m.pp_peak().2);
        let sp_ratio = mean(&|m| m.sp_peak().2);
        let mut row = vec![Cell::Int(run as i64), Cell::Text(run_seed.to_string())];
        match &out.report {
            Ok(r) => {
                let err = r.velocity_mps - sim.target.velocity_mps;
                if err.abs() <= quantum {
                    recovered += 1;
                }
                row.extend([
                    Cell::Bool(true),
                    Cell::Real(r.velocity_mps),
                    Cell::Real(err),
                    Cell::Int(r.fused.bin as i64),
                    Cell::Real(r.fused.coarse_hz),
                    Cell::Bool(r.fused.sign_resolved),
                ]);
                reports.push(json!({ "run": run, "report": r }));
            }
            Err(e) => {
                row.extend([Cell::Bool(false), Cell::Na, Cell::Na, Cell::Na, Cell::Na, Cell::Na]);
                reports.push(json!({ "run": run, "error": e.to_string() }));
            }
        }
        row.extend([Cell::Real(pp_ratio), Cell::Real(sp_ratio)]);
        rows.push(row);
    }
    let fraction = recovered as f64 / sim.runs as f64;
    Ok(ModeResult {
        table: Table {
            columns: vec![
                "run",
                "seed",
                "detected",
                "velocity_mps",
                "velocity_error_mps",
                "fused_bin",
                "coarse_hz",
                "sign_resolved",
                "pp_peak_to_median",
                "sp_peak_to_median",
            ],
            rows,
        },
        checks: vec![Check::new(
            "velocity_recovery",
            fraction >= 0.9,
            format!("{recovered}/{} runs within {quantum} m/s of the true velocity", sim.runs),
        )],
        details: json!({ "noise_sigma": sigma, "velocity_quantum_mps": quantum, "reports": reports }),
    })
}

/// Computes a mode's table and checks without writing anything.
pub fn execute(config: &ExperimentConfig) -> Result<ModeResult> {
    config.validate()?;
    match config.mode {
        Mode::PdSweep => sweep(config, Quantity::Pd),
        Mode::PfaSweep => sweep(config, Quantity::Pfa),
        Mode::FusedSweep => fused_sweep(config),
        Mode::McValidate => mc_validate(config),
        Mode::CcrtCheck => ccrt_check(config),
        Mode::Simulate => simulate(config),
    }
}

fn error_kind(e: &Error) -> &'static str {
    match e {
        Error::InvalidArgument(_) => "invalid_argument",
        Error::NotInvertible { .. } => "not_invertible",
        Error::OutOfWindow { .. } => "out_of_window",
        Error::WindowExceeded { .. } => "window_exceeded",
        Error::Convergence { .. } => "convergence",
        Error::NumericalDomain(_) => "numerical_domain",
        Error::NoDetection { .. } => "no_detection",
        Error::Validation { .. } => "validation",
        Error::Parse { .. } => "parse",
        Error::Io(_) => "io",
    }
}

fn write_manifest(config: &ExperimentConfig, body: serde_json::Value) -> Result<PathBuf> {
    let path = config.manifest_path();
    let mut manifest = json!({
        "tool": env!("CARGO_PKG_NAME"),
        "version": env!("CARGO_PKG_VERSION"),
        "mode": config.mode.name(),
        "seed": config.mc.seed,
        "config": config,
    });
    if let (Some(m), serde_json::Value::Object(extra)) = (manifest.as_object_mut(), body) {
        m.extend(extra);
    }
    let text = serde_json::to_string_pretty(&manifest).map_err(|e| Error::Io(e.to_string()))?;
    fs::write(&path, text + "\n")?;
    Ok(path)
}

/// Runs the experiment, writing the CSV and its manifest. Module errors are
/// recorded in the manifest before being returned.
pub fn run(config: &ExperimentConfig) -> Result<RunOutcome> {
    if let Some(dir) = config.output_path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    let result = match execute(config) {
        Ok(r) => r,
        Err(e) => {
            write_manifest(
                config,
                json!({
                    "passed": false,
                    "error": { "kind": error_kind(&e), "message": e.to_string() },
                }),
            )?;
            return Err(e);
        }
    };
    fs::write(&config.output_path, result.table.to_csv())?;
    let passed = result.checks.iter().all(|c| c.passed);
    let manifest_path = write_manifest(
        config,
        json!({
            "csv": config.output_path.file_name().map(|f| f.to_string_lossy().into_owned()),
            "columns": result.table.columns,
            "rows": result.table.rows.len(),
            "checks": result.checks,
            "passed": passed,
            "error": null,
            "details": result.details,
        }),
    )?;
    Ok(RunOutcome {
        csv_path: config.output_path.clone(),
        manifest_path,
        result,
        passed,
    })
}
