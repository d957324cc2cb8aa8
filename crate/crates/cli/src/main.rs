//! `spccrt`: runs the detection-statistics sweeps, Monte Carlo validation,
//! CCRT round-trip check and waveform simulation from the command line.
//!
//! Every subcommand accepts `--config <file.json>`; flags override the
//! corresponding config fields. Exit status is 0 when all internal checks
//! pass, 1 when a check fails and 2 on any error.

use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use serde_json::{json, Map, Value};
use spccrt_core::experiment::{self, Mode};

#[derive(Parser)]
#[command(name = "spccrt", version, about = "SP-plus-CCRT Doppler unfolding experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Closed-form PD against its quadrature oracle over an SNR grid.
    Pd {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        grid: GridArgs,
        /// Add Monte Carlo columns (needs --seed).
        #[arg(long)]
        mc: bool,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        trials: Option<u64>,
    },
    /// Closed-form PFA against its quadrature oracle over an SNR grid.
    Pfa {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        grid: GridArgs,
        #[arg(long)]
        mc: bool,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        trials: Option<u64>,
    },
    /// M-of-L fused PD and PFA, with the pulse-only baseline.
    Fused {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        grid: GridArgs,
        /// Channels that must detect (defaults to all).
        #[arg(long)]
        required: Option<usize>,
    },
    /// Monte Carlo estimates against the closed forms.
    Mc {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        grid: GridArgs,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        trials: Option<u64>,
    },
    /// Exhaustive fold/unfold round trip plus random coprime systems.
    CcrtCheck {
        #[command(flatten)]
        common: Common,
        /// Moduli, comma separated.
        #[arg(long, value_delimiter = ',')]
        pulses: Option<Vec<usize>>,
        #[arg(long)]
        random_systems: Option<usize>,
        /// Seed for the random systems.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Waveform-level simulation, detection and velocity unfolding.
    Simulate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        runs: Option<u64>,
        /// Per-pulse SNR after range compression.
        #[arg(long, allow_hyphen_values = true)]
        compressed_snr_db: Option<f64>,
        #[arg(long)]
        range_m: Option<f64>,
        #[arg(long, allow_hyphen_values = true)]
        velocity_mps: Option<f64>,
        /// Write the first run's cubes and maps here as float32 grids.
        #[arg(long)]
        export_dir: Option<PathBuf>,
        /// Coincidence unfolding for channels without a common bin spacing.
        #[arg(long)]
        tolerance_bins: Option<usize>,
    },
}

#[derive(Args)]
struct Common {
    /// JSON configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// CSV output path; the manifest goes next to it with a .json extension.
    #[arg(long, short)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct GridArgs {
    /// Single SNR₁ point in dB (sets start and stop).
    #[arg(long, allow_hyphen_values = true, conflicts_with_all = ["snr_start", "snr_stop"])]
    snr: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    snr_start: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    snr_stop: Option<f64>,
    #[arg(long)]
    snr_step: Option<f64>,
    #[arg(long)]
    lambda1: Option<f64>,
    #[arg(long)]
    lambda2: Option<f64>,
    /// Pulses per channel, comma separated.
    #[arg(long, value_delimiter = ',')]
    pulses: Option<Vec<usize>>,
    /// Subpulses per pulse, applied to every channel.
    #[arg(long)]
    subpulses: Option<usize>,
    /// Thermal noise power per pulse in the SNR mapping.
    #[arg(long)]
    noise_power: Option<f64>,
}

/// Builds nested override objects from dotted paths.
#[derive(Default)]
struct Overrides(Map<String, Value>);

impl Overrides {
    fn set(&mut self, path: &str, value: Value) {
        let mut node = &mut self.0;
        let mut parts = path.split('.').peekable();
        while let Some(key) = parts.next() {
            if parts.peek().is_none() {
                node.insert(key.to_owned(), value);
                return;
            }
            node = node
                .entry(key.to_owned())
                .or_insert_with(|| Value::Object(Map::new()))
                .as_object_mut()
                .expect("override paths never collide with leaves");
        }
    }

    fn opt<T: Into<Value>>(&mut self, path: &str, value: Option<T>) {
        if let Some(v) = value {
            self.set(path, v.into());
        }
    }
}

fn channels(pulses: &[usize], subpulses: usize) -> Value {
    pulses
        .iter()
        .map(|&m| json!({ "num_pulses": m, "num_subpulses": subpulses }))
        .collect()
}

impl GridArgs {
    fn apply(&self, o: &mut Overrides) {
        if let Some(snr) = self.snr {
            o.set("grid.snr_db.start", snr.into());
            o.set("grid.snr_db.stop", snr.into());
        }
        o.opt("grid.snr_db.start", self.snr_start);
        o.opt("grid.snr_db.stop", self.snr_stop);
        o.opt("grid.snr_db.step", self.snr_step);
        o.opt("grid.lambda1", self.lambda1);
        o.opt("grid.lambda2", self.lambda2);
        o.opt("snr_mapping.noise_power", self.noise_power);
        if let Some(p) = &self.pulses {
            o.set("grid.channels", channels(p, self.subpulses.unwrap_or(8)));
        }
    }
}

fn build(cli: Cli) -> Result<experiment::ExperimentConfig> {
    let mut o = Overrides::default();
    let (mode, common, grid) = match &cli.command {
        Command::Pd { common, grid, mc, seed, trials } | Command::Pfa { common, grid, mc, seed, trials } => {
            if *mc {
                o.set("mc.enabled", true.into());
            }
            o.opt("mc.seed", *seed);
            o.opt("mc.trials", *trials);
            let mode = if matches!(cli.command, Command::Pd { .. }) {
                Mode::PdSweep
            } else {
                Mode::PfaSweep
            };
            (mode, common, Some(grid))
        }
        Command::Fused { common, grid, required } => {
            o.opt("fusion.required", *required);
            (Mode::FusedSweep, common, Some(grid))
        }
        Command::Mc { common, grid, seed, trials } => {
            o.set("mc.seed", (*seed).into());
            o.opt("mc.trials", *trials);
            (Mode::McValidate, common, Some(grid))
        }
        Command::CcrtCheck { common, pulses, random_systems, seed } => {
            if let Some(p) = pulses {
                o.set("grid.channels", channels(p, 8));
            }
            o.opt("ccrt.random_systems", *random_systems);
            o.opt("ccrt.seed", *seed);
            (Mode::CcrtCheck, common, None)
        }
        Command::Simulate {
            common,
            seed,
            runs,
            compressed_snr_db,
            range_m,
            velocity_mps,
            export_dir,
            tolerance_bins,
        } => {
            o.set("mc.seed", (*seed).into());
            o.opt("simulation.runs", *runs);
            o.opt("simulation.compressed_snr_db", *compressed_snr_db);
            o.opt("simulation.target.range_m", *range_m);
            o.opt("simulation.target.velocity_mps", *velocity_mps);
            o.opt("simulation.export_dir", export_dir.as_ref().map(|p| p.display().to_string()));
            o.opt("tolerance_bins", *tolerance_bins);
            (Mode::Simulate, common, None)
        }
    };
    o.set("mode", serde_json::to_value(mode)?);
    if let Some(g) = grid {
        g.apply(&mut o);
    }
    o.opt("output_path", common.output.as_ref().map(|p| p.display().to_string()));
    let text = match &common.config {
        Some(p) => Some(fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?),
        None => None,
    };
    let mut config = experiment::parse_config_with_overrides(text.as_deref(), &Value::Object(o.0.clone()))?;
    // A subpulse count alone re-uses the resolved pulse counts.
    if let Some(n) = grid.and_then(|g| g.pulses.is_none().then_some(g.subpulses).flatten()) {
        let pulses: Vec<usize> = config.grid.channels.iter().map(|c| c.num_pulses).collect();
        o.set("grid.channels", channels(&pulses, n));
        config = experiment::parse_config_with_overrides(text.as_deref(), &Value::Object(o.0))?;
    }
    Ok(config)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = build(cli).and_then(|config| Ok(experiment::run(&config)?));
    match outcome {
        Ok(out) => {
            for c in &out.result.checks {
                println!("{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
            }
            println!("wrote {} ({} rows)", out.csv_path.display(), out.result.table.rows.len());
            println!("wrote {}", out.manifest_path.display());
            if out.passed {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            }
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
