//! Doppler ambiguity resolution for fast targets with subpulse processing (SP)
//! and the classic Chinese remainder theorem (CCRT), together with the
//! detection statistics of the combined scheme.
//!
//! The crate is organized bottom-up:
//!
//! * [`numerics`]: special functions, adaptive quadrature, DFTs, correlation
//!   and reproducible random streams.
//! * [`ccrt`]: Doppler bin folding, the congruence solver and velocity unfolding.
//! * [`detection`]: closed-form and quadrature-oracle PD/PFA under the
//!   correlated bivariate-Rician model, plus M-of-L fusion.
//! * [`montecarlo`]: direct simulation of the statistical model.
//! * [`radar_sim`]: waveform-level simulation of the PP/SP processing chain.
//! * [`experiment`]: JSON configuration, experiment runners and CSV/JSON output.

pub mod ccrt;
pub mod detection;
pub mod error;
pub mod experiment;
pub mod montecarlo;
pub mod numerics;
pub mod radar_sim;

pub use ccrt::{CongruenceSystem, PrfChannel, UnfoldResult};
pub use detection::{ChannelStats, FusionRule, SnrMapping};
pub use error::{Error, Result};
pub use experiment::{load_config, parse_config, parse_config_with_overrides, run, ExperimentConfig, Mode, RunOutcome};
pub use montecarlo::{McConfig, McEstimate, Outcome};
pub use numerics::{ComplexSample, QuadSpec, RngStream};
pub use radar_sim::{Datacube, DetectionReport, DopplerMap, RadarSetup, TargetTruth};

/// Speed of light in vacuum, m/s.
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;
