//! Monte Carlo estimation of PD and PFA by direct simulation of the
//! correlated Rician target pair and its Rayleigh competitors.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::detection::ChannelStats;
use crate::error::{Error, Result};
use crate::numerics::RngStream;

const DEFAULT_TRIALS: u64 = 1_000_000;
const CHUNK: u64 = 4096;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct McConfig {
    pub trials: u64,
    pub seed: u64,
    pub stats: ChannelStats,
}

impl McConfig {
    pub fn new(stats: ChannelStats, seed: u64) -> Self {
        Self {
            trials: DEFAULT_TRIALS,
            seed,
            stats,
        }
    }

    pub fn with_trials(mut self, trials: u64) -> Self {
        self.trials = trials;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.trials == 0 {
            return Err(Error::invalid("at least one trial required"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Detection,
    FalseAlarm,
    Mixed,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McEstimate {
    pub pd_hat: f64,
    pub pfa_hat: f64,
    pub stderr_pd: f64,
    pub stderr_pfa: f64,
    pub detections: u64,
    pub false_alarms: u64,
    pub mixed: u64,
    pub trials: u64,
    pub seed: u64,
}

/// Binomial standard error `√(p(1-p)/n)`.
pub fn binomial_stderr(p: f64, trials: u64) -> f64 {
    (p * (1.0 - p) / trials as f64).sqrt()
}

/// Draws one target pair `(|G₁|, |G₂|)`.
pub fn sample_pair(rng: &mut RngStream, stats: &ChannelStats) -> (f64, f64) {
    let s = std::f64::consts::FRAC_1_SQRT_2;
    let a0 = stats.m_re() + s * rng.standard_normal();
    let b0 = stats.m_im() + s * rng.standard_normal();
    let g = |rng: &mut RngStream, sigma: f64, lambda: f64| {
        let c = (1.0 - lambda * lambda).sqrt();
        let re = sigma * (c * s * rng.standard_normal() + lambda * a0);
        let im = sigma * (c * s * rng.standard_normal() + lambda * b0);
        re.hypot(im)
    };
    let r1 = g(rng, stats.sigma1(), stats.lambda1());
    let r2 = g(rng, stats.sigma2(), stats.lambda2());
    (r1, r2)
}

/// Largest of `count` Rayleigh draws with CDF `1 - exp(-x²/(2σ²))`, or -∞
/// when `count` is zero.
fn max_rayleigh(rng: &mut RngStream, sigma: f64, count: usize) -> f64 {
    (0..count)
        .map(|_| sigma * (-2.0 * (1.0 - rng.uniform()).ln()).sqrt())
        .fold(f64::NEG_INFINITY, f64::max)
}

pub fn run_trial(rng: &mut RngStream, stats: &ChannelStats) -> Outcome {
    let (r1, r2) = sample_pair(rng, stats);
    let x = max_rayleigh(rng, stats.sigma1(), stats.num_pulses() - 1);
    let y = max_rayleigh(rng, stats.sigma2(), stats.num_subpulses() - 1);
    if r1 > x && r2 > y {
        Outcome::Detection
    } else if x > r1 && y > r2 {
        Outcome::FalseAlarm
    } else {
        Outcome::Mixed
    }
}

/// Runs `config.trials` trials, trial `i` on stream `(seed, i)`, so the
/// result does not depend on how trials are scheduled.
pub fn estimate(config: &McConfig) -> Result<McEstimate> {
    config.validate()?;
    let stats = config.stats;
    let chunks = config.trials.div_ceil(CHUNK);
    let counts = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut n = [0u64; 3];
            for i in c * CHUNK..((c + 1) * CHUNK).min(config.trials) {
                let mut rng = RngStream::new(config.seed, i);
                n[run_trial(&mut rng, &stats) as usize] += 1;
            }
            n
        })
        .reduce(|| [0; 3], |a, b| [a[0] + b[0], a[1] + b[1], a[2] + b[2]]);
    let n = config.trials;
    let pd_hat = counts[0] as f64 / n as f64;
    let pfa_hat = counts[1] as f64 / n as f64;
    Ok(McEstimate {
        pd_hat,
        pfa_hat,
        stderr_pd: binomial_stderr(pd_hat, n),
        stderr_pfa: binomial_stderr(pfa_hat, n),
        detections: counts[0],
        false_alarms: counts[1],
        mixed: counts[2],
        trials: n,
        seed: config.seed,
    })
}
