//! Shared fixtures for the benchmarks.

use spccrt_core::{ChannelStats, PrfChannel, RadarSetup, TargetTruth};

/// The four published PD operating points at SNR₁ = 10 dB.
pub fn operating_points() -> Vec<ChannelStats> {
    [7, 11, 13, 17]
        .into_iter()
        .map(|m| ChannelStats::from_snr(10.0, 0.5, 0.99, m, 8).expect("valid operating point"))
        .collect()
}

/// 6 GHz, 25 µs, 2 MHz radar with channels {11, 13, 17, 19} on a 100 Hz grid.
pub fn radar() -> RadarSetup {
    let channels = [11, 13, 17, 19]
        .into_iter()
        .map(|m| PrfChannel::with_bin_spacing(100.0, m, 8).expect("valid channel"))
        .collect();
    RadarSetup::new(6e9, 25e-6, 2e6, channels)
        .and_then(|s| s.with_receive_window(150e-6))
        .expect("valid radar")
}

pub fn target() -> TargetTruth {
    TargetTruth {
        range_m: 10_000.0,
        velocity_mps: -900.0,
        amplitude: 1.0,
    }
}
