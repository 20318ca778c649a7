//! EEG band power from a 2 s Hann-windowed periodogram.

use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use crate::model::{Band, BandPowerRecord, BandPowers, EegFrame, BAND_COUNT, EEG_CHANNELS, EEG_RATE_HZ};

use super::AnalysisError;

/// 2 s at 128 Hz.
pub const WINDOW_FRAMES: usize = 256;
/// 50% overlap, one record per second.
pub const HOP_FRAMES: usize = 128;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BandDefinition {
    pub band: Band,
    pub low_hz: f64,
    pub high_hz: f64,
}

pub const BANDS: [BandDefinition; BAND_COUNT] = [
    BandDefinition { band: Band::Theta, low_hz: 4.0, high_hz: 8.0 },
    BandDefinition { band: Band::Alpha, low_hz: 8.0, high_hz: 12.0 },
    BandDefinition { band: Band::BetaL, low_hz: 12.0, high_hz: 16.0 },
    BandDefinition { band: Band::BetaH, low_hz: 16.0, high_hz: 25.0 },
    BandDefinition { band: Band::Gamma, low_hz: 25.0, high_hz: 45.0 },
];

/// Index of the band containing `f_hz`, if any.
pub fn band_of(f_hz: f64) -> Option<usize> {
    BANDS.iter().position(|b| b.low_hz <= f_hz && f_hz < b.high_hz)
}

/// Reusable periodogram state: FFT plan and window coefficients.
pub struct BandPowerEstimator {
    fft: Arc<dyn Fft<f64>>,
    window: Vec<f64>,
    window_power: f64,
}

impl Default for BandPowerEstimator {
    fn default() -> Self {
        Self::new()
    }
}

impl BandPowerEstimator {
    pub fn new() -> Self {
        let n = WINDOW_FRAMES;
        // Periodic Hann.
        let window: Vec<f64> = (0..n)
            .map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / n as f64).cos())
            .collect();
        let window_power = window.iter().map(|w| w * w).sum();
        Self {
            fft: FftPlanner::new().plan_fft_forward(n),
            window,
            window_power,
        }
    }

    /// One-sided power per band for a single channel, in amplitude².
    pub fn channel_powers(&self, samples: &[f64]) -> BandPowers {
        let n = samples.len();
        let fs = f64::from(EEG_RATE_HZ);
        let mut buf: Vec<Complex<f64>> = samples
            .iter()
            .zip(&self.window)
            .map(|(x, w)| Complex::new(x * w, 0.0))
            .collect();
        self.fft.process(&mut buf);
        let df = fs / n as f64;
        let mut out = [0.0; BAND_COUNT];
        for (k, x) in buf.iter().enumerate().take(n / 2 + 1) {
            let Some(b) = band_of(k as f64 * df) else {
                continue;
            };
            let one_sided = if k == 0 || k == n / 2 { 1.0 } else { 2.0 };
            out[b] += one_sided * x.norm_sqr() / (fs * self.window_power) * df;
        }
        out
    }

    pub fn band_power(&self, frames: &[EegFrame]) -> Result<BandPowerRecord, AnalysisError> {
        if frames.len() != WINDOW_FRAMES {
            return Err(AnalysisError::Window {
                expected: WINDOW_FRAMES,
                got: frames.len(),
            });
        }
        if let Some(f) = frames.iter().find(|f| f.channels.len() != EEG_CHANNELS) {
            return Err(AnalysisError::Channels(f.channels.len()));
        }
        let per_channel: Vec<BandPowers> = (0..EEG_CHANNELS)
            .map(|c| {
                let samples: Vec<f64> = frames.iter().map(|f| f64::from(f.channels[c])).collect();
                self.channel_powers(&samples)
            })
            .collect();
        let mut avg = [0.0; BAND_COUNT];
        for p in &per_channel {
            for b in 0..BAND_COUNT {
                avg[b] += p[b];
            }
        }
        for a in &mut avg {
            *a /= EEG_CHANNELS as f64;
        }
        Ok(BandPowerRecord {
            t_ms: frames[0].t_ms,
            per_channel,
            avg,
        })
    }
}

/// Band power for exactly 256 frames; the record is stamped at the window start.
pub fn band_power(frames: &[EegFrame]) -> Result<BandPowerRecord, AnalysisError> {
    BandPowerEstimator::new().band_power(frames)
}
