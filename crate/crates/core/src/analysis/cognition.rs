//! Reference cognition metrics and the arousal proxy.
//!
//! Each metric is a squashed band-power ratio, optionally blended with the
//! normalized GSR level. Ratios make every metric invariant to EEG scale.

use crate::model::{Band, BandPowerRecord, CognitionRecord, GsrSample};

const EPS: f64 = 1e-12;

pub const AROUSAL_MIN: f64 = -2.5;
pub const AROUSAL_MAX: f64 = 2.5;

/// Maps `[0, inf)` onto `[0, 1)`.
pub fn squash(x: f64) -> f64 {
    x / (1.0 + x)
}

fn clamp01(x: f64) -> f64 {
    x.clamp(0.0, 1.0)
}

pub fn cognition_metrics(bp: &BandPowerRecord, g: f64) -> CognitionRecord {
    let theta = bp.band(Band::Theta);
    let alpha = bp.band(Band::Alpha);
    let beta_l = bp.band(Band::BetaL);
    let beta_h = bp.band(Band::BetaH);
    let g = clamp01(g);
    CognitionRecord {
        t_ms: bp.t_ms,
        engagement: squash((beta_l + beta_h) / (alpha + theta + EPS)),
        excitement: clamp01(0.5 * squash(beta_h / (alpha + EPS)) + 0.5 * g),
        stress: clamp01(0.5 * squash(beta_h / (alpha + theta + EPS)) + 0.5 * g),
        relaxation: squash(alpha / (beta_l + beta_h + EPS)),
        interest: squash(beta_l / (alpha + EPS)),
        focus: squash(beta_l / (theta + EPS)),
    }
}

/// Mean of excitement and stress, mapped affinely onto [-2.5, 2.5].
pub fn arousal_proxy(c: &CognitionRecord) -> f64 {
    let mean = (c.excitement + c.stress) / 2.0;
    (5.0 * mean - 2.5).clamp(AROUSAL_MIN, AROUSAL_MAX)
}

/// Min-max position of `current` within the trailing history. Constant or
/// empty history maps to 0.5.
pub fn normalize_gsr(history: &[GsrSample], current: f64) -> f64 {
    if history.is_empty() {
        return 0.5;
    }
    let (lo, hi) = history
        .iter()
        .map(|s| s.value)
        .chain(std::iter::once(current))
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
    if hi - lo <= 0.0 || !(hi - lo).is_finite() {
        return 0.5;
    }
    ((current - lo) / (hi - lo)).clamp(0.0, 1.0)
}
