//! Synthetic stimulus-arousal experiment and corpus-size estimation.

use std::collections::HashSet;

use log::warn;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::analysis::arousal_proxy;
use crate::model::{Record, RecordKind, SessionConfig};
use crate::sim::{
    run_scenario, EegTone, ExpressionEvent, GsrEvent, IngestSink, RunError, Scenario, SinkError,
};

pub const DEFAULT_STIMULUS_MS: u64 = 20_000;

/// GB per 16-hour recording day, fixed so that a 40 GB corpus takes 1.1 days
/// in full mode and 52 days in text mode.
pub const FULL_GB_PER_DAY: f64 = 40.0 / 1.1;
pub const TEXT_GB_PER_DAY: f64 = 40.0 / 52.0;
pub const RECORDING_HOURS_PER_DAY: f64 = 16.0;

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("invalid: {0}")]
    Validation(String),
    #[error("stimulus `{0}` has no cognition records in its window")]
    EmptyWindow(String),
    #[error("need at least 2 stimuli with reference values, got {0}")]
    InsufficientData(usize),
    #[error(transparent)]
    Run(#[from] RunError),
    #[error(transparent)]
    Sink(#[from] SinkError),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

/// Signals driven during one stimulus. Times are relative to its onset;
/// tones without an end run to the end of the stimulus.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Fragment {
    #[serde(default)]
    pub eeg_tones: Vec<FragmentTone>,
    #[serde(default)]
    pub gsr_events: Vec<GsrEvent>,
    #[serde(default)]
    pub expression_events: Vec<ExpressionEvent>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FragmentTone {
    #[serde(default)]
    pub channels: Vec<usize>,
    pub frequency_hz: f64,
    pub amplitude: f64,
    #[serde(default)]
    pub t_start_ms: u64,
    #[serde(default)]
    pub t_end_ms: Option<u64>,
}

fn default_stimulus_ms() -> u64 {
    DEFAULT_STIMULUS_MS
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Stimulus {
    pub stimulus_id: String,
    #[serde(default = "default_stimulus_ms")]
    pub duration_ms: u64,
    #[serde(default)]
    pub fragment: Fragment,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReferenceValue {
    pub stimulus_id: String,
    pub ref_arousal: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StimulusScript {
    pub stimuli: Vec<Stimulus>,
    #[serde(default)]
    pub references: Vec<ReferenceValue>,
    #[serde(default)]
    pub noise_amplitude: f64,
    #[serde(default = "default_baseline")]
    pub gsr_baseline: f64,
}

fn default_baseline() -> f64 {
    2.0
}

impl StimulusScript {
    pub fn validate(&self) -> Result<(), ExperimentError> {
        if self.stimuli.is_empty() {
            return Err(ExperimentError::Validation("script has no stimuli".into()));
        }
        let mut seen = HashSet::new();
        for s in &self.stimuli {
            if s.duration_ms == 0 {
                return Err(ExperimentError::Validation(format!(
                    "stimulus `{}` has zero duration",
                    s.stimulus_id
                )));
            }
            if !seen.insert(s.stimulus_id.as_str()) {
                return Err(ExperimentError::Validation(format!(
                    "duplicate stimulus id `{}`",
                    s.stimulus_id
                )));
            }
        }
        for r in &self.references {
            if !(-2.5..=2.5).contains(&r.ref_arousal) {
                return Err(ExperimentError::Validation(format!(
                    "reference for `{}` outside [-2.5, 2.5]",
                    r.stimulus_id
                )));
            }
        }
        Ok(())
    }

    /// `[onset, onset + duration)` of every stimulus, in script order.
    pub fn windows(&self) -> Vec<(u64, u64)> {
        let mut t = 0;
        self.stimuli
            .iter()
            .map(|s| {
                let w = (t, t + s.duration_ms);
                t += s.duration_ms;
                w
            })
            .collect()
    }

    pub fn duration_ms(&self) -> u64 {
        self.stimuli.iter().map(|s| s.duration_ms).sum()
    }

    /// Concatenates the fragments into one scenario.
    pub fn scenario(&self, config: &SessionConfig, seed: u64) -> Scenario {
        let mut s = Scenario::new(self.duration_ms());
        s.session_id = Some(config.session_id.clone());
        s.rng_seed = seed;
        s.noise_amplitude = self.noise_amplitude;
        s.gsr_baseline = self.gsr_baseline;
        s.image_period_ms = config.image_period_ms;
        s.gsr_period_ms = config.gsr_period_ms;
        s.segment_duration_ms = config.segment_duration_ms;
        s.des_interval_min_s = config.des_interval_min_s;
        s.des_interval_max_s = config.des_interval_max_s;
        for (stim, (onset, end)) in self.stimuli.iter().zip(self.windows()) {
            for tone in &stim.fragment.eeg_tones {
                let t_end = tone.t_end_ms.unwrap_or(stim.duration_ms).min(stim.duration_ms);
                if tone.t_start_ms >= t_end {
                    continue;
                }
                s.eeg_tones.push(EegTone {
                    channels: tone.channels.clone(),
                    frequency_hz: tone.frequency_hz,
                    amplitude: tone.amplitude,
                    t_start_ms: onset + tone.t_start_ms,
                    t_end_ms: (onset + t_end).min(end),
                });
            }
            for e in &stim.fragment.gsr_events {
                s.gsr_events.push(GsrEvent {
                    t_ms: onset + e.t_ms,
                    delta: e.delta,
                });
            }
            for e in &stim.fragment.expression_events {
                s.expression_events.push(ExpressionEvent {
                    t_ms: onset + e.t_ms,
                    ..e.clone()
                });
            }
        }
        s
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StimulusResult {
    pub stimulus_id: String,
    pub mean_arousal: f64,
    pub sample_count: usize,
    pub ref_arousal: Option<f64>,
    pub delta: Option<f64>,
}

/// Mean arousal per stimulus window over the given cognition records.
pub fn aggregate_arousal(
    script: &StimulusScript,
    records: &[Record],
) -> Result<Vec<StimulusResult>, ExperimentError> {
    script.validate()?;
    let mut out = Vec::with_capacity(script.stimuli.len());
    for (stim, (t0, t1)) in script.stimuli.iter().zip(script.windows()) {
        let values: Vec<f64> = records
            .iter()
            .filter_map(|r| match r {
                Record::Cognition(c) if c.t_ms >= t0 && c.t_ms < t1 => Some(arousal_proxy(c)),
                _ => None,
            })
            .collect();
        if values.is_empty() {
            return Err(ExperimentError::EmptyWindow(stim.stimulus_id.clone()));
        }
        let mean = values.iter().sum::<f64>() / values.len() as f64;
        let reference = script
            .references
            .iter()
            .find(|r| r.stimulus_id == stim.stimulus_id)
            .map(|r| r.ref_arousal);
        out.push(StimulusResult {
            stimulus_id: stim.stimulus_id.clone(),
            mean_arousal: mean,
            sample_count: values.len(),
            ref_arousal: reference,
            delta: reference.map(|r| mean - r),
        });
    }
    Ok(out)
}

/// Records a session whose scenario is the concatenated stimulus fragments
/// and reports mean arousal per stimulus.
pub fn run_stimulus_session(
    script: &StimulusScript,
    config: &SessionConfig,
    seed: u64,
    sink: &mut dyn IngestSink,
) -> Result<Vec<StimulusResult>, ExperimentError> {
    script.validate()?;
    let scenario = script.scenario(config, seed);
    let summary = run_scenario(&scenario, sink)?;
    let records = sink.playback(
        &summary.session_id,
        0,
        script.duration_ms(),
        &[RecordKind::Cognition],
    )?;
    aggregate_arousal(script, &records)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub rows: Vec<StimulusResult>,
    /// NaN when either series has zero variance.
    pub pearson_r: f64,
}

pub fn pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len().min(y.len());
    if n < 2 {
        return f64::NAN;
    }
    let mx = x[..n].iter().sum::<f64>() / n as f64;
    let my = y[..n].iter().sum::<f64>() / n as f64;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for i in 0..n {
        let (dx, dy) = (x[i] - mx, y[i] - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return f64::NAN;
    }
    (sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0)
}

/// Attaches references to results and correlates measured with reference
/// arousal. Results without a reference are dropped from the comparison.
pub fn compare_reference(
    results: &[StimulusResult],
    references: &[ReferenceValue],
) -> Result<Comparison, ExperimentError> {
    let rows: Vec<StimulusResult> = results
        .iter()
        .filter_map(|r| {
            let reference = references.iter().find(|x| x.stimulus_id == r.stimulus_id)?;
            Some(StimulusResult {
                ref_arousal: Some(reference.ref_arousal),
                delta: Some(r.mean_arousal - reference.ref_arousal),
                ..r.clone()
            })
        })
        .collect();
    if rows.len() < 2 {
        return Err(ExperimentError::InsufficientData(rows.len()));
    }
    let measured: Vec<f64> = rows.iter().map(|r| r.mean_arousal).collect();
    let reference: Vec<f64> = rows.iter().filter_map(|r| r.ref_arousal).collect();
    let r = pearson(&measured, &reference);
    if r.is_nan() {
        warn!("pearson correlation undefined: zero variance");
    }
    Ok(Comparison { rows, pearson_r: r })
}

/// Reads a `stimulus_id,ref_arousal` table.
pub fn parse_reference_csv(bytes: &[u8]) -> Result<Vec<ReferenceValue>, ExperimentError> {
    let mut rdr = csv::Reader::from_reader(bytes);
    let mut out = Vec::new();
    for row in rdr.deserialize() {
        out.push(row?);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorpusMode {
    Full,
    Text,
}

impl std::str::FromStr for CorpusMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "full" => Ok(CorpusMode::Full),
            "text" => Ok(CorpusMode::Text),
            other => Err(format!("unknown mode `{other}` (expected full or text)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateConstants {
    pub full_gb_per_day: f64,
    pub text_gb_per_day: f64,
}

impl Default for RateConstants {
    fn default() -> Self {
        Self {
            full_gb_per_day: FULL_GB_PER_DAY,
            text_gb_per_day: TEXT_GB_PER_DAY,
        }
    }
}

impl RateConstants {
    pub fn validate(&self) -> Result<(), ExperimentError> {
        if !(self.text_gb_per_day > 0.0 && self.full_gb_per_day > self.text_gb_per_day) {
            return Err(ExperimentError::Validation(
                "rates must satisfy full > text > 0".into(),
            ));
        }
        Ok(())
    }

    pub fn rate(&self, mode: CorpusMode) -> f64 {
        match mode {
            CorpusMode::Full => self.full_gb_per_day,
            CorpusMode::Text => self.text_gb_per_day,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DaysEstimate {
    pub corpus_gb: f64,
    pub mode: CorpusMode,
    /// Unrounded.
    pub days: f64,
    /// `days` at two significant figures.
    pub reported: String,
}

pub fn estimate_recording_days(
    corpus_gb: f64,
    mode: CorpusMode,
    rates: &RateConstants,
) -> Result<DaysEstimate, ExperimentError> {
    if !(corpus_gb.is_finite() && corpus_gb > 0.0) {
        return Err(ExperimentError::Validation("corpus_gb must be positive".into()));
    }
    rates.validate()?;
    let days = corpus_gb / rates.rate(mode);
    Ok(DaysEstimate {
        corpus_gb,
        mode,
        days,
        reported: format_sig(days, 2),
    })
}

/// Decimal rendering of a positive value rounded to `sig` significant
/// figures, without exponent or trailing zeros after the point.
pub fn format_sig(x: f64, sig: u32) -> String {
    if x == 0.0 || !x.is_finite() {
        return format!("{x}");
    }
    let magnitude = x.abs().log10().floor() as i32;
    let decimals = (sig as i32 - 1 - magnitude).max(0) as usize;
    let scale = 10f64.powi(sig as i32 - 1 - magnitude);
    let rounded = (x * scale).round() / scale;
    // Rounding can carry into a new leading digit (9.96 -> 10).
    let s = format!("{rounded:.decimals$}");
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        s
    }
}

pub fn round_sig(x: f64, sig: u32) -> f64 {
    format_sig(x, sig).parse().unwrap_or(x)
}

/// One series point for plotting mean against reference arousal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlotPoint {
    pub stimulus_id: String,
    pub mean_arousal: f64,
    pub ref_arousal: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlotData {
    pub y_min: f64,
    pub y_max: f64,
    pub series: Vec<PlotPoint>,
}

/// CSV with header `stimulus_id,mean_arousal,ref_arousal,delta` plus JSON plot data.
pub fn emit_results(results: &[StimulusResult]) -> Result<(Vec<u8>, Vec<u8>), ExperimentError> {
    if results.is_empty() {
        return Err(ExperimentError::Validation("no results to emit".into()));
    }
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["stimulus_id", "mean_arousal", "ref_arousal", "delta"])?;
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for r in results {
        w.write_record([
            r.stimulus_id.clone(),
            r.mean_arousal.to_string(),
            opt(r.ref_arousal),
            opt(r.delta),
        ])?;
    }
    let csv_bytes = w
        .into_inner()
        .map_err(|e| ExperimentError::Validation(e.to_string()))?;
    let plot = PlotData {
        y_min: -2.5,
        y_max: 2.5,
        series: results
            .iter()
            .map(|r| PlotPoint {
                stimulus_id: r.stimulus_id.clone(),
                mean_arousal: r.mean_arousal,
                ref_arousal: r.ref_arousal,
            })
            .collect(),
    };
    let json = serde_json::to_vec_pretty(&plot).expect("plot data serializes");
    Ok((csv_bytes, json))
}

/// Parses CSV written by [`emit_results`]; `sample_count` is not carried.
pub fn parse_results_csv(bytes: &[u8]) -> Result<Vec<StimulusResult>, ExperimentError> {
    #[derive(Deserialize)]
    struct Row {
        stimulus_id: String,
        mean_arousal: f64,
        ref_arousal: Option<f64>,
        delta: Option<f64>,
    }
    let mut rdr = csv::Reader::from_reader(bytes);
    let mut out = Vec::new();
    for row in rdr.deserialize() {
        let r: Row = row?;
        out.push(StimulusResult {
            stimulus_id: r.stimulus_id,
            mean_arousal: r.mean_arousal,
            sample_count: 0,
            ref_arousal: r.ref_arousal,
            delta: r.delta,
        });
    }
    Ok(out)
}
