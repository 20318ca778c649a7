//! Deterministic multi-rate sensor simulator standing in for the wearable rig.
//!
//! Every generator is a pure function of `(scenario, seed, window)`. EEG
//! noise is drawn from a counter-addressed ChaCha stream, so any window of
//! a session regenerates the same samples no matter how it is sliced.

use std::collections::BTreeMap;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::des::schedule_tones;
use crate::ingest::{Ack, AckStatus, IngestEnvelope, Payload, StreamKind};
use crate::media::{encode_wav, RgbImage};
use crate::model::{
    EegFrame, EyeAction, FaceBox, GsrSample, LowerFace, Record, RecordKind, SessionConfig,
    SessionManifest, Speaker,
    UpperFace, EEG_CHANNELS, EEG_RATE_HZ, IMAGE_HEIGHT, IMAGE_WIDTH,
};

pub const AUDIO_SAMPLE_RATE: u32 = 16_000;
pub const GSR_DECAY_MS: f64 = 10_000.0;
const NYQUIST_HZ: f64 = EEG_RATE_HZ as f64 / 2.0;

#[derive(Debug, Error, PartialEq)]
pub enum SimError {
    #[error("scenario configuration error: {0}")]
    Config(String),
    #[error("window [{t0_ms}, {t1_ms}) is empty or outside the scenario")]
    Window { t0_ms: u64, t1_ms: u64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EegTone {
    /// Channel indices driven by the tone; empty means all 14.
    #[serde(default)]
    pub channels: Vec<usize>,
    pub frequency_hz: f64,
    pub amplitude: f64,
    pub t_start_ms: u64,
    pub t_end_ms: u64,
}

impl EegTone {
    fn drives(&self, channel: usize) -> bool {
        self.channels.is_empty() || self.channels.contains(&channel)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GsrEvent {
    pub t_ms: u64,
    pub delta: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpeechLine {
    pub t_start_ms: u64,
    pub speaker: Speaker,
    pub text: String,
    /// Defaults to 400 ms per word.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub duration_ms: Option<u64>,
}

impl SpeechLine {
    pub fn duration(&self) -> u64 {
        self.duration_ms
            .unwrap_or_else(|| 400 * self.text.split_whitespace().count().max(1) as u64)
    }

    pub fn t_end_ms(&self) -> u64 {
        self.t_start_ms + self.duration()
    }
}

/// Scene in view from `t_ms` until the next entry.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ImageScriptEntry {
    pub t_ms: u64,
    pub scene: String,
    #[serde(default)]
    pub face_boxes: Vec<FaceBox>,
    #[serde(default)]
    pub texts: Vec<String>,
    #[serde(default)]
    pub labels: Vec<String>,
}

/// Scripted facial expression, passed through by the reference provider.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExpressionEvent {
    pub t_ms: u64,
    #[serde(default)]
    pub eye_action: EyeAction,
    #[serde(default)]
    pub upper_face: UpperFace,
    #[serde(default)]
    pub lower_face: LowerFace,
    #[serde(default)]
    pub power: f64,
}

fn d_period() -> u64 {
    1000
}
fn d_chunk() -> u64 {
    5000
}
fn d_baseline() -> f64 {
    2.0
}
fn d_segment() -> u64 {
    60_000
}
fn d_des_min() -> u64 {
    900
}
fn d_des_max() -> u64 {
    3600
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub duration_ms: u64,
    #[serde(default)]
    pub session_id: Option<String>,
    #[serde(default)]
    pub eeg_tones: Vec<EegTone>,
    #[serde(default)]
    pub noise_amplitude: f64,
    #[serde(default = "d_baseline")]
    pub gsr_baseline: f64,
    #[serde(default)]
    pub gsr_events: Vec<GsrEvent>,
    #[serde(default)]
    pub speech_script: Vec<SpeechLine>,
    #[serde(default)]
    pub image_script: Vec<ImageScriptEntry>,
    #[serde(default)]
    pub expression_events: Vec<ExpressionEvent>,
    #[serde(default)]
    pub rng_seed: u64,
    #[serde(default = "d_period")]
    pub image_period_ms: u64,
    #[serde(default = "d_period")]
    pub gsr_period_ms: u64,
    #[serde(default = "d_chunk")]
    pub audio_chunk_ms: u64,
    #[serde(default = "d_segment")]
    pub segment_duration_ms: u64,
    #[serde(default = "d_des_min")]
    pub des_interval_min_s: u64,
    #[serde(default = "d_des_max")]
    pub des_interval_max_s: u64,
}

impl Scenario {
    /// Empty scenario at default rates.
    pub fn new(duration_ms: u64) -> Self {
        serde_json::from_value(serde_json::json!({ "duration_ms": duration_ms }))
            .expect("defaults deserialize")
    }

    /// A busy scenario exercising every stream: EEG tones over noise, GSR
    /// bumps, a faced scene, speech with DES phrases and scripted expressions.
    /// Every 30 s block repeats the same script.
    pub fn demo(duration_ms: u64, seed: u64) -> Self {
        let mut s = Self::new(duration_ms);
        s.rng_seed = seed;
        s.noise_amplitude = 20.0;
        s.eeg_tones.push(EegTone {
            channels: vec![],
            frequency_hz: 10.0,
            amplitude: 200.0,
            t_start_ms: 0,
            t_end_ms: duration_ms.max(1),
        });
        let lines: [(u64, Speaker, &str); 4] = [
            (2_000, Speaker::Wearer, "start ziggy I feel calm and happy end ziggy"),
            (8_000, Speaker::Other, "hello there how are you"),
            (15_000, Speaker::Wearer, "great food but awful service"),
            (22_000, Speaker::Wearer, "start ziggy thinking about lunch end ziggy"),
        ];
        let mut block = 0;
        while block < duration_ms {
            let at = |dt: u64| block + dt;
            if at(10_000) < duration_ms {
                s.eeg_tones.push(EegTone {
                    channels: vec![],
                    frequency_hz: 20.0,
                    amplitude: 150.0,
                    t_start_ms: at(10_000),
                    t_end_ms: at(20_000).min(duration_ms),
                });
            }
            for (dt, delta) in [(5_000, 0.8), (18_000, 1.5)] {
                if at(dt) < duration_ms {
                    s.gsr_events.push(GsrEvent { t_ms: at(dt), delta });
                }
            }
            for (dt, speaker, text) in lines {
                if at(dt) < duration_ms {
                    s.speech_script.push(SpeechLine {
                        t_start_ms: at(dt),
                        speaker,
                        text: text.to_string(),
                        duration_ms: None,
                    });
                }
            }
            s.image_script.push(ImageScriptEntry {
                t_ms: block,
                scene: "desk".into(),
                face_boxes: vec![FaceBox::new(100, 60, 60, 80), FaceBox::new(270, 190, 40, 40)],
                texts: vec!["EXIT".into()],
                labels: vec!["Person".into(), "Laptop".into()],
            });
            if at(15_000) < duration_ms {
                s.image_script.push(ImageScriptEntry {
                    t_ms: at(15_000),
                    scene: "street".into(),
                    face_boxes: vec![],
                    texts: vec![],
                    labels: vec!["Road".into()],
                });
            }
            for (dt, eye, lower) in [
                (5_000, EyeAction::Neutral, LowerFace::Smile),
                (12_000, EyeAction::Blink, LowerFace::Neutral),
            ] {
                if at(dt) < duration_ms {
                    s.expression_events.push(ExpressionEvent {
                        t_ms: at(dt),
                        eye_action: eye,
                        upper_face: UpperFace::Neutral,
                        lower_face: lower,
                        power: 0.8,
                    });
                }
            }
            block += 30_000;
        }
        s
    }

    pub fn session_id(&self) -> String {
        self.session_id
            .clone()
            .unwrap_or_else(|| format!("sim-{}", self.rng_seed))
    }

    pub fn session_config(&self) -> SessionConfig {
        let mut c = SessionConfig::new(self.session_id());
        c.image_period_ms = self.image_period_ms;
        c.gsr_period_ms = self.gsr_period_ms;
        c.segment_duration_ms = self.segment_duration_ms;
        c.des_interval_min_s = self.des_interval_min_s;
        c.des_interval_max_s = self.des_interval_max_s;
        c.rng_seed = self.rng_seed;
        c
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let err = |m: String| Err(SimError::Config(m));
        let in_range = |t: u64| t < self.duration_ms;
        if self.image_period_ms == 0 || self.gsr_period_ms == 0 || self.audio_chunk_ms == 0 {
            return err("stream periods must be positive".into());
        }
        if !(self.noise_amplitude.is_finite() && self.noise_amplitude >= 0.0) {
            return err("noise_amplitude must be non-negative".into());
        }
        if !(self.gsr_baseline.is_finite() && self.gsr_baseline >= 0.0) {
            return err("gsr_baseline must be non-negative".into());
        }
        for (i, tone) in self.eeg_tones.iter().enumerate() {
            if !(tone.frequency_hz > 0.0 && tone.frequency_hz < NYQUIST_HZ) {
                return err(format!(
                    "eeg_tones[{i}]: frequency {} Hz outside (0, {NYQUIST_HZ}) Hz",
                    tone.frequency_hz
                ));
            }
            if !tone.amplitude.is_finite() {
                return err(format!("eeg_tones[{i}]: amplitude must be finite"));
            }
            if !in_range(tone.t_start_ms) || tone.t_end_ms <= tone.t_start_ms {
                return err(format!("eeg_tones[{i}]: bad time span"));
            }
            if tone.channels.iter().any(|&c| c >= EEG_CHANNELS) {
                return err(format!("eeg_tones[{i}]: channel index out of range"));
            }
        }
        for (i, e) in self.gsr_events.iter().enumerate() {
            if !in_range(e.t_ms) || !e.delta.is_finite() {
                return err(format!("gsr_events[{i}]: outside scenario or non-finite"));
            }
        }
        for (i, l) in self.speech_script.iter().enumerate() {
            if !in_range(l.t_start_ms) {
                return err(format!("speech_script[{i}]: starts outside scenario"));
            }
        }
        for speaker in [Speaker::Wearer, Speaker::Other] {
            let mut lines: Vec<_> = self
                .speech_script
                .iter()
                .filter(|l| l.speaker == speaker)
                .collect();
            lines.sort_by_key(|l| l.t_start_ms);
            for w in lines.windows(2) {
                if w[1].t_start_ms < w[0].t_end_ms() {
                    return err(format!(
                        "overlapping {speaker:?} speech lines at {} ms and {} ms",
                        w[0].t_start_ms, w[1].t_start_ms
                    ));
                }
            }
        }
        for (i, entry) in self.image_script.iter().enumerate() {
            if !in_range(entry.t_ms) {
                return err(format!("image_script[{i}]: outside scenario"));
            }
            if let Some(b) = entry
                .face_boxes
                .iter()
                .find(|b| !b.within(IMAGE_WIDTH, IMAGE_HEIGHT))
            {
                return err(format!("image_script[{i}]: face box {b:?} outside 320x240"));
            }
        }
        for (i, e) in self.expression_events.iter().enumerate() {
            if !in_range(e.t_ms) || !(0.0..=1.0).contains(&e.power) {
                return err(format!("expression_events[{i}]: bad time or power"));
            }
        }
        Ok(())
    }
}

/// Ground truth for one generated image.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ImageTruth {
    pub t_ms: u64,
    pub labels: Vec<String>,
    pub texts: Vec<String>,
    pub face_boxes: Vec<FaceBox>,
}

/// Speech inside an audio chunk; times are relative to the chunk start.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TruthLine {
    pub t_start_ms: u64,
    pub t_end_ms: u64,
    pub speaker: Speaker,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AudioTruth {
    pub t_ms: u64,
    pub duration_ms: u64,
    pub lines: Vec<TruthLine>,
}

/// Ground truth for every media file of a run, one entry per file.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SidecarTruth {
    pub images: Vec<ImageTruth>,
    pub audio: Vec<AudioTruth>,
}

impl SidecarTruth {
    pub fn image_at(&self, t_ms: u64) -> Option<&ImageTruth> {
        self.images.iter().find(|i| i.t_ms == t_ms)
    }

    pub fn audio_at(&self, t_ms: u64) -> Option<&AudioTruth> {
        self.audio.iter().find(|a| a.t_ms == t_ms)
    }
}

/// Session-relative timestamp of EEG frame `k`.
pub fn eeg_frame_time(k: u64) -> u64 {
    k * 1000 / u64::from(EEG_RATE_HZ)
}

fn eeg_frame_range(t0_ms: u64, t1_ms: u64) -> std::ops::Range<u64> {
    let rate = u64::from(EEG_RATE_HZ);
    (t0_ms * rate).div_ceil(1000)..(t1_ms * rate).div_ceil(1000)
}

fn check_window(s: &Scenario, t0_ms: u64, t1_ms: u64) -> Result<(), SimError> {
    if t0_ms >= t1_ms || t1_ms > s.duration_ms {
        return Err(SimError::Window { t0_ms, t1_ms });
    }
    Ok(())
}

fn unit_noise(rng: &mut ChaCha8Rng) -> f64 {
    let x = rng.next_u64() >> 11;
    (x as f64) * (1.0 / (1u64 << 53) as f64) * 2.0 - 1.0
}

/// EEG frames at 128 Hz inside `[t0_ms, t1_ms)`.
pub fn gen_eeg(s: &Scenario, t0_ms: u64, t1_ms: u64) -> Result<Vec<EegFrame>, SimError> {
    s.validate()?;
    check_window(s, t0_ms, t1_ms)?;
    let mut rng = ChaCha8Rng::seed_from_u64(s.rng_seed);
    let rate = f64::from(EEG_RATE_HZ);
    let frames = eeg_frame_range(t0_ms, t1_ms)
        .map(|k| {
            let t_ms = eeg_frame_time(k);
            let t = k as f64 / rate;
            let active: Vec<&EegTone> = s
                .eeg_tones
                .iter()
                .filter(|tone| tone.t_start_ms <= t_ms && t_ms < tone.t_end_ms)
                .collect();
            rng.set_word_pos(u128::from(k) * EEG_CHANNELS as u128 * 2);
            let channels = (0..EEG_CHANNELS)
                .map(|c| {
                    let signal: f64 = active
                        .iter()
                        .filter(|tone| tone.drives(c))
                        .map(|tone| {
                            tone.amplitude * (2.0 * std::f64::consts::PI * tone.frequency_hz * t).sin()
                        })
                        .sum();
                    let noise = s.noise_amplitude * unit_noise(&mut rng);
                    (signal + noise)
                        .round()
                        .clamp(f64::from(i16::MIN), f64::from(i16::MAX)) as i16
                })
                .collect();
            EegFrame {
                t_ms,
                seq: k,
                channels,
            }
        })
        .collect();
    Ok(frames)
}

/// GSR value at `t_ms`: baseline plus exponentially decaying step events,
/// clamped at zero.
pub fn gsr_value(s: &Scenario, t_ms: u64) -> f64 {
    let v = s.gsr_baseline
        + s.gsr_events
            .iter()
            .filter(|e| e.t_ms <= t_ms)
            .map(|e| e.delta * (-((t_ms - e.t_ms) as f64) / GSR_DECAY_MS).exp())
            .sum::<f64>();
    v.max(0.0)
}

pub fn gen_gsr(s: &Scenario, t0_ms: u64, t1_ms: u64) -> Result<Vec<GsrSample>, SimError> {
    s.validate()?;
    check_window(s, t0_ms, t1_ms)?;
    let p = s.gsr_period_ms;
    Ok((t0_ms.div_ceil(p)..t1_ms.div_ceil(p))
        .map(|i| {
            let t_ms = i * p;
            GsrSample {
                t_ms,
                seq: i,
                value: gsr_value(s, t_ms),
            }
        })
        .collect())
}

fn scene_rng(seed: u64, scene: &str) -> ChaCha8Rng {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(scene.as_bytes());
    ChaCha8Rng::from_seed(h.finalize().into())
}

fn script_entry(s: &Scenario, t_ms: u64) -> Option<&ImageScriptEntry> {
    s.image_script
        .iter()
        .filter(|e| e.t_ms <= t_ms)
        .max_by_key(|e| e.t_ms)
}

/// Renders a scene: a gentle gradient background, text as bit-pattern bars,
/// and faces as high-variance noise rectangles.
pub fn render_scene(seed: u64, entry: Option<&ImageScriptEntry>) -> RgbImage {
    let scene = entry.map(|e| e.scene.as_str()).unwrap_or("");
    let mut rng = scene_rng(seed, scene);
    let base: [u8; 3] = [
        rng.gen_range(40..=200),
        rng.gen_range(40..=200),
        rng.gen_range(40..=200),
    ];
    let mut img = RgbImage::new(IMAGE_WIDTH, IMAGE_HEIGHT);
    for y in 0..IMAGE_HEIGHT {
        for x in 0..IMAGE_WIDTH {
            let shade = (x / 40 + y / 40) as u8;
            img.put(x, y, base.map(|c| c.saturating_add(shade)));
        }
    }
    let Some(entry) = entry else {
        return img;
    };
    for (row, text) in entry.texts.iter().enumerate() {
        let y0 = 8 + 12 * row as u32;
        for (col, byte) in text.bytes().enumerate() {
            for bit in 0..8u32 {
                let x0 = 8 + col as u32 * 18 + bit * 2;
                let on = (byte >> (7 - bit)) & 1 == 1;
                let rgb = if on { [255; 3] } else { [0; 3] };
                for y in y0..(y0 + 8).min(IMAGE_HEIGHT) {
                    for x in x0..(x0 + 2).min(IMAGE_WIDTH) {
                        img.put(x, y, rgb);
                    }
                }
            }
        }
    }
    for b in &entry.face_boxes {
        for y in b.y..b.y + b.h {
            for x in b.x..b.x + b.w {
                let mut px = [0u8; 3];
                rng.fill_bytes(&mut px);
                img.put(x, y, px);
            }
        }
    }
    img
}

/// PPM bytes plus ground truth for the image taken at `t_ms`.
pub fn gen_image(s: &Scenario, t_ms: u64) -> Result<(Vec<u8>, ImageTruth), SimError> {
    s.validate()?;
    if t_ms % s.image_period_ms != 0 || t_ms >= s.duration_ms {
        return Err(SimError::Config(format!("{t_ms} ms is not on the image grid")));
    }
    let entry = script_entry(s, t_ms);
    let img = render_scene(s.rng_seed, entry);
    let truth = ImageTruth {
        t_ms,
        labels: entry.map(|e| e.labels.clone()).unwrap_or_default(),
        texts: entry.map(|e| e.texts.clone()).unwrap_or_default(),
        face_boxes: entry.map(|e| e.face_boxes.clone()).unwrap_or_default(),
    };
    Ok((img.encode_ppm(), truth))
}

fn speaker_tone_hz(speaker: Speaker) -> f64 {
    match speaker {
        Speaker::Wearer => 440.0,
        Speaker::Other => 660.0,
    }
}

/// Mono 16 kHz PCM chunk covering `[t0_ms, t1_ms)`. Speech is a tone keyed to
/// the speaker; lines starting inside the window go to the sidecar.
pub fn gen_audio(s: &Scenario, t0_ms: u64, t1_ms: u64) -> Result<(Vec<u8>, AudioTruth), SimError> {
    s.validate()?;
    check_window(s, t0_ms, t1_ms)?;
    let per_ms = u64::from(AUDIO_SAMPLE_RATE) / 1000;
    let n = ((t1_ms - t0_ms) * per_ms) as usize;
    let mut samples = vec![0i16; n];
    for line in &s.speech_script {
        let (a, b) = (line.t_start_ms.max(t0_ms), line.t_end_ms().min(t1_ms));
        if a >= b {
            continue;
        }
        let f = speaker_tone_hz(line.speaker);
        for i in ((a - t0_ms) * per_ms) as usize..((b - t0_ms) * per_ms) as usize {
            let t = (t0_ms as f64 / 1000.0) + i as f64 / f64::from(AUDIO_SAMPLE_RATE);
            let v = 6000.0 * (2.0 * std::f64::consts::PI * f * t).sin();
            samples[i] = (f64::from(samples[i]) + v).round().clamp(-32768.0, 32767.0) as i16;
        }
    }
    let mut lines: Vec<TruthLine> = s
        .speech_script
        .iter()
        .filter(|l| (t0_ms..t1_ms).contains(&l.t_start_ms))
        .map(|l| TruthLine {
            t_start_ms: l.t_start_ms - t0_ms,
            t_end_ms: l.t_end_ms() - t0_ms,
            speaker: l.speaker,
            text: l.text.clone(),
        })
        .collect();
    lines.sort_by_key(|l| l.t_start_ms);
    Ok((
        encode_wav(&samples, AUDIO_SAMPLE_RATE),
        AudioTruth {
            t_ms: t0_ms,
            duration_ms: t1_ms - t0_ms,
            lines,
        },
    ))
}

/// All sidecar truth for a scenario, one entry per generated media file.
pub fn sidecar_truth(s: &Scenario) -> Result<SidecarTruth, SimError> {
    let mut truth = SidecarTruth::default();
    for t in (0..s.duration_ms).step_by(s.image_period_ms.max(1) as usize) {
        truth.images.push(gen_image(s, t)?.1);
    }
    for t0 in (0..s.duration_ms).step_by(s.audio_chunk_ms.max(1) as usize) {
        let t1 = (t0 + s.audio_chunk_ms).min(s.duration_ms);
        truth.audio.push(gen_audio(s, t0, t1)?.1);
    }
    Ok(truth)
}

/// Every envelope of a scenario in transmission order: by `t_ms`, then stream name.
pub fn scenario_envelopes(s: &Scenario, session_id: &str) -> Result<Vec<IngestEnvelope>, SimError> {
    s.validate()?;
    let env = |t_ms, seq, payload| IngestEnvelope {
        session_id: session_id.to_string(),
        t_ms,
        seq,
        payload,
    };
    let mut out = Vec::new();
    if s.duration_ms == 0 {
        return Ok(out);
    }
    for f in gen_eeg(s, 0, s.duration_ms)? {
        out.push(env(f.t_ms, f.seq, Payload::Eeg { channels: f.channels }));
    }
    for g in gen_gsr(s, 0, s.duration_ms)? {
        out.push(env(g.t_ms, g.seq, Payload::Gsr { value: g.value }));
    }
    for (i, t) in (0..s.duration_ms).step_by(s.image_period_ms as usize).enumerate() {
        let (data, truth) = gen_image(s, t)?;
        out.push(env(t, i as u64, Payload::Image { data, truth: Some(truth) }));
    }
    for (i, t0) in (0..s.duration_ms).step_by(s.audio_chunk_ms as usize).enumerate() {
        let t1 = (t0 + s.audio_chunk_ms).min(s.duration_ms);
        let (data, truth) = gen_audio(s, t0, t1)?;
        out.push(env(
            t0,
            i as u64,
            Payload::Audio {
                data,
                duration_ms: t1 - t0,
                truth: Some(truth),
            },
        ));
    }
    let mut events = s.expression_events.clone();
    events.sort_by_key(|e| e.t_ms);
    for (i, e) in events.into_iter().enumerate() {
        out.push(env(e.t_ms, i as u64, Payload::expression(&e)));
    }
    out.sort_by_key(|e| (e.t_ms, e.stream()));
    Ok(out)
}

/// Where a simulator run sends its data: an in-process engine or a remote service.
pub trait IngestSink {
    fn start(&mut self, config: &SessionConfig) -> Result<SessionManifest, SinkError>;
    fn ingest(&mut self, envelope: &IngestEnvelope) -> Result<Ack, SinkError>;
    fn stop(&mut self, session_id: &str) -> Result<SessionManifest, SinkError>;
    fn playback(
        &mut self,
        session_id: &str,
        t0_ms: u64,
        t1_ms: u64,
        kinds: &[RecordKind],
    ) -> Result<Vec<Record>, SinkError>;
}

#[derive(Debug, Error)]
pub enum SinkError {
    #[error("transport error: {0}")]
    Transport(String),
    #[error("rejected by server ({code}): {message}")]
    Rejected { code: String, message: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransmissionSummary {
    pub session_id: String,
    pub counts: BTreeMap<String, u64>,
    pub acks: u64,
    pub duplicates: u64,
    pub tones_scheduled: u64,
    pub manifest: SessionManifest,
}

impl TransmissionSummary {
    pub fn count(&self, stream: StreamKind) -> u64 {
        self.counts.get(stream.as_str()).copied().unwrap_or(0)
    }
}

/// Starts a session, streams the whole scenario in timestamp order, stops it.
pub fn run_scenario(s: &Scenario, sink: &mut dyn IngestSink) -> Result<TransmissionSummary, RunError> {
    let config = s.session_config();
    let envelopes = scenario_envelopes(s, &config.session_id)?;
    sink.start(&config)?;
    let mut counts = BTreeMap::new();
    let (mut acks, mut duplicates) = (0, 0);
    for e in &envelopes {
        let ack = sink.ingest(e)?;
        acks += 1;
        if ack.status == AckStatus::Duplicate {
            duplicates += 1;
        }
        *counts.entry(e.stream().as_str().to_string()).or_insert(0) += 1;
    }
    let manifest = sink.stop(&config.session_id)?;
    let tones = schedule_tones(&config, s.duration_ms);
    Ok(TransmissionSummary {
        session_id: config.session_id,
        counts,
        acks,
        duplicates,
        tones_scheduled: tones.times_ms.len() as u64,
        manifest,
    })
}

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Sink(#[from] SinkError),
}
