//! Per-session analyzer state turning raw records into derived records.
//!
//! All state lives in [`Pipeline`], which is serializable so a restarted
//! service resumes exactly where the last sealed segment left off.

use std::collections::VecDeque;

use log::warn;
use serde::{Deserialize, Serialize};

use crate::analysis::{
    band_power, blur_faces, cognition_metrics, normalize_gsr, AudioItem, ExpressionWindow,
    ImageItem, Providers, HOP_FRAMES, WINDOW_FRAMES,
};
use crate::des::DesExtractor;
use crate::media::RgbImage;
use crate::model::{
    EegFrame, FaceBox, GsrSample, ImageAnnotation, Record, SessionConfig, Speaker,
};
use crate::sim::{AudioTruth, ExpressionEvent, ImageTruth};

/// Trailing GSR history used for normalization.
pub const GSR_HISTORY_MS: u64 = 60_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Pipeline {
    window: VecDeque<EegFrame>,
    frames_seen: u64,
    gsr_history: VecDeque<GsrSample>,
    expression_events: Vec<ExpressionEvent>,
    des: DesExtractor,
}

impl Pipeline {
    pub fn new(config: &SessionConfig) -> Self {
        Self {
            window: VecDeque::with_capacity(WINDOW_FRAMES),
            frames_seen: 0,
            gsr_history: VecDeque::new(),
            expression_events: Vec::new(),
            des: DesExtractor::new(&config.des_start_phrase, &config.des_end_phrase),
        }
    }

    /// Buffers a frame; every hop past the first full window yields band
    /// power, cognition and expression records stamped at the window start.
    pub fn on_eeg(&mut self, frame: &EegFrame, providers: &Providers) -> Vec<Record> {
        if self.window.len() == WINDOW_FRAMES {
            self.window.pop_front();
        }
        self.window.push_back(frame.clone());
        self.frames_seen += 1;
        let n = self.frames_seen;
        if n < WINDOW_FRAMES as u64 || (n - WINDOW_FRAMES as u64) % HOP_FRAMES as u64 != 0 {
            return Vec::new();
        }
        let frames: Vec<EegFrame> = self.window.iter().cloned().collect();
        let t0 = frames[0].t_ms;
        let t_end = t0 + 2000;
        let mut out = Vec::with_capacity(3);
        match band_power(&frames) {
            Ok(bp) => {
                let g = self.gsr_level(t_end);
                out.push(Record::Cognition(cognition_metrics(&bp, g)));
                out.push(Record::BandPower(bp));
            }
            Err(e) => warn!("band power at {t0}: {e}"),
        }
        let window = ExpressionWindow {
            t_ms: t0,
            frames: &frames,
            events: &self.expression_events,
        };
        match providers.expression.facial_expression(&window) {
            Ok(r) => out.push(Record::Expression(r)),
            Err(e) => warn!("expression at {t0}: {e}"),
        }
        self.expression_events.retain(|e| e.t_ms > t0);
        out
    }

    /// Normalized GSR for a window ending (exclusive) at `t_end`.
    fn gsr_level(&self, t_end: u64) -> f64 {
        let lo = t_end.saturating_sub(GSR_HISTORY_MS);
        let in_window: Vec<GsrSample> = self
            .gsr_history
            .iter()
            .filter(|g| g.t_ms >= lo && g.t_ms < t_end)
            .cloned()
            .collect();
        match in_window.split_last() {
            Some((current, history)) => normalize_gsr(history, current.value),
            None => 0.5,
        }
    }

    pub fn on_gsr(&mut self, sample: &GsrSample) {
        self.gsr_history.push_back(sample.clone());
        // Keep enough history for a window that ends after this sample.
        let keep_from = sample.t_ms.saturating_sub(GSR_HISTORY_MS + 2000);
        while self.gsr_history.front().is_some_and(|g| g.t_ms < keep_from) {
            self.gsr_history.pop_front();
        }
    }

    pub fn on_expression(&mut self, event: ExpressionEvent) {
        self.expression_events.push(event);
    }

    /// Runs face detection and blurring. Returns the bytes to store and the
    /// annotation record. If detection fails while blurring is on, the whole
    /// frame is blurred so no unfiltered face reaches disk.
    pub fn on_image(
        &self,
        t_ms: u64,
        bytes: &[u8],
        truth: Option<&ImageTruth>,
        blur: bool,
        providers: &Providers,
    ) -> Result<(Vec<u8>, Option<ImageAnnotation>), crate::analysis::AnalysisError> {
        let (img, _) = RgbImage::decode_ppm(bytes)?;
        let item = ImageItem { t_ms, bytes, truth };
        let faces = match providers.faces.detect_faces(&item) {
            Ok(f) => Some(f),
            Err(e) => {
                warn!("face detection at {t_ms}: {e}");
                None
            }
        };
        let stored = match (&faces, blur) {
            (_, false) => bytes.to_vec(),
            (Some(f), true) => blur_faces(bytes, f)?,
            (None, true) => blur_faces(bytes, &[FaceBox::new(0, 0, img.width, img.height)])?,
        };
        let annotation = match providers.labels.annotate_image(&item) {
            Ok(mut a) => {
                a.t_ms = t_ms;
                a.face_boxes = faces.unwrap_or_default();
                Some(a)
            }
            Err(e) => {
                warn!("image annotation at {t_ms}: {e}");
                faces.map(|face_boxes| ImageAnnotation {
                    t_ms,
                    labels: Vec::new(),
                    texts: Vec::new(),
                    face_boxes,
                })
            }
        };
        Ok((stored, annotation))
    }

    /// Transcribes a chunk, scores wearer speech and advances DES extraction.
    pub fn on_audio(
        &mut self,
        t_ms: u64,
        duration_ms: u64,
        bytes: &[u8],
        truth: Option<&AudioTruth>,
        providers: &Providers,
    ) -> Vec<Record> {
        let item = AudioItem {
            t_ms,
            duration_ms,
            bytes,
            truth,
        };
        let transcripts = match providers.transcript.transcribe(&item) {
            Ok(t) => t,
            Err(e) => {
                warn!("transcription at {t_ms}: {e}");
                return Vec::new();
            }
        };
        let mut out = Vec::new();
        for tr in transcripts {
            if tr.speaker == Speaker::Wearer {
                match providers.sentiment.sentiment(tr.t_start_ms, &tr.text) {
                    Ok(s) => out.push(Record::Sentiment(s)),
                    Err(e) => warn!("sentiment at {}: {e}", tr.t_start_ms),
                }
                out.extend(self.des.feed(&tr).into_iter().map(Record::Des));
            }
            out.push(Record::Transcript(tr));
        }
        out
    }

    /// Closes an open DES report at session end.
    pub fn finish(&mut self) -> Vec<Record> {
        self.des.finish().map(Record::Des).into_iter().collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{RecordKind, EEG_CHANNELS};
    use crate::sim::eeg_frame_time;

    fn frame(k: u64) -> EegFrame {
        EegFrame {
            t_ms: eeg_frame_time(k),
            seq: k,
            channels: vec![0; EEG_CHANNELS],
        }
    }

    #[test]
    fn window_cadence() {
        let cfg = SessionConfig::new("p");
        let providers = Providers::reference();
        let mut p = Pipeline::new(&cfg);
        let mut starts = Vec::new();
        for k in 0..7680 {
            for r in p.on_eeg(&frame(k), &providers) {
                if r.kind() == RecordKind::BandPower {
                    starts.push(r.t_ms());
                }
            }
        }
        assert_eq!(starts.len(), 59);
        assert_eq!(starts[0], 0);
        assert_eq!(starts[1], 1000);
        assert_eq!(*starts.last().unwrap(), 58_000);
    }

    #[test]
    fn gsr_level_uses_trailing_window() {
        let cfg = SessionConfig::new("p");
        let mut p = Pipeline::new(&cfg);
        assert_eq!(p.gsr_level(2000), 0.5);
        for (t, v) in [(0, 1.0), (1000, 3.0), (2000, 2.0)] {
            p.on_gsr(&GsrSample { t_ms: t, seq: t, value: v });
        }
        assert_eq!(p.gsr_level(2000), 1.0);
        assert_eq!(p.gsr_level(3000), 0.5);
    }
}
