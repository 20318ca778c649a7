//! Pluggable analyzers behind the derived streams.
//!
//! The reference provider reads ground truth shipped inline with each media
//! envelope; the sidecar provider reads it from a truth file; remote
//! providers come from a [`ProviderFactory`] supplied by the host.

use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::media::RgbImage;
use crate::model::{
    EegFrame, FaceBox, FacialExpressionRecord, ImageAnnotation, ImageLabel, ProviderKind,
    ProviderSelection, ProviderSpec, SentimentRecord, TranscriptRecord,
};
use crate::sim::{AudioTruth, ExpressionEvent, ImageTruth, SidecarTruth};

use super::faces::clip_boxes;
use super::sentiment::Lexicon;
use super::AnalysisError;

/// Expression events are assigned to the window whose first hop contains them.
pub const EXPRESSION_HOP_MS: u64 = 1000;

#[derive(Debug, Error)]
pub enum ProviderError {
    #[error("no sidecar truth for {0}")]
    MissingSidecar(String),
    #[error(transparent)]
    Analysis(#[from] AnalysisError),
    #[error("remote provider failed: {0}")]
    Remote(String),
    #[error("provider unavailable: {0}")]
    Unavailable(String),
}

#[derive(Debug, Clone, Copy)]
pub struct ImageItem<'a> {
    pub t_ms: u64,
    pub bytes: &'a [u8],
    pub truth: Option<&'a ImageTruth>,
}

#[derive(Debug, Clone, Copy)]
pub struct AudioItem<'a> {
    pub t_ms: u64,
    pub duration_ms: u64,
    pub bytes: &'a [u8],
    pub truth: Option<&'a AudioTruth>,
}

#[derive(Debug, Clone, Copy)]
pub struct ExpressionWindow<'a> {
    pub t_ms: u64,
    pub frames: &'a [EegFrame],
    pub events: &'a [ExpressionEvent],
}

pub trait AnalyzerProvider: Send + Sync {
    fn name(&self) -> &str;
    fn detect_faces(&self, item: &ImageItem<'_>) -> Result<Vec<FaceBox>, ProviderError>;
    fn annotate_image(&self, item: &ImageItem<'_>) -> Result<ImageAnnotation, ProviderError>;
    fn transcribe(&self, item: &AudioItem<'_>) -> Result<Vec<TranscriptRecord>, ProviderError>;
    fn sentiment(&self, t_ms: u64, text: &str) -> Result<SentimentRecord, ProviderError>;
    fn facial_expression(
        &self,
        window: &ExpressionWindow<'_>,
    ) -> Result<FacialExpressionRecord, ProviderError>;
}

fn image_bounds(bytes: &[u8]) -> Result<(u32, u32), ProviderError> {
    let (img, _) = RgbImage::decode_ppm(bytes).map_err(AnalysisError::from)?;
    Ok((img.width, img.height))
}

fn faces_from_truth(item: &ImageItem<'_>, truth: &ImageTruth) -> Result<Vec<FaceBox>, ProviderError> {
    let (w, h) = image_bounds(item.bytes)?;
    Ok(clip_boxes(&truth.face_boxes, w, h))
}

fn annotation_from_truth(
    item: &ImageItem<'_>,
    truth: &ImageTruth,
) -> Result<ImageAnnotation, ProviderError> {
    Ok(ImageAnnotation {
        t_ms: item.t_ms,
        labels: truth
            .labels
            .iter()
            .map(|l| ImageLabel { label: l.clone(), confidence: 1.0 })
            .collect(),
        texts: truth.texts.clone(),
        face_boxes: faces_from_truth(item, truth)?,
    })
}

fn transcripts_from_truth(item: &AudioItem<'_>, truth: &AudioTruth) -> Vec<TranscriptRecord> {
    truth
        .lines
        .iter()
        .map(|l| TranscriptRecord {
            t_start_ms: item.t_ms + l.t_start_ms,
            t_end_ms: item.t_ms + l.t_end_ms.max(l.t_start_ms),
            speaker: l.speaker,
            text: l.text.clone(),
        })
        .collect()
}

/// Latest scripted event in the window's first hop, else all-neutral.
pub fn scripted_expression(window: &ExpressionWindow<'_>) -> FacialExpressionRecord {
    let hop = window.t_ms..window.t_ms + EXPRESSION_HOP_MS;
    window
        .events
        .iter()
        .filter(|e| hop.contains(&e.t_ms))
        .max_by_key(|e| e.t_ms)
        .map(|e| FacialExpressionRecord {
            t_ms: window.t_ms,
            eye_action: e.eye_action,
            upper_face: e.upper_face,
            lower_face: e.lower_face,
            power: e.power.clamp(0.0, 1.0),
        })
        .unwrap_or_else(|| FacialExpressionRecord::neutral(window.t_ms))
}

/// Deterministic provider driven by truth carried inside each envelope.
pub struct ReferenceProvider {
    lexicon: Lexicon,
}

impl Default for ReferenceProvider {
    fn default() -> Self {
        Self { lexicon: Lexicon::bundled() }
    }
}

impl ReferenceProvider {
    pub fn with_lexicon(lexicon: Lexicon) -> Self {
        Self { lexicon }
    }
}

fn need<'a, T>(truth: Option<&'a T>, what: &str, t_ms: u64) -> Result<&'a T, ProviderError> {
    truth.ok_or_else(|| ProviderError::MissingSidecar(format!("{what} at {t_ms} ms")))
}

impl AnalyzerProvider for ReferenceProvider {
    fn name(&self) -> &str {
        "reference"
    }

    fn detect_faces(&self, item: &ImageItem<'_>) -> Result<Vec<FaceBox>, ProviderError> {
        faces_from_truth(item, need(item.truth, "image", item.t_ms)?)
    }

    fn annotate_image(&self, item: &ImageItem<'_>) -> Result<ImageAnnotation, ProviderError> {
        annotation_from_truth(item, need(item.truth, "image", item.t_ms)?)
    }

    fn transcribe(&self, item: &AudioItem<'_>) -> Result<Vec<TranscriptRecord>, ProviderError> {
        Ok(transcripts_from_truth(item, need(item.truth, "audio", item.t_ms)?))
    }

    fn sentiment(&self, t_ms: u64, text: &str) -> Result<SentimentRecord, ProviderError> {
        Ok(self.lexicon.sentiment(t_ms, text))
    }

    fn facial_expression(
        &self,
        window: &ExpressionWindow<'_>,
    ) -> Result<FacialExpressionRecord, ProviderError> {
        Ok(scripted_expression(window))
    }
}

/// Looks up truth by timestamp in a sidecar file written by the simulator.
pub struct SidecarProvider {
    truth: SidecarTruth,
    reference: ReferenceProvider,
}

impl SidecarProvider {
    pub fn new(truth: SidecarTruth) -> Self {
        Self { truth, reference: ReferenceProvider::default() }
    }

    pub fn load(path: &Path) -> Result<Self, ProviderError> {
        let bytes = std::fs::read(path).map_err(|e| {
            ProviderError::Unavailable(format!("sidecar {}: {e}", path.display()))
        })?;
        let truth = serde_json::from_slice(&bytes).map_err(|e| {
            ProviderError::Unavailable(format!("sidecar {}: {e}", path.display()))
        })?;
        Ok(Self::new(truth))
    }
}

impl AnalyzerProvider for SidecarProvider {
    fn name(&self) -> &str {
        "sidecar"
    }

    fn detect_faces(&self, item: &ImageItem<'_>) -> Result<Vec<FaceBox>, ProviderError> {
        faces_from_truth(item, need(self.truth.image_at(item.t_ms), "image", item.t_ms)?)
    }

    fn annotate_image(&self, item: &ImageItem<'_>) -> Result<ImageAnnotation, ProviderError> {
        annotation_from_truth(item, need(self.truth.image_at(item.t_ms), "image", item.t_ms)?)
    }

    fn transcribe(&self, item: &AudioItem<'_>) -> Result<Vec<TranscriptRecord>, ProviderError> {
        let truth = need(self.truth.audio_at(item.t_ms), "audio", item.t_ms)?;
        Ok(transcripts_from_truth(item, truth))
    }

    fn sentiment(&self, t_ms: u64, text: &str) -> Result<SentimentRecord, ProviderError> {
        self.reference.sentiment(t_ms, text)
    }

    fn facial_expression(
        &self,
        window: &ExpressionWindow<'_>,
    ) -> Result<FacialExpressionRecord, ProviderError> {
        self.reference.facial_expression(window)
    }
}

/// Builds remote providers; supplied by hosts that have an HTTP client.
pub trait ProviderFactory: Send + Sync {
    fn remote(&self, endpoint: &str) -> Result<Arc<dyn AnalyzerProvider>, ProviderError>;
}

/// Factory for hosts without remote support.
pub struct NoRemoteProviders;

impl ProviderFactory for NoRemoteProviders {
    fn remote(&self, endpoint: &str) -> Result<Arc<dyn AnalyzerProvider>, ProviderError> {
        Err(ProviderError::Unavailable(format!(
            "remote provider {endpoint} requested but no remote factory is configured"
        )))
    }
}

/// One provider bound to each derived stream of a session.
#[derive(Clone)]
pub struct Providers {
    pub faces: Arc<dyn AnalyzerProvider>,
    pub labels: Arc<dyn AnalyzerProvider>,
    pub transcript: Arc<dyn AnalyzerProvider>,
    pub sentiment: Arc<dyn AnalyzerProvider>,
    pub expression: Arc<dyn AnalyzerProvider>,
}

impl Providers {
    pub fn reference() -> Self {
        let r: Arc<dyn AnalyzerProvider> = Arc::new(ReferenceProvider::default());
        Self {
            faces: r.clone(),
            labels: r.clone(),
            transcript: r.clone(),
            sentiment: r.clone(),
            expression: r,
        }
    }

    pub fn from_selection(
        sel: &ProviderSelection,
        factory: &dyn ProviderFactory,
    ) -> Result<Self, ProviderError> {
        let reference: Arc<dyn AnalyzerProvider> = Arc::new(ReferenceProvider::default());
        let build = |spec: &ProviderSpec| -> Result<Arc<dyn AnalyzerProvider>, ProviderError> {
            match spec.kind {
                ProviderKind::Reference => Ok(reference.clone()),
                ProviderKind::Sidecar => {
                    let path = spec.sidecar_path.as_deref().ok_or_else(|| {
                        ProviderError::Unavailable("sidecar provider without sidecar_path".into())
                    })?;
                    Ok(Arc::new(SidecarProvider::load(Path::new(path))?))
                }
                ProviderKind::Remote => {
                    let endpoint = spec.endpoint.as_deref().ok_or_else(|| {
                        ProviderError::Unavailable("remote provider without endpoint".into())
                    })?;
                    factory.remote(endpoint)
                }
            }
        };
        Ok(Self {
            faces: build(&sel.faces)?,
            labels: build(&sel.labels)?,
            transcript: build(&sel.transcript)?,
            sentiment: build(&sel.sentiment)?,
            expression: build(&sel.expression)?,
        })
    }
}

/// Request bodies for the one-request-per-item remote provider protocol.
/// Responses reuse the record types directly.
pub mod wire {
    use super::*;

    #[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
    pub struct ImageRequest {
        pub t_ms: u64,
        #[serde(with = "crate::b64")]
        pub image: Vec<u8>,
    }

    #[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
    pub struct FacesResponse {
        pub face_boxes: Vec<FaceBox>,
    }

    #[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
    pub struct AudioRequest {
        pub t_ms: u64,
        pub duration_ms: u64,
        #[serde(with = "crate::b64")]
        pub audio: Vec<u8>,
    }

    #[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
    pub struct TranscriptResponse {
        pub records: Vec<TranscriptRecord>,
    }

    #[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
    pub struct SentimentRequest {
        pub t_ms: u64,
        pub text: String,
    }

    #[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
    pub struct ExpressionRequest {
        pub t_ms: u64,
        pub frames: Vec<Vec<i16>>,
    }

    pub const FACES: &str = "faces";
    pub const LABELS: &str = "labels";
    pub const TRANSCRIPT: &str = "transcript";
    pub const SENTIMENT: &str = "sentiment";
    pub const EXPRESSION: &str = "expression";
}
