//! Blocking HTTP clients: the simulator's ingest sink, the remote attester
//! and remote analyzer providers.
//!
//! These use `reqwest::blocking` and must not be created or dropped on an
//! async executor thread.

use std::sync::Arc;
use std::time::Duration;

use fprig_core::analysis::providers::wire::{
    AudioRequest, ExpressionRequest, FacesResponse, ImageRequest, SentimentRequest,
    TranscriptResponse, EXPRESSION, FACES, LABELS, SENTIMENT, TRANSCRIPT,
};
use fprig_core::analysis::{
    clip_boxes, AnalyzerProvider, AudioItem, ExpressionWindow, ImageItem, ProviderError,
    ProviderFactory,
};
use fprig_core::chain::{AttestError, Attester, ChainReport};
use fprig_core::ingest::{Ack, IngestEnvelope};
use fprig_core::media::RgbImage;
use fprig_core::model::{
    FaceBox, FacialExpressionRecord, ImageAnnotation, Record, RecordKind, SentimentRecord,
    SessionConfig, SessionManifest, TranscriptRecord,
};
use fprig_core::sim::{IngestSink, SinkError};
use reqwest::blocking::{Client, Response};
use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::server::{AttestRequest, AttestResponse, ErrorBody, VerifyRequest};

fn client(timeout: Duration) -> Client {
    Client::builder()
        .timeout(timeout)
        .build()
        .expect("HTTP client builds")
}

fn trim(url: &str) -> String {
    url.trim_end_matches('/').to_string()
}

/// Decodes a success body or turns the service's error body into `Rejected`.
fn decode<T: DeserializeOwned>(resp: Response) -> Result<T, SinkError> {
    let status = resp.status();
    if status.is_success() {
        return resp.json().map_err(|e| SinkError::Transport(e.to_string()));
    }
    let text = resp.text().unwrap_or_default();
    match serde_json::from_str::<ErrorBody>(&text) {
        Ok(b) => Err(SinkError::Rejected {
            code: b.error,
            message: b.message,
        }),
        Err(_) => Err(SinkError::Rejected {
            code: status.as_u16().to_string(),
            message: text,
        }),
    }
}

/// Streams simulator envelopes to a running service.
pub struct HttpSink {
    base: String,
    http: Client,
}

impl HttpSink {
    pub fn new(base_url: &str) -> Self {
        Self {
            base: trim(base_url),
            http: client(Duration::from_secs(60)),
        }
    }

    fn post<B: Serialize, T: DeserializeOwned>(&self, path: &str, body: &B) -> Result<T, SinkError> {
        let resp = self
            .http
            .post(format!("{}{path}", self.base))
            .json(body)
            .send()
            .map_err(|e| SinkError::Transport(e.to_string()))?;
        decode(resp)
    }

    fn get<T: DeserializeOwned>(&self, path: &str) -> Result<T, SinkError> {
        let resp = self
            .http
            .get(format!("{}{path}", self.base))
            .send()
            .map_err(|e| SinkError::Transport(e.to_string()))?;
        decode(resp)
    }

    pub fn manifest(&self, session_id: &str) -> Result<SessionManifest, SinkError> {
        self.get(&format!("/sessions/{session_id}/manifest"))
    }

    pub fn verify(&self, session_id: &str) -> Result<ChainReport, SinkError> {
        self.post(
            "/verify",
            &VerifyRequest {
                session_id: session_id.to_string(),
            },
        )
    }

    pub fn media(&self, session_id: &str, path: &str) -> Result<Vec<u8>, SinkError> {
        let resp = self
            .http
            .get(format!("{}/sessions/{session_id}/media/{path}", self.base))
            .send()
            .map_err(|e| SinkError::Transport(e.to_string()))?;
        if !resp.status().is_success() {
            return Err(SinkError::Rejected {
                code: resp.status().as_u16().to_string(),
                message: resp.text().unwrap_or_default(),
            });
        }
        resp.bytes()
            .map(|b| b.to_vec())
            .map_err(|e| SinkError::Transport(e.to_string()))
    }
}

impl IngestSink for HttpSink {
    fn start(&mut self, config: &SessionConfig) -> Result<SessionManifest, SinkError> {
        self.post("/sessions", config)
    }

    fn ingest(&mut self, envelope: &IngestEnvelope) -> Result<Ack, SinkError> {
        self.post(&format!("/sessions/{}/ingest", envelope.session_id), envelope)
    }

    fn stop(&mut self, session_id: &str) -> Result<SessionManifest, SinkError> {
        self.post(&format!("/sessions/{session_id}/stop"), &serde_json::json!({}))
    }

    fn playback(
        &mut self,
        session_id: &str,
        t0_ms: u64,
        t1_ms: u64,
        kinds: &[RecordKind],
    ) -> Result<Vec<Record>, SinkError> {
        let kinds: Vec<&str> = kinds.iter().map(|k| k.as_str()).collect();
        self.get(&format!(
            "/sessions/{session_id}/records?t0={t0_ms}&t1={t1_ms}&kinds={}",
            kinds.join(",")
        ))
    }
}

/// Attests through a remote attestation service's `POST /attest`.
pub struct HttpAttester {
    base: String,
    http: Client,
}

impl HttpAttester {
    pub fn new(base_url: &str) -> Self {
        Self {
            base: trim(base_url),
            http: client(Duration::from_secs(10)),
        }
    }
}

impl Attester for HttpAttester {
    fn attest(&self, session_id: &str, segment_index: u32, file_digest: &str) -> Result<String, AttestError> {
        let req = AttestRequest {
            session_id: session_id.to_string(),
            segment_index,
            file_digest: file_digest.to_string(),
        };
        let resp = self
            .http
            .post(format!("{}/attest", self.base))
            .json(&req)
            .send()
            .map_err(|e| AttestError::Unavailable(e.to_string()))?;
        match resp.status().as_u16() {
            200 => resp
                .json::<AttestResponse>()
                .map(|r| r.response_digest)
                .map_err(|e| AttestError::Unavailable(e.to_string())),
            409 => Err(AttestError::Conflict {
                session_id: session_id.to_string(),
                segment_index,
            }),
            400 => Err(AttestError::Validation(resp.text().unwrap_or_default())),
            code => Err(AttestError::Unavailable(format!("HTTP {code}"))),
        }
    }
}

/// Analyzer speaking the one-request-per-item JSON protocol at `endpoint/<op>`.
pub struct RemoteProvider {
    endpoint: String,
    http: Client,
}

impl RemoteProvider {
    pub fn new(endpoint: &str) -> Self {
        Self {
            endpoint: trim(endpoint),
            http: client(Duration::from_secs(30)),
        }
    }

    fn call<B: Serialize, T: DeserializeOwned>(&self, op: &str, body: &B) -> Result<T, ProviderError> {
        let resp = self
            .http
            .post(format!("{}/{op}", self.endpoint))
            .json(body)
            .send()
            .map_err(|e| ProviderError::Remote(e.to_string()))?;
        if !resp.status().is_success() {
            return Err(ProviderError::Remote(format!("{op}: HTTP {}", resp.status())));
        }
        resp.json().map_err(|e| ProviderError::Remote(format!("{op}: {e}")))
    }

    fn bounds(bytes: &[u8]) -> Result<(u32, u32), ProviderError> {
        let (img, _) = RgbImage::decode_ppm(bytes).map_err(|e| ProviderError::Analysis(e.into()))?;
        Ok((img.width, img.height))
    }
}

impl AnalyzerProvider for RemoteProvider {
    fn name(&self) -> &str {
        &self.endpoint
    }

    fn detect_faces(&self, item: &ImageItem<'_>) -> Result<Vec<FaceBox>, ProviderError> {
        let (w, h) = Self::bounds(item.bytes)?;
        let r: FacesResponse = self.call(
            FACES,
            &ImageRequest {
                t_ms: item.t_ms,
                image: item.bytes.to_vec(),
            },
        )?;
        Ok(clip_boxes(&r.face_boxes, w, h))
    }

    fn annotate_image(&self, item: &ImageItem<'_>) -> Result<ImageAnnotation, ProviderError> {
        let (w, h) = Self::bounds(item.bytes)?;
        let mut a: ImageAnnotation = self.call(
            LABELS,
            &ImageRequest {
                t_ms: item.t_ms,
                image: item.bytes.to_vec(),
            },
        )?;
        a.t_ms = item.t_ms;
        a.face_boxes = clip_boxes(&a.face_boxes, w, h);
        for l in &mut a.labels {
            l.confidence = l.confidence.clamp(0.0, 1.0);
        }
        Ok(a)
    }

    fn transcribe(&self, item: &AudioItem<'_>) -> Result<Vec<TranscriptRecord>, ProviderError> {
        let r: TranscriptResponse = self.call(
            TRANSCRIPT,
            &AudioRequest {
                t_ms: item.t_ms,
                duration_ms: item.duration_ms,
                audio: item.bytes.to_vec(),
            },
        )?;
        if r.records.iter().any(|t| t.t_end_ms < t.t_start_ms) {
            return Err(ProviderError::Remote("transcript ends before it starts".into()));
        }
        Ok(r.records)
    }

    fn sentiment(&self, t_ms: u64, text: &str) -> Result<SentimentRecord, ProviderError> {
        let mut r: SentimentRecord = self.call(
            SENTIMENT,
            &SentimentRequest {
                t_ms,
                text: text.to_string(),
            },
        )?;
        r.t_ms = t_ms;
        let sum: f64 = r.scores.as_array().iter().sum();
        if (sum - 1.0).abs() > 1e-6 || r.label != r.scores.argmax() {
            return Err(ProviderError::Remote("sentiment scores violate the contract".into()));
        }
        Ok(r)
    }

    fn facial_expression(&self, window: &ExpressionWindow<'_>) -> Result<FacialExpressionRecord, ProviderError> {
        let mut r: FacialExpressionRecord = self.call(
            EXPRESSION,
            &ExpressionRequest {
                t_ms: window.t_ms,
                frames: window.frames.iter().map(|f| f.channels.clone()).collect(),
            },
        )?;
        r.t_ms = window.t_ms;
        r.power = r.power.clamp(0.0, 1.0);
        Ok(r)
    }
}

pub struct HttpProviderFactory;

impl ProviderFactory for HttpProviderFactory {
    fn remote(&self, endpoint: &str) -> Result<Arc<dyn AnalyzerProvider>, ProviderError> {
        Ok(Arc::new(RemoteProvider::new(endpoint)))
    }
}
