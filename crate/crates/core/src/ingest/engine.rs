//! Session engine: accepts envelopes, runs analyzers, rotates and seals
//! segments, and feeds live subscribers.
//!
//! Segments cover a fixed grid `[i·D, (i+1)·D)` of session time, where D is
//! `segment_duration_ms`. An envelope at or past the open segment's end seals
//! it (and any empty segments in between) before being appended. Each seal
//! writes the segment, then `checkpoint.json` holding all state needed to
//! continue, then the manifest. The open segment itself is never persisted:
//! after a crash it is rebuilt by re-sending envelopes, which the checkpointed
//! sequence marks make idempotent.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::mpsc::{channel, Receiver, Sender};
use std::sync::Arc;

use log::warn;
use parking_lot::Mutex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::analysis::{NoRemoteProviders, ProviderError, ProviderFactory, Providers};
use crate::chain::{hash_segment, now_epoch_ms, Attester};
use crate::des::schedule_tones;
use crate::model::{
    is_valid_session_id, EegFrame, GsrSample, MediaRef, Record, RecordKind, SegmentFile,
    SessionConfig, SessionManifest, SessionStatus, Violation, EEG_CHANNELS, GENESIS_ATTESTATION,
    PENDING_ATTESTATION,
};
use crate::segment::{serialize_segment, to_canonical_json, SegmentError};
use crate::sim::{ExpressionEvent, IngestSink, SinkError};
use crate::store::{
    audio_media_name, image_media_name, io_err, list_sessions, write_atomic, SessionDir,
    StoreError,
};
use crate::timeline::{select_records, timeline_query};

use super::envelope::{Ack, AckStatus, IngestEnvelope, Payload, StreamKind};

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("session `{0}` not found")]
    NotFound(String),
    #[error("session `{0}` already exists")]
    Conflict(String),
    #[error("invalid: {}", join_violations(.0))]
    Validation(Vec<Violation>),
    #[error("{stream} t_ms {t_ms} is before {floor}")]
    Ordering { stream: StreamKind, t_ms: u64, floor: u64 },
    #[error("session `{0}` is sealed")]
    Sealed(String),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Provider(#[from] ProviderError),
}

fn join_violations(v: &[Violation]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join("; ")
}

impl From<SegmentError> for IngestError {
    fn from(e: SegmentError) -> Self {
        match e {
            SegmentError::Invalid(v) => IngestError::Validation(v),
            other => IngestError::Validation(vec![Violation::new("segment", other.to_string())]),
        }
    }
}

/// Body of a live-feed event.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum LiveBody {
    Record { record: Record },
    Tone { t_ms: u64 },
    Sealed {
        segment_index: u32,
        file_digest: String,
        attestation: Option<String>,
    },
    End { manifest: SessionManifest },
}

/// Live events carry a per-session sequence number for deduplication.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LiveEvent {
    pub seq: u64,
    #[serde(flatten)]
    pub body: LiveBody,
}

impl LiveEvent {
    pub fn is_terminal(&self) -> bool {
        matches!(self.body, LiveBody::End { .. })
    }
}

/// Result of sealing one segment.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SealedSegment {
    pub segment_index: u32,
    pub file_digest: String,
    pub attestation: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
struct StreamMark {
    seq: u64,
    t_ms: u64,
}

/// Everything needed to resume a recording session at its open segment.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct Checkpoint {
    open_index: u32,
    open_start_ms: u64,
    prev_attestation: String,
    streams: BTreeMap<StreamKind, StreamMark>,
    pipeline: super::pipeline::Pipeline,
    gaps: Vec<u32>,
    unattested: Vec<(u32, String)>,
    last_response: Option<String>,
    tones_emitted: usize,
    stream_time_ms: u64,
    live_seq: u64,
    deferred: Vec<Record>,
}

struct OpenSegment {
    index: u32,
    start_ms: u64,
    prev_attestation: String,
    records: Vec<Record>,
}

struct SessionState {
    dir: SessionDir,
    manifest: SessionManifest,
    providers: Providers,
    open: OpenSegment,
    pipeline: super::pipeline::Pipeline,
    streams: BTreeMap<StreamKind, StreamMark>,
    unattested: Vec<(u32, String)>,
    last_response: Option<String>,
    tones_emitted: usize,
    next_tone_ms: Option<u64>,
    stream_time_ms: u64,
    live_seq: u64,
    subscribers: Vec<Sender<LiveEvent>>,
    /// Derived records stamped at or past the open segment's end, held until
    /// their segment opens.
    deferred: Vec<Record>,
}

impl SessionState {
    fn duration(&self) -> u64 {
        self.manifest.config.segment_duration_ms
    }

    fn open_end(&self) -> u64 {
        self.open.start_ms + self.duration()
    }

    fn is_sealed(&self) -> bool {
        self.manifest.status == SessionStatus::Sealed
    }

    fn publish(&mut self, body: LiveBody) {
        let ev = LiveEvent {
            seq: self.live_seq,
            body,
        };
        self.live_seq += 1;
        self.subscribers.retain(|s| s.send(ev.clone()).is_ok());
    }

    fn push_record(&mut self, record: Record) {
        if record.t_ms() >= self.open_end() {
            self.deferred.push(record.clone());
        } else {
            self.open.records.push(record.clone());
        }
        self.publish(LiveBody::Record { record });
    }

    fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            open_index: self.open.index,
            open_start_ms: self.open.start_ms,
            prev_attestation: self.open.prev_attestation.clone(),
            streams: self.streams.clone(),
            pipeline: self.pipeline.clone(),
            gaps: self.manifest.gaps.clone(),
            unattested: self.unattested.clone(),
            last_response: self.last_response.clone(),
            tones_emitted: self.tones_emitted,
            stream_time_ms: self.stream_time_ms,
            live_seq: self.live_seq,
            // Only called right after a seal, when the open buffer holds
            // nothing but records carried over from earlier segments.
            deferred: self.open.records.iter().chain(&self.deferred).cloned().collect(),
        }
    }

    fn refresh_next_tone(&mut self) {
        // Tones are sparse, so regenerating the prefix is cheap.
        let horizon = self
            .stream_time_ms
            .saturating_add(self.manifest.config.des_interval_max_s.saturating_mul(1000))
            .saturating_add(1);
        let schedule = schedule_tones(&self.manifest.config, horizon);
        self.next_tone_ms = schedule.times_ms.get(self.tones_emitted).copied();
    }

    fn advance_stream_time(&mut self, t_ms: u64) {
        self.stream_time_ms = self.stream_time_ms.max(t_ms);
        while let Some(t) = self.next_tone_ms {
            if t > self.stream_time_ms {
                break;
            }
            self.publish(LiveBody::Tone { t_ms: t });
            self.tones_emitted += 1;
            self.refresh_next_tone();
        }
    }

    /// Retries attestations that failed earlier. Their successors already
    /// carry PENDING, so a late success only completes the store.
    fn retry_unattested(&mut self, attester: &dyn Attester) {
        let session_id = self.manifest.session_id.clone();
        self.unattested
            .retain(|(i, digest)| attester.attest(&session_id, *i, digest).is_err());
    }

    /// Seals the open segment and opens its successor at the next grid slot.
    fn seal(&mut self, attester: &dyn Attester, last: bool) -> Result<SealedSegment, IngestError> {
        let index = self.open.index;
        let end_ms = self.open_end();
        let mut seg = SegmentFile::new(
            &self.manifest.session_id,
            index,
            &self.open.prev_attestation,
            self.open.start_ms,
            end_ms,
        );
        seg.records = std::mem::take(&mut self.open.records);
        seg.sort_records();
        let bytes = serialize_segment(&seg)?;
        write_atomic(&self.dir.segment_path(index), &bytes)?;
        let digest = hash_segment(&bytes);

        self.retry_unattested(attester);
        let response = match attester.attest(&self.manifest.session_id, index, &digest) {
            Ok(r) => Some(r),
            Err(e) => {
                warn!("attestation of {} segment {index} failed: {e}", self.manifest.session_id);
                self.unattested.push((index, digest.clone()));
                self.manifest.gaps.push(index);
                None
            }
        };
        self.last_response = response.clone();
        self.manifest.segment_count = index + 1;
        self.open = OpenSegment {
            index: index + 1,
            start_ms: end_ms,
            prev_attestation: response
                .clone()
                .unwrap_or_else(|| PENDING_ATTESTATION.to_string()),
            records: Vec::new(),
        };
        let new_end = self.open_end();
        let (due, later): (Vec<Record>, Vec<Record>) = std::mem::take(&mut self.deferred)
            .into_iter()
            .partition(|r| r.t_ms() < new_end);
        self.open.records = due;
        self.deferred = later;
        if last {
            self.manifest.status = SessionStatus::Sealed;
            self.manifest.final_attestation = response.clone();
            self.dir.write_manifest(&self.manifest)?;
            let cp = self.dir.checkpoint_path();
            if cp.exists() {
                fs::remove_file(&cp).map_err(io_err(&cp))?;
            }
        } else {
            let cp = to_canonical_json(&self.checkpoint()).expect("checkpoint serializes");
            write_atomic(&self.dir.checkpoint_path(), &cp)?;
            self.dir.write_manifest(&self.manifest)?;
        }
        let sealed = SealedSegment {
            segment_index: index,
            file_digest: digest,
            attestation: response,
        };
        self.publish(LiveBody::Sealed {
            segment_index: sealed.segment_index,
            file_digest: sealed.file_digest.clone(),
            attestation: sealed.attestation.clone(),
        });
        Ok(sealed)
    }

    fn check_order(&self, env: &IngestEnvelope) -> Result<Option<AckStatus>, IngestError> {
        let stream = env.stream();
        if let Some(mark) = self.streams.get(&stream) {
            if env.seq <= mark.seq {
                return Ok(Some(AckStatus::Duplicate));
            }
            if env.t_ms < mark.t_ms {
                return Err(IngestError::Ordering {
                    stream,
                    t_ms: env.t_ms,
                    floor: mark.t_ms,
                });
            }
        }
        if env.t_ms < self.open.start_ms {
            return Err(IngestError::Ordering {
                stream,
                t_ms: env.t_ms,
                floor: self.open.start_ms,
            });
        }
        Ok(None)
    }

    fn write_media(&self, rel: &str, bytes: &[u8]) -> Result<String, IngestError> {
        let path = self.dir.media_path(rel)?;
        write_atomic(&path, bytes)?;
        Ok(hash_segment(bytes))
    }

    fn apply(&mut self, env: &IngestEnvelope) -> Result<(), IngestError> {
        let t = env.t_ms;
        let blur = self.manifest.config.blur_enabled;
        match &env.payload {
            Payload::Eeg { channels } => {
                if channels.len() != EEG_CHANNELS {
                    return Err(IngestError::Validation(vec![Violation::new(
                        "channels",
                        format!("expected {EEG_CHANNELS}"),
                    )]));
                }
                let frame = EegFrame {
                    t_ms: t,
                    seq: env.seq,
                    channels: channels.clone(),
                };
                let derived = self.pipeline.on_eeg(&frame, &self.providers);
                self.push_record(Record::Eeg(frame));
                for r in derived {
                    self.push_record(r);
                }
            }
            Payload::Gsr { value } => {
                if !(value.is_finite() && *value >= 0.0) {
                    return Err(IngestError::Validation(vec![Violation::new(
                        "value",
                        "must be a finite non-negative number",
                    )]));
                }
                let sample = GsrSample {
                    t_ms: t,
                    seq: env.seq,
                    value: *value,
                };
                self.pipeline.on_gsr(&sample);
                self.push_record(Record::Gsr(sample));
            }
            Payload::Image { data, truth } => {
                let (stored, annotation) = self
                    .pipeline
                    .on_image(t, data, truth.as_ref(), blur, &self.providers)
                    .map_err(|e| {
                        IngestError::Validation(vec![Violation::new("data", e.to_string())])
                    })?;
                let path = image_media_name(t);
                let digest = self.write_media(&path, &stored)?;
                self.push_record(Record::Image(MediaRef {
                    t_ms: t,
                    seq: env.seq,
                    path,
                    digest,
                    duration_ms: None,
                }));
                if let Some(a) = annotation {
                    self.push_record(Record::Annotation(a));
                }
            }
            Payload::Audio {
                data,
                duration_ms,
                truth,
            } => {
                let path = audio_media_name(t);
                let digest = self.write_media(&path, data)?;
                self.push_record(Record::Audio(MediaRef {
                    t_ms: t,
                    seq: env.seq,
                    path,
                    digest,
                    duration_ms: Some(*duration_ms),
                }));
                let derived =
                    self.pipeline
                        .on_audio(t, *duration_ms, data, truth.as_ref(), &self.providers);
                for r in derived {
                    self.push_record(r);
                }
            }
            Payload::Expression {
                eye_action,
                upper_face,
                lower_face,
                power,
            } => {
                self.pipeline.on_expression(ExpressionEvent {
                    t_ms: t,
                    eye_action: *eye_action,
                    upper_face: *upper_face,
                    lower_face: *lower_face,
                    power: *power,
                });
            }
        }
        Ok(())
    }
}

/// Multi-session ingest engine over one data directory.
pub struct Engine {
    data_dir: PathBuf,
    attester: Arc<dyn Attester>,
    factory: Arc<dyn ProviderFactory>,
    sessions: Mutex<HashMap<String, Arc<Mutex<SessionState>>>>,
}

impl Engine {
    pub fn new(data_dir: impl AsRef<Path>, attester: Arc<dyn Attester>) -> Self {
        Self {
            data_dir: data_dir.as_ref().to_path_buf(),
            attester,
            factory: Arc::new(NoRemoteProviders),
            sessions: Mutex::new(HashMap::new()),
        }
    }

    pub fn with_provider_factory(mut self, factory: Arc<dyn ProviderFactory>) -> Self {
        self.factory = factory;
        self
    }

    pub fn data_dir(&self) -> &Path {
        &self.data_dir
    }

    pub fn session_dir(&self, session_id: &str) -> Result<SessionDir, IngestError> {
        if !is_valid_session_id(session_id) {
            return Err(IngestError::NotFound(session_id.to_string()));
        }
        Ok(SessionDir::new(&self.data_dir, session_id))
    }

    pub fn list_sessions(&self) -> Result<Vec<String>, IngestError> {
        Ok(list_sessions(&self.data_dir)?)
    }

    /// Opens a new session: persists the manifest and opens segment 0.
    pub fn start_session(&self, config: &SessionConfig) -> Result<SessionManifest, IngestError> {
        let violations = config.validate();
        if !violations.is_empty() {
            return Err(IngestError::Validation(violations));
        }
        let providers = Providers::from_selection(&config.providers, self.factory.as_ref())?;
        let mut sessions = self.sessions.lock();
        let dir = SessionDir::new(&self.data_dir, &config.session_id);
        if sessions.contains_key(&config.session_id) || dir.root().exists() {
            return Err(IngestError::Conflict(config.session_id.clone()));
        }
        dir.create()?;
        let manifest = SessionManifest {
            session_id: config.session_id.clone(),
            start_epoch_ms: now_epoch_ms(),
            config: config.clone(),
            segment_count: 0,
            genesis_attestation: GENESIS_ATTESTATION.to_string(),
            status: SessionStatus::Recording,
            final_attestation: None,
            gaps: Vec::new(),
        };
        dir.write_manifest(&manifest)?;
        let mut state = SessionState {
            dir,
            pipeline: super::pipeline::Pipeline::new(config),
            manifest: manifest.clone(),
            providers,
            open: OpenSegment {
                index: 0,
                start_ms: 0,
                prev_attestation: GENESIS_ATTESTATION.to_string(),
                records: Vec::new(),
            },
            streams: BTreeMap::new(),
            unattested: Vec::new(),
            last_response: None,
            tones_emitted: 0,
            next_tone_ms: None,
            stream_time_ms: 0,
            live_seq: 0,
            subscribers: Vec::new(),
            deferred: Vec::new(),
        };
        state.refresh_next_tone();
        sessions.insert(config.session_id.clone(), Arc::new(Mutex::new(state)));
        Ok(manifest)
    }

    fn session(&self, session_id: &str) -> Result<Arc<Mutex<SessionState>>, IngestError> {
        let mut sessions = self.sessions.lock();
        if let Some(s) = sessions.get(session_id) {
            return Ok(s.clone());
        }
        let dir = self.session_dir(session_id)?;
        let state = self.load(dir)?;
        let s = Arc::new(Mutex::new(state));
        sessions.insert(session_id.to_string(), s.clone());
        Ok(s)
    }

    /// Restores a session from disk, discarding anything newer than the
    /// last complete seal.
    fn load(&self, dir: SessionDir) -> Result<SessionState, IngestError> {
        let mut manifest = match dir.read_manifest() {
            Ok(m) => m,
            Err(StoreError::NotFound(id)) => return Err(IngestError::NotFound(id)),
            Err(e) => return Err(e.into()),
        };
        let providers = Providers::from_selection(&manifest.config.providers, self.factory.as_ref())?;
        let cp_path = dir.checkpoint_path();
        let checkpoint: Option<Checkpoint> = match fs::read(&cp_path) {
            Ok(bytes) => Some(serde_json::from_slice(&bytes).map_err(|e| {
                IngestError::Validation(vec![Violation::new("checkpoint", e.to_string())])
            })?),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => None,
            Err(e) => return Err(StoreError::Io { path: cp_path, source: e }.into()),
        };
        let duration = manifest.config.segment_duration_ms;
        let mut state = SessionState {
            pipeline: super::pipeline::Pipeline::new(&manifest.config),
            providers,
            open: OpenSegment {
                index: 0,
                start_ms: 0,
                prev_attestation: GENESIS_ATTESTATION.to_string(),
                records: Vec::new(),
            },
            streams: BTreeMap::new(),
            unattested: Vec::new(),
            last_response: None,
            tones_emitted: 0,
            next_tone_ms: None,
            stream_time_ms: 0,
            live_seq: 0,
            subscribers: Vec::new(),
            deferred: Vec::new(),
            manifest: manifest.clone(),
            dir,
        };
        if manifest.status == SessionStatus::Sealed {
            return Ok(state);
        }
        if let Some(cp) = checkpoint {
            if cp.open_index > manifest.segment_count {
                // Crashed between checkpoint and manifest: roll the manifest forward.
                manifest.segment_count = cp.open_index;
                manifest.gaps = cp.gaps.clone();
                state.dir.write_manifest(&manifest)?;
                state.manifest = manifest.clone();
            }
            state.open = OpenSegment {
                index: cp.open_index,
                start_ms: cp.open_start_ms,
                prev_attestation: cp.prev_attestation,
                records: Vec::new(),
            };
            state.streams = cp.streams;
            state.pipeline = cp.pipeline;
            state.unattested = cp.unattested;
            state.last_response = cp.last_response;
            state.tones_emitted = cp.tones_emitted;
            state.stream_time_ms = cp.stream_time_ms;
            state.live_seq = cp.live_seq;
            let end = state.open_end();
            let (due, later) = cp.deferred.into_iter().partition(|r| r.t_ms() < end);
            state.open.records = due;
            state.deferred = later;
        } else if manifest.segment_count > 0 {
            return Err(IngestError::Validation(vec![Violation::new(
                "checkpoint",
                "missing for a recording session with sealed segments",
            )]));
        }
        debug_assert_eq!(state.open.start_ms, state.open.index as u64 * duration);
        // A segment file past the manifest count was written by an
        // interrupted seal; it is rebuilt when envelopes are re-sent.
        let orphan = state.dir.segment_path(state.manifest.segment_count);
        if orphan.exists() {
            fs::remove_file(&orphan).map_err(io_err(&orphan))?;
        }
        state.refresh_next_tone();
        Ok(state)
    }

    pub fn ingest(&self, env: &IngestEnvelope) -> Result<Ack, IngestError> {
        let session = self.session(&env.session_id)?;
        let mut s = session.lock();
        if s.is_sealed() {
            return Err(IngestError::Sealed(env.session_id.clone()));
        }
        let stream = env.stream();
        if let Some(status) = s.check_order(env)? {
            return Ok(Ack {
                stream,
                seq: env.seq,
                status,
            });
        }
        while env.t_ms >= s.open_end() {
            s.seal(self.attester.as_ref(), false)?;
        }
        s.apply(env)?;
        s.streams.insert(
            stream,
            StreamMark {
                seq: env.seq,
                t_ms: env.t_ms,
            },
        );
        s.advance_stream_time(env.t_ms);
        Ok(Ack {
            stream,
            seq: env.seq,
            status: AckStatus::Accepted,
        })
    }

    /// Seals the open segment now. The next segment starts where the sealed
    /// one ends, so records earlier than that are then rejected.
    pub fn rotate_segment(&self, session_id: &str) -> Result<SealedSegment, IngestError> {
        let session = self.session(session_id)?;
        let mut s = session.lock();
        if s.is_sealed() {
            return Err(IngestError::Sealed(session_id.to_string()));
        }
        s.seal(self.attester.as_ref(), false)
    }

    /// Final rotation. Idempotent on sealed sessions.
    pub fn stop_session(&self, session_id: &str) -> Result<SessionManifest, IngestError> {
        let session = self.session(session_id)?;
        let mut s = session.lock();
        if s.is_sealed() {
            return Ok(s.manifest.clone());
        }
        for r in s.pipeline.finish() {
            s.push_record(r);
        }
        while !s.deferred.is_empty() {
            s.seal(self.attester.as_ref(), false)?;
        }
        s.seal(self.attester.as_ref(), true)?;
        let manifest = s.manifest.clone();
        s.publish(LiveBody::End {
            manifest: manifest.clone(),
        });
        s.subscribers.clear();
        Ok(manifest)
    }

    pub fn manifest(&self, session_id: &str) -> Result<SessionManifest, IngestError> {
        let session = self.session(session_id)?;
        let s = session.lock();
        Ok(s.manifest.clone())
    }

    /// Window query over sealed segments plus, while recording, the open buffer.
    pub fn playback(
        &self,
        session_id: &str,
        t0_ms: u64,
        t1_ms: u64,
        kinds: &[RecordKind],
    ) -> Result<Vec<Record>, IngestError> {
        let session = self.session(session_id)?;
        let s = session.lock();
        let mut out = match timeline_query(&s.dir, t0_ms, t1_ms, kinds) {
            Ok(r) => r,
            Err(StoreError::NotFound(id)) => return Err(IngestError::NotFound(id)),
            Err(e) => return Err(e.into()),
        };
        if !s.is_sealed() && t0_ms < t1_ms {
            out.extend(select_records(&s.open.records, t0_ms, t1_ms, kinds));
            out.sort_by_key(Record::sort_key);
        }
        Ok(out)
    }

    /// Absolute path of a media file referenced by a session record.
    pub fn media_path(&self, session_id: &str, rel: &str) -> Result<PathBuf, IngestError> {
        let dir = self.session_dir(session_id)?;
        if !dir.exists() {
            return Err(IngestError::NotFound(session_id.to_string()));
        }
        let path = dir.media_path(rel)?;
        if !path.is_file() {
            return Err(IngestError::NotFound(rel.to_string()));
        }
        Ok(path)
    }

    /// Subscribes to records accepted from now on. A sealed session yields a
    /// single terminal event.
    pub fn subscribe(&self, session_id: &str) -> Result<Receiver<LiveEvent>, IngestError> {
        let session = self.session(session_id)?;
        let mut s = session.lock();
        let (tx, rx) = channel();
        if s.is_sealed() {
            let _ = tx.send(LiveEvent {
                seq: s.live_seq,
                body: LiveBody::End {
                    manifest: s.manifest.clone(),
                },
            });
        } else {
            s.subscribers.push(tx);
        }
        Ok(rx)
    }

    /// Drops in-memory state for a session; the next access reloads it from
    /// disk as a restarted service would.
    pub fn evict(&self, session_id: &str) {
        self.sessions.lock().remove(session_id);
    }
}

impl IngestSink for &Engine {
    fn start(&mut self, config: &SessionConfig) -> Result<SessionManifest, SinkError> {
        self.start_session(config).map_err(sink_error)
    }

    fn ingest(&mut self, envelope: &IngestEnvelope) -> Result<Ack, SinkError> {
        Engine::ingest(self, envelope).map_err(sink_error)
    }

    fn stop(&mut self, session_id: &str) -> Result<SessionManifest, SinkError> {
        self.stop_session(session_id).map_err(sink_error)
    }

    fn playback(
        &mut self,
        session_id: &str,
        t0_ms: u64,
        t1_ms: u64,
        kinds: &[RecordKind],
    ) -> Result<Vec<Record>, SinkError> {
        Engine::playback(self, session_id, t0_ms, t1_ms, kinds).map_err(sink_error)
    }
}

impl IngestError {
    /// Stable machine-readable code, shared with the HTTP layer.
    pub fn code(&self) -> &'static str {
        match self {
            IngestError::NotFound(_) => "not_found",
            IngestError::Conflict(_) => "conflict",
            IngestError::Validation(_) => "validation",
            IngestError::Ordering { .. } => "ordering",
            IngestError::Sealed(_) => "sealed",
            IngestError::Store(_) => "storage",
            IngestError::Provider(_) => "provider",
        }
    }
}

fn sink_error(e: IngestError) -> SinkError {
    SinkError::Rejected {
        code: e.code().to_string(),
        message: e.to_string(),
    }
}
