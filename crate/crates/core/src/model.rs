//! Domain types shared by every part of the recorder: session configuration,
//! the manifest, raw sensor records and derived analyzer records.
//!
//! All timestamps are session-relative milliseconds. The manifest carries a
//! single wall-clock anchor (`start_epoch_ms`).

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub const SCHEMA_VERSION: &str = "1.0";
pub const EEG_CHANNELS: usize = 14;
pub const BAND_COUNT: usize = 5;
pub const EEG_RATE_HZ: u32 = 128;
pub const IMAGE_WIDTH: u32 = 320;
pub const IMAGE_HEIGHT: u32 = 240;

/// Chain start marker carried by segment 0.
pub const GENESIS_ATTESTATION: &str =
    "0000000000000000000000000000000000000000000000000000000000000000";

/// Stands in for `prev_attestation` when the attestation service could not be
/// reached while sealing the previous segment.
pub const PENDING_ATTESTATION: &str = "PENDING";

pub const DEFAULT_START_PHRASE: &str = "start ziggy";
pub const DEFAULT_END_PHRASE: &str = "end ziggy";

/// One failed invariant: the offending field path and the rule it broke.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub field: String,
    pub rule: String,
}

impl Violation {
    pub fn new(field: impl Into<String>, rule: impl Into<String>) -> Self {
        Self {
            field: field.into(),
            rule: rule.into(),
        }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.field, self.rule)
    }
}

/// Session ids double as directory names: 1-128 chars of `[A-Za-z0-9._-]`,
/// not starting with a dot.
pub fn is_valid_session_id(id: &str) -> bool {
    !id.is_empty()
        && id.len() <= 128
        && id
            .bytes()
            .all(|b| b.is_ascii_alphanumeric() || b == b'-' || b == b'_' || b == b'.')
        && !id.starts_with('.')
}

pub(crate) fn is_hex_digest(s: &str) -> bool {
    s.len() == 64 && s.bytes().all(|b| b.is_ascii_digit() || (b'a'..=b'f').contains(&b))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProviderKind {
    #[default]
    Reference,
    Sidecar,
    Remote,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProviderSpec {
    pub kind: ProviderKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub endpoint: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sidecar_path: Option<String>,
}

impl ProviderSpec {
    pub fn remote(endpoint: impl Into<String>) -> Self {
        Self {
            kind: ProviderKind::Remote,
            endpoint: Some(endpoint.into()),
            sidecar_path: None,
        }
    }

    pub fn sidecar(path: impl Into<String>) -> Self {
        Self {
            kind: ProviderKind::Sidecar,
            endpoint: None,
            sidecar_path: Some(path.into()),
        }
    }
}

/// Which provider backs each derived stream of a session.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProviderSelection {
    pub faces: ProviderSpec,
    pub labels: ProviderSpec,
    pub transcript: ProviderSpec,
    pub sentiment: ProviderSpec,
    pub expression: ProviderSpec,
}

impl ProviderSelection {
    pub fn iter(&self) -> impl Iterator<Item = (&'static str, &ProviderSpec)> {
        [
            ("faces", &self.faces),
            ("labels", &self.labels),
            ("transcript", &self.transcript),
            ("sentiment", &self.sentiment),
            ("expression", &self.expression),
        ]
        .into_iter()
    }
}

fn default_image_period() -> u64 {
    1000
}
fn default_gsr_period() -> u64 {
    1000
}
fn default_eeg_rate() -> u32 {
    EEG_RATE_HZ
}
fn default_segment_duration() -> u64 {
    60_000
}
fn default_des_min() -> u64 {
    900
}
fn default_des_max() -> u64 {
    3600
}
fn default_true() -> bool {
    true
}
fn default_start_phrase() -> String {
    DEFAULT_START_PHRASE.to_string()
}
fn default_end_phrase() -> String {
    DEFAULT_END_PHRASE.to_string()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SessionConfig {
    pub session_id: String,
    #[serde(default = "default_image_period")]
    pub image_period_ms: u64,
    #[serde(default = "default_gsr_period")]
    pub gsr_period_ms: u64,
    #[serde(default = "default_eeg_rate")]
    pub eeg_rate_hz: u32,
    #[serde(default = "default_segment_duration")]
    pub segment_duration_ms: u64,
    #[serde(default = "default_des_min")]
    pub des_interval_min_s: u64,
    #[serde(default = "default_des_max")]
    pub des_interval_max_s: u64,
    #[serde(default = "default_true")]
    pub blur_enabled: bool,
    #[serde(default)]
    pub providers: ProviderSelection,
    #[serde(default)]
    pub rng_seed: u64,
    #[serde(default = "default_start_phrase")]
    pub des_start_phrase: String,
    #[serde(default = "default_end_phrase")]
    pub des_end_phrase: String,
}

impl SessionConfig {
    pub fn new(session_id: impl Into<String>) -> Self {
        Self {
            session_id: session_id.into(),
            image_period_ms: default_image_period(),
            gsr_period_ms: default_gsr_period(),
            eeg_rate_hz: default_eeg_rate(),
            segment_duration_ms: default_segment_duration(),
            des_interval_min_s: default_des_min(),
            des_interval_max_s: default_des_max(),
            blur_enabled: true,
            providers: ProviderSelection::default(),
            rng_seed: 0,
            des_start_phrase: default_start_phrase(),
            des_end_phrase: default_end_phrase(),
        }
    }

    pub fn validate(&self) -> Vec<Violation> {
        let mut v = Vec::new();
        if !is_valid_session_id(&self.session_id) {
            v.push(Violation::new(
                "session_id",
                "must be 1-128 chars of [A-Za-z0-9._-] not starting with '.'",
            ));
        }
        if self.image_period_ms < 100 {
            v.push(Violation::new("image_period_ms", "must be >= 100"));
        }
        if self.gsr_period_ms == 0 {
            v.push(Violation::new("gsr_period_ms", "must be positive"));
        }
        if self.eeg_rate_hz != EEG_RATE_HZ {
            v.push(Violation::new("eeg_rate_hz", "only 128 Hz is supported"));
        }
        if self.segment_duration_ms < 1000 {
            v.push(Violation::new("segment_duration_ms", "must be >= 1000"));
        }
        if self.des_interval_min_s == 0 {
            v.push(Violation::new("des_interval_min_s", "must be positive"));
        }
        if self.des_interval_max_s == 0 {
            v.push(Violation::new("des_interval_max_s", "must be positive"));
        }
        if self.des_interval_min_s > self.des_interval_max_s {
            v.push(Violation::new(
                "des_interval_min_s",
                "must not exceed des_interval_max_s",
            ));
        }
        if self.des_start_phrase.split_whitespace().next().is_none() {
            v.push(Violation::new("des_start_phrase", "must not be blank"));
        }
        if self.des_end_phrase.split_whitespace().next().is_none() {
            v.push(Violation::new("des_end_phrase", "must not be blank"));
        }
        for (name, spec) in self.providers.iter() {
            match spec.kind {
                ProviderKind::Remote if spec.endpoint.is_none() => v.push(Violation::new(
                    format!("providers.{name}.endpoint"),
                    "required for remote providers",
                )),
                ProviderKind::Sidecar if spec.sidecar_path.is_none() => v.push(Violation::new(
                    format!("providers.{name}.sidecar_path"),
                    "required for sidecar providers",
                )),
                _ => {}
            }
        }
        v
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SessionStatus {
    Recording,
    Sealed,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SessionManifest {
    pub session_id: String,
    pub start_epoch_ms: u64,
    pub config: SessionConfig,
    pub segment_count: u32,
    pub genesis_attestation: String,
    pub status: SessionStatus,
    /// Response digest for the last sealed segment, which has no successor
    /// file to carry it.
    #[serde(default)]
    pub final_attestation: Option<String>,
    /// Indices of segments sealed without an attestation.
    #[serde(default)]
    pub gaps: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EegFrame {
    pub t_ms: u64,
    pub seq: u64,
    pub channels: Vec<i16>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GsrSample {
    pub t_ms: u64,
    pub seq: u64,
    /// Microsiemens.
    pub value: f64,
}

/// Points at a media file under the session directory and binds its bytes
/// into the segment through the digest.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MediaRef {
    pub t_ms: u64,
    pub seq: u64,
    pub path: String,
    pub digest: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub duration_ms: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Band {
    Theta,
    Alpha,
    BetaL,
    BetaH,
    Gamma,
}

impl Band {
    pub const ALL: [Band; BAND_COUNT] = [
        Band::Theta,
        Band::Alpha,
        Band::BetaL,
        Band::BetaH,
        Band::Gamma,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Band::Theta => "theta",
            Band::Alpha => "alpha",
            Band::BetaL => "betaL",
            Band::BetaH => "betaH",
            Band::Gamma => "gamma",
        }
    }
}

/// Band powers ordered theta, alpha, betaL, betaH, gamma.
pub type BandPowers = [f64; BAND_COUNT];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BandPowerRecord {
    pub t_ms: u64,
    pub per_channel: Vec<BandPowers>,
    pub avg: BandPowers,
}

impl BandPowerRecord {
    pub fn band(&self, band: Band) -> f64 {
        self.avg[band.index()]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CognitionRecord {
    pub t_ms: u64,
    pub engagement: f64,
    pub excitement: f64,
    pub stress: f64,
    pub relaxation: f64,
    pub interest: f64,
    pub focus: f64,
}

impl CognitionRecord {
    pub fn metrics(&self) -> [(&'static str, f64); 6] {
        [
            ("engagement", self.engagement),
            ("excitement", self.excitement),
            ("stress", self.stress),
            ("relaxation", self.relaxation),
            ("interest", self.interest),
            ("focus", self.focus),
        ]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EyeAction {
    #[default]
    Neutral,
    Blink,
    WinkLeft,
    WinkRight,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UpperFace {
    #[default]
    Neutral,
    RaiseBrow,
    FurrowBrow,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LowerFace {
    #[default]
    Neutral,
    Smile,
    Clench,
    Frown,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FacialExpressionRecord {
    pub t_ms: u64,
    pub eye_action: EyeAction,
    pub upper_face: UpperFace,
    pub lower_face: LowerFace,
    pub power: f64,
}

impl FacialExpressionRecord {
    pub fn neutral(t_ms: u64) -> Self {
        Self {
            t_ms,
            eye_action: EyeAction::Neutral,
            upper_face: UpperFace::Neutral,
            lower_face: LowerFace::Neutral,
            power: 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Speaker {
    Wearer,
    Other,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TranscriptRecord {
    pub t_start_ms: u64,
    pub t_end_ms: u64,
    pub speaker: Speaker,
    pub text: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SentimentLabel {
    Positive,
    Negative,
    Mixed,
    Neutral,
}

impl SentimentLabel {
    /// Enum order doubles as the argmax tie-break order.
    pub const ALL: [SentimentLabel; 4] = [
        SentimentLabel::Positive,
        SentimentLabel::Negative,
        SentimentLabel::Mixed,
        SentimentLabel::Neutral,
    ];
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SentimentScores {
    pub positive: f64,
    pub negative: f64,
    pub mixed: f64,
    pub neutral: f64,
}

impl SentimentScores {
    pub fn as_array(&self) -> [f64; 4] {
        [self.positive, self.negative, self.mixed, self.neutral]
    }

    pub fn argmax(&self) -> SentimentLabel {
        let scores = self.as_array();
        let mut best = 0;
        for i in 1..4 {
            if scores[i] > scores[best] {
                best = i;
            }
        }
        SentimentLabel::ALL[best]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SentimentRecord {
    pub t_ms: u64,
    pub label: SentimentLabel,
    pub scores: SentimentScores,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DesReport {
    pub t_start_ms: u64,
    pub t_end_ms: u64,
    pub text: String,
    pub terminated: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FaceBox {
    pub x: u32,
    pub y: u32,
    pub w: u32,
    pub h: u32,
}

impl FaceBox {
    pub fn new(x: u32, y: u32, w: u32, h: u32) -> Self {
        Self { x, y, w, h }
    }

    pub fn within(&self, width: u32, height: u32) -> bool {
        self.w > 0
            && self.h > 0
            && u64::from(self.x) + u64::from(self.w) <= u64::from(width)
            && u64::from(self.y) + u64::from(self.h) <= u64::from(height)
    }

    /// Intersects the box with the image; `None` when nothing is left.
    pub fn clip(&self, width: u32, height: u32) -> Option<FaceBox> {
        if self.x >= width || self.y >= height {
            return None;
        }
        let w = self.w.min(width - self.x);
        let h = self.h.min(height - self.y);
        (w > 0 && h > 0).then_some(FaceBox::new(self.x, self.y, w, h))
    }

    pub fn contains(&self, x: u32, y: u32) -> bool {
        x >= self.x
            && y >= self.y
            && u64::from(x) < u64::from(self.x) + u64::from(self.w)
            && u64::from(y) < u64::from(self.y) + u64::from(self.h)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ImageLabel {
    pub label: String,
    pub confidence: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ImageAnnotation {
    pub t_ms: u64,
    pub labels: Vec<ImageLabel>,
    pub texts: Vec<String>,
    pub face_boxes: Vec<FaceBox>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecordKind {
    Annotation,
    Audio,
    BandPower,
    Cognition,
    Des,
    Eeg,
    Expression,
    Gsr,
    Image,
    Sentiment,
    Transcript,
}

impl RecordKind {
    /// Alphabetical, so the derived `Ord` matches ordering by name.
    pub const ALL: [RecordKind; 11] = [
        RecordKind::Annotation,
        RecordKind::Audio,
        RecordKind::BandPower,
        RecordKind::Cognition,
        RecordKind::Des,
        RecordKind::Eeg,
        RecordKind::Expression,
        RecordKind::Gsr,
        RecordKind::Image,
        RecordKind::Sentiment,
        RecordKind::Transcript,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            RecordKind::Annotation => "annotation",
            RecordKind::Audio => "audio",
            RecordKind::BandPower => "band_power",
            RecordKind::Cognition => "cognition",
            RecordKind::Des => "des",
            RecordKind::Eeg => "eeg",
            RecordKind::Expression => "expression",
            RecordKind::Gsr => "gsr",
            RecordKind::Image => "image",
            RecordKind::Sentiment => "sentiment",
            RecordKind::Transcript => "transcript",
        }
    }

    /// Raw sensor records carry a client sequence number.
    pub fn is_raw(self) -> bool {
        matches!(
            self,
            RecordKind::Eeg | RecordKind::Gsr | RecordKind::Image | RecordKind::Audio
        )
    }

    /// Parses a comma-separated kind list; empty input or `all` selects every kind.
    pub fn parse_list(s: &str) -> Result<Vec<RecordKind>, String> {
        let s = s.trim();
        if s.is_empty() || s == "all" {
            return Ok(Self::ALL.to_vec());
        }
        s.split(',').map(|k| k.trim().parse()).collect()
    }
}

impl fmt::Display for RecordKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for RecordKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        RecordKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| format!("unknown record kind `{s}`"))
    }
}

/// Every record type that can appear in a segment, tagged by `kind`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Record {
    Annotation(ImageAnnotation),
    Audio(MediaRef),
    BandPower(BandPowerRecord),
    Cognition(CognitionRecord),
    Des(DesReport),
    Eeg(EegFrame),
    Expression(FacialExpressionRecord),
    Gsr(GsrSample),
    Image(MediaRef),
    Sentiment(SentimentRecord),
    Transcript(TranscriptRecord),
}

impl Record {
    pub fn kind(&self) -> RecordKind {
        match self {
            Record::Annotation(_) => RecordKind::Annotation,
            Record::Audio(_) => RecordKind::Audio,
            Record::BandPower(_) => RecordKind::BandPower,
            Record::Cognition(_) => RecordKind::Cognition,
            Record::Des(_) => RecordKind::Des,
            Record::Eeg(_) => RecordKind::Eeg,
            Record::Expression(_) => RecordKind::Expression,
            Record::Gsr(_) => RecordKind::Gsr,
            Record::Image(_) => RecordKind::Image,
            Record::Sentiment(_) => RecordKind::Sentiment,
            Record::Transcript(_) => RecordKind::Transcript,
        }
    }

    /// Timeline position. Spanning records (transcripts, DES reports) sort by start.
    pub fn t_ms(&self) -> u64 {
        match self {
            Record::Annotation(r) => r.t_ms,
            Record::Audio(r) | Record::Image(r) => r.t_ms,
            Record::BandPower(r) => r.t_ms,
            Record::Cognition(r) => r.t_ms,
            Record::Des(r) => r.t_start_ms,
            Record::Eeg(r) => r.t_ms,
            Record::Expression(r) => r.t_ms,
            Record::Gsr(r) => r.t_ms,
            Record::Sentiment(r) => r.t_ms,
            Record::Transcript(r) => r.t_start_ms,
        }
    }

    pub fn seq(&self) -> Option<u64> {
        match self {
            Record::Eeg(r) => Some(r.seq),
            Record::Gsr(r) => Some(r.seq),
            Record::Image(r) | Record::Audio(r) => Some(r.seq),
            _ => None,
        }
    }

    pub fn media(&self) -> Option<&MediaRef> {
        match self {
            Record::Image(m) | Record::Audio(m) => Some(m),
            _ => None,
        }
    }

    /// Ordering used inside segments and by timeline queries.
    pub fn sort_key(&self) -> (u64, RecordKind) {
        (self.t_ms(), self.kind())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SegmentFile {
    pub schema_version: String,
    pub session_id: String,
    pub segment_index: u32,
    pub prev_attestation: String,
    pub start_ms: u64,
    pub end_ms: u64,
    pub records: Vec<Record>,
}

impl SegmentFile {
    pub fn new(
        session_id: impl Into<String>,
        segment_index: u32,
        prev_attestation: impl Into<String>,
        start_ms: u64,
        end_ms: u64,
    ) -> Self {
        Self {
            schema_version: SCHEMA_VERSION.to_string(),
            session_id: session_id.into(),
            segment_index,
            prev_attestation: prev_attestation.into(),
            start_ms,
            end_ms,
            records: Vec::new(),
        }
    }

    pub fn sort_records(&mut self) {
        self.records.sort_by_key(Record::sort_key);
    }
}
