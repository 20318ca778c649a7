//! Wire format of sensor envelopes and their acknowledgements.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::model::{EyeAction, LowerFace, UpperFace};
use crate::sim::{AudioTruth, ExpressionEvent, ImageTruth};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StreamKind {
    Audio,
    Eeg,
    Expression,
    Gsr,
    Image,
}

impl StreamKind {
    pub const ALL: [StreamKind; 5] = [
        StreamKind::Audio,
        StreamKind::Eeg,
        StreamKind::Expression,
        StreamKind::Gsr,
        StreamKind::Image,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            StreamKind::Audio => "audio",
            StreamKind::Eeg => "eeg",
            StreamKind::Expression => "expression",
            StreamKind::Gsr => "gsr",
            StreamKind::Image => "image",
        }
    }
}

impl fmt::Display for StreamKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Stream-specific body of an envelope. Media truth is optional and only
/// read by the reference provider.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "stream", rename_all = "snake_case")]
pub enum Payload {
    Audio {
        #[serde(with = "crate::b64")]
        data: Vec<u8>,
        duration_ms: u64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        truth: Option<AudioTruth>,
    },
    Eeg {
        channels: Vec<i16>,
    },
    Expression {
        #[serde(default)]
        eye_action: EyeAction,
        #[serde(default)]
        upper_face: UpperFace,
        #[serde(default)]
        lower_face: LowerFace,
        #[serde(default)]
        power: f64,
    },
    Gsr {
        value: f64,
    },
    Image {
        #[serde(with = "crate::b64")]
        data: Vec<u8>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        truth: Option<ImageTruth>,
    },
}

impl Payload {
    pub fn stream(&self) -> StreamKind {
        match self {
            Payload::Audio { .. } => StreamKind::Audio,
            Payload::Eeg { .. } => StreamKind::Eeg,
            Payload::Expression { .. } => StreamKind::Expression,
            Payload::Gsr { .. } => StreamKind::Gsr,
            Payload::Image { .. } => StreamKind::Image,
        }
    }

    pub fn expression(e: &ExpressionEvent) -> Self {
        Payload::Expression {
            eye_action: e.eye_action,
            upper_face: e.upper_face,
            lower_face: e.lower_face,
            power: e.power,
        }
    }
}

/// One sensor sample or media chunk. `seq` strictly increases per
/// (session, stream); `t_ms` is session-relative.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IngestEnvelope {
    pub session_id: String,
    pub t_ms: u64,
    pub seq: u64,
    #[serde(flatten)]
    pub payload: Payload,
}

impl IngestEnvelope {
    pub fn stream(&self) -> StreamKind {
        self.payload.stream()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AckStatus {
    Accepted,
    Duplicate,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Ack {
    pub stream: StreamKind,
    pub seq: u64,
    pub status: AckStatus,
}
