//! Canonical JSON encoding and validation of segment files.
//!
//! Canonical form: UTF-8, object keys sorted, no insignificant whitespace,
//! floats in shortest round-trip form. The integrity chain hashes these
//! exact bytes.

use serde::Serialize;
use thiserror::Error;

use crate::model::{
    is_hex_digest, Record, SegmentFile, Violation, BAND_COUNT, EEG_CHANNELS,
    GENESIS_ATTESTATION, IMAGE_HEIGHT, IMAGE_WIDTH, PENDING_ATTESTATION, SCHEMA_VERSION,
};

#[derive(Debug, Error)]
pub enum SegmentError {
    #[error("malformed JSON at byte {offset}: {message}")]
    Parse { offset: usize, message: String },
    #[error("schema error on `{field}`: {message}")]
    Schema { field: String, message: String },
    #[error("invalid segment: {}", join_violations(.0))]
    Invalid(Vec<Violation>),
}

fn join_violations(v: &[Violation]) -> String {
    v.iter().map(ToString::to_string).collect::<Vec<_>>().join("; ")
}

/// Serializes any value as canonical JSON bytes.
///
/// Goes through `serde_json::Value`, whose object map is ordered by key.
pub fn to_canonical_json<T: Serialize>(value: &T) -> serde_json::Result<Vec<u8>> {
    let v = serde_json::to_value(value)?;
    serde_json::to_vec(&v)
}

pub fn serialize_segment(segment: &SegmentFile) -> Result<Vec<u8>, SegmentError> {
    let violations = validate_segment(segment);
    if !violations.is_empty() {
        return Err(SegmentError::Invalid(violations));
    }
    to_canonical_json(segment).map_err(|e| SegmentError::Schema {
        field: "records".into(),
        message: e.to_string(),
    })
}

pub fn parse_segment(bytes: &[u8]) -> Result<SegmentFile, SegmentError> {
    let segment: SegmentFile = serde_json::from_slice(bytes).map_err(|e| json_error(bytes, &e))?;
    let violations = validate_segment(&segment);
    if !violations.is_empty() {
        return Err(SegmentError::Invalid(violations));
    }
    Ok(segment)
}

/// Maps a serde_json error onto a byte offset (syntax) or a field (schema).
pub(crate) fn json_error(bytes: &[u8], e: &serde_json::Error) -> SegmentError {
    use serde_json::error::Category;
    match e.classify() {
        Category::Syntax | Category::Eof | Category::Io => SegmentError::Parse {
            offset: byte_offset(bytes, e.line(), e.column()),
            message: e.to_string(),
        },
        Category::Data => {
            let message = e.to_string();
            let field = message
                .split('`')
                .nth(1)
                .map(str::to_string)
                .unwrap_or_else(|| "<root>".to_string());
            SegmentError::Schema { field, message }
        }
    }
}

fn byte_offset(bytes: &[u8], line: usize, column: usize) -> usize {
    if line == 0 {
        return 0;
    }
    let mut current = 1;
    let mut line_start = 0;
    for (i, b) in bytes.iter().enumerate() {
        if current == line {
            break;
        }
        if *b == b'\n' {
            current += 1;
            line_start = i + 1;
        }
    }
    (line_start + column.saturating_sub(1)).min(bytes.len())
}

fn unit(x: f64) -> bool {
    x.is_finite() && (0.0..=1.0).contains(&x)
}

pub fn validate_segment(segment: &SegmentFile) -> Vec<Violation> {
    let mut v = Vec::new();
    if segment.schema_version != SCHEMA_VERSION {
        v.push(Violation::new("schema_version", "expected \"1.0\""));
    }
    if segment.session_id.is_empty() {
        v.push(Violation::new("session_id", "must not be empty"));
    }
    let prev = segment.prev_attestation.as_str();
    if segment.segment_index == 0 {
        if prev != GENESIS_ATTESTATION {
            v.push(Violation::new(
                "prev_attestation",
                "segment 0 must carry the genesis attestation",
            ));
        }
    } else if prev != PENDING_ATTESTATION && !is_hex_digest(prev) {
        v.push(Violation::new(
            "prev_attestation",
            "expected 64 lowercase hex chars or PENDING",
        ));
    }
    if segment.start_ms > segment.end_ms {
        v.push(Violation::new("end_ms", "must not precede start_ms"));
    }

    let mut last_t = None;
    for (i, rec) in segment.records.iter().enumerate() {
        let t = rec.t_ms();
        let at = |f: &str| format!("records[{i}].{f}");
        if let Some(prev) = last_t {
            if t < prev {
                v.push(Violation::new(at("t_ms"), "records out of time order"));
            }
        }
        last_t = Some(t);
        if t >= segment.end_ms {
            v.push(Violation::new(at("t_ms"), "must be before segment end_ms"));
        }
        // Derived records keep their source timestamp and may land after the
        // segment holding their source, so only raw samples are bounded below.
        if rec.kind().is_raw() && t < segment.start_ms {
            v.push(Violation::new(at("t_ms"), "must not precede segment start_ms"));
        }
        validate_record(rec, &at, &mut v);
    }
    v
}

fn validate_record(rec: &Record, at: &dyn Fn(&str) -> String, v: &mut Vec<Violation>) {
    match rec {
        Record::Eeg(f) => {
            if f.channels.len() != EEG_CHANNELS {
                v.push(Violation::new(at("channels"), "expected 14"));
            }
        }
        Record::Gsr(g) => {
            if !(g.value.is_finite() && g.value >= 0.0) {
                v.push(Violation::new(at("value"), "must be a non-negative number"));
            }
        }
        Record::Image(m) | Record::Audio(m) => {
            if !is_hex_digest(&m.digest) {
                v.push(Violation::new(at("digest"), "expected 64 lowercase hex chars"));
            }
            if !media_path_ok(&m.path) {
                v.push(Violation::new(at("path"), "must be a relative path under media/"));
            }
            match (rec, m.duration_ms) {
                (Record::Audio(_), None) => {
                    v.push(Violation::new(at("duration_ms"), "required for audio"))
                }
                (Record::Image(_), Some(_)) => {
                    v.push(Violation::new(at("duration_ms"), "only allowed for audio"))
                }
                _ => {}
            }
        }
        Record::BandPower(b) => {
            if b.per_channel.len() != EEG_CHANNELS {
                v.push(Violation::new(at("per_channel"), "expected 14"));
            }
            let all_ok = b
                .per_channel
                .iter()
                .flatten()
                .chain(b.avg.iter())
                .all(|x| x.is_finite() && *x >= 0.0);
            if !all_ok {
                v.push(Violation::new(at("per_channel"), "powers must be non-negative"));
            } else if !b.per_channel.is_empty() {
                for band in 0..BAND_COUNT {
                    let mean = b.per_channel.iter().map(|c| c[band]).sum::<f64>()
                        / b.per_channel.len() as f64;
                    let tol = 1e-9 * mean.abs().max(b.avg[band].abs()).max(f64::MIN_POSITIVE);
                    if (mean - b.avg[band]).abs() > tol {
                        v.push(Violation::new(
                            at(&format!("avg[{band}]")),
                            "must equal channel mean",
                        ));
                    }
                }
            }
        }
        Record::Cognition(c) => {
            for (name, x) in c.metrics() {
                if !unit(x) {
                    v.push(Violation::new(at(name), "must be in [0,1]"));
                }
            }
        }
        Record::Expression(e) => {
            if !unit(e.power) {
                v.push(Violation::new(at("power"), "must be in [0,1]"));
            }
        }
        Record::Transcript(t) => {
            if t.t_start_ms > t.t_end_ms {
                v.push(Violation::new(at("t_end_ms"), "must not precede t_start_ms"));
            }
        }
        Record::Sentiment(s) => {
            let scores = s.scores.as_array();
            if !scores.iter().all(|x| unit(*x)) {
                v.push(Violation::new(at("scores"), "each score must be in [0,1]"));
            } else if (scores.iter().sum::<f64>() - 1.0).abs() > 1e-6 {
                v.push(Violation::new(at("scores"), "must sum to 1"));
            } else if s.scores.argmax() != s.label {
                v.push(Violation::new(at("label"), "must equal argmax of scores"));
            }
        }
        Record::Des(d) => {
            if d.t_start_ms > d.t_end_ms {
                v.push(Violation::new(at("t_end_ms"), "must not precede t_start_ms"));
            }
        }
        Record::Annotation(a) => {
            if !a.labels.iter().all(|l| unit(l.confidence)) {
                v.push(Violation::new(at("labels"), "confidence must be in [0,1]"));
            }
            if !a.face_boxes.iter().all(|b| b.within(IMAGE_WIDTH, IMAGE_HEIGHT)) {
                v.push(Violation::new(at("face_boxes"), "box outside image bounds"));
            }
        }
    }
}

pub(crate) fn media_path_ok(path: &str) -> bool {
    path.starts_with("media/")
        && !path.contains('\\')
        && path.split('/').all(|c| !c.is_empty() && c != "." && c != "..")
}
