//! Tamper-evidence for sealed sessions.
//!
//! Each sealed segment file is hashed and sent to an attestation service,
//! which mixes the digest with a secret 16-byte nonce and returns
//! `SHA-256(ascii_hex(file_digest) || nonce)`. That response is written into
//! the next segment as `prev_attestation`. Verification needs the stored
//! nonces, so it runs against the attestation store.

use std::collections::HashMap;
use std::fs::{self, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use parking_lot::Mutex;
use rand::rngs::OsRng;
use rand::RngCore;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::model::{is_hex_digest, GENESIS_ATTESTATION, PENDING_ATTESTATION};
use crate::segment::parse_segment;
use crate::store::{SessionDir, StoreError};

pub const NONCE_LEN: usize = 16;

/// Lowercase hex SHA-256 of the exact bytes.
pub fn hash_segment(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn response_digest(file_digest: &str, nonce: &[u8; NONCE_LEN]) -> String {
    let mut h = Sha256::new();
    h.update(file_digest.as_bytes());
    h.update(nonce);
    hex::encode(h.finalize())
}

pub fn now_epoch_ms() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}

mod hex_nonce {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(n: &[u8; 16], s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&hex::encode(n))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<[u8; 16], D::Error> {
        let s = String::deserialize(d)?;
        let v = hex::decode(s).map_err(serde::de::Error::custom)?;
        v.try_into()
            .map_err(|_| serde::de::Error::custom("nonce must be 16 bytes"))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Attestation {
    pub session_id: String,
    pub segment_index: u32,
    pub file_digest: String,
    #[serde(with = "hex_nonce")]
    pub nonce: [u8; NONCE_LEN],
    pub response_digest: String,
    pub received_epoch_ms: u64,
}

impl Attestation {
    pub fn is_consistent(&self) -> bool {
        self.response_digest == response_digest(&self.file_digest, &self.nonce)
    }

    pub fn public(&self) -> PublicAttestation {
        PublicAttestation {
            session_id: self.session_id.clone(),
            segment_index: self.segment_index,
            file_digest: self.file_digest.clone(),
            response_digest: self.response_digest.clone(),
            received_epoch_ms: self.received_epoch_ms,
        }
    }
}

/// What clients may see: everything but the nonce.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PublicAttestation {
    pub session_id: String,
    pub segment_index: u32,
    pub file_digest: String,
    pub response_digest: String,
    pub received_epoch_ms: u64,
}

#[derive(Debug, Error)]
pub enum AttestError {
    #[error("segment {segment_index} of `{session_id}` already attested with a different digest")]
    Conflict { session_id: String, segment_index: u32 },
    #[error("invalid attestation request: {0}")]
    Validation(String),
    #[error("attestation store I/O: {0}")]
    Io(#[from] std::io::Error),
    #[error("attestation service unavailable: {0}")]
    Unavailable(String),
}

/// Anything that can attest a sealed segment digest.
pub trait Attester: Send + Sync {
    fn attest(&self, session_id: &str, segment_index: u32, file_digest: &str) -> Result<String, AttestError>;
}

/// Server-side view used by the verifier.
pub trait AttestationLookup {
    fn lookup(&self, session_id: &str, segment_index: u32) -> Option<Attestation>;
}

pub trait NonceSource: Send + Sync {
    fn nonce(&self, session_id: &str, segment_index: u32) -> [u8; NONCE_LEN];
}

/// Fresh nonces from the operating system CSPRNG.
pub struct OsNonces;

impl NonceSource for OsNonces {
    fn nonce(&self, _: &str, _: u32) -> [u8; NONCE_LEN] {
        let mut n = [0u8; NONCE_LEN];
        OsRng.fill_bytes(&mut n);
        n
    }
}

/// Nonces derived from a secret key and the (session, index) pair. Makes
/// reruns reproducible; for tests and replay fixtures only.
pub struct DerivedNonces {
    key: [u8; 32],
}

impl DerivedNonces {
    pub fn new(key: [u8; 32]) -> Self {
        Self { key }
    }
}

impl NonceSource for DerivedNonces {
    fn nonce(&self, session_id: &str, segment_index: u32) -> [u8; NONCE_LEN] {
        let mut h = Sha256::new();
        h.update(self.key);
        h.update((session_id.len() as u64).to_le_bytes());
        h.update(session_id.as_bytes());
        h.update(segment_index.to_le_bytes());
        let d = h.finalize();
        d[..NONCE_LEN].try_into().expect("digest longer than nonce")
    }
}

/// Append-only attestation store, one JSON line per attestation.
pub struct AttestationStore {
    path: Option<PathBuf>,
    entries: Mutex<HashMap<(String, u32), Attestation>>,
    nonces: Box<dyn NonceSource>,
}

impl AttestationStore {
    pub fn in_memory() -> Self {
        Self {
            path: None,
            entries: Mutex::new(HashMap::new()),
            nonces: Box::new(OsNonces),
        }
    }

    pub fn open(path: impl AsRef<Path>) -> Result<Self, AttestError> {
        let path = path.as_ref().to_path_buf();
        let mut entries = HashMap::new();
        match fs::File::open(&path) {
            Ok(f) => {
                for (n, line) in BufReader::new(f).lines().enumerate() {
                    let line = line?;
                    if line.trim().is_empty() {
                        continue;
                    }
                    let a: Attestation = serde_json::from_str(&line).map_err(|e| {
                        AttestError::Validation(format!("{}:{}: {e}", path.display(), n + 1))
                    })?;
                    entries.insert((a.session_id.clone(), a.segment_index), a);
                }
            }
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
                if let Some(parent) = path.parent() {
                    fs::create_dir_all(parent)?;
                }
            }
            Err(e) => return Err(e.into()),
        }
        Ok(Self {
            path: Some(path),
            entries: Mutex::new(entries),
            nonces: Box::new(OsNonces),
        })
    }

    pub fn with_nonce_source(mut self, nonces: Box<dyn NonceSource>) -> Self {
        self.nonces = nonces;
        self
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    pub fn get(&self, session_id: &str, segment_index: u32) -> Option<Attestation> {
        self.entries
            .lock()
            .get(&(session_id.to_string(), segment_index))
            .cloned()
    }

    pub fn list(&self, session_id: &str) -> Vec<Attestation> {
        let mut v: Vec<_> = self
            .entries
            .lock()
            .values()
            .filter(|a| a.session_id == session_id)
            .cloned()
            .collect();
        v.sort_by_key(|a| a.segment_index);
        v
    }

    /// Attests a digest. Identical replays return the stored response; a
    /// different digest for an attested index is a conflict.
    pub fn attest_record(
        &self,
        session_id: &str,
        segment_index: u32,
        file_digest: &str,
    ) -> Result<Attestation, AttestError> {
        if !is_hex_digest(file_digest) {
            return Err(AttestError::Validation(
                "file_digest must be 64 lowercase hex chars".into(),
            ));
        }
        if session_id.is_empty() {
            return Err(AttestError::Validation("session_id must not be empty".into()));
        }
        let mut entries = self.entries.lock();
        let key = (session_id.to_string(), segment_index);
        if let Some(existing) = entries.get(&key) {
            return if existing.file_digest == file_digest {
                Ok(existing.clone())
            } else {
                Err(AttestError::Conflict {
                    session_id: session_id.to_string(),
                    segment_index,
                })
            };
        }
        let nonce = self.nonces.nonce(session_id, segment_index);
        let a = Attestation {
            session_id: session_id.to_string(),
            segment_index,
            file_digest: file_digest.to_string(),
            nonce,
            response_digest: response_digest(file_digest, &nonce),
            received_epoch_ms: now_epoch_ms(),
        };
        if let Some(path) = &self.path {
            let mut line = serde_json::to_vec(&a).expect("attestation serializes");
            line.push(b'\n');
            let mut f = OpenOptions::new().create(true).append(true).open(path)?;
            f.write_all(&line)?;
            f.sync_data()?;
        }
        entries.insert(key, a.clone());
        Ok(a)
    }
}

impl Attester for AttestationStore {
    fn attest(&self, session_id: &str, segment_index: u32, file_digest: &str) -> Result<String, AttestError> {
        self.attest_record(session_id, segment_index, file_digest)
            .map(|a| a.response_digest)
    }
}

impl AttestationLookup for AttestationStore {
    fn lookup(&self, session_id: &str, segment_index: u32) -> Option<Attestation> {
        self.get(session_id, segment_index)
    }
}

impl AttestationLookup for [Attestation] {
    fn lookup(&self, session_id: &str, segment_index: u32) -> Option<Attestation> {
        self.iter()
            .find(|a| a.session_id == session_id && a.segment_index == segment_index)
            .cloned()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Intact,
    Tampered,
    Gapped,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SegmentStatus {
    Ok,
    Tampered,
    Gapped,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SegmentCheck {
    pub index: u32,
    pub file_digest: Option<String>,
    pub status: SegmentStatus,
    pub problems: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChainReport {
    pub session_id: String,
    pub verdict: Verdict,
    pub first_bad_index: Option<u32>,
    pub segments: Vec<SegmentCheck>,
}

impl ChainReport {
    pub fn is_intact(&self) -> bool {
        self.verdict == Verdict::Intact
    }
}

struct Checker {
    index: u32,
    tampered: Vec<String>,
    gaps: Vec<String>,
}

impl Checker {
    fn bad(&mut self, msg: impl Into<String>) {
        self.tampered.push(msg.into());
    }

    fn gap(&mut self, msg: impl Into<String>) {
        self.gaps.push(msg.into());
    }

    fn finish(self, file_digest: Option<String>) -> SegmentCheck {
        let status = if !self.tampered.is_empty() {
            SegmentStatus::Tampered
        } else if !self.gaps.is_empty() {
            SegmentStatus::Gapped
        } else {
            SegmentStatus::Ok
        };
        let mut problems = self.tampered;
        problems.extend(self.gaps);
        SegmentCheck {
            index: self.index,
            file_digest,
            status,
            problems,
        }
    }
}

/// Checks every sealed segment of a session against the attestation store.
///
/// Per segment: the file digest matches its attestation, the attestation's
/// response recomputes from the stored nonce, the successor (or manifest, for
/// the last segment) carries that response, segment 0 carries the genesis
/// value, and every referenced media file still hashes to its digest.
pub fn verify_chain(dir: &SessionDir, store: &dyn AttestationLookup) -> Result<ChainReport, StoreError> {
    let manifest = dir.read_manifest()?;
    let session_id = manifest.session_id.clone();
    let count = manifest.segment_count;
    let on_disk = dir.segment_files_on_disk();
    let mut checks = Vec::with_capacity(count as usize);
    // Expected prev_attestation for the next segment, when known.
    let mut expected_prev: Option<String> = Some(GENESIS_ATTESTATION.to_string());

    for i in 0..count {
        let mut c = Checker {
            index: i,
            tampered: Vec::new(),
            gaps: Vec::new(),
        };
        let bytes = match dir.read_segment_bytes(i) {
            Ok(b) => b,
            Err(_) => {
                c.bad("segment file missing");
                checks.push(c.finish(None));
                expected_prev = None;
                continue;
            }
        };
        let digest = hash_segment(&bytes);
        let attestation = store.lookup(&session_id, i);
        match &attestation {
            None => c.gap("no attestation on record"),
            Some(a) => {
                if a.file_digest != digest {
                    c.bad("file digest differs from attested digest");
                }
                if !a.is_consistent() {
                    c.bad("stored response does not recompute from nonce");
                }
            }
        }
        match parse_segment(&bytes) {
            Err(e) => c.bad(format!("segment does not parse: {e}")),
            Ok(seg) => {
                if seg.segment_index != i || seg.session_id != session_id {
                    c.bad("segment index or session id does not match its position");
                }
                if seg.prev_attestation == PENDING_ATTESTATION && i > 0 {
                    c.gap("previous segment was sealed without attestation");
                } else {
                    match &expected_prev {
                        Some(exp) if *exp != seg.prev_attestation => {
                            c.bad("prev_attestation does not match the chain")
                        }
                        None if i > 0 => c.gap("cannot check prev_attestation"),
                        _ => {}
                    }
                }
                for m in seg.records.iter().filter_map(|r| r.media()) {
                    let ok = dir
                        .media_path(&m.path)
                        .ok()
                        .and_then(|p| fs::read(p).ok())
                        .is_some_and(|b| hash_segment(&b) == m.digest);
                    if !ok {
                        c.bad(format!("media {} missing or altered", m.path));
                    }
                }
            }
        }
        expected_prev = attestation.map(|a| response_digest(&a.file_digest, &a.nonce));
        if i + 1 == count {
            if let (Some(exp), Some(fin)) = (&expected_prev, &manifest.final_attestation) {
                if exp != fin {
                    c.bad("manifest final_attestation does not match the last segment");
                }
            } else if manifest.final_attestation.is_none()
                && manifest.status == crate::model::SessionStatus::Sealed
            {
                c.gap("manifest carries no final attestation");
            }
        }
        checks.push(c.finish(Some(digest)));
    }
    if on_disk > count {
        checks.push(SegmentCheck {
            index: count,
            file_digest: None,
            status: SegmentStatus::Tampered,
            problems: vec!["segment file beyond manifest segment_count".into()],
        });
    }

    let first_bad = checks
        .iter()
        .find(|c| c.status == SegmentStatus::Tampered)
        .map(|c| c.index);
    let verdict = if first_bad.is_some() {
        Verdict::Tampered
    } else if !manifest.gaps.is_empty() || checks.iter().any(|c| c.status == SegmentStatus::Gapped) {
        Verdict::Gapped
    } else {
        Verdict::Intact
    };
    Ok(ChainReport {
        session_id,
        verdict,
        first_bad_index: first_bad,
        segments: checks,
    })
}
