//! Descriptive experience sampling: random tone prompts and extraction of
//! spoken reports delimited by key phrases.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::model::{DesReport, SessionConfig, Speaker, TranscriptRecord};

const SCHEDULE_STREAM: u64 = 0x4445_535f_746f_6e65;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToneSchedule {
    pub session_id: String,
    pub times_ms: Vec<u64>,
    pub min_interval_s: u64,
    pub max_interval_s: u64,
    pub seed: u64,
}

/// First tone at U[min, max] seconds, each following gap U[min, max]; tones
/// at or past `duration_ms` are dropped.
pub fn schedule_tones(config: &SessionConfig, duration_ms: u64) -> ToneSchedule {
    let mut rng = ChaCha8Rng::seed_from_u64(config.rng_seed);
    rng.set_stream(SCHEDULE_STREAM);
    let lo = config.des_interval_min_s.saturating_mul(1000);
    let hi = config.des_interval_max_s.saturating_mul(1000).max(lo);
    let mut times = Vec::new();
    if lo > 0 {
        let mut t = rng.gen_range(lo..=hi);
        while t < duration_ms {
            times.push(t);
            t += rng.gen_range(lo..=hi);
        }
    }
    ToneSchedule {
        session_id: config.session_id.clone(),
        times_ms: times,
        min_interval_s: config.des_interval_min_s,
        max_interval_s: config.des_interval_max_s,
        seed: config.rng_seed,
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
struct Token {
    raw: String,
    norm: String,
    t_start_ms: u64,
    t_end_ms: u64,
}

fn normalize(word: &str) -> String {
    word.trim_matches(|c: char| !c.is_alphanumeric()).to_lowercase()
}

fn phrase_tokens(phrase: &str) -> Vec<String> {
    phrase.split_whitespace().map(normalize).filter(|w| !w.is_empty()).collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
struct OpenReport {
    t_start_ms: u64,
    body: Vec<Token>,
}

/// Incremental report extractor over the wearer's transcript stream.
///
/// Matching is case-insensitive, ignores surrounding punctuation, and lets
/// a phrase span transcript records. A start phrase inside an open report is
/// literal text; an end phrase with no open report is ignored.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DesExtractor {
    start: Vec<String>,
    end: Vec<String>,
    pending: Vec<Token>,
    open: Option<OpenReport>,
}

impl Default for DesExtractor {
    fn default() -> Self {
        Self::new(crate::model::DEFAULT_START_PHRASE, crate::model::DEFAULT_END_PHRASE)
    }
}

fn find(tokens: &[Token], phrase: &[String]) -> Option<usize> {
    if phrase.is_empty() || tokens.len() < phrase.len() {
        return None;
    }
    (0..=tokens.len() - phrase.len())
        .find(|&i| tokens[i..i + phrase.len()].iter().zip(phrase).all(|(t, p)| t.norm == *p))
}

impl DesExtractor {
    pub fn new(start_phrase: &str, end_phrase: &str) -> Self {
        Self {
            start: phrase_tokens(start_phrase),
            end: phrase_tokens(end_phrase),
            pending: Vec::new(),
            open: None,
        }
    }

    pub fn is_open(&self) -> bool {
        self.open.is_some()
    }

    /// Feeds one transcript record; non-wearer speech is skipped.
    pub fn feed(&mut self, rec: &TranscriptRecord) -> Vec<DesReport> {
        if rec.speaker != Speaker::Wearer {
            return Vec::new();
        }
        self.pending.extend(rec.text.split_whitespace().map(|w| Token {
            raw: w.to_string(),
            norm: normalize(w),
            t_start_ms: rec.t_start_ms,
            t_end_ms: rec.t_end_ms,
        }));
        let mut out = Vec::new();
        loop {
            match self.open.take() {
                None => match find(&self.pending, &self.start) {
                    Some(i) => {
                        let t_start_ms = self.pending[i].t_start_ms;
                        self.pending.drain(..i + self.start.len());
                        self.open = Some(OpenReport { t_start_ms, body: Vec::new() });
                    }
                    None => {
                        // Keep only a tail that could still begin the start phrase.
                        let keep = self.start.len().saturating_sub(1).min(self.pending.len());
                        self.pending.drain(..self.pending.len() - keep);
                        break;
                    }
                },
                Some(mut open) => match find(&self.pending, &self.end) {
                    Some(i) => {
                        let t_end_ms = self.pending[i + self.end.len() - 1].t_end_ms;
                        open.body.extend(self.pending.drain(..i));
                        self.pending.drain(..self.end.len());
                        out.push(Self::report(open, t_end_ms, true));
                    }
                    None => {
                        let keep = self.end.len().saturating_sub(1).min(self.pending.len());
                        let n = self.pending.len() - keep;
                        open.body.extend(self.pending.drain(..n));
                        self.open = Some(open);
                        break;
                    }
                },
            }
        }
        out
    }

    /// Closes the stream. A report still open becomes unterminated, holding
    /// text through the end of the transcript.
    pub fn finish(&mut self) -> Option<DesReport> {
        let mut open = self.open.take()?;
        open.body.append(&mut self.pending);
        let t_end_ms = open.body.last().map_or(open.t_start_ms, |t| t.t_end_ms).max(open.t_start_ms);
        Some(Self::report(open, t_end_ms, false))
    }

    fn report(open: OpenReport, t_end_ms: u64, terminated: bool) -> DesReport {
        DesReport {
            t_start_ms: open.t_start_ms,
            t_end_ms: t_end_ms.max(open.t_start_ms),
            text: open.body.iter().map(|t| t.raw.as_str()).collect::<Vec<_>>().join(" "),
            terminated,
        }
    }
}

/// Extracts every report from a time-ordered wearer transcript.
pub fn extract_reports(transcripts: &[TranscriptRecord]) -> Vec<DesReport> {
    extract_reports_with(transcripts, &mut DesExtractor::default())
}

pub fn extract_reports_with(
    transcripts: &[TranscriptRecord],
    extractor: &mut DesExtractor,
) -> Vec<DesReport> {
    let mut out: Vec<DesReport> = transcripts.iter().flat_map(|t| extractor.feed(t)).collect();
    out.extend(extractor.finish());
    out
}
