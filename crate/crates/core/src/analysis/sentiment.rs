//! Lexicon-counting reference sentiment analyzer.

use std::collections::HashMap;

use crate::model::{SentimentLabel, SentimentRecord, SentimentScores};

use super::AnalysisError;

const BUNDLED_LEXICON: &str = include_str!("lexicon.tsv");

#[derive(Debug, Clone, Default)]
pub struct Lexicon {
    valence: HashMap<String, i8>,
}

impl Lexicon {
    /// Parses `word<TAB>+1|-1` lines. Blank lines and `#` comments are skipped.
    pub fn parse(text: &str) -> Result<Self, AnalysisError> {
        let mut valence = HashMap::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim_end_matches('\r');
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let bad = || AnalysisError::Lexicon { line: n + 1 };
            let (word, score) = line.split_once('\t').ok_or_else(bad)?;
            let score = match score.trim() {
                "+1" | "1" => 1,
                "-1" => -1,
                _ => return Err(bad()),
            };
            let word = word.trim().to_lowercase();
            if word.is_empty() {
                return Err(bad());
            }
            valence.insert(word, score);
        }
        Ok(Self { valence })
    }

    pub fn bundled() -> Self {
        Self::parse(BUNDLED_LEXICON).expect("bundled lexicon is well-formed")
    }

    pub fn valence(&self, word: &str) -> Option<i8> {
        self.valence.get(word).copied()
    }

    pub fn len(&self) -> usize {
        self.valence.len()
    }

    pub fn is_empty(&self) -> bool {
        self.valence.is_empty()
    }

    /// Positive and negative token counts.
    pub fn count(&self, text: &str) -> (u32, u32) {
        let mut p = 0;
        let mut n = 0;
        for tok in text
            .split(|c: char| !(c.is_alphanumeric() || c == '\''))
            .filter(|t| !t.is_empty())
        {
            match self.valence(&tok.to_lowercase()) {
                Some(1) => p += 1,
                Some(-1) => n += 1,
                _ => {}
            }
        }
        (p, n)
    }

    pub fn sentiment(&self, t_ms: u64, text: &str) -> SentimentRecord {
        let (p, n) = self.count(text);
        let (label, scores) = scores_for_counts(p, n);
        SentimentRecord { t_ms, label, scores }
    }
}

/// Label and scores from lexicon hit counts.
///
/// Mixed text puts half the mass on `mixed` and splits the rest by count, so
/// `mixed` stays strictly maximal.
pub fn scores_for_counts(p: u32, n: u32) -> (SentimentLabel, SentimentScores) {
    let zero = SentimentScores { positive: 0.0, negative: 0.0, mixed: 0.0, neutral: 0.0 };
    let total = f64::from(p + n);
    match (p, n) {
        (0, 0) => (SentimentLabel::Neutral, SentimentScores { neutral: 1.0, ..zero }),
        (p, n) if p >= 1 && n >= 1 => (
            SentimentLabel::Mixed,
            SentimentScores {
                positive: 0.5 * f64::from(p) / total,
                negative: 0.5 * f64::from(n) / total,
                mixed: 0.5,
                neutral: 0.0,
            },
        ),
        (p, 0) if p > 0 => (SentimentLabel::Positive, SentimentScores { positive: 1.0, ..zero }),
        _ => (SentimentLabel::Negative, SentimentScores { negative: 1.0, ..zero }),
    }
}

pub fn sentiment(t_ms: u64, text: &str) -> SentimentRecord {
    Lexicon::bundled().sentiment(t_ms, text)
}
