//! Derived-stream analysis: EEG band power, cognition metrics, GSR
//! normalization, privacy blurring, sentiment and the provider interface.

pub mod bands;
pub mod cognition;
pub mod faces;
pub mod providers;
pub mod sentiment;

use thiserror::Error;

use crate::media::MediaError;

pub use bands::{band_power, BandDefinition, BandPowerEstimator, BANDS, HOP_FRAMES, WINDOW_FRAMES};
pub use cognition::{arousal_proxy, cognition_metrics, normalize_gsr, squash};
pub use faces::{blur_faces, clip_boxes};
pub use providers::{
    AnalyzerProvider, AudioItem, ExpressionWindow, ImageItem, NoRemoteProviders, ProviderError,
    ProviderFactory, Providers, ReferenceProvider, SidecarProvider,
};
pub use sentiment::{scores_for_counts, sentiment, Lexicon};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum AnalysisError {
    #[error("band power needs exactly {expected} frames, got {got}")]
    Window { expected: usize, got: usize },
    #[error("EEG frame has {0} channels, expected 14")]
    Channels(usize),
    #[error("image format: {0}")]
    Format(#[from] MediaError),
    #[error("lexicon line {line}: expected `word<TAB>+1|-1`")]
    Lexicon { line: usize },
}
