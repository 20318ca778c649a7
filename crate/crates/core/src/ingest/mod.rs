//! Network-facing ingestion: envelope wire types and the session engine.

mod engine;
mod envelope;
mod pipeline;

pub use engine::{Engine, IngestError, LiveBody, LiveEvent, SealedSegment};
pub use envelope::{Ack, AckStatus, IngestEnvelope, Payload, StreamKind};
pub use pipeline::{Pipeline, GSR_HISTORY_MS};
