//! Core of a first-person multi-sensor recorder: the session data model,
//! a sensor simulator, the ingest engine with its analyzers, the
//! tamper-evidence chain, experience-sampling extraction and the arousal
//! experiment harness.

pub mod analysis;
mod b64;
pub mod chain;
pub mod des;
pub mod experiment;
pub mod ingest;
pub mod media;
pub mod model;
pub mod segment;
pub mod sim;
pub mod store;
pub mod timeline;
