//! Network surface of the recorder: the HTTP/WebSocket ingest and
//! attestation service, blocking clients for it, and the `fprig` CLI.

pub mod cli;
pub mod client;
pub mod server;

pub use server::{router, AppState, BackgroundServer};
