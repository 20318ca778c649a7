#![allow(dead_code)]

use std::path::Path;
use std::sync::Arc;

use fprig_core::chain::{AttestationStore, DerivedNonces};
use fprig_core::ingest::Engine;
use fprig_service::client::HttpProviderFactory;
use fprig_service::{AppState, BackgroundServer};

/// Deterministic nonces so independent runs produce identical chains.
pub const NONCE_KEY: [u8; 32] = [7; 32];

pub fn store_at(data_dir: &Path) -> Arc<AttestationStore> {
    std::fs::create_dir_all(data_dir).unwrap();
    Arc::new(
        AttestationStore::open(data_dir.join("attestations.jsonl"))
            .unwrap()
            .with_nonce_source(Box::new(DerivedNonces::new(NONCE_KEY))),
    )
}

pub fn state_at(data_dir: &Path) -> AppState {
    let store = store_at(data_dir);
    let engine = Engine::new(data_dir, store.clone()).with_provider_factory(Arc::new(HttpProviderFactory));
    AppState {
        engine: Arc::new(engine),
        attestations: store,
    }
}

pub fn server_at(data_dir: &Path) -> BackgroundServer {
    BackgroundServer::start(state_at(data_dir), None).unwrap()
}
