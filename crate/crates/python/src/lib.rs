//! Python bindings. Structured values cross the boundary as plain
//! dicts and lists with the same shape as the JSON wire and file formats.

use std::path::PathBuf;
use std::sync::Arc;

use fprig_core::analysis::{self, AnalysisError};
use fprig_core::chain::{hash_segment, verify_chain, AttestationStore};
use fprig_core::des;
use fprig_core::experiment::{self, CorpusMode, ExperimentError, RateConstants};
use fprig_core::ingest::{Engine, IngestEnvelope, IngestError};
use fprig_core::model::{
    BandPowerRecord, CognitionRecord, EegFrame, FaceBox, GsrSample, RecordKind, SessionConfig,
    TranscriptRecord, BAND_COUNT, EEG_CHANNELS,
};
use fprig_core::sim::{run_scenario, RunError, Scenario};
use fprig_core::store::{SessionDir, StoreError};
use pyo3::create_exception;
use pyo3::exceptions::PyException;
use pyo3::prelude::*;
use pyo3::types::PyBytes;
use serde::de::DeserializeOwned;
use serde::Serialize;

create_exception!(fprig, FprigError, PyException);
create_exception!(fprig, NotFoundError, FprigError);
create_exception!(fprig, ValidationError, FprigError);

fn ingest_err(e: IngestError) -> PyErr {
    match e {
        IngestError::NotFound(_) | IngestError::Store(StoreError::NotFound(_)) => NotFoundError::new_err(e.to_string()),
        IngestError::Validation(_) | IngestError::Conflict(_) | IngestError::Ordering { .. } | IngestError::Sealed(_) => {
            ValidationError::new_err(e.to_string())
        }
        other => FprigError::new_err(other.to_string()),
    }
}

fn store_err(e: StoreError) -> PyErr {
    match e {
        StoreError::NotFound(_) => NotFoundError::new_err(e.to_string()),
        other => FprigError::new_err(other.to_string()),
    }
}

fn analysis_err(e: AnalysisError) -> PyErr {
    ValidationError::new_err(e.to_string())
}

fn experiment_err(e: ExperimentError) -> PyErr {
    match e {
        ExperimentError::Validation(_) => ValidationError::new_err(e.to_string()),
        other => FprigError::new_err(other.to_string()),
    }
}

fn run_err(e: RunError) -> PyErr {
    match e {
        RunError::Sim(e) => ValidationError::new_err(e.to_string()),
        RunError::Sink(e) => FprigError::new_err(e.to_string()),
    }
}

/// Serializes through JSON into native Python objects.
fn to_py<T: Serialize>(py: Python<'_>, value: &T) -> PyResult<Py<PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| FprigError::new_err(e.to_string()))?;
    Ok(py.import("json")?.call_method1("loads", (text,))?.unbind())
}

fn from_py<T: DeserializeOwned>(obj: &Bound<'_, PyAny>) -> PyResult<T> {
    let text: String = obj.py().import("json")?.call_method1("dumps", (obj,))?.extract()?;
    serde_json::from_str(&text).map_err(|e| ValidationError::new_err(e.to_string()))
}

/// Recording days for a corpus of `corpus_gb`; `mode` is "full" or "text".
#[pyfunction]
#[pyo3(signature = (corpus_gb, mode = "full"))]
fn estimate_recording_days(py: Python<'_>, corpus_gb: f64, mode: &str) -> PyResult<Py<PyAny>> {
    let mode: CorpusMode = mode.parse().map_err(|e: String| ValidationError::new_err(e))?;
    let est = experiment::estimate_recording_days(corpus_gb, mode, &RateConstants::default()).map_err(experiment_err)?;
    to_py(py, &est)
}

/// Arousal proxy in [-2.5, 2.5] from excitement and stress in [0, 1].
#[pyfunction]
fn arousal_proxy(excitement: f64, stress: f64) -> f64 {
    analysis::arousal_proxy(&CognitionRecord {
        t_ms: 0,
        engagement: 0.0,
        excitement,
        stress,
        relaxation: 0.0,
        interest: 0.0,
        focus: 0.0,
    })
}

/// Cognition metrics from channel-averaged band powers
/// `[theta, alpha, betaL, betaH, gamma]` and normalized GSR `g`.
#[pyfunction]
fn cognition_metrics(py: Python<'_>, bands: [f64; BAND_COUNT], g: f64) -> PyResult<Py<PyAny>> {
    let bp = BandPowerRecord {
        t_ms: 0,
        per_channel: vec![bands; EEG_CHANNELS],
        avg: bands,
    };
    to_py(py, &analysis::cognition_metrics(&bp, g))
}

/// Min-max position of `current` within the trailing GSR values.
#[pyfunction]
fn normalize_gsr(history: Vec<f64>, current: f64) -> f64 {
    let samples: Vec<GsrSample> = history
        .into_iter()
        .enumerate()
        .map(|(i, value)| GsrSample { t_ms: i as u64 * 1000, seq: i as u64, value })
        .collect();
    analysis::normalize_gsr(&samples, current)
}

/// Band power over exactly 256 frames of 14 channels each.
#[pyfunction]
#[pyo3(signature = (frames, t_ms = 0))]
fn band_power(py: Python<'_>, frames: Vec<Vec<i16>>, t_ms: u64) -> PyResult<Py<PyAny>> {
    let frames: Vec<EegFrame> = frames
        .into_iter()
        .enumerate()
        .map(|(k, channels)| EegFrame {
            t_ms: t_ms + k as u64 * 1000 / 128,
            seq: k as u64,
            channels,
        })
        .collect();
    let bp = py.detach(|| analysis::band_power(&frames)).map_err(analysis_err)?;
    to_py(py, &bp)
}

/// Blurs each `(x, y, w, h)` box of a binary PPM image.
#[pyfunction]
fn blur_faces<'py>(py: Python<'py>, image: &[u8], boxes: Vec<(u32, u32, u32, u32)>) -> PyResult<Bound<'py, PyBytes>> {
    let boxes: Vec<FaceBox> = boxes.into_iter().map(|(x, y, w, h)| FaceBox::new(x, y, w, h)).collect();
    let out = analysis::blur_faces(image, &boxes).map_err(analysis_err)?;
    Ok(PyBytes::new(py, &out))
}

/// Lexicon sentiment of one utterance.
#[pyfunction]
#[pyo3(signature = (text, t_ms = 0))]
fn sentiment(py: Python<'_>, text: &str, t_ms: u64) -> PyResult<Py<PyAny>> {
    to_py(py, &analysis::sentiment(t_ms, text))
}

/// Reports delimited by the key phrases in time-ordered transcript records.
#[pyfunction]
fn extract_reports(py: Python<'_>, transcripts: &Bound<'_, PyAny>) -> PyResult<Py<PyAny>> {
    let records: Vec<TranscriptRecord> = from_py(transcripts)?;
    to_py(py, &des::extract_reports(&records))
}

/// Lowercase hex SHA-256.
#[pyfunction]
fn sha256_hex(data: &[u8]) -> String {
    hash_segment(data)
}

/// Recorder over a data directory: an in-process ingest engine with a
/// file-backed attestation store at `<data_dir>/attestations.jsonl`.
#[pyclass(module = "fprig")]
struct Recorder {
    data_dir: PathBuf,
    engine: Engine,
    store: Arc<AttestationStore>,
}

#[pymethods]
impl Recorder {
    #[new]
    fn new(data_dir: PathBuf) -> PyResult<Self> {
        std::fs::create_dir_all(&data_dir).map_err(|e| FprigError::new_err(e.to_string()))?;
        let store = Arc::new(
            AttestationStore::open(data_dir.join("attestations.jsonl")).map_err(|e| FprigError::new_err(e.to_string()))?,
        );
        let engine = Engine::new(&data_dir, store.clone());
        Ok(Self { data_dir, engine, store })
    }

    #[getter]
    fn data_dir(&self) -> PathBuf {
        self.data_dir.clone()
    }

    fn sessions(&self) -> PyResult<Vec<String>> {
        self.engine.list_sessions().map_err(ingest_err)
    }

    /// Starts a session from a config dict; returns the manifest.
    fn start_session(&self, py: Python<'_>, config: &Bound<'_, PyAny>) -> PyResult<Py<PyAny>> {
        let config: SessionConfig = from_py(config)?;
        let m = py.detach(|| self.engine.start_session(&config)).map_err(ingest_err)?;
        to_py(py, &m)
    }

    /// Ingests one envelope dict; returns the acknowledgement.
    fn ingest(&self, py: Python<'_>, envelope: &Bound<'_, PyAny>) -> PyResult<Py<PyAny>> {
        let env: IngestEnvelope = from_py(envelope)?;
        let ack = py.detach(|| self.engine.ingest(&env)).map_err(ingest_err)?;
        to_py(py, &ack)
    }

    fn stop_session(&self, py: Python<'_>, session_id: &str) -> PyResult<Py<PyAny>> {
        let m = py.detach(|| self.engine.stop_session(session_id)).map_err(ingest_err)?;
        to_py(py, &m)
    }

    fn manifest(&self, py: Python<'_>, session_id: &str) -> PyResult<Py<PyAny>> {
        let m = self.engine.manifest(session_id).map_err(ingest_err)?;
        to_py(py, &m)
    }

    /// Records with `t0 <= t < t1`; `kinds` is a comma-separated list or "all".
    #[pyo3(signature = (session_id, t0 = 0, t1 = u64::MAX, kinds = "all"))]
    fn records(&self, py: Python<'_>, session_id: &str, t0: u64, t1: u64, kinds: &str) -> PyResult<Py<PyAny>> {
        let kinds = RecordKind::parse_list(kinds).map_err(ValidationError::new_err)?;
        let recs = py.detach(|| self.engine.playback(session_id, t0, t1, &kinds)).map_err(ingest_err)?;
        to_py(py, &recs)
    }

    /// Streams a scenario dict, or the built-in demo when `scenario` is None.
    #[pyo3(signature = (scenario = None, duration_ms = 60_000, seed = 0))]
    fn simulate(
        &self,
        py: Python<'_>,
        scenario: Option<&Bound<'_, PyAny>>,
        duration_ms: u64,
        seed: u64,
    ) -> PyResult<Py<PyAny>> {
        let s: Scenario = match scenario {
            Some(obj) => from_py(obj)?,
            None => Scenario::demo(duration_ms, seed),
        };
        let summary = py.detach(|| run_scenario(&s, &mut &self.engine)).map_err(run_err)?;
        to_py(py, &summary)
    }

    /// Chain report for a session.
    fn verify(&self, py: Python<'_>, session_id: &str) -> PyResult<Py<PyAny>> {
        let dir = SessionDir::new(&self.data_dir, session_id);
        if !fprig_core::model::is_valid_session_id(session_id) {
            return Err(NotFoundError::new_err(format!("session `{session_id}` not found")));
        }
        let report = py.detach(|| verify_chain(&dir, self.store.as_ref())).map_err(store_err)?;
        to_py(py, &report)
    }
}

#[pymodule]
fn fprig(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(estimate_recording_days, m)?)?;
    m.add_function(wrap_pyfunction!(arousal_proxy, m)?)?;
    m.add_function(wrap_pyfunction!(cognition_metrics, m)?)?;
    m.add_function(wrap_pyfunction!(normalize_gsr, m)?)?;
    m.add_function(wrap_pyfunction!(band_power, m)?)?;
    m.add_function(wrap_pyfunction!(blur_faces, m)?)?;
    m.add_function(wrap_pyfunction!(sentiment, m)?)?;
    m.add_function(wrap_pyfunction!(extract_reports, m)?)?;
    m.add_function(wrap_pyfunction!(sha256_hex, m)?)?;
    m.add_class::<Recorder>()?;
    m.add("FprigError", m.py().get_type::<FprigError>())?;
    m.add("NotFoundError", m.py().get_type::<NotFoundError>())?;
    m.add("ValidationError", m.py().get_type::<ValidationError>())?;
    Ok(())
}
