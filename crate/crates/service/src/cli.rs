//! `fprig` command-line surface. Settings resolve flag, then environment
//! variable, then default.
//!
//! Exit codes: 0 success, 1 verification or run failure, 2 startup failure,
//! 3 not found, 4 validation.

use std::ffi::OsString;
use std::fs;
use std::io::{BufWriter, Write};
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Parser, Subcommand};
use fprig_core::chain::{now_epoch_ms, verify_chain, AttestationStore, Attester, ChainReport};
use fprig_core::experiment::{
    compare_reference, emit_results, estimate_recording_days, parse_reference_csv,
    run_stimulus_session, CorpusMode, ExperimentError, RateConstants, StimulusScript,
};
use fprig_core::ingest::{Engine, IngestError};
use fprig_core::model::{RecordKind, SessionConfig};
use fprig_core::sim::{run_scenario, sidecar_truth, RunError, Scenario, SinkError};
use fprig_core::store::{SessionDir, StoreError};

use crate::client::{HttpAttester, HttpProviderFactory, HttpSink};
use crate::server::{self, AppState};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILED: i32 = 1;
pub const EXIT_STARTUP: i32 = 2;
pub const EXIT_NOT_FOUND: i32 = 3;
pub const EXIT_VALIDATION: i32 = 4;

pub const ATTESTATION_FILE: &str = "attestations.jsonl";

#[derive(Debug, Parser)]
#[command(name = "fprig", version, about = "First-person recording rig")]
pub struct Cli {
    /// Session storage root.
    #[arg(long, env = "FPRIG_DATA_DIR", default_value = "fprig-data", global = true)]
    pub data_dir: PathBuf,
    /// Remote attestation service; the local store is used when absent.
    #[arg(long, env = "FPRIG_ATTEST_URL", global = true)]
    pub attest_url: Option<String>,
    /// Default seed for simulated sessions.
    #[arg(long, default_value_t = 0, global = true)]
    pub seed: u64,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the ingest service, attestation service and console hosting.
    Serve {
        /// Listen port.
        #[arg(long, env = "FPRIG_PORT", default_value_t = 8080)]
        port: u16,
        /// Listen address.
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
        /// Static console assets served under /console/.
        #[arg(long)]
        console_dir: Option<PathBuf>,
    },
    /// Sensor simulator.
    Sim {
        #[command(subcommand)]
        command: SimCommand,
    },
    /// Experiment harness.
    Exp {
        #[command(subcommand)]
        command: ExpCommand,
    },
    /// Verify a session's tamper-evidence chain; prints the report as JSON.
    Verify { session_id: String },
    /// Write a session's records in a time window as JSON lines.
    Export {
        session_id: String,
        /// Window start, inclusive, in session ms.
        #[arg(long, default_value_t = 0)]
        t0: u64,
        /// Window end, exclusive; the whole session when absent.
        #[arg(long)]
        t1: Option<u64>,
        /// Comma-separated record kinds, or `all`.
        #[arg(long, default_value = "all")]
        kinds: String,
        /// Output JSONL file.
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug, Subcommand)]
pub enum SimCommand {
    /// Stream a scenario to a service, or to an in-process engine on the data dir.
    Run {
        /// Scenario JSON; the built-in demo scenario when absent.
        #[arg(long)]
        scenario: Option<PathBuf>,
        /// Demo scenario length.
        #[arg(long, default_value_t = 60_000)]
        duration_ms: u64,
        /// Service base URL.
        #[arg(long, alias = "url")]
        endpoint: Option<String>,
        /// Write the generated ground truth here.
        #[arg(long)]
        sidecar_out: Option<PathBuf>,
    },
}

#[derive(Debug, Subcommand)]
pub enum ExpCommand {
    /// Record one session over a stimulus script and report arousal per stimulus.
    Run {
        /// Stimulus script JSON.
        #[arg(long)]
        script: PathBuf,
        /// Output directory for results.csv, plot.json and comparison.json.
        #[arg(long)]
        out: PathBuf,
        /// `stimulus_id,ref_arousal` table; overrides references in the script.
        #[arg(long)]
        refs: Option<PathBuf>,
        /// Service base URL; an in-process engine on the data dir when absent.
        #[arg(long, alias = "url")]
        endpoint: Option<String>,
        /// Defaults to `exp-<seed>-<epoch ms>`.
        #[arg(long)]
        session_id: Option<String>,
    },
    /// Recording days needed to collect a corpus of the given size.
    Estimate {
        /// Corpus size in GB.
        #[arg(long, allow_negative_numbers = true)]
        gb: f64,
        /// `full` or `text`.
        #[arg(long, default_value = "full")]
        mode: CorpusMode,
    },
}

#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    pub fn new(code: i32, message: impl Into<String>) -> Self {
        Self { code, message: message.into() }
    }
}

impl From<IngestError> for CliError {
    fn from(e: IngestError) -> Self {
        let code = match &e {
            IngestError::NotFound(_) => EXIT_NOT_FOUND,
            IngestError::Validation(_)
            | IngestError::Conflict(_)
            | IngestError::Ordering { .. }
            | IngestError::Sealed(_) => EXIT_VALIDATION,
            IngestError::Store(StoreError::NotFound(_)) => EXIT_NOT_FOUND,
            _ => EXIT_FAILED,
        };
        CliError::new(code, e.to_string())
    }
}

impl From<SinkError> for CliError {
    fn from(e: SinkError) -> Self {
        let code = match &e {
            SinkError::Rejected { code, .. } => match code.as_str() {
                "not_found" => EXIT_NOT_FOUND,
                "validation" | "conflict" | "ordering" | "sealed" => EXIT_VALIDATION,
                _ => EXIT_FAILED,
            },
            SinkError::Transport(_) => EXIT_FAILED,
        };
        CliError::new(code, e.to_string())
    }
}

impl From<RunError> for CliError {
    fn from(e: RunError) -> Self {
        match e {
            RunError::Sim(e) => CliError::new(EXIT_VALIDATION, e.to_string()),
            RunError::Sink(e) => e.into(),
        }
    }
}

impl From<ExperimentError> for CliError {
    fn from(e: ExperimentError) -> Self {
        match e {
            ExperimentError::Run(e) => e.into(),
            ExperimentError::Sink(e) => e.into(),
            ExperimentError::EmptyWindow(_) => CliError::new(EXIT_FAILED, e.to_string()),
            other => CliError::new(EXIT_VALIDATION, other.to_string()),
        }
    }
}

fn io_error(path: &Path, e: std::io::Error) -> CliError {
    CliError::new(EXIT_FAILED, format!("{}: {e}", path.display()))
}

fn read_input(path: &Path) -> Result<Vec<u8>, CliError> {
    fs::read(path).map_err(|e| {
        let code = if e.kind() == std::io::ErrorKind::NotFound {
            EXIT_NOT_FOUND
        } else {
            EXIT_FAILED
        };
        CliError::new(code, format!("{}: {e}", path.display()))
    })
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    let bytes = read_input(path)?;
    serde_json::from_slice(&bytes)
        .map_err(|e| CliError::new(EXIT_VALIDATION, format!("{}: {e}", path.display())))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| io_error(dir, e))?;
    }
    fs::write(path, bytes).map_err(|e| io_error(path, e))
}

/// A closed stdout is not an error for the command itself.
fn print_json<T: serde::Serialize>(value: &T) {
    let text = serde_json::to_string_pretty(value).expect("output serializes");
    let _ = writeln!(std::io::stdout().lock(), "{text}");
}

pub fn open_store(data_dir: &Path) -> Result<AttestationStore, CliError> {
    fs::create_dir_all(data_dir).map_err(|e| CliError::new(EXIT_STARTUP, format!("{}: {e}", data_dir.display())))?;
    AttestationStore::open(data_dir.join(ATTESTATION_FILE))
        .map_err(|e| CliError::new(EXIT_STARTUP, e.to_string()))
}

/// Engine wired to the remote attester when configured, else to `local`.
fn engine(data_dir: &Path, attest_url: Option<&str>, local: Arc<AttestationStore>) -> Engine {
    let attester: Arc<dyn Attester> = match attest_url {
        Some(url) => Arc::new(HttpAttester::new(url)),
        None => local,
    };
    Engine::new(data_dir, attester).with_provider_factory(Arc::new(HttpProviderFactory))
}

/// Parses `args` and runs the command; returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_VALIDATION } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {}", e.message);
            e.code
        }
    }
}

pub fn run(cli: Cli) -> Result<i32, CliError> {
    let attest_url = cli.attest_url.as_deref();
    match cli.command {
        Command::Serve { port, host, console_dir } => serve(&cli.data_dir, attest_url, &host, port, console_dir),
        Command::Sim { command: SimCommand::Run { scenario, duration_ms, endpoint, sidecar_out } } => {
            let mut s = match scenario {
                Some(p) => read_json::<Scenario>(&p)?,
                None => Scenario::demo(duration_ms, cli.seed),
            };
            if cli.seed != 0 {
                s.rng_seed = cli.seed;
            }
            s.validate().map_err(|e| CliError::new(EXIT_VALIDATION, e.to_string()))?;
            if let Some(path) = sidecar_out {
                let truth = sidecar_truth(&s).map_err(|e| CliError::new(EXIT_VALIDATION, e.to_string()))?;
                write_file(&path, &serde_json::to_vec_pretty(&truth).expect("truth serializes"))?;
            }
            let summary = match endpoint {
                Some(url) => run_scenario(&s, &mut HttpSink::new(&url))?,
                None => {
                    let store = Arc::new(open_store(&cli.data_dir)?);
                    let engine = engine(&cli.data_dir, attest_url, store);
                    run_scenario(&s, &mut &engine)?
                }
            };
            print_json(&summary);
            Ok(EXIT_OK)
        }
        Command::Exp { command: ExpCommand::Run { script, out, refs, endpoint, session_id } } => {
            let mut script: StimulusScript = read_json(&script)?;
            if let Some(p) = refs {
                script.references = parse_reference_csv(&read_input(&p)?)?;
            }
            script.validate()?;
            let id = session_id.unwrap_or_else(|| format!("exp-{}-{}", cli.seed, now_epoch_ms()));
            let mut config = SessionConfig::new(id);
            config.rng_seed = cli.seed;
            let results = match endpoint {
                Some(url) => run_stimulus_session(&script, &config, cli.seed, &mut HttpSink::new(&url))?,
                None => {
                    let store = Arc::new(open_store(&cli.data_dir)?);
                    let engine = engine(&cli.data_dir, attest_url, store);
                    let mut sink: &Engine = &engine;
                    run_stimulus_session(&script, &config, cli.seed, &mut sink)?
                }
            };
            let (csv, plot) = emit_results(&results)?;
            fs::create_dir_all(&out).map_err(|e| io_error(&out, e))?;
            write_file(&out.join("results.csv"), &csv)?;
            write_file(&out.join("plot.json"), &plot)?;
            if script.references.len() >= 2 {
                match compare_reference(&results, &script.references) {
                    Ok(cmp) => {
                        let bytes = serde_json::to_vec_pretty(&cmp).expect("comparison serializes");
                        write_file(&out.join("comparison.json"), &bytes)?;
                    }
                    Err(ExperimentError::InsufficientData(n)) => {
                        log::warn!("only {n} stimuli matched a reference; comparison skipped")
                    }
                    Err(e) => return Err(e.into()),
                }
            }
            print_json(&results);
            Ok(EXIT_OK)
        }
        Command::Exp { command: ExpCommand::Estimate { gb, mode } } => {
            let est = estimate_recording_days(gb, mode, &RateConstants::default())?;
            print_json(&est);
            Ok(EXIT_OK)
        }
        Command::Verify { session_id } => {
            let report = verify(&cli.data_dir, attest_url, &session_id)?;
            print_json(&report);
            Ok(if report.is_intact() { EXIT_OK } else { EXIT_FAILED })
        }
        Command::Export { session_id, t0, t1, kinds, out } => {
            let kinds = RecordKind::parse_list(&kinds).map_err(|e| CliError::new(EXIT_VALIDATION, e))?;
            let t1 = t1.unwrap_or(u64::MAX);
            if t0 > t1 {
                return Err(CliError::new(EXIT_VALIDATION, "t0 must not exceed t1"));
            }
            let store = Arc::new(AttestationStore::in_memory());
            let engine = Engine::new(&cli.data_dir, store);
            let records = engine.playback(&session_id, t0, t1, &kinds)?;
            let file = fs::File::create(&out).map_err(|e| io_error(&out, e))?;
            let mut w = BufWriter::new(file);
            for r in &records {
                serde_json::to_writer(&mut w, r).map_err(|e| CliError::new(EXIT_FAILED, e.to_string()))?;
                w.write_all(b"\n").map_err(|e| io_error(&out, e))?;
            }
            w.flush().map_err(|e| io_error(&out, e))?;
            print_json(&serde_json::json!({
                "session_id": session_id,
                "records": records.len(),
                "out": out,
            }));
            Ok(EXIT_OK)
        }
    }
}

/// Remote verification runs server-side at the attestation service, which
/// alone holds the nonces.
pub fn verify(data_dir: &Path, attest_url: Option<&str>, session_id: &str) -> Result<ChainReport, CliError> {
    if let Some(url) = attest_url {
        return Ok(HttpSink::new(url).verify(session_id)?);
    }
    let dir = SessionDir::new(data_dir, session_id);
    if !fprig_core::model::is_valid_session_id(session_id) || !dir.exists() {
        return Err(CliError::new(EXIT_NOT_FOUND, format!("session `{session_id}` not found")));
    }
    let store = AttestationStore::open(data_dir.join(ATTESTATION_FILE))
        .map_err(|e| CliError::new(EXIT_FAILED, e.to_string()))?;
    verify_chain(&dir, &store).map_err(|e| match e {
        StoreError::NotFound(m) => CliError::new(EXIT_NOT_FOUND, format!("session `{m}` not found")),
        other => CliError::new(EXIT_FAILED, other.to_string()),
    })
}

fn serve(
    data_dir: &Path,
    attest_url: Option<&str>,
    host: &str,
    port: u16,
    console_dir: Option<PathBuf>,
) -> Result<i32, CliError> {
    let addr: SocketAddr = format!("{host}:{port}")
        .parse()
        .map_err(|e| CliError::new(EXIT_VALIDATION, format!("bad listen address: {e}")))?;
    let store = Arc::new(open_store(data_dir)?);
    // Blocking HTTP clients must be built outside the async runtime.
    let engine = Arc::new(engine(data_dir, attest_url, store.clone()));
    let state = AppState { engine, attestations: store };
    // Holds the last reference so the engine is dropped off the runtime.
    let _keep = state.clone();
    let rt = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(|e| CliError::new(EXIT_STARTUP, e.to_string()))?;
    rt.block_on(async move {
        let listener = tokio::net::TcpListener::bind(addr)
            .await
            .map_err(|e| CliError::new(EXIT_STARTUP, format!("cannot bind {addr}: {e}")))?;
        log::info!("listening on http://{}", listener.local_addr().map_err(|e| CliError::new(EXIT_STARTUP, e.to_string()))?);
        server::serve(listener, state, console_dir, shutdown_signal())
            .await
            .map_err(|e| CliError::new(EXIT_FAILED, e.to_string()))
    })?;
    log::info!("shut down");
    Ok(EXIT_OK)
}

async fn shutdown_signal() {
    let ctrl_c = async {
        let _ = tokio::signal::ctrl_c().await;
    };
    #[cfg(unix)]
    let term = async {
        match tokio::signal::unix::signal(tokio::signal::unix::SignalKind::terminate()) {
            Ok(mut s) => {
                s.recv().await;
            }
            Err(_) => std::future::pending::<()>().await,
        }
    };
    #[cfg(not(unix))]
    let term = std::future::pending::<()>();
    tokio::select! {
        _ = ctrl_c => {}
        _ = term => {}
    }
}
