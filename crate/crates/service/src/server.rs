//! HTTP and WebSocket surface over the ingest engine and attestation store.

use std::path::PathBuf;
use std::sync::Arc;
use std::time::Duration;

use axum::body::Body;
use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::{DefaultBodyLimit, Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use fprig_core::chain::{verify_chain, AttestError, AttestationStore, PublicAttestation};
use fprig_core::ingest::{Engine, IngestEnvelope, IngestError, LiveEvent};
use fprig_core::model::{is_valid_session_id, RecordKind, SessionConfig};
use fprig_core::store::{SessionDir, StoreError};
use serde::{Deserialize, Serialize};
use tokio::sync::mpsc;
use tower_http::services::ServeDir;

/// Media envelopes carry base64 images and audio chunks.
const BODY_LIMIT: usize = 64 * 1024 * 1024;

#[derive(Clone)]
pub struct AppState {
    pub engine: Arc<Engine>,
    pub attestations: Arc<AttestationStore>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: String,
    pub message: String,
}

pub struct ApiError {
    status: StatusCode,
    body: ErrorBody,
}

impl ApiError {
    fn new(status: StatusCode, code: &str, message: impl Into<String>) -> Self {
        Self {
            status,
            body: ErrorBody {
                error: code.to_string(),
                message: message.into(),
            },
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(self.body)).into_response()
    }
}

impl From<IngestError> for ApiError {
    fn from(e: IngestError) -> Self {
        let status = match &e {
            IngestError::NotFound(_) => StatusCode::NOT_FOUND,
            IngestError::Conflict(_) | IngestError::Ordering { .. } | IngestError::Sealed(_) => {
                StatusCode::CONFLICT
            }
            IngestError::Validation(_) => StatusCode::BAD_REQUEST,
            IngestError::Store(StoreError::BadMediaPath(_)) => StatusCode::BAD_REQUEST,
            IngestError::Store(_) => StatusCode::INTERNAL_SERVER_ERROR,
            IngestError::Provider(_) => StatusCode::BAD_GATEWAY,
        };
        ApiError::new(status, e.code(), e.to_string())
    }
}

impl From<AttestError> for ApiError {
    fn from(e: AttestError) -> Self {
        let (status, code) = match &e {
            AttestError::Conflict { .. } => (StatusCode::CONFLICT, "conflict"),
            AttestError::Validation(_) => (StatusCode::BAD_REQUEST, "validation"),
            AttestError::Io(_) => (StatusCode::INTERNAL_SERVER_ERROR, "storage"),
            AttestError::Unavailable(_) => (StatusCode::SERVICE_UNAVAILABLE, "unavailable"),
        };
        ApiError::new(status, code, e.to_string())
    }
}

type ApiResult<T> = Result<T, ApiError>;

/// Runs blocking engine work off the async executor.
async fn blocking<T, F>(f: F) -> ApiResult<T>
where
    F: FnOnce() -> ApiResult<T> + Send + 'static,
    T: Send + 'static,
{
    tokio::task::spawn_blocking(f).await.map_err(|e| {
        ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string())
    })?
}

pub fn router(state: AppState, console_dir: Option<PathBuf>) -> Router {
    let mut app = Router::new()
        .route("/healthz", get(healthz))
        .route("/sessions", post(start_session).get(list_sessions))
        .route("/sessions/{id}/ingest", post(ingest))
        .route("/sessions/{id}/stop", post(stop_session))
        .route("/sessions/{id}/records", get(records))
        .route("/sessions/{id}/manifest", get(manifest))
        .route("/sessions/{id}/media/{*path}", get(media))
        .route("/sessions/{id}/live", get(live))
        .route("/attest", post(attest))
        .route("/attestations/{id}", get(attestations))
        .route("/verify", post(verify))
        .layer(DefaultBodyLimit::max(BODY_LIMIT))
        .with_state(state);
    if let Some(dir) = console_dir {
        app = app.nest_service("/console", ServeDir::new(dir).append_index_html_on_directories(true));
    }
    app
}

async fn healthz() -> Json<serde_json::Value> {
    Json(serde_json::json!({ "status": "ok" }))
}

async fn start_session(
    State(st): State<AppState>,
    Json(config): Json<SessionConfig>,
) -> ApiResult<impl IntoResponse> {
    let m = blocking(move || Ok(st.engine.start_session(&config)?)).await?;
    Ok((StatusCode::CREATED, Json(m)))
}

async fn list_sessions(State(st): State<AppState>) -> ApiResult<impl IntoResponse> {
    let ids = blocking(move || Ok(st.engine.list_sessions()?)).await?;
    Ok(Json(ids))
}

async fn ingest(
    State(st): State<AppState>,
    Path(id): Path<String>,
    Json(env): Json<IngestEnvelope>,
) -> ApiResult<impl IntoResponse> {
    if env.session_id != id {
        return Err(ApiError::new(
            StatusCode::BAD_REQUEST,
            "validation",
            "session_id in body does not match the path",
        ));
    }
    let ack = blocking(move || Ok(st.engine.ingest(&env)?)).await?;
    Ok(Json(ack))
}

async fn stop_session(State(st): State<AppState>, Path(id): Path<String>) -> ApiResult<impl IntoResponse> {
    let m = blocking(move || Ok(st.engine.stop_session(&id)?)).await?;
    Ok(Json(m))
}

#[derive(Debug, Deserialize)]
pub struct RecordsQuery {
    pub t0: Option<u64>,
    pub t1: Option<u64>,
    pub kinds: Option<String>,
}

async fn records(
    State(st): State<AppState>,
    Path(id): Path<String>,
    Query(q): Query<RecordsQuery>,
) -> ApiResult<impl IntoResponse> {
    let kinds = RecordKind::parse_list(q.kinds.as_deref().unwrap_or(""))
        .map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, "validation", e))?;
    let (t0, t1) = (q.t0.unwrap_or(0), q.t1.unwrap_or(u64::MAX));
    if t0 > t1 {
        return Err(ApiError::new(StatusCode::BAD_REQUEST, "validation", "t0 must not exceed t1"));
    }
    let recs = blocking(move || Ok(st.engine.playback(&id, t0, t1, &kinds)?)).await?;
    Ok(Json(recs))
}

async fn manifest(State(st): State<AppState>, Path(id): Path<String>) -> ApiResult<impl IntoResponse> {
    let m = blocking(move || Ok(st.engine.manifest(&id)?)).await?;
    Ok(Json(m))
}

async fn media(
    State(st): State<AppState>,
    Path((id, path)): Path<(String, String)>,
) -> ApiResult<impl IntoResponse> {
    let rel = if path.starts_with("media/") {
        path
    } else {
        format!("media/{path}")
    };
    let content_type = if rel.ends_with(".ppm") {
        "image/x-portable-pixmap"
    } else if rel.ends_with(".wav") {
        "audio/wav"
    } else {
        "application/octet-stream"
    };
    let bytes = blocking(move || {
        let p = st.engine.media_path(&id, &rel)?;
        std::fs::read(&p).map_err(|e| ApiError::new(StatusCode::NOT_FOUND, "not_found", e.to_string()))
    })
    .await?;
    Ok(([(header::CONTENT_TYPE, content_type)], Body::from(bytes)))
}

async fn live(
    State(st): State<AppState>,
    Path(id): Path<String>,
    ws: WebSocketUpgrade,
) -> ApiResult<Response> {
    let engine = st.engine.clone();
    let rx = blocking(move || Ok(engine.subscribe(&id)?)).await?;
    Ok(ws.on_upgrade(move |socket| forward_live(socket, rx)))
}

/// Bridges the engine's blocking subscription onto the socket; ends after
/// the terminal event or when the client goes away.
async fn forward_live(mut socket: WebSocket, rx: std::sync::mpsc::Receiver<LiveEvent>) {
    let (tx, mut arx) = mpsc::unbounded_channel::<LiveEvent>();
    tokio::task::spawn_blocking(move || loop {
        match rx.recv_timeout(Duration::from_millis(500)) {
            Ok(ev) => {
                let terminal = ev.is_terminal();
                if tx.send(ev).is_err() || terminal {
                    return;
                }
            }
            Err(std::sync::mpsc::RecvTimeoutError::Timeout) => {
                if tx.is_closed() {
                    return;
                }
            }
            Err(std::sync::mpsc::RecvTimeoutError::Disconnected) => return,
        }
    });
    loop {
        tokio::select! {
            ev = arx.recv() => {
                let Some(ev) = ev else { break };
                let terminal = ev.is_terminal();
                let text = serde_json::to_string(&ev).expect("live event serializes");
                if socket.send(Message::Text(text.into())).await.is_err() || terminal {
                    break;
                }
            }
            msg = socket.recv() => {
                match msg {
                    Some(Ok(Message::Close(_))) | None | Some(Err(_)) => break,
                    _ => {}
                }
            }
        }
    }
    let _ = socket.send(Message::Close(None)).await;
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AttestRequest {
    pub session_id: String,
    pub segment_index: u32,
    pub file_digest: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AttestResponse {
    pub response_digest: String,
}

async fn attest(State(st): State<AppState>, Json(req): Json<AttestRequest>) -> ApiResult<impl IntoResponse> {
    let a = blocking(move || {
        Ok(st
            .attestations
            .attest_record(&req.session_id, req.segment_index, &req.file_digest)?)
    })
    .await?;
    Ok(Json(AttestResponse {
        response_digest: a.response_digest,
    }))
}

async fn attestations(State(st): State<AppState>, Path(id): Path<String>) -> ApiResult<impl IntoResponse> {
    let list: Vec<PublicAttestation> = st.attestations.list(&id).iter().map(|a| a.public()).collect();
    Ok(Json(list))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VerifyRequest {
    pub session_id: String,
}

async fn verify(State(st): State<AppState>, Json(req): Json<VerifyRequest>) -> ApiResult<impl IntoResponse> {
    if !is_valid_session_id(&req.session_id) {
        return Err(IngestError::NotFound(req.session_id).into());
    }
    let report = blocking(move || {
        let dir = SessionDir::new(st.engine.data_dir(), &req.session_id);
        verify_chain(&dir, st.attestations.as_ref()).map_err(|e| match e {
            StoreError::NotFound(id) => IngestError::NotFound(id).into(),
            other => IngestError::Store(other).into(),
        })
    })
    .await?;
    Ok(Json(report))
}

/// Serves until `shutdown` resolves, then drains in-flight requests.
pub async fn serve<F>(
    listener: tokio::net::TcpListener,
    state: AppState,
    console_dir: Option<PathBuf>,
    shutdown: F,
) -> std::io::Result<()>
where
    F: std::future::Future<Output = ()> + Send + 'static,
{
    axum::serve(listener, router(state, console_dir))
        .with_graceful_shutdown(shutdown)
        .await
}

/// A service on an ephemeral loopback port, run on its own thread and
/// runtime. Dropping it shuts the service down.
pub struct BackgroundServer {
    addr: std::net::SocketAddr,
    shutdown: Option<tokio::sync::oneshot::Sender<()>>,
    thread: Option<std::thread::JoinHandle<()>>,
    // Released after the runtime stops so blocking clients drop outside it.
    state: Option<AppState>,
}

impl BackgroundServer {
    pub fn start(state: AppState, console_dir: Option<PathBuf>) -> std::io::Result<Self> {
        let std_listener = std::net::TcpListener::bind("127.0.0.1:0")?;
        std_listener.set_nonblocking(true)?;
        let addr = std_listener.local_addr()?;
        let (tx, rx) = tokio::sync::oneshot::channel::<()>();
        let keep = state.clone();
        let rt = tokio::runtime::Builder::new_multi_thread()
            .worker_threads(2)
            .enable_all()
            .build()?;
        let thread = std::thread::spawn(move || {
            rt.block_on(async move {
                let listener = tokio::net::TcpListener::from_std(std_listener).expect("listener registers");
                let shutdown = async {
                    let _ = rx.await;
                };
                if let Err(e) = serve(listener, state, console_dir, shutdown).await {
                    log::error!("background server failed: {e}");
                }
            });
        });
        Ok(Self {
            addr,
            shutdown: Some(tx),
            thread: Some(thread),
            state: Some(keep),
        })
    }

    pub fn addr(&self) -> std::net::SocketAddr {
        self.addr
    }

    pub fn url(&self) -> String {
        format!("http://{}", self.addr)
    }

    pub fn state(&self) -> &AppState {
        self.state.as_ref().expect("state lives until drop")
    }
}

impl Drop for BackgroundServer {
    fn drop(&mut self) {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
        self.state.take();
    }
}
