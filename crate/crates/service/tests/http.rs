mod common;

use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use axum::routing::post;
use axum::{Json, Router};
use fprig_core::analysis::providers::wire::{
    AudioRequest, ExpressionRequest, FacesResponse, ImageRequest, SentimentRequest, TranscriptResponse,
};
use fprig_core::chain::{hash_segment, ChainReport, Verdict};
use fprig_core::ingest::{AckStatus, IngestEnvelope, LiveEvent, Payload};
use fprig_core::model::{
    EyeAction, FaceBox, FacialExpressionRecord, ImageAnnotation, ImageLabel, LowerFace, ProviderSpec,
    Record, RecordKind, SentimentLabel, SentimentRecord, SentimentScores, SessionConfig,
    SessionManifest, SessionStatus, Speaker, TranscriptRecord, UpperFace,
};
use fprig_core::sim::{run_scenario, IngestSink, Scenario, SinkError};
use fprig_core::store::{segment_file_name, SessionDir};
use fprig_service::cli::main_with_args;
use fprig_service::client::HttpSink;
use fprig_service::server::ErrorBody;
use futures_util::{SinkExt, StreamExt};
use reqwest::blocking::Client;
use reqwest::StatusCode;
use serde_json::json;

fn gsr(id: &str, t: u64, seq: u64) -> IngestEnvelope {
    IngestEnvelope {
        session_id: id.into(),
        t_ms: t,
        seq,
        payload: Payload::Gsr { value: 1.0 },
    }
}

fn error_code(resp: reqwest::blocking::Response) -> (StatusCode, String) {
    let status = resp.status();
    let body: ErrorBody = resp.json().unwrap();
    (status, body.error)
}

#[test]
fn endpoints_and_error_mapping() {
    let tmp = tempfile::tempdir().unwrap();
    let srv = common::server_at(tmp.path());
    let url = srv.url();
    let http = Client::new();

    let health: serde_json::Value = http.get(format!("{url}/healthz")).send().unwrap().json().unwrap();
    assert_eq!(health["status"], "ok");

    let resp = http.post(format!("{url}/sessions")).json(&SessionConfig::new("e1")).send().unwrap();
    assert_eq!(resp.status(), StatusCode::CREATED);
    let m: SessionManifest = resp.json().unwrap();
    assert_eq!(m.status, SessionStatus::Recording);

    let resp = http.post(format!("{url}/sessions")).json(&SessionConfig::new("e1")).send().unwrap();
    assert_eq!(error_code(resp), (StatusCode::CONFLICT, "conflict".into()));
    let resp = http.post(format!("{url}/sessions")).json(&json!({"session_id": "../x"})).send().unwrap();
    assert_eq!(error_code(resp), (StatusCode::BAD_REQUEST, "validation".into()));

    let ids: Vec<String> = http.get(format!("{url}/sessions")).send().unwrap().json().unwrap();
    assert_eq!(ids, vec!["e1".to_string()]);

    let ack = http.post(format!("{url}/sessions/e1/ingest")).json(&gsr("e1", 0, 0)).send().unwrap();
    assert_eq!(ack.status(), StatusCode::OK);
    let dup: serde_json::Value = http
        .post(format!("{url}/sessions/e1/ingest"))
        .json(&gsr("e1", 0, 0))
        .send()
        .unwrap()
        .json()
        .unwrap();
    assert_eq!(dup["status"], "duplicate");
    let resp = http.post(format!("{url}/sessions/e1/ingest")).json(&gsr("other", 1000, 1)).send().unwrap();
    assert_eq!(error_code(resp), (StatusCode::BAD_REQUEST, "validation".into()));
    let resp = http.post(format!("{url}/sessions/nope/ingest")).json(&gsr("nope", 0, 0)).send().unwrap();
    assert_eq!(error_code(resp), (StatusCode::NOT_FOUND, "not_found".into()));
    http.post(format!("{url}/sessions/e1/ingest")).json(&gsr("e1", 2000, 2)).send().unwrap();
    let resp = http.post(format!("{url}/sessions/e1/ingest")).json(&gsr("e1", 1000, 3)).send().unwrap();
    assert_eq!(error_code(resp), (StatusCode::CONFLICT, "ordering".into()));

    let recs: Vec<Record> = http
        .get(format!("{url}/sessions/e1/records?t0=0&t1=1500&kinds=gsr"))
        .send()
        .unwrap()
        .json()
        .unwrap();
    assert_eq!(recs.len(), 1);
    let resp = http.get(format!("{url}/sessions/e1/records?kinds=bogus")).send().unwrap();
    assert_eq!(error_code(resp), (StatusCode::BAD_REQUEST, "validation".into()));
    let resp = http.get(format!("{url}/sessions/e1/records?t0=5&t1=1")).send().unwrap();
    assert_eq!(resp.status(), StatusCode::BAD_REQUEST);

    let stopped: SessionManifest = http.post(format!("{url}/sessions/e1/stop")).send().unwrap().json().unwrap();
    assert_eq!(stopped.status, SessionStatus::Sealed);
    let again: SessionManifest = http.post(format!("{url}/sessions/e1/stop")).send().unwrap().json().unwrap();
    assert_eq!(again, stopped);
    let resp = http.post(format!("{url}/sessions/e1/ingest")).json(&gsr("e1", 9000, 9)).send().unwrap();
    assert_eq!(error_code(resp), (StatusCode::CONFLICT, "sealed".into()));
    let fetched: SessionManifest = http.get(format!("{url}/sessions/e1/manifest")).send().unwrap().json().unwrap();
    assert_eq!(fetched, stopped);
    let resp = http.get(format!("{url}/sessions/zz/manifest")).send().unwrap();
    assert_eq!(resp.status(), StatusCode::NOT_FOUND);
}

#[test]
fn demo_session_media_and_verification() {
    let tmp = tempfile::tempdir().unwrap();
    let srv = common::server_at(tmp.path());
    let mut sink = HttpSink::new(&srv.url());
    let mut s = Scenario::demo(12_000, 5);
    s.segment_duration_ms = 5000;
    let summary = run_scenario(&s, &mut sink).unwrap();
    let id = summary.session_id.clone();
    assert_eq!(summary.manifest.segment_count, 3);

    let report = sink.verify(&id).unwrap();
    assert_eq!(report.verdict, Verdict::Intact);

    let images = sink.playback(&id, 0, u64::MAX, &[RecordKind::Image]).unwrap();
    assert_eq!(images.len(), 12);
    let Record::Image(first) = &images[0] else { panic!("image record expected") };
    let bytes = sink.media(&id, &first.path).unwrap();
    assert_eq!(hash_segment(&bytes), first.digest);
    let bare = first.path.trim_start_matches("media/");
    assert_eq!(sink.media(&id, bare).unwrap(), bytes);
    assert!(sink.media(&id, "../manifest.json").is_err());
    assert!(sink.media(&id, "media/none.ppm").is_err());

    let http = Client::new();
    let list: Vec<serde_json::Value> = http
        .get(format!("{}/attestations/{id}", srv.url()))
        .send()
        .unwrap()
        .json()
        .unwrap();
    assert_eq!(list.len(), 3);
    assert!(list.iter().all(|a| a.get("nonce").is_none() && a["response_digest"].as_str().unwrap().len() == 64));

    let annotations = sink.playback(&id, 0, u64::MAX, &[RecordKind::Annotation]).unwrap();
    assert!(annotations.iter().any(|r| matches!(r, Record::Annotation(a) if !a.face_boxes.is_empty())));

    let resp = http.post(format!("{}/verify", srv.url())).json(&json!({"session_id": "missing"})).send().unwrap();
    assert_eq!(resp.status(), StatusCode::NOT_FOUND);
}

#[test]
fn attestation_endpoint_contract() {
    let tmp = tempfile::tempdir().unwrap();
    let srv = common::server_at(tmp.path());
    let http = Client::new();
    let url = format!("{}/attest", srv.url());
    let digest = "ab".repeat(32);
    let req = json!({"session_id": "x", "segment_index": 0, "file_digest": digest});
    let a: serde_json::Value = http.post(&url).json(&req).send().unwrap().json().unwrap();
    let b: serde_json::Value = http.post(&url).json(&req).send().unwrap().json().unwrap();
    assert_eq!(a, b);
    assert_eq!(a["response_digest"].as_str().unwrap().len(), 64);
    let conflict = json!({"session_id": "x", "segment_index": 0, "file_digest": "cd".repeat(32)});
    assert_eq!(http.post(&url).json(&conflict).send().unwrap().status(), StatusCode::CONFLICT);
    let bad = json!({"session_id": "x", "segment_index": 1, "file_digest": "XYZ"});
    assert_eq!(http.post(&url).json(&bad).send().unwrap().status(), StatusCode::BAD_REQUEST);
}

#[test]
fn live_websocket_feed() {
    let tmp = tempfile::tempdir().unwrap();
    let srv = common::server_at(tmp.path());
    let mut sink = HttpSink::new(&srv.url());
    sink.start(&SessionConfig::new("w")).unwrap();
    let ws_url = format!("ws://{}/sessions/w/live", srv.addr());

    let rt = tokio::runtime::Builder::new_current_thread().enable_all().build().unwrap();
    let (mut ws, _) = rt.block_on(tokio_tungstenite::connect_async(ws_url.as_str())).unwrap();
    for i in 0..5 {
        sink.ingest(&gsr("w", i * 1000, i)).unwrap();
    }
    sink.stop("w").unwrap();
    let events: Vec<LiveEvent> = rt.block_on(async {
        let mut out = Vec::new();
        while let Some(msg) = ws.next().await {
            match msg.unwrap() {
                tokio_tungstenite::tungstenite::Message::Text(t) => {
                    let ev: LiveEvent = serde_json::from_str(&t).unwrap();
                    let end = ev.is_terminal();
                    out.push(ev);
                    if end {
                        break;
                    }
                }
                tokio_tungstenite::tungstenite::Message::Close(_) => break,
                _ => {}
            }
        }
        let _ = ws.close(None).await;
        out
    });
    let records = events.iter().filter(|e| e.to_record().is_some()).count();
    assert_eq!(records, 5);
    assert!(events.iter().any(|e| e.body_type() == "sealed"));
    assert!(events.last().unwrap().is_terminal());
    assert!(events.windows(2).all(|w| w[0].seq < w[1].seq));

    // A sealed session yields its terminal event straight away.
    let (mut late, _) = rt.block_on(tokio_tungstenite::connect_async(ws_url.as_str())).unwrap();
    let first = rt.block_on(late.next()).unwrap().unwrap();
    let ev: LiveEvent = serde_json::from_str(first.to_text().unwrap()).unwrap();
    assert!(ev.is_terminal());

    let missing = rt.block_on(tokio_tungstenite::connect_async(format!("ws://{}/sessions/none/live", srv.addr())));
    assert!(missing.is_err());
    rt.block_on(async { late.send(tokio_tungstenite::tungstenite::Message::Close(None)).await.ok() });
}

trait LiveEventExt {
    fn to_record(&self) -> Option<&Record>;
    fn body_type(&self) -> String;
}

impl LiveEventExt for LiveEvent {
    fn to_record(&self) -> Option<&Record> {
        match &self.body {
            fprig_core::ingest::LiveBody::Record { record } => Some(record),
            _ => None,
        }
    }

    fn body_type(&self) -> String {
        serde_json::to_value(self).unwrap()["type"].as_str().unwrap().to_string()
    }
}

/// Stub analyzer service counting calls per operation.
fn provider_stub(calls: Arc<AtomicUsize>) -> Router {
    let c = calls.clone();
    let faces = move |Json(_): Json<ImageRequest>| {
        let c = c.clone();
        async move {
            c.fetch_add(1, Ordering::SeqCst);
            Json(FacesResponse {
                face_boxes: vec![FaceBox::new(300, 200, 100, 100)],
            })
        }
    };
    let labels = |Json(r): Json<ImageRequest>| async move {
        Json(ImageAnnotation {
            t_ms: r.t_ms,
            labels: vec![ImageLabel { label: "Burger".into(), confidence: 1.7 }],
            texts: vec!["OPEN".into()],
            face_boxes: vec![],
        })
    };
    let transcript = |Json(r): Json<AudioRequest>| async move {
        let records = if r.t_ms == 0 {
            vec![TranscriptRecord {
                t_start_ms: 100,
                t_end_ms: 900,
                speaker: Speaker::Wearer,
                text: "start ziggy remote words end ziggy".into(),
            }]
        } else {
            vec![]
        };
        Json(TranscriptResponse { records })
    };
    let sentiment = |Json(r): Json<SentimentRequest>| async move {
        Json(SentimentRecord {
            t_ms: r.t_ms,
            label: SentimentLabel::Positive,
            scores: SentimentScores { positive: 0.7, negative: 0.1, mixed: 0.1, neutral: 0.1 },
        })
    };
    let expression = |Json(r): Json<ExpressionRequest>| async move {
        assert_eq!(r.frames.len(), 256);
        Json(FacialExpressionRecord {
            t_ms: r.t_ms,
            eye_action: EyeAction::WinkLeft,
            upper_face: UpperFace::RaiseBrow,
            lower_face: LowerFace::Clench,
            power: 0.4,
        })
    };
    Router::new()
        .route("/faces", post(faces))
        .route("/labels", post(labels))
        .route("/transcript", post(transcript))
        .route("/sentiment", post(sentiment))
        .route("/expression", post(expression))
}

struct Stub {
    addr: std::net::SocketAddr,
    _thread: std::thread::JoinHandle<()>,
}

fn spawn_stub(app: Router) -> Stub {
    let l = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    l.set_nonblocking(true).unwrap();
    let addr = l.local_addr().unwrap();
    let thread = std::thread::spawn(move || {
        let rt = tokio::runtime::Builder::new_current_thread().enable_all().build().unwrap();
        rt.block_on(async move {
            let l = tokio::net::TcpListener::from_std(l).unwrap();
            axum::serve(l, app).await.unwrap();
        });
    });
    Stub { addr, _thread: thread }
}

#[test]
fn remote_providers_are_used_and_checked() {
    let calls = Arc::new(AtomicUsize::new(0));
    let stub = spawn_stub(provider_stub(calls.clone()));
    let endpoint = format!("http://{}", stub.addr);
    let tmp = tempfile::tempdir().unwrap();
    let srv = common::server_at(tmp.path());
    let mut sink = HttpSink::new(&srv.url());

    let mut s = Scenario::new(6000);
    s.session_id = Some("remote".into());
    let mut config = s.session_config();
    for spec in [
        &mut config.providers.faces,
        &mut config.providers.labels,
        &mut config.providers.transcript,
        &mut config.providers.sentiment,
        &mut config.providers.expression,
    ] {
        *spec = ProviderSpec::remote(endpoint.clone());
    }
    sink.start(&config).unwrap();
    for e in fprig_core::sim::scenario_envelopes(&s, "remote").unwrap() {
        sink.ingest(&e).unwrap();
    }
    sink.stop("remote").unwrap();
    assert_eq!(calls.load(Ordering::SeqCst), 6);

    let recs = sink.playback("remote", 0, u64::MAX, &RecordKind::ALL).unwrap();
    let ann: Vec<&ImageAnnotation> = recs
        .iter()
        .filter_map(|r| match r {
            Record::Annotation(a) => Some(a),
            _ => None,
        })
        .collect();
    assert_eq!(ann.len(), 6);
    // Detector boxes win and are clipped; label confidence is clamped.
    assert_eq!(ann[0].face_boxes, vec![FaceBox::new(300, 200, 20, 40)]);
    assert_eq!(ann[0].labels[0].confidence, 1.0);
    let des: Vec<_> = recs.iter().filter(|r| r.kind() == RecordKind::Des).collect();
    assert_eq!(des.len(), 1);
    assert!(recs.iter().any(|r| matches!(r, Record::Sentiment(x) if x.label == SentimentLabel::Positive)));
    assert!(recs.iter().any(|r| matches!(r, Record::Expression(x) if x.eye_action == EyeAction::WinkLeft)));

    let mut bad = SessionConfig::new("unreachable");
    bad.providers.labels = ProviderSpec::remote("http://127.0.0.1:9");
    sink.start(&bad).unwrap();
    let (bytes, _) = fprig_core::sim::gen_image(&Scenario::new(1000), 0).unwrap();
    let env = IngestEnvelope {
        session_id: "unreachable".into(),
        t_ms: 0,
        seq: 0,
        payload: Payload::Image { data: bytes, truth: None },
    };
    // Analyzer failures leave a derived-stream gap, never a lost raw record.
    assert_eq!(sink.ingest(&env).unwrap().status, AckStatus::Accepted);
}

#[test]
fn console_assets_are_served() {
    let tmp = tempfile::tempdir().unwrap();
    let console = tmp.path().join("console");
    std::fs::create_dir_all(&console).unwrap();
    std::fs::write(console.join("index.html"), "<html>console</html>").unwrap();
    let srv = fprig_service::BackgroundServer::start(common::state_at(&tmp.path().join("data")), Some(console)).unwrap();
    let body = Client::new().get(format!("{}/console/", srv.url())).send().unwrap().text().unwrap();
    assert!(body.contains("console"));
}

fn cli(data: &Path, args: &[&str]) -> i32 {
    let mut argv = vec!["fprig", "--data-dir", data.to_str().unwrap()];
    argv.extend_from_slice(args);
    main_with_args(argv)
}

#[test]
fn cli_exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    assert_eq!(cli(&data, &["--seed", "4", "sim", "run", "--duration-ms", "8000"]), 0);
    assert_eq!(cli(&data, &["verify", "sim-4"]), 0);
    assert_eq!(cli(&data, &["verify", "sim-5"]), 3);

    let out = tmp.path().join("all.jsonl");
    assert_eq!(cli(&data, &["export", "sim-4", "--out", out.to_str().unwrap()]), 0);
    let lines = std::fs::read_to_string(&out).unwrap().lines().count();
    let dir = SessionDir::new(&data, "sim-4");
    let m = dir.read_manifest().unwrap();
    let total: usize = (0..m.segment_count).map(|i| dir.read_segment(i).unwrap().records.len()).sum();
    assert_eq!(lines, total);
    let des = tmp.path().join("des.jsonl");
    assert_eq!(cli(&data, &["export", "sim-4", "--kinds", "des", "--out", des.to_str().unwrap()]), 0);
    assert_eq!(std::fs::read_to_string(&des).unwrap().lines().count(), 1);
    let empty = tmp.path().join("empty.jsonl");
    assert_eq!(
        cli(&data, &["export", "sim-4", "--t0", "100", "--t1", "100", "--out", empty.to_str().unwrap()]),
        0
    );
    assert_eq!(std::fs::read_to_string(&empty).unwrap(), "");
    assert_eq!(cli(&data, &["export", "nope", "--out", empty.to_str().unwrap()]), 3);
    assert_eq!(cli(&data, &["export", "sim-4", "--kinds", "x", "--out", empty.to_str().unwrap()]), 4);

    let path = dir.segment_path(0);
    let mut bytes = std::fs::read(&path).unwrap();
    let n = bytes.len();
    bytes[n / 2] ^= 0x01;
    std::fs::write(&path, bytes).unwrap();
    assert_eq!(cli(&data, &["verify", "sim-4"]), 1);
    assert!(path.ends_with(segment_file_name(0)));

    assert_eq!(cli(&data, &["exp", "estimate", "--gb", "40"]), 0);
    assert_eq!(cli(&data, &["exp", "estimate", "--gb", "-1"]), 4);
    assert_eq!(cli(&data, &["exp", "estimate", "--gb", "1", "--mode", "audio"]), 4);
    assert_eq!(cli(&data, &["no-such-command"]), 4);
    assert_eq!(cli(&data, &["--help"]), 0);
}

#[test]
fn cli_experiment_run_writes_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    let script = tmp.path().join("script.json");
    let refs = tmp.path().join("refs.csv");
    std::fs::write(
        &script,
        serde_json::to_vec(&json!({
            "stimuli": [
                {"stimulus_id": "calm", "duration_ms": 6000,
                 "fragment": {"eeg_tones": [{"frequency_hz": 10.0, "amplitude": 500.0}]}},
                {"stimulus_id": "tense", "duration_ms": 6000,
                 "fragment": {"eeg_tones": [{"frequency_hz": 20.0, "amplitude": 500.0}]}}
            ]
        }))
        .unwrap(),
    )
    .unwrap();
    std::fs::write(&refs, "stimulus_id,ref_arousal\ncalm,-1.0\ntense,1.5\n").unwrap();
    let out = tmp.path().join("out");
    let code = cli(
        &data,
        &[
            "exp", "run", "--script", script.to_str().unwrap(), "--refs", refs.to_str().unwrap(),
            "--out", out.to_str().unwrap(), "--session-id", "exp-a",
        ],
    );
    assert_eq!(code, 0);
    let csv = std::fs::read_to_string(out.join("results.csv")).unwrap();
    assert_eq!(csv.lines().next().unwrap(), "stimulus_id,mean_arousal,ref_arousal,delta");
    assert_eq!(csv.lines().count(), 3);
    assert!(out.join("plot.json").exists());
    let cmp: serde_json::Value = serde_json::from_slice(&std::fs::read(out.join("comparison.json")).unwrap()).unwrap();
    assert!((cmp["pearson_r"].as_f64().unwrap() - 1.0).abs() < 1e-9);

    let again = cli(
        &data,
        &["exp", "run", "--script", script.to_str().unwrap(), "--out", out.to_str().unwrap(), "--session-id", "exp-a"],
    );
    assert_eq!(again, 4);
    let missing = cli(&data, &["exp", "run", "--script", "/nonexistent.json", "--out", out.to_str().unwrap()]);
    assert_eq!(missing, 3);
}

#[test]
fn sink_reports_service_errors() {
    let tmp = tempfile::tempdir().unwrap();
    let srv = common::server_at(tmp.path());
    let mut sink = HttpSink::new(&srv.url());
    match sink.stop("ghost") {
        Err(SinkError::Rejected { code, .. }) => assert_eq!(code, "not_found"),
        other => panic!("unexpected {other:?}"),
    }
    let report: Result<ChainReport, _> = HttpSink::new("http://127.0.0.1:9").verify("x");
    assert!(matches!(report, Err(SinkError::Transport(_))));
}
