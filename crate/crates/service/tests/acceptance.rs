//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit on any
//! failure. Every expected value comes from an oracle written here, not from
//! the implementation under test.

mod common;

use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::sync::Arc;
use std::time::{Duration, Instant};

use fprig_core::analysis::{arousal_proxy, band_power, blur_faces};
use fprig_core::chain::{verify_chain, AttestationStore, Verdict};
use fprig_core::des::extract_reports;
use fprig_core::experiment::{
    estimate_recording_days, run_stimulus_session, CorpusMode, RateConstants, StimulusScript,
};
use fprig_core::ingest::{Engine, IngestEnvelope};
use fprig_core::media::RgbImage;
use fprig_core::model::{CognitionRecord, FaceBox, Record, RecordKind, SessionConfig, Speaker, TranscriptRecord};
use fprig_core::sim::{gen_eeg, render_scene, run_scenario, scenario_envelopes, EegTone, ImageScriptEntry, IngestSink, Scenario};
use fprig_core::store::SessionDir;
use fprig_service::client::HttpSink;
use proptest::prelude::*;
use proptest::test_runner::{Config, TestRunner};

type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        if !$cond {
            return Err(format!($($msg)+));
        }
    };
}

/// Deterministic test-side generator.
struct SplitMix(u64);

impl SplitMix {
    fn next(&mut self) -> u64 {
        self.0 = self.0.wrapping_add(0x9e37_79b9_7f4a_7c15);
        let mut z = self.0;
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^ (z >> 31)
    }

    fn unit(&mut self) -> f64 {
        (self.next() >> 11) as f64 / (1u64 << 53) as f64
    }

    fn below(&mut self, n: u64) -> u64 {
        self.next() % n
    }
}

// Oracle band edges in Hz; index order theta, alpha, betaL, betaH, gamma.
const EDGES: [f64; 6] = [4.0, 8.0, 12.0, 16.0, 25.0, 45.0];

/// Unwindowed one-sided DFT power per band, brute force.
fn dft_band_powers(x: &[f64], fs: f64) -> [f64; 5] {
    let n = x.len();
    let mut out = [0.0; 5];
    for k in 0..=n / 2 {
        let (mut re, mut im) = (0.0, 0.0);
        for (i, v) in x.iter().enumerate() {
            let a = -2.0 * std::f64::consts::PI * (k * i) as f64 / n as f64;
            re += v * a.cos();
            im += v * a.sin();
        }
        let scale = if k == 0 || k == n / 2 { 1.0 } else { 2.0 };
        let p = scale * (re * re + im * im) / (n * n) as f64;
        let f = k as f64 * fs / n as f64;
        if let Some(b) = (0..5).find(|&b| EDGES[b] <= f && f < EDGES[b + 1]) {
            out[b] += p;
        }
    }
    out
}

fn band_power_oracle() -> Outcome {
    let started = Instant::now();
    let mut worst = 0.0f64;
    for (band, freq) in [6.0, 10.0, 14.0, 20.0, 35.0].into_iter().enumerate() {
        let mut s = Scenario::new(2000);
        s.eeg_tones.push(EegTone {
            channels: vec![],
            frequency_hz: freq,
            amplitude: 1000.0,
            t_start_ms: 0,
            t_end_ms: 2000,
        });
        let frames = gen_eeg(&s, 0, 2000).map_err(|e| e.to_string())?;
        ensure!(frames.len() == 256, "expected 256 frames, got {}", frames.len());
        let bp = band_power(&frames).map_err(|e| e.to_string())?;
        let total: f64 = bp.avg.iter().sum();
        let share = bp.avg[band] / total;
        ensure!(share >= 0.95, "{freq} Hz: named band holds {share:.4} of power");
        let samples: Vec<f64> = frames.iter().map(|f| f64::from(f.channels[0])).collect();
        let oracle = dft_band_powers(&samples, 128.0);
        let oracle_share = oracle[band] / oracle.iter().sum::<f64>();
        ensure!(oracle_share >= 0.95, "{freq} Hz: oracle share {oracle_share:.4}");
        let rel = (bp.avg[band] - oracle[band]).abs() / oracle[band];
        ensure!(rel <= 0.02, "{freq} Hz: band power {} vs oracle {} ({rel:.4})", bp.avg[band], oracle[band]);
        worst = worst.max(rel);
    }
    let elapsed = started.elapsed();
    ensure!(elapsed < Duration::from_secs(1), "took {elapsed:?}");
    Ok(format!("worst relative error {worst:.2e}, {elapsed:?}"))
}

fn cognition(excitement: f64, stress: f64) -> CognitionRecord {
    CognitionRecord {
        t_ms: 0,
        engagement: 0.0,
        excitement,
        stress,
        relaxation: 0.0,
        interest: 0.0,
        focus: 0.0,
    }
}

fn arousal_bounds() -> Outcome {
    for (e, s, want) in [(0.0, 0.0, -2.5), (0.5, 0.5, 0.0), (1.0, 1.0, 2.5)] {
        let got = arousal_proxy(&cognition(e, s));
        ensure!(got == want, "({e}, {s}) gave {got}, want {want}");
    }
    let mut rng = SplitMix(0xa5);
    let (mut lo, mut hi) = (f64::MAX, f64::MIN);
    for _ in 0..100_000 {
        let c = CognitionRecord {
            t_ms: rng.next(),
            engagement: rng.unit(),
            excitement: rng.unit(),
            stress: rng.unit(),
            relaxation: rng.unit(),
            interest: rng.unit(),
            focus: rng.unit(),
        };
        let a = arousal_proxy(&c);
        ensure!((-2.5..=2.5).contains(&a), "out of range: {a} for {c:?}");
        lo = lo.min(a);
        hi = hi.max(a);
    }
    Ok(format!("exact at extremes; 1e5 random in [{lo:.4}, {hi:.4}]"))
}

/// Segment index whose records reference `rel`.
fn owner_segment(dir: &SessionDir, count: u32, rel: &str) -> Option<u32> {
    (0..count).find(|&i| {
        dir.read_segment(i).unwrap().records.iter().any(|r| match r {
            Record::Image(m) | Record::Audio(m) => m.path == rel,
            _ => false,
        })
    })
}

fn chain_soundness() -> Outcome {
    let started = Instant::now();
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let store = Arc::new(AttestationStore::in_memory());
    let engine = Engine::new(tmp.path(), store.clone());
    let mut rng = SplitMix(0x5eed);
    let (mut segment_flips, mut media_flips) = (0, 0);
    for run in 0..100u64 {
        let segments = 3 + rng.below(6);
        let mut s = Scenario::demo(segments * 2000, run);
        s.segment_duration_ms = 2000;
        s.session_id = Some(format!("chain-{run}"));
        let id = s.session_id();
        let summary = run_scenario(&s, &mut &engine).map_err(|e| e.to_string())?;
        let count = summary.manifest.segment_count;
        ensure!(count >= 3, "{id}: only {count} segments");
        let dir = SessionDir::new(tmp.path(), &id);
        let before = verify_chain(&dir, store.as_ref()).map_err(|e| e.to_string())?;
        ensure!(before.verdict == Verdict::Intact, "{id}: fresh session is {:?}", before.verdict);

        let (path, mutated) = if rng.below(2) == 0 {
            segment_flips += 1;
            let i = rng.below(u64::from(count)) as u32;
            (dir.segment_path(i), i)
        } else {
            media_flips += 1;
            let mut media: Vec<_> = std::fs::read_dir(dir.media_dir())
                .map_err(|e| e.to_string())?
                .map(|e| e.unwrap().file_name().into_string().unwrap())
                .collect();
            media.sort();
            let name = media[rng.below(media.len() as u64) as usize].clone();
            let rel = format!("media/{name}");
            let owner = owner_segment(&dir, count, &rel).ok_or(format!("{id}: {rel} unreferenced"))?;
            (dir.root().join(&rel), owner)
        };
        let mut bytes = std::fs::read(&path).map_err(|e| e.to_string())?;
        let at = rng.below(bytes.len() as u64) as usize;
        bytes[at] ^= 1 << rng.below(8);
        std::fs::write(&path, &bytes).map_err(|e| e.to_string())?;

        let after = verify_chain(&dir, store.as_ref()).map_err(|e| e.to_string())?;
        ensure!(after.verdict == Verdict::Tampered, "{id}: flip in {path:?} gave {:?}", after.verdict);
        let bad = after.first_bad_index.ok_or(format!("{id}: no first_bad_index"))?;
        ensure!(bad <= mutated, "{id}: first_bad_index {bad} > mutated {mutated}");
        engine.evict(&id);
    }
    let elapsed = started.elapsed();
    ensure!(elapsed < Duration::from_secs(60), "took {elapsed:?}");
    Ok(format!("100/100 detected ({segment_flips} segment, {media_flips} media flips), {elapsed:?}"))
}

fn table_reproduction() -> Outcome {
    // Oracle rates: 40 GB takes 1.1 days in full mode and 52 days in text mode.
    let full = 40.0 / 1.1;
    let text = 40.0 / 52.0;
    let rates = RateConstants::default();
    ensure!(
        (rates.full_gb_per_day - full).abs() <= 1e-12 * full && (rates.text_gb_per_day - text).abs() <= 1e-12 * text,
        "default rates {rates:?} differ from back-derived {full}, {text}"
    );
    let rows = [
        (5.0, CorpusMode::Full, "0.14"),
        (40.0, CorpusMode::Full, "1.1"),
        (46080.0, CorpusMode::Full, "1300"),
        (5.0, CorpusMode::Text, "6.5"),
        (40.0, CorpusMode::Text, "52"),
        (46080.0, CorpusMode::Text, "60000"),
    ];
    for (gb, mode, want) in rows {
        let est = estimate_recording_days(gb, mode, &rates).map_err(|e| e.to_string())?;
        ensure!(est.reported == want, "{gb} GB {mode:?}: {} ({}), want {want}", est.reported, est.days);
        let want_num: f64 = want.parse().unwrap();
        let rounded = round2(est.days);
        ensure!((rounded - want_num).abs() <= 1e-9 * want_num, "{gb} GB {mode:?}: {rounded} vs {want_num}");
    }
    Ok("6/6 entries at 2 significant figures".into())
}

/// Independent two-significant-figure rounding.
fn round2(x: f64) -> f64 {
    let mag = 10f64.powi(x.abs().log10().floor() as i32 - 1);
    (x / mag).round() * mag
}

fn count_law() -> Outcome {
    let started = Instant::now();
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let srv = common::server_at(tmp.path());
    let mut sink = HttpSink::new(&srv.url());
    let s = Scenario::new(60_000);
    let summary = run_scenario(&s, &mut sink).map_err(|e| e.to_string())?;
    let id = summary.session_id;
    let recs = sink.playback(&id, 0, u64::MAX, &RecordKind::ALL).map_err(|e| e.to_string())?;
    let mut counts: BTreeMap<RecordKind, u64> = BTreeMap::new();
    for r in &recs {
        *counts.entry(r.kind()).or_default() += 1;
    }
    let n = |k: RecordKind| counts.get(&k).copied().unwrap_or(0);
    let (gsr, img, eeg, bp) = (n(RecordKind::Gsr), n(RecordKind::Image), n(RecordKind::Eeg), n(RecordKind::BandPower));
    ensure!(gsr.abs_diff(60) <= 1, "gsr {gsr}");
    ensure!(img.abs_diff(60) <= 1, "images {img}");
    ensure!(eeg.abs_diff(7680) <= 1, "eeg {eeg}");
    ensure!((59..=60).contains(&bp), "band power {bp}");
    let manifest = sink.manifest(&id).map_err(|e| e.to_string())?;
    ensure!(manifest.segment_count >= 1, "no sealed segment");
    let elapsed = started.elapsed();
    ensure!(elapsed < Duration::from_secs(120), "took {elapsed:?}");
    Ok(format!(
        "gsr {gsr}, image {img}, eeg {eeg}, band_power {bp}, segments {} over HTTP, {elapsed:?}",
        manifest.segment_count
    ))
}

fn line(t: u64, text: &str) -> TranscriptRecord {
    TranscriptRecord {
        t_start_ms: t,
        t_end_ms: t + 1000,
        speaker: Speaker::Wearer,
        text: text.into(),
    }
}

fn des_extraction() -> Outcome {
    let r = extract_reports(&[line(0, "start ziggy I was thinking about lunch end ziggy")]);
    ensure!(r.len() == 1 && r[0].text == "I was thinking about lunch" && r[0].terminated, "example 1: {r:?}");
    let r = extract_reports(&[line(0, "nice weather today"), line(2000, "indeed it is")]);
    ensure!(r.is_empty(), "example 2: {r:?}");
    let r = extract_reports(&[line(0, "start ziggy feeling tense")]);
    ensure!(r.len() == 1 && !r[0].terminated && r[0].text == "feeling tense", "example 3: {r:?}");

    let mut runner = TestRunner::new(Config {
        cases: 256,
        failure_persistence: None,
        ..Config::default()
    });
    let strategy = (
        prop::collection::vec("[a-y]{1,8}( [a-y]{1,8}){0,4}", 0..8),
        prop::collection::vec("[a-y]{1,8}", 0..8),
        any::<bool>(),
    );
    runner
        .run(&strategy, |(bodies, fillers, split)| {
            let mut words: Vec<String> = Vec::new();
            for (i, b) in bodies.iter().enumerate() {
                if let Some(f) = fillers.get(i) {
                    words.push(f.clone());
                }
                words.push("START".into());
                words.push("ziggy".into());
                words.extend(b.split(' ').map(str::to_string));
                words.push("End".into());
                words.push("Ziggy".into());
            }
            let records: Vec<TranscriptRecord> = if split {
                words.iter().enumerate().map(|(i, w)| line(i as u64 * 1000, w)).collect()
            } else {
                vec![line(0, &words.join(" "))]
            };
            let reports = extract_reports(&records);
            prop_assert_eq!(reports.len(), bodies.len());
            for (r, b) in reports.iter().zip(&bodies) {
                prop_assert!(r.terminated);
                prop_assert_eq!(&r.text, b);
            }
            Ok(())
        })
        .map_err(|e| e.to_string())?;
    Ok("3 examples verbatim; k pairs give k reports over 256 cases".into())
}

/// Population variance over every channel value inside `b`.
fn box_variance(img: &RgbImage, b: &FaceBox) -> f64 {
    let mut vals = Vec::new();
    for y in b.y..b.y + b.h {
        for x in b.x..b.x + b.w {
            let i = ((y * img.width + x) * 3) as usize;
            vals.extend(img.pixels[i..i + 3].iter().map(|&v| f64::from(v)));
        }
    }
    let n = vals.len() as f64;
    let mean = vals.iter().sum::<f64>() / n;
    vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n
}

fn blur_contract() -> Outcome {
    let mut rng = SplitMix(0xb1);
    let mut worst = 0.0f64;
    for i in 0..50u64 {
        // Up to two faces, one per half of the frame so they never overlap.
        let faces = 1 + rng.below(2) as u32;
        let boxes: Vec<FaceBox> = (0..faces)
            .map(|k| {
                let (w, h) = (24 + rng.below(56) as u32, 24 + rng.below(80) as u32);
                let x = k * 160 + rng.below(u64::from(160 - w)) as u32;
                let y = rng.below(u64::from(240 - h)) as u32;
                FaceBox::new(x, y, w, h)
            })
            .collect();
        let entry = ImageScriptEntry {
            t_ms: 0,
            scene: format!("scene-{i}"),
            face_boxes: boxes.clone(),
            texts: vec!["EXIT".into()],
            labels: vec![],
        };
        let img = render_scene(i, Some(&entry));
        let before = img.encode_ppm();
        let after = blur_faces(&before, &boxes).map_err(|e| e.to_string())?;
        ensure!(after.len() == before.len(), "image {i}: length changed");
        let (out, header) = RgbImage::decode_ppm(&after).map_err(|e| e.to_string())?;
        ensure!(after[..header] == before[..header], "image {i}: header changed");
        for y in 0..img.height {
            for x in 0..img.width {
                if !boxes.iter().any(|b| x >= b.x && x < b.x + b.w && y >= b.y && y < b.y + b.h) {
                    let p = ((y * img.width + x) * 3) as usize;
                    ensure!(out.pixels[p..p + 3] == img.pixels[p..p + 3], "image {i}: pixel ({x},{y}) changed");
                }
            }
        }
        for b in &boxes {
            let ratio = box_variance(&out, b) / box_variance(&img, b);
            ensure!(ratio <= 0.10, "image {i}: box {b:?} keeps {ratio:.3} of its variance");
            worst = worst.max(ratio);
        }
    }
    Ok(format!("50/50 images; worst in-box variance kept {:.2}%", worst * 100.0))
}

fn harness_ordering() -> Outcome {
    // Oracle: a noise-free pure tone puts all power in one band, and a
    // constant GSR trace normalizes to g = 0.5. With eps-guarded ratios:
    //   alpha only: excitement = stress = 0.5*squash(0) + 0.25 = 0.25 -> -1.25
    //   betaH only: excitement = stress = 0.5*squash(inf) + 0.25 = 0.75 -> +1.25
    // The calm window ending in the stimulus boundary mixes both, so the calm
    // mean lies in [-1.25, (19*-1.25 + 2.5)/20].
    const CALM: f64 = -1.25;
    const AGITATED: f64 = 1.25;
    let calm_upper = (19.0 * CALM + 2.5) / 20.0;
    let script: StimulusScript = serde_json::from_value(serde_json::json!({
        "stimuli": [
            {"stimulus_id": "calm", "fragment": {"eeg_tones": [{"frequency_hz": 10.0, "amplitude": 1000.0}]}},
            {"stimulus_id": "agitated", "fragment": {"eeg_tones": [{"frequency_hz": 20.0, "amplitude": 1000.0}]}}
        ]
    }))
    .map_err(|e| e.to_string())?;
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let srv = common::server_at(tmp.path());
    let mut sink = HttpSink::new(&srv.url());
    let results = run_stimulus_session(&script, &SessionConfig::new("harness"), 1, &mut sink).map_err(|e| e.to_string())?;
    let (calm, agitated) = (results[0].mean_arousal, results[1].mean_arousal);
    ensure!(calm < agitated, "not ordered: calm {calm} vs agitated {agitated}");
    ensure!((CALM - 1e-6..=calm_upper).contains(&calm), "calm {calm} outside [{CALM}, {calm_upper}]");
    ensure!((agitated - AGITATED).abs() <= 0.01, "agitated {agitated}, oracle {AGITATED}");
    Ok(format!("calm {calm:.4} < agitated {agitated:.4} (oracle {CALM} / {AGITATED})"))
}

fn segment_bytes(dir: &Path, id: &str) -> Vec<Vec<u8>> {
    let d = SessionDir::new(dir, id);
    let m = d.read_manifest().unwrap();
    (0..m.segment_count).map(|i| d.read_segment_bytes(i).unwrap()).collect()
}

fn replay(url: &str, config: &SessionConfig, envelopes: &[IngestEnvelope]) -> Result<(), String> {
    let mut sink = HttpSink::new(url);
    match sink.start(config) {
        Ok(_) => {}
        Err(fprig_core::sim::SinkError::Rejected { code, .. }) if code == "conflict" => {}
        Err(e) => return Err(e.to_string()),
    }
    for e in envelopes {
        sink.ingest(e).map_err(|e| e.to_string())?;
    }
    Ok(())
}

fn durability() -> Outcome {
    // 3 s segments against 5 s audio chunks so derived records straddle seals.
    let mut s = Scenario::demo(20_000, 11);
    s.segment_duration_ms = 3000;
    let config = s.session_config();
    let id = config.session_id.clone();
    let log = scenario_envelopes(&s, &id).map_err(|e| e.to_string())?;

    let reference_dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    {
        let srv = common::server_at(reference_dir.path());
        replay(&srv.url(), &config, &log)?;
        HttpSink::new(&srv.url()).stop(&id).map_err(|e| e.to_string())?;
    }
    let reference = segment_bytes(reference_dir.path(), &id);

    let mut rng = SplitMix(0xd0);
    let mut cuts = vec![0, 1, log.len() / 2, log.len() - 1, log.len()];
    cuts.extend((0..5).map(|_| rng.below(log.len() as u64) as usize));
    for &cut in &cuts {
        let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
        {
            let srv = common::server_at(dir.path());
            replay(&srv.url(), &config, &log[..cut])?;
        }
        let srv = common::server_at(dir.path());
        replay(&srv.url(), &config, &log)?;
        HttpSink::new(&srv.url()).stop(&id).map_err(|e| e.to_string())?;
        let got = segment_bytes(dir.path(), &id);
        ensure!(got.len() == reference.len(), "cut {cut}: {} segments vs {}", got.len(), reference.len());
        for (i, (a, b)) in got.iter().zip(&reference).enumerate() {
            ensure!(a == b, "cut {cut}: segment {i} differs");
        }
    }
    Ok(format!("{} prefixes of {} envelopes, {} segments byte-identical", cuts.len(), log.len(), reference.len()))
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 9] = [
        ("band-power oracle", band_power_oracle),
        ("arousal bounds", arousal_bounds),
        ("chain soundness", chain_soundness),
        ("recording-days table", table_reproduction),
        ("throughput count law", count_law),
        ("DES extraction", des_extraction),
        ("blur contract", blur_contract),
        ("harness ordering", harness_ordering),
        ("durability and idempotency", durability),
    ];
    let mut failed = 0;
    for (name, check) in criteria {
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        match outcome {
            Ok(detail) => println!("PASS  {name}: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL  {name}: {detail}");
            }
        }
    }
    println!("acceptance: {}/{} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
