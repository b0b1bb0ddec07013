use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::path::Path;
use std::time::Duration;

use measground::bundle::{load_capture_bundle, save_capture_bundle};
use measground::clients::{AnnotatorTranscriptEntry, HttpAnnotator, HttpJudge, JudgeTranscriptEntry, TranscriptAnnotator, TranscriptJudge};
use measground::manifest::{export_manifest, load_manifest, read_jsonl};
use measground::views::{emit_report, load_meas_xyz, load_rendered, read_json, save_meas_xyz, save_rendered, LostSignalSummary};
use measground::Error;
use measground_core::bracketsup::{aggregate, annotate, build_samples, CandidatePayload, SampleSource};
use measground_core::capture::{corpus_spec, synth_capture, CfaPattern, SyntheticSceneSpec};
use measground_core::dataset::{build_manifest, PipelineConfig};
use measground_core::image::Image3;
use measground_core::isp::{render_proxy, RenderParams};
use measground_core::lost_signal::analyze;
use measground_core::meas_xyz::{meas_xyz_transform, MeasXyzImage};
use measground_core::mock::HeuristicAnnotator;
use measground_core::text_metrics::judge;
use measground_core::Mat3;
use proptest::prelude::*;

fn sidecar(dir: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(dir.join("capture.json")).unwrap()).unwrap()
}

fn write_sidecar(dir: &Path, v: &serde_json::Value) {
    std::fs::write(dir.join("capture.json"), serde_json::to_string(v).unwrap()).unwrap();
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]
    #[test]
    fn bundle_round_trip(seed in any::<u64>(), w2 in 1usize..8, h2 in 1usize..8, cfa in 0usize..4,
                         black in prop::array::uniform4(0.0f64..500.0), m in prop::array::uniform3(-0.9f64..0.9),
                         iso in 1.0f64..10000.0, wb in prop::array::uniform3(0.1f64..4.0)) {
        let spec = SyntheticSceneSpec {
            width: 2 * w2, height: 2 * h2, background: 0.4, noise_sigma: 0.3, cfa_pattern: CfaPattern::ALL[cfa],
            white_level: 4000.0, wb_gains: wb,
            cam_to_xyz: Mat3([[1.0, m[0], 0.0], [m[1], 1.0, 0.0], [0.0, m[2], 1.0]]),
            ..Default::default()
        };
        let mut capture = synth_capture(&spec, seed).unwrap().capture;
        capture.black_level = black;
        capture.metadata.iso = iso;
        let dir = tempfile::tempdir().unwrap();
        save_capture_bundle(&capture, dir.path()).unwrap();
        prop_assert_eq!(load_capture_bundle(dir.path()).unwrap(), capture);
    }
}

#[test]
fn bundle_preserves_boundary_values() {
    let spec = SyntheticSceneSpec { width: 4, height: 4, background: 10.0, ..Default::default() };
    let mut capture = synth_capture(&spec, 0).unwrap().capture;
    assert!(capture.mosaic.codes().contains(&65535));
    capture.cam_to_xyz.0[0][1] = -0.1234567;
    let dir = tempfile::tempdir().unwrap();
    save_capture_bundle(&capture, dir.path()).unwrap();
    let back = load_capture_bundle(dir.path()).unwrap();
    assert_eq!(back.cam_to_xyz.0[0][1], -0.1234567);
    assert_eq!(back, capture);
}

#[test]
fn sidecar_variants_and_errors() {
    let spec = SyntheticSceneSpec { width: 4, height: 4, black_level: 64.0, white_level: 1023.0, ..Default::default() };
    let capture = synth_capture(&spec, 0).unwrap().capture;
    let dir = tempfile::tempdir().unwrap();
    save_capture_bundle(&capture, dir.path()).unwrap();
    let good = sidecar(dir.path());

    let mut v = good.clone();
    v["black_level"] = serde_json::json!(64);
    write_sidecar(dir.path(), &v);
    let c = load_capture_bundle(dir.path()).unwrap();
    assert_eq!(c.black_level, [64.0; 4]);
    assert_eq!(c.white_level, 1023.0);

    let cases: Vec<(&str, serde_json::Value)> = vec![
        ("iso", serde_json::json!(0)),
        ("cam_to_xyz", serde_json::json!([[0, 0, 0], [0, 0, 0], [0, 0, 0]])),
        ("cfa_pattern", serde_json::json!("RGBW")),
        ("bogus", serde_json::json!(1)),
        ("white_level", serde_json::json!(10)),
    ];
    for (key, value) in cases {
        let mut v = good.clone();
        if key == "iso" {
            v["metadata"]["iso"] = value;
        } else {
            v[key] = value;
        }
        write_sidecar(dir.path(), &v);
        let err = load_capture_bundle(dir.path()).unwrap_err();
        assert!(matches!(err, Error::MalformedSidecar { .. }), "{key}: {err}");
        assert_eq!(err.exit_code(), 1);
    }

    write_sidecar(dir.path(), &good);
    std::fs::remove_file(dir.path().join("mosaic.pgm")).unwrap();
    let err = load_capture_bundle(dir.path()).unwrap_err();
    assert!(matches!(err, Error::MissingFile(_)));
    assert_eq!(err.exit_code(), 2);

    // odd dimensions
    let mut pgm = b"P5\n3 2\n65535\n".to_vec();
    pgm.extend(std::iter::repeat_n(0u8, 12));
    std::fs::write(dir.path().join("mosaic.pgm"), pgm).unwrap();
    assert!(matches!(load_capture_bundle(dir.path()).unwrap_err(), Error::DimensionMismatch { .. }));
}

fn view(seed: u64) -> (MeasXyzImage, String) {
    let capture = synth_capture(&corpus_spec(seed as usize, 1, 16, 12), seed).unwrap().capture;
    (meas_xyz_transform(&capture).unwrap(), capture.raw_path)
}

#[test]
fn meas_xyz_export_is_stable() {
    let dir = tempfile::tempdir().unwrap();
    let (z, raw) = view(3);
    let stem = dir.path().join("a");
    save_meas_xyz(&z, Some(&raw), &stem).unwrap();
    let (loaded, header) = load_meas_xyz(&stem).unwrap();
    assert_eq!((header.width, header.height, header.channels, header.range), (16, 12, 3, [0.0, 1.0]));
    assert_eq!(header.raw_path.as_deref(), Some(raw.as_str()));
    for (a, b) in loaded.image().data.iter().zip(&z.image().data) {
        for c in 0..3 {
            assert_eq!(a[c], b[c] as f32 as f64);
        }
    }
    let stem2 = dir.path().join("b");
    save_meas_xyz(&loaded, Some(&raw), &stem2).unwrap();
    assert_eq!(std::fs::read(stem.with_extension("bin")).unwrap(), std::fs::read(stem2.with_extension("bin")).unwrap());
    assert_eq!(load_meas_xyz(&stem2).unwrap().0, loaded);
}

#[test]
fn rendered_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let (z, _) = view(4);
    for params in [
        RenderParams::default(),
        RenderParams { bit_depth: 12, exposure_gain: 2.0, ..Default::default() },
        RenderParams { quantize: false, exposure_gain: 0.5, ..Default::default() },
    ] {
        let r = render_proxy(&z, &params).unwrap();
        let stem = dir.path().join(format!("r{}", params.bit_depth));
        save_rendered(&r, &stem).unwrap();
        assert_eq!(load_rendered(&stem).unwrap(), r);
    }
}

#[test]
fn lost_signal_files() {
    let dir = tempfile::tempdir().unwrap();
    let (z, _) = view(5);
    let report = analyze(&z, &RenderParams { exposure_gain: 4.0, ..Default::default() }, 2.0 / 255.0, 16).unwrap();
    emit_report(&report, dir.path()).unwrap();
    let summary: LostSignalSummary = read_json(&dir.path().join("summary.json")).unwrap();
    assert_eq!(summary, LostSignalSummary::from(&report));
    let csv = std::fs::read_to_string(dir.path().join("histogram.csv")).unwrap();
    assert_eq!(csv.lines().next(), Some("bin_lo,bin_hi,count"));
    assert_eq!(csv.lines().count(), 1 + 16);
    let total: u64 = csv.lines().skip(1).map(|l| l.rsplit(',').next().unwrap().parse::<u64>().unwrap()).sum();
    assert_eq!(total, 16 * 12);

    // zero residual: identity transfer, no quantization, nothing clipped
    let flat = MeasXyzImage::new("flat".into(), z.metadata.clone(), Image3::from_vec(2, 2, vec![[0.1; 3]; 4]).unwrap()).unwrap();
    let params = RenderParams {
        quantize: false,
        transfer: measground_core::isp::Transfer::Identity,
        xyz_to_linear_srgb: Mat3::IDENTITY,
        ..Default::default()
    };
    let zero = analyze(&flat, &params, 2.0 / 255.0, 8).unwrap();
    let out = dir.path().join("zero");
    emit_report(&zero, &out).unwrap();
    let mask = measground::pnm::Pnm::read(&out.join("lost_mask.pgm")).unwrap();
    assert!(mask.samples.iter().all(|&s| s == 0));
    let csv = std::fs::read_to_string(out.join("histogram.csv")).unwrap();
    assert_eq!(csv.lines().count(), 2);
}

fn pool() -> Vec<measground_core::bracketsup::TrainingSample> {
    let mut samples = Vec::new();
    for i in 0..6 {
        let capture = synth_capture(&corpus_spec(i, 2, 16, 16), i as u64).unwrap().capture;
        let z = meas_xyz_transform(&capture).unwrap();
        let mut cands = Vec::new();
        for e in [0.5, 1.0, 2.0] {
            let r = render_proxy(&z, &RenderParams::default().with_gain(e)).unwrap();
            cands.extend(annotate(&r, "synth", &HeuristicAnnotator, 0).unwrap().candidates);
        }
        let src = SampleSource::from_capture(&capture, format!("measxyz/{}.bin", capture.capture_id));
        samples.extend(build_samples(&src, &aggregate(&cands).unwrap()));
    }
    samples
}

#[test]
fn manifest_round_trip_and_schema_errors() {
    let dir = tempfile::tempdir().unwrap();
    let m = build_manifest(pool(), &PipelineConfig { target_size: 15, seed: 9, ..Default::default() }).unwrap();
    let path = dir.path().join("manifest.jsonl");
    export_manifest(&m, &path).unwrap();
    assert!(dir.path().join("manifest.stats.json").is_file());
    assert_eq!(load_manifest(&path).unwrap(), m);

    let text = std::fs::read_to_string(&path).unwrap();
    let mut lines: Vec<&str> = text.lines().collect();
    lines[2] = "{\"capture_id\": 5}";
    std::fs::write(&path, lines.join("\n")).unwrap();
    match load_manifest(&path).unwrap_err() {
        Error::SchemaViolation { line, .. } => assert_eq!(line, 3),
        e => panic!("unexpected {e}"),
    }
}

fn proxy() -> measground_core::isp::RenderedRgb {
    let (z, _) = view(6);
    render_proxy(&z, &RenderParams::default()).unwrap()
}

fn payload(q: &str) -> CandidatePayload {
    CandidatePayload { question: q.into(), answer: "yes".into(), score: 0.7, question_type: "verification".into(), template_id: "t".into() }
}

#[test]
fn transcript_annotator_scripts_failures() {
    let p = proxy();
    let entry = |error: Option<&str>, candidates: Option<Vec<CandidatePayload>>| AnnotatorTranscriptEntry {
        capture_id: p.capture_id.clone(),
        exposure_gain: 1.0,
        candidates,
        error: error.map(Into::into),
        malformed: None,
    };
    let client = TranscriptAnnotator::new(vec![
        entry(Some("timeout"), None),
        entry(Some("timeout"), None),
        entry(None, Some(vec![payload("Is it bright?")])),
    ]);
    let out = annotate(&p, "synth", &client, 3).unwrap();
    assert_eq!(out.retries, 2);
    assert_eq!(out.candidates.len(), 1);

    let client = TranscriptAnnotator::new(vec![entry(Some("timeout"), None)]);
    assert!(matches!(annotate(&p, "synth", &client, 2), Err(measground_core::Error::AnnotatorUnavailable(_))));

    let client = TranscriptAnnotator::new(vec![AnnotatorTranscriptEntry {
        malformed: Some("{\"candidates\": 3}".into()),
        ..entry(None, None)
    }]);
    let out = annotate(&p, "synth", &client, 0).unwrap();
    assert!(out.candidates.is_empty());
    assert_eq!(out.malformed.as_deref(), Some("{\"candidates\": 3}"));
}

#[test]
fn transcript_judge() {
    let e = |verdict: &str| JudgeTranscriptEntry {
        question: "q".into(),
        reference: "r".into(),
        prediction: "p".into(),
        verdict: Some(verdict.into()),
        error: None,
    };
    assert!(judge("q", "r", "p", &TranscriptJudge::new(vec![e("correct")]), 0).unwrap());
    assert!(!judge("q", "r", "p", &TranscriptJudge::new(vec![e("incorrect")]), 0).unwrap());
    assert!(matches!(judge("q", "r", "p", &TranscriptJudge::new(vec![e("perhaps")]), 0), Err(measground_core::Error::MalformedVerdict(_))));
    assert!(matches!(judge("x", "r", "p", &TranscriptJudge::new(vec![e("correct")]), 1), Err(measground_core::Error::JudgeUnavailable(_))));
}

/// Serves `responses` in order, one connection each, returning the request bodies.
fn serve(responses: Vec<(u16, String)>) -> (String, std::thread::JoinHandle<Vec<String>>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}/", listener.local_addr().unwrap());
    let handle = std::thread::spawn(move || {
        let mut bodies = Vec::new();
        for (status, body) in responses {
            let (stream, _) = listener.accept().unwrap();
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut len = 0;
            loop {
                let mut line = String::new();
                reader.read_line(&mut line).unwrap();
                if line == "\r\n" || line.is_empty() {
                    break;
                }
                if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
                    len = v.trim().parse().unwrap();
                }
            }
            let mut buf = vec![0; len];
            reader.read_exact(&mut buf).unwrap();
            bodies.push(String::from_utf8(buf).unwrap());
            let mut stream = stream;
            write!(stream, "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}", body.len())
                .unwrap();
        }
        bodies
    });
    (url, handle)
}

#[test]
fn http_annotator_wire_format() {
    let p = proxy();
    let ok = serde_json::json!({ "candidates": [payload("Is it bright?")] }).to_string();
    let (url, handle) = serve(vec![(503, "{}".into()), (200, ok)]);
    let client = HttpAnnotator::new(url, Duration::from_secs(10));
    let out = annotate(&p, "synth", &client, 2).unwrap();
    assert_eq!(out.retries, 1);
    assert_eq!(out.candidates[0].question, "Is it bright?");
    let bodies = handle.join().unwrap();
    let req: serde_json::Value = serde_json::from_str(&bodies[1]).unwrap();
    assert_eq!(req["capture_id"], p.capture_id.as_str());
    assert_eq!(req["exposure_gain"], 1.0);
    use base64::Engine;
    let ppm = base64::engine::general_purpose::STANDARD.decode(req["image"].as_str().unwrap()).unwrap();
    assert!(ppm.starts_with(b"P6\n16 12\n255\n"));
}

#[test]
fn http_judge_wire_format() {
    let (url, handle) = serve(vec![(200, r#"{"verdict": "correct"}"#.into()), (200, r#"{"verdict": 1}"#.into())]);
    let client = HttpJudge::new(url, Duration::from_secs(10));
    assert!(judge("q?", "yes", "Yes", &client, 0).unwrap());
    assert!(matches!(judge("q?", "yes", "no", &client, 0), Err(measground_core::Error::MalformedVerdict(_))));
    let bodies = handle.join().unwrap();
    let req: serde_json::Value = serde_json::from_str(&bodies[0]).unwrap();
    assert_eq!(req, serde_json::json!({ "question": "q?", "reference": "yes", "prediction": "Yes" }));
}

#[test]
fn candidates_jsonl_reads_back() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("c.jsonl");
    let p = proxy();
    let cands = annotate(&p, "synth", &HeuristicAnnotator, 0).unwrap().candidates;
    measground::manifest::write_jsonl(&path, &cands).unwrap();
    let back: Vec<measground_core::bracketsup::CandidateRecord> = read_jsonl(&path).unwrap();
    assert_eq!(back, cands);
}
