use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;
use thermoscan_core::analysis::AnalysisReport;
use thermoscan_core::io;
use thermoscan_core::phantom::{Patch, PatchShape, PhantomSpec};
use thermoscan_core::registration::Foot;

fn thermoscan(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_thermoscan"))
        .args(args)
        .output()
        .unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = thermoscan(args);
    assert!(
        out.status.success(),
        "{args:?}: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn error_line(out: &Output) -> Value {
    let stderr = String::from_utf8_lossy(&out.stderr);
    serde_json::from_str(stderr.lines().last().unwrap()).unwrap()
}

fn phantom(dir: &Path, spec: Option<&PhantomSpec>) {
    let d = dir.to_str().unwrap();
    match spec {
        Some(s) => {
            let p = dir.join("in_spec.json");
            io::write_json(&p, s).unwrap();
            ok(&["--out-dir", d, "phantom", "--spec", p.to_str().unwrap()]);
        }
        None => {
            ok(&["--out-dir", d, "phantom"]);
        }
    }
}

fn lesion_spec() -> PhantomSpec {
    let mut spec = PhantomSpec::varied(11);
    spec.lesions = vec![Patch {
        foot: Foot::Left,
        a: -28.0,
        b: -4.0,
        shape: PatchShape::Square { half_width: 2.5 },
        delta_c: 2.5,
    }];
    spec
}

#[test]
fn clean_phantom_reports_nothing_confirmed() {
    let dir = tempfile::tempdir().unwrap();
    phantom(dir.path(), None);
    let stdout = ok(&["analyze", dir.path().join("session.json").to_str().unwrap()]);
    let report: AnalysisReport = serde_json::from_str(&stdout).unwrap();
    assert_eq!(report.confirmed().count(), 0);
    for f in ["report.json", "roi.csv", "overlay.png"] {
        assert!(dir.path().join(f).is_file(), "{f}");
    }
}

#[test]
fn lesion_phantom_reports_one_confirmed() {
    let dir = tempfile::tempdir().unwrap();
    phantom(dir.path(), Some(&lesion_spec()));
    let session = dir.path().join("session.json");
    let report: AnalysisReport = serde_json::from_str(&ok(&["analyze", session.to_str().unwrap()])).unwrap();
    assert_eq!(report.confirmed().count(), 1);

    let raised: AnalysisReport =
        serde_json::from_str(&ok(&["--threshold", "3.0", "analyze", session.to_str().unwrap()])).unwrap();
    assert!(raised.directions.iter().all(|d| d.hotspots.is_empty()));
    assert_eq!(raised.config.delta_threshold_c, 3.0);
}

#[test]
fn missing_landmarks_exit_nonzero_and_name_the_field() {
    let dir = tempfile::tempdir().unwrap();
    phantom(dir.path(), None);
    let session = dir.path().join("session.json");
    let mut doc: Value = io::read_json(&session).unwrap();
    doc["landmarks"] = serde_json::json!({});
    io::write_json(&session, &doc).unwrap();

    let out = thermoscan(&["analyze", session.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(4));
    let err = error_line(&out);
    assert_eq!(err["error"]["kind"], "precondition");
    assert!(err["error"]["message"].as_str().unwrap().contains("landmarks.left"));
}

#[test]
fn missing_input_is_a_distinct_exit_code() {
    let out = thermoscan(&["analyze", "/nonexistent/session.json"]);
    assert_eq!(out.status.code(), Some(3));
    assert_eq!(error_line(&out)["error"]["kind"], "input");
}

#[test]
fn invalid_threshold_is_a_precondition_failure() {
    let dir = tempfile::tempdir().unwrap();
    phantom(dir.path(), None);
    let out = thermoscan(&[
        "--threshold=-1",
        "analyze",
        dir.path().join("session.json").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(4));
}

#[test]
fn report_csv_matches_golden_file() {
    let dir = tempfile::tempdir().unwrap();
    phantom(dir.path(), None);
    ok(&["analyze", dir.path().join("session.json").to_str().unwrap()]);
    let csv = ok(&["report-csv", dir.path().join("report.json").to_str().unwrap()]);
    assert_eq!(csv.lines().next(), Some("region,foot_a_mt_c,foot_b_mt_c,diff_c"));
    let golden = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/tests/golden/phantom_roi.csv")).unwrap();
    assert_eq!(csv, golden);
}

#[test]
fn analyze_is_byte_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    phantom(dir.path(), Some(&lesion_spec()));
    let session = dir.path().join("session.json");
    let first = ok(&["analyze", session.to_str().unwrap()]);
    let report1 = std::fs::read(dir.path().join("report.json")).unwrap();
    let csv1 = std::fs::read(dir.path().join("roi.csv")).unwrap();
    let second = ok(&["analyze", session.to_str().unwrap()]);
    assert_eq!(first, second);
    assert_eq!(report1, std::fs::read(dir.path().join("report.json")).unwrap());
    assert_eq!(csv1, std::fs::read(dir.path().join("roi.csv")).unwrap());
}

#[test]
fn calibrate_recovers_the_phantom_line() {
    let dir = tempfile::tempdir().unwrap();
    phantom(dir.path(), None);
    let out = dir.path().join("fit");
    let stdout = ok(&[
        "--out-dir",
        out.to_str().unwrap(),
        "calibrate",
        dir.path().join("water_bath_samples.json").to_str().unwrap(),
    ]);
    let curve: Value = serde_json::from_str(&stdout).unwrap();
    assert!((curve["slope"].as_f64().unwrap() - 0.01).abs() < 1e-12);
    assert!((curve["intercept"].as_f64().unwrap() + 273.15).abs() < 1e-9);
    assert!(io::read_calibration(&out.join("calibration.json")).is_ok());
}

#[test]
fn convert_segment_and_align_write_their_outputs() {
    let dir = tempfile::tempdir().unwrap();
    phantom(dir.path(), None);
    let d = dir.path();
    let out = d.join("stages");
    let o = out.to_str().unwrap();
    let session = d.join("session.json");
    let s = session.to_str().unwrap();

    ok(&[
        "--out-dir",
        o,
        "--format",
        "csv",
        "convert",
        d.join("plantar.raw").to_str().unwrap(),
        "--calibration",
        d.join("calibration.json").to_str().unwrap(),
    ]);
    let csv = std::fs::read_to_string(out.join("plantar.csv")).unwrap();
    assert_eq!(csv.lines().count(), 120);
    assert_eq!(csv.lines().next().unwrap().split(',').count(), 160);

    ok(&["--out-dir", o, "segment", s]);
    let left = io::read_mask_png(&out.join("mask_left.png")).unwrap();
    let truth = io::read_mask_png(&d.join("truth_mask_left.png")).unwrap();
    assert!(left.iou(&truth) > 0.95);

    ok(&["--out-dir", o, "align", s]);
    let text = std::fs::read_to_string(out.join("transform_to_left.txt")).unwrap();
    let t = io::transform_from_text(&text).unwrap();
    assert!(t.determinant() < 0.0);
}
