use axum::body::Body;
use axum::http::{Method, Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

use thermoscan_core::analysis::AnalysisReport;
use thermoscan_core::phantom::{generate, Patch, PatchShape, Phantom, PhantomSpec};
use thermoscan_core::registration::Foot;
use thermoscan_core::session::LandmarkPoints;
use thermoscan_service::{counts_to_b64, router, AppState};

async fn call(app: &Router, method: Method, uri: &str, body: Option<Value>) -> (StatusCode, Vec<u8>) {
    let mut req = Request::builder().method(method).uri(uri);
    let body = match body {
        Some(v) => {
            req = req.header("content-type", "application/json");
            Body::from(serde_json::to_vec(&v).unwrap())
        }
        None => Body::empty(),
    };
    let resp = app.clone().oneshot(req.body(body).unwrap()).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes().to_vec();
    (status, bytes)
}

async fn call_json(app: &Router, method: Method, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let (s, b) = call(app, method, uri, body).await;
    let v = if b.is_empty() {
        Value::Null
    } else {
        serde_json::from_slice(&b).unwrap_or(Value::Null)
    };
    (s, v)
}

fn lesion_phantom(seed: u64) -> (PhantomSpec, Phantom) {
    let mut spec = PhantomSpec::varied(seed);
    spec.lesions = vec![Patch {
        foot: Foot::Left,
        a: -28.0,
        b: -4.0,
        shape: PatchShape::Square { half_width: 2.5 },
        delta_c: 2.8,
    }];
    let p = generate(&spec, seed).unwrap();
    (spec, p)
}

fn frame_body(spec: &PhantomSpec, p: &Phantom) -> Value {
    json!({
        "view": "plantar",
        "width": p.frame.counts.width(),
        "height": p.frame.counts.height(),
        "frame_id": p.frame.frame_id,
        "captured_at_ms": p.frame.captured_at_ms,
        "counts_b64": counts_to_b64(&p.frame.counts),
        "calibration": spec.calibration,
    })
}

fn landmark_body(p: &Phantom) -> Value {
    serde_json::to_value(LandmarkPoints::from_sets(
        p.truth.landmarks(Foot::Left),
        p.truth.landmarks(Foot::Right),
    ))
    .unwrap()
}

fn app() -> (tempfile::TempDir, Router) {
    let dir = tempfile::tempdir().unwrap();
    let state = AppState::new(dir.path().join("data")).unwrap();
    (dir, router(state))
}

async fn create(app: &Router) -> String {
    let (s, v) = call_json(app, Method::POST, "/sessions", Some(json!({"subject_id": "subject-7"}))).await;
    assert_eq!(s, StatusCode::CREATED);
    v["id"].as_str().unwrap().to_string()
}

/// Creates a session and walks it to the analysed state.
async fn full_session(app: &Router, seed: u64) -> (String, AnalysisReport) {
    let (spec, p) = lesion_phantom(seed);
    let id = create(app).await;
    let (s, _) = call_json(
        app,
        Method::POST,
        &format!("/sessions/{id}/frames"),
        Some(frame_body(&spec, &p)),
    )
    .await;
    assert_eq!(s, StatusCode::OK);
    let (s, _) = call_json(
        app,
        Method::POST,
        &format!("/sessions/{id}/scribbles"),
        Some(json!({"scribbles": []})),
    )
    .await;
    assert_eq!(s, StatusCode::OK);
    let (s, _) = call_json(
        app,
        Method::POST,
        &format!("/sessions/{id}/landmarks"),
        Some(landmark_body(&p)),
    )
    .await;
    assert_eq!(s, StatusCode::OK);
    let (s, v) = call_json(app, Method::POST, &format!("/sessions/{id}/analyze"), None).await;
    assert_eq!(s, StatusCode::OK, "{v}");
    (id, serde_json::from_value(v).unwrap())
}

#[tokio::test]
async fn walks_through_every_state() {
    let (_dir, app) = app();
    let (spec, p) = lesion_phantom(1);
    let id = create(&app).await;
    let state = |v: &Value| v["state"].as_str().unwrap().to_string();

    let (_, v) = call_json(&app, Method::GET, &format!("/sessions/{id}"), None).await;
    assert_eq!(state(&v), "awaiting_frames");
    assert_eq!(v["document"]["subject"]["id"], "subject-7");

    let (_, v) = call_json(
        &app,
        Method::POST,
        &format!("/sessions/{id}/frames"),
        Some(frame_body(&spec, &p)),
    )
    .await;
    assert_eq!(state(&v), "awaiting_segmentation");

    let (s, png) = call(&app, Method::GET, &format!("/sessions/{id}/render/plantar"), None).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(&png[..8], b"\x89PNG\r\n\x1a\n");

    let (s, v) = call_json(
        &app,
        Method::POST,
        &format!("/sessions/{id}/scribbles"),
        Some(json!({"scribbles": []})),
    )
    .await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(state(&v), "awaiting_landmarks");
    assert!(v["left_area_px"].as_u64().unwrap() > 500);

    let (_, v) = call_json(
        &app,
        Method::POST,
        &format!("/sessions/{id}/landmarks"),
        Some(landmark_body(&p)),
    )
    .await;
    assert_eq!(state(&v), "ready_for_analysis");

    let (s, v) = call_json(&app, Method::POST, &format!("/sessions/{id}/analyze"), None).await;
    assert_eq!(s, StatusCode::OK);
    let report: AnalysisReport = serde_json::from_value(v).unwrap();
    let confirmed: Vec<_> = report.confirmed().collect();
    assert_eq!(confirmed.len(), 1);
    assert_eq!(confirmed[0].0, Foot::Left);

    let (s, v) = call_json(&app, Method::GET, &format!("/sessions/{id}/report"), None).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(serde_json::from_value::<AnalysisReport>(v).unwrap(), report);

    let (s, png) = call(
        &app,
        Method::GET,
        &format!("/sessions/{id}/render/plantar?overlay=hotspots"),
        None,
    )
    .await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(&png[1..4], b"PNG");

    let (_, v) = call_json(&app, Method::GET, &format!("/sessions/{id}"), None).await;
    assert_eq!(state(&v), "analyzed");
    let actions: Vec<&str> = v["document"]["audit"]
        .as_array()
        .unwrap()
        .iter()
        .map(|e| e["action"].as_str().unwrap())
        .collect();
    assert_eq!(
        actions,
        ["create_session", "upload_frame", "segment", "landmarks", "analyze"]
    );
}

#[tokio::test]
async fn analyze_before_landmarks_is_a_conflict() {
    let (_dir, app) = app();
    let (spec, p) = lesion_phantom(2);
    let id = create(&app).await;
    let (s, _) = call_json(&app, Method::POST, &format!("/sessions/{id}/analyze"), None).await;
    assert_eq!(s, StatusCode::CONFLICT);
    call_json(
        &app,
        Method::POST,
        &format!("/sessions/{id}/frames"),
        Some(frame_body(&spec, &p)),
    )
    .await;
    call_json(&app, Method::POST, &format!("/sessions/{id}/scribbles"), None).await;
    let (s, v) = call_json(&app, Method::POST, &format!("/sessions/{id}/analyze"), None).await;
    assert_eq!(s, StatusCode::CONFLICT);
    assert!(v["error"].as_str().unwrap().contains("AwaitingLandmarks"));
    let (s, _) = call_json(&app, Method::GET, &format!("/sessions/{id}/report"), None).await;
    assert_eq!(s, StatusCode::CONFLICT);
    let (s, _) = call(
        &app,
        Method::GET,
        &format!("/sessions/{id}/render/plantar?overlay=hotspots"),
        None,
    )
    .await;
    assert_eq!(s, StatusCode::CONFLICT);
}

#[tokio::test]
async fn landmarks_before_segmentation_is_a_conflict() {
    let (_dir, app) = app();
    let (spec, p) = lesion_phantom(3);
    let id = create(&app).await;
    call_json(
        &app,
        Method::POST,
        &format!("/sessions/{id}/frames"),
        Some(frame_body(&spec, &p)),
    )
    .await;
    let (s, _) = call_json(
        &app,
        Method::POST,
        &format!("/sessions/{id}/landmarks"),
        Some(landmark_body(&p)),
    )
    .await;
    assert_eq!(s, StatusCode::CONFLICT);
}

#[tokio::test]
async fn scribbles_without_frames_is_a_conflict() {
    let (_dir, app) = app();
    let id = create(&app).await;
    let (s, _) = call_json(&app, Method::POST, &format!("/sessions/{id}/scribbles"), None).await;
    assert_eq!(s, StatusCode::CONFLICT);
}

#[tokio::test]
async fn collinear_landmarks_are_rejected() {
    let (_dir, app) = app();
    let (spec, p) = lesion_phantom(4);
    let id = create(&app).await;
    call_json(
        &app,
        Method::POST,
        &format!("/sessions/{id}/frames"),
        Some(frame_body(&spec, &p)),
    )
    .await;
    call_json(&app, Method::POST, &format!("/sessions/{id}/scribbles"), None).await;
    let mut body = landmark_body(&p);
    body["left"] = json!([[20.0, 100.0], [40.0, 100.0], [60.0, 100.0], [80.0, 100.0]]);
    let (s, v) = call_json(&app, Method::POST, &format!("/sessions/{id}/landmarks"), Some(body)).await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY, "{v}");
    let (_, v) = call_json(&app, Method::GET, &format!("/sessions/{id}"), None).await;
    assert_eq!(v["state"], "awaiting_landmarks");
}

#[tokio::test]
async fn bad_frames_are_rejected() {
    let (_dir, app) = app();
    let (spec, p) = lesion_phantom(5);
    let id = create(&app).await;
    let mut body = frame_body(&spec, &p);
    body["width"] = json!(80);
    let (s, _) = call_json(&app, Method::POST, &format!("/sessions/{id}/frames"), Some(body)).await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY);
    let mut body = frame_body(&spec, &p);
    body["counts_b64"] = json!("not base64!");
    let (s, _) = call_json(&app, Method::POST, &format!("/sessions/{id}/frames"), Some(body)).await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY);
    let mut body = frame_body(&spec, &p);
    body["view"] = json!("dorsal");
    let (s, _) = call_json(&app, Method::POST, &format!("/sessions/{id}/frames"), Some(body)).await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY);
    let (_, v) = call_json(&app, Method::GET, &format!("/sessions/{id}"), None).await;
    assert_eq!(v["state"], "awaiting_frames");
}

#[tokio::test]
async fn unknown_sessions_are_not_found() {
    let (_dir, app) = app();
    for uri in ["/sessions/s999999", "/sessions/..", "/sessions/s999999/report"] {
        let (s, _) = call(&app, Method::GET, uri, None).await;
        assert_eq!(s, StatusCode::NOT_FOUND, "{uri}");
    }
    let (s, _) = call(&app, Method::POST, "/sessions/nope/analyze", None).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn repeated_analysis_gives_the_same_report() {
    let (_dir, app) = app();
    let (id, first) = full_session(&app, 6).await;
    let (s, v) = call_json(&app, Method::POST, &format!("/sessions/{id}/analyze"), None).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(serde_json::from_value::<AnalysisReport>(v).unwrap(), first);
}

#[tokio::test]
async fn new_scribbles_discard_the_old_report() {
    let (_dir, app) = app();
    let (id, _) = full_session(&app, 7).await;
    let scribble = json!({"scribbles": [{"row": 2, "col": 2, "label": "background"}]});
    let (s, v) = call_json(&app, Method::POST, &format!("/sessions/{id}/scribbles"), Some(scribble)).await;
    assert_eq!(s, StatusCode::OK, "{v}");
    assert_eq!(v["state"], "ready_for_analysis");
    let (s, _) = call_json(&app, Method::GET, &format!("/sessions/{id}/report"), None).await;
    assert_eq!(s, StatusCode::CONFLICT);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn concurrent_sessions_stay_isolated() {
    let (dir, app) = app();
    let tasks: Vec<_> = (10..14u64)
        .map(|seed| {
            let app = app.clone();
            tokio::spawn(async move { (seed, full_session(&app, seed).await) })
        })
        .collect();
    let mut ids = Vec::new();
    for t in tasks {
        let (seed, (id, report)) = t.await.unwrap();
        let (_, p) = lesion_phantom(seed);
        assert_eq!(report.provenance.plantar_frame_id, p.frame.frame_id);
        assert_eq!(report.confirmed().count(), 1);
        ids.push(id);
    }
    ids.sort();
    ids.dedup();
    assert_eq!(ids.len(), 4);

    // a restarted service sees the same sessions and keeps allocating fresh ids
    let app2 = router(AppState::new(dir.path().join("data")).unwrap());
    for id in &ids {
        let (s, v) = call_json(&app2, Method::GET, &format!("/sessions/{id}"), None).await;
        assert_eq!(s, StatusCode::OK);
        assert_eq!(v["state"], "analyzed");
    }
    let fresh = create(&app2).await;
    assert!(!ids.contains(&fresh));
}

#[tokio::test]
async fn identical_landmarks_keep_the_report() {
    let (_dir, app) = app();
    let (id, first) = full_session(&app, 8).await;
    let (_, p) = lesion_phantom(8);
    let (s, v) = call_json(
        &app,
        Method::POST,
        &format!("/sessions/{id}/landmarks"),
        Some(landmark_body(&p)),
    )
    .await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(v["state"], "analyzed");
    let (_, v) = call_json(&app, Method::POST, &format!("/sessions/{id}/analyze"), None).await;
    assert_eq!(serde_json::from_value::<AnalysisReport>(v).unwrap(), first);
}

mod interleaving {
    use super::*;
    use proptest::prelude::*;

    /// Steps of one session in order; the test interleaves two of them.
    async fn step(app: &Router, id: &str, seed: u64, n: usize) {
        let (spec, p) = lesion_phantom(seed);
        let (uri, body) = match n {
            0 => ("frames", Some(frame_body(&spec, &p))),
            1 => ("scribbles", None),
            2 => ("landmarks", Some(landmark_body(&p))),
            _ => ("analyze", None),
        };
        let (s, v) = call_json(app, Method::POST, &format!("/sessions/{id}/{uri}"), body).await;
        assert_eq!(s, StatusCode::OK, "{uri}: {v}");
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(4))]
        #[test]
        fn interleaved_sessions_match_solo_runs(order in Just(vec![0u8, 0, 0, 0, 1, 1, 1, 1]).prop_shuffle()) {
            let rt = tokio::runtime::Builder::new_current_thread().build().unwrap();
            rt.block_on(async {
                let (_dir, app) = app();
                let seeds = [20u64, 21];
                let ids = [create(&app).await, create(&app).await];
                let mut next = [0usize; 2];
                for &who in &order {
                    let k = who as usize;
                    step(&app, &ids[k], seeds[k], next[k]).await;
                    next[k] += 1;
                }
                for k in 0..2 {
                    let (_, v) = call_json(&app, Method::GET, &format!("/sessions/{}/report", ids[k]), None).await;
                    let report: AnalysisReport = serde_json::from_value(v).unwrap();
                    let (_, solo) = full_session(&app, seeds[k]).await;
                    assert_eq!(report.directions, solo.directions);
                    assert_eq!(report.roi_stats, solo.roi_stats);
                    assert_eq!(report.provenance, solo.provenance);
                }
            });
        }
    }
}
