//! HTTP API over on-disk analysis sessions.
//!
//! Each session is a directory holding a `session.json` document plus the
//! frames, masks and reports it refers to, so a session written here can be
//! analysed by the command line tool and vice versa. Mutations of one
//! session are serialised; different sessions proceed concurrently.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use axum::extract::{Path as UrlPath, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use base64::Engine as _;
use serde::{Deserialize, Serialize};
use serde_json::json;
use tower_http::cors::CorsLayer;

use thermoscan_core::analysis::{render_overlay, AnalysisConfig, AnalysisReport, Hotspot, SubjectMetadata};
use thermoscan_core::grid::Grid;
use thermoscan_core::io::{self, IoError};
use thermoscan_core::radiometry::{counts_to_temperature, CalibrationCurve, RawFrame, SensorSpec, View};
use thermoscan_core::registration::{Foot, RegistrationError};
use thermoscan_core::segmentation::{Rect, Scribble};
use thermoscan_core::session::{self, LandmarkPoints, SessionDocument, SessionError};

const DOC_NAME: &str = "session.json";
const REPORT_NAME: &str = "report.json";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SessionState {
    AwaitingFrames,
    AwaitingSegmentation,
    AwaitingLandmarks,
    ReadyForAnalysis,
    Analyzed,
}

pub fn session_state(doc: &SessionDocument) -> SessionState {
    if doc.frames.plantar.is_none() || doc.calibration.is_none() {
        SessionState::AwaitingFrames
    } else if doc.outputs.mask.is_none() {
        SessionState::AwaitingSegmentation
    } else if doc.landmarks.left.is_none() || doc.landmarks.right.is_none() {
        SessionState::AwaitingLandmarks
    } else if doc.outputs.report.is_none() {
        SessionState::ReadyForAnalysis
    } else {
        SessionState::Analyzed
    }
}

#[derive(Debug)]
pub struct ApiError {
    pub status: StatusCode,
    pub message: String,
}

impl ApiError {
    fn new(status: StatusCode, message: impl Into<String>) -> Self {
        Self {
            status,
            message: message.into(),
        }
    }
    fn conflict(m: impl Into<String>) -> Self {
        Self::new(StatusCode::CONFLICT, m)
    }
    fn invalid(m: impl Into<String>) -> Self {
        Self::new(StatusCode::UNPROCESSABLE_ENTITY, m)
    }
    fn internal(m: impl Into<String>) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, m)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(json!({ "error": self.message }))).into_response()
    }
}

impl From<IoError> for ApiError {
    fn from(e: IoError) -> Self {
        ApiError::internal(e.to_string())
    }
}

impl From<SessionError> for ApiError {
    fn from(e: SessionError) -> Self {
        match e {
            SessionError::Io(e) => e.into(),
            SessionError::MissingField(_) => ApiError::conflict(e.to_string()),
            other => ApiError::invalid(other.to_string()),
        }
    }
}

type ApiResult<T> = Result<T, ApiError>;

/// Shared service state: the data root and one lock per session.
#[derive(Clone)]
pub struct AppState {
    inner: Arc<Inner>,
}

struct Inner {
    root: PathBuf,
    locks: Mutex<HashMap<String, Arc<tokio::sync::Mutex<()>>>>,
    next_id: AtomicU64,
}

impl AppState {
    /// Existing session directories under `root` are picked up again.
    pub fn new(root: impl Into<PathBuf>) -> std::io::Result<Self> {
        let root = root.into();
        std::fs::create_dir_all(&root)?;
        let mut max = 0;
        for entry in std::fs::read_dir(&root)? {
            let name = entry?.file_name();
            if let Some(n) = name
                .to_str()
                .and_then(|s| s.strip_prefix('s'))
                .and_then(|s| s.parse::<u64>().ok())
            {
                max = max.max(n);
            }
        }
        Ok(Self {
            inner: Arc::new(Inner {
                root,
                locks: Mutex::new(HashMap::new()),
                next_id: AtomicU64::new(max + 1),
            }),
        })
    }

    pub fn root(&self) -> &Path {
        &self.inner.root
    }

    pub fn session_dir(&self, id: &str) -> PathBuf {
        self.inner.root.join(id)
    }

    fn lock_for(&self, id: &str) -> Arc<tokio::sync::Mutex<()>> {
        let mut locks = self.inner.locks.lock().expect("lock table poisoned");
        Arc::clone(locks.entry(id.to_string()).or_default())
    }

    fn check_id(&self, id: &str) -> ApiResult<PathBuf> {
        let valid = id.len() > 1 && id.starts_with('s') && id[1..].bytes().all(|b| b.is_ascii_digit());
        let dir = self.session_dir(id);
        if !valid || !dir.join(DOC_NAME).is_file() {
            return Err(ApiError::new(StatusCode::NOT_FOUND, format!("unknown session {id}")));
        }
        Ok(dir)
    }
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/sessions", post(create_session))
        .route("/sessions/{id}", get(get_session))
        .route("/sessions/{id}/frames", post(post_frame))
        .route("/sessions/{id}/render/{view}", get(render))
        .route("/sessions/{id}/scribbles", post(post_scribbles))
        .route("/sessions/{id}/landmarks", post(post_landmarks))
        .route("/sessions/{id}/analyze", post(analyze))
        .route("/sessions/{id}/report", get(get_report))
        .layer(CorsLayer::permissive())
        .with_state(state)
}

fn load_doc(dir: &Path) -> ApiResult<SessionDocument> {
    Ok(SessionDocument::load(&dir.join(DOC_NAME))?)
}

fn save_doc(dir: &Path, doc: &SessionDocument) -> ApiResult<()> {
    Ok(doc.save(&dir.join(DOC_NAME))?)
}

fn remove_output(dir: &Path, rel: &mut Option<String>) {
    if let Some(r) = rel.take() {
        let _ = std::fs::remove_file(session::resolve(dir, &r));
    }
}

#[derive(Serialize)]
struct SessionView {
    id: String,
    state: SessionState,
    document: SessionDocument,
}

fn view_of(id: &str, doc: SessionDocument) -> Json<SessionView> {
    Json(SessionView {
        id: id.to_string(),
        state: session_state(&doc),
        document: doc,
    })
}

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> ApiResult<T> + Send + 'static) -> ApiResult<T> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::internal(e.to_string()))?
}

#[derive(Debug, Default, Deserialize)]
#[serde(default)]
pub struct CreateSession {
    pub subject_id: Option<String>,
    pub notes: Option<String>,
    pub reference_foot: Option<Foot>,
    pub config: Option<AnalysisConfig>,
}

async fn create_session(State(st): State<AppState>, body: Option<Json<CreateSession>>) -> ApiResult<Response> {
    let req = body.map(|Json(b)| b).unwrap_or_default();
    if let Some(cfg) = &req.config {
        cfg.validate().map_err(|e| ApiError::invalid(e.to_string()))?;
    }
    let n = st.inner.next_id.fetch_add(1, Ordering::SeqCst);
    let id = format!("s{n:06}");
    let dir = st.session_dir(&id);
    std::fs::create_dir_all(&dir).map_err(|e| ApiError::internal(e.to_string()))?;
    let mut doc = SessionDocument::new(req.subject_id.as_deref().unwrap_or(&id));
    doc.subject = SubjectMetadata {
        id: doc.subject.id,
        notes: req.notes,
    };
    doc.reference_foot = req.reference_foot;
    if let Some(cfg) = req.config {
        doc.config = cfg;
    }
    doc.record("create_session", None);
    save_doc(&dir, &doc)?;
    Ok((StatusCode::CREATED, view_of(&id, doc)).into_response())
}

async fn get_session(State(st): State<AppState>, UrlPath(id): UrlPath<String>) -> ApiResult<Json<SessionView>> {
    let dir = st.check_id(&id)?;
    let lock = st.lock_for(&id);
    let _g = lock.lock().await;
    Ok(view_of(&id, load_doc(&dir)?))
}

/// A frame upload: counts are base64 of little-endian `u16`, row-major.
#[derive(Debug, Deserialize)]
pub struct FrameUpload {
    /// `plantar` or `periphery-<angle>`.
    pub view: String,
    pub width: usize,
    pub height: usize,
    pub counts_b64: String,
    pub frame_id: String,
    #[serde(default)]
    pub captured_at_ms: u64,
    #[serde(default)]
    pub calibration: Option<CalibrationCurve>,
}

async fn post_frame(
    State(st): State<AppState>,
    UrlPath(id): UrlPath<String>,
    Json(up): Json<FrameUpload>,
) -> ApiResult<Json<SessionView>> {
    let dir = st.check_id(&id)?;
    let lock = st.lock_for(&id);
    let _g = lock.lock().await;
    let mut doc = load_doc(&dir)?;

    let view = View::from_label(&up.view).ok_or_else(|| ApiError::invalid(format!("unknown view {:?}", up.view)))?;
    let bytes = base64::engine::general_purpose::STANDARD
        .decode(up.counts_b64.as_bytes())
        .map_err(|e| ApiError::invalid(format!("counts_b64: {e}")))?;
    let counts = io::decode_counts(&bytes, up.width, up.height).ok_or_else(|| {
        ApiError::invalid(format!(
            "counts hold {} bytes, {}x{} needs {}",
            bytes.len(),
            up.width,
            up.height,
            2 * up.width * up.height
        ))
    })?;
    let frame = RawFrame {
        counts,
        view,
        captured_at_ms: up.captured_at_ms,
        frame_id: up.frame_id,
    };
    frame
        .check_dims(&SensorSpec::lepton3())
        .map_err(|e| ApiError::invalid(e.to_string()))?;
    if let Some(cal) = &up.calibration {
        if !(cal.slope > 0.0) || !cal.intercept.is_finite() {
            return Err(ApiError::invalid("calibration slope must be positive"));
        }
    }
    if view == View::Plantar && up.calibration.is_none() && doc.calibration.is_none() {
        return Err(ApiError::invalid(
            "a plantar frame needs a calibration in this or an earlier upload",
        ));
    }

    let name = format!("{}.raw", view.label());
    io::write_raw_frame(&dir.join(&name), &frame)?;
    if let Some(cal) = &up.calibration {
        io::write_calibration(&dir.join("calibration.json"), cal)?;
        doc.calibration = Some("calibration.json".into());
    }
    if view == View::Plantar {
        doc.frames.plantar = Some(name);
        // a new plantar frame invalidates everything derived from the old one
        remove_output(&dir, &mut doc.outputs.mask);
        remove_output(&dir, &mut doc.outputs.report);
        remove_output(&dir, &mut doc.outputs.overlay);
        remove_output(&dir, &mut doc.outputs.roi_csv);
        doc.scribbles.clear();
        doc.landmarks = LandmarkPoints::default();
    } else if !doc.frames.periphery.contains(&name) {
        doc.frames.periphery.push(name);
    }
    doc.record("upload_frame", Some(format!("{} {}", view.label(), frame.frame_id)));
    save_doc(&dir, &doc)?;
    Ok(view_of(&id, doc))
}

#[derive(Debug, Default, Deserialize)]
pub struct RenderQuery {
    pub overlay: Option<String>,
}

async fn render(
    State(st): State<AppState>,
    UrlPath((id, view)): UrlPath<(String, String)>,
    Query(q): Query<RenderQuery>,
) -> ApiResult<Response> {
    let dir = st.check_id(&id)?;
    let lock = st.lock_for(&id);
    let _g = lock.lock().await;
    let doc = load_doc(&dir)?;
    let view =
        View::from_label(&view).ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, format!("unknown view {view}")))?;
    let rel = match view {
        View::Plantar => doc.frames.plantar.clone(),
        _ => Some(format!("{}.raw", view.label())).filter(|n| doc.frames.periphery.contains(n)),
    }
    .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, format!("no {} frame uploaded", view.label())))?;
    let cal = doc
        .calibration
        .clone()
        .ok_or_else(|| ApiError::conflict("no calibration uploaded"))?;

    let hotspots: Vec<Hotspot> = match q.overlay.as_deref() {
        None | Some("none") => Vec::new(),
        Some("hotspots") if view == View::Plantar => {
            let report_rel = doc
                .outputs
                .report
                .clone()
                .ok_or_else(|| ApiError::conflict("session not analysed yet"))?;
            let report: AnalysisReport = io::read_json(&session::resolve(&dir, &report_rel))?;
            report.directions.into_iter().flat_map(|d| d.hotspots).collect()
        }
        Some("hotspots") => return Err(ApiError::invalid("hotspot overlays exist only for the plantar view")),
        Some(other) => return Err(ApiError::invalid(format!("unknown overlay {other:?}"))),
    };
    let png = blocking(move || {
        let frame = io::read_raw_frame(&session::resolve(&dir, &rel))?;
        let curve = io::read_calibration(&session::resolve(&dir, &cal))?;
        let map = counts_to_temperature(&frame, &curve, &SensorSpec::lepton3())
            .map_err(|e| ApiError::invalid(e.to_string()))?;
        Ok(io::encode_png(&render_overlay(&map, &hotspots)))
    })
    .await?;
    Ok(([(header::CONTENT_TYPE, "image/png")], png).into_response())
}

#[derive(Debug, Default, Deserialize)]
#[serde(default)]
pub struct ScribbleRequest {
    pub scribbles: Vec<Scribble>,
    pub init_rect: Option<Rect>,
    pub iterations: Option<usize>,
}

#[derive(Serialize)]
struct SegmentationView {
    state: SessionState,
    provenance: thermoscan_core::segmentation::MaskProvenance,
    energies: Vec<f64>,
    left_area_px: usize,
    right_area_px: usize,
    scribble_count: usize,
}

/// Stores the scribbles and (re)runs segmentation. Landmarks and any report
/// are kept only while the foot masks stay the same shape.
async fn post_scribbles(
    State(st): State<AppState>,
    UrlPath(id): UrlPath<String>,
    body: Option<Json<ScribbleRequest>>,
) -> ApiResult<Json<SegmentationView>> {
    let dir = st.check_id(&id)?;
    let lock = st.lock_for(&id);
    let _g = lock.lock().await;
    let mut doc = load_doc(&dir)?;
    if session_state(&doc) == SessionState::AwaitingFrames {
        return Err(ApiError::conflict("upload a plantar frame and calibration first"));
    }
    let req = body.map(|Json(b)| b).unwrap_or_default();
    doc.scribbles = req.scribbles;
    if let Some(r) = req.init_rect {
        doc.segmentation.init_rect = Some(r);
    }
    if let Some(n) = req.iterations {
        doc.segmentation.iterations = n;
    }
    let (doc, seg) = blocking(move || {
        let inputs = session::load_inputs(&doc, &dir)?;
        let map = counts_to_temperature(&inputs.frame, &inputs.calibration, &SensorSpec::lepton3())
            .map_err(|e| ApiError::invalid(e.to_string()))?;
        let seg = session::segment(&map, &doc.segmentation, &doc.scribbles)?;
        let mut doc = doc;
        io::write_mask_png(&dir.join("mask.png"), &seg.grabcut.mask.mask)?;
        doc.outputs.mask = Some("mask.png".into());
        remove_output(&dir, &mut doc.outputs.report);
        remove_output(&dir, &mut doc.outputs.overlay);
        remove_output(&dir, &mut doc.outputs.roi_csv);
        doc.record("segment", Some(format!("{} scribble(s)", doc.scribbles.len())));
        save_doc(&dir, &doc)?;
        Ok((doc, seg))
    })
    .await?;
    Ok(Json(SegmentationView {
        state: session_state(&doc),
        provenance: seg.left.provenance,
        energies: seg.grabcut.energies,
        left_area_px: seg.left.mask.count(),
        right_area_px: seg.right.mask.count(),
        scribble_count: doc.scribbles.len(),
    }))
}

async fn post_landmarks(
    State(st): State<AppState>,
    UrlPath(id): UrlPath<String>,
    Json(points): Json<LandmarkPoints>,
) -> ApiResult<Json<SessionView>> {
    let dir = st.check_id(&id)?;
    let lock = st.lock_for(&id);
    let _g = lock.lock().await;
    let mut doc = load_doc(&dir)?;
    match session_state(&doc) {
        SessionState::AwaitingFrames | SessionState::AwaitingSegmentation => {
            return Err(ApiError::conflict("segment the plantar frame before placing landmarks"));
        }
        _ => {}
    }
    let sensor = SensorSpec::lepton3();
    for foot in [Foot::Left, Foot::Right] {
        let set = points.get(foot).ok_or_else(|| {
            ApiError::invalid(format!(
                "landmarks.{} must hold four points",
                if foot == Foot::Left { "left" } else { "right" }
            ))
        })?;
        set.validate(sensor.width, sensor.height)
            .map_err(|e: RegistrationError| ApiError::invalid(e.to_string()))?;
    }
    if doc.landmarks != points {
        remove_output(&dir, &mut doc.outputs.report);
        remove_output(&dir, &mut doc.outputs.overlay);
        remove_output(&dir, &mut doc.outputs.roi_csv);
    }
    doc.landmarks = points;
    doc.record("landmarks", None);
    save_doc(&dir, &doc)?;
    Ok(view_of(&id, doc))
}

async fn analyze(State(st): State<AppState>, UrlPath(id): UrlPath<String>) -> ApiResult<Json<AnalysisReport>> {
    let dir = st.check_id(&id)?;
    let lock = st.lock_for(&id);
    let _g = lock.lock().await;
    let doc = load_doc(&dir)?;
    match session_state(&doc) {
        SessionState::ReadyForAnalysis | SessionState::Analyzed => {}
        s => return Err(ApiError::conflict(format!("cannot analyse in state {s:?}"))),
    }
    let report = blocking(move || {
        let out = session::analyze_session(&doc, &dir)?;
        let mut doc = doc;
        io::write_json(&dir.join(REPORT_NAME), &out.report)?;
        std::fs::write(dir.join("roi.csv"), out.report.roi_stats.to_csv())
            .map_err(|e| ApiError::internal(e.to_string()))?;
        io::write_png(&dir.join("overlay.png"), &out.overlay)?;
        doc.outputs.report = Some(REPORT_NAME.into());
        doc.outputs.roi_csv = Some("roi.csv".into());
        doc.outputs.overlay = Some("overlay.png".into());
        doc.record("analyze", Some(format!("{} confirmed", out.report.confirmed().count())));
        save_doc(&dir, &doc)?;
        Ok(out.report)
    })
    .await?;
    Ok(Json(report))
}

async fn get_report(State(st): State<AppState>, UrlPath(id): UrlPath<String>) -> ApiResult<Json<AnalysisReport>> {
    let dir = st.check_id(&id)?;
    let lock = st.lock_for(&id);
    let _g = lock.lock().await;
    let doc = load_doc(&dir)?;
    let rel = doc
        .outputs
        .report
        .ok_or_else(|| ApiError::conflict("session not analysed yet"))?;
    Ok(Json(io::read_json(&session::resolve(&dir, &rel))?))
}

/// Base64 body of a frame, as the upload endpoint expects it.
pub fn counts_to_b64(counts: &Grid<u16>) -> String {
    base64::engine::general_purpose::STANDARD.encode(io::encode_counts(counts))
}
