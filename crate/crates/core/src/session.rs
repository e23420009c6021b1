//! Session documents and the end-to-end analysis run shared by the command
//! line tool and the HTTP service.

use std::path::{Path, PathBuf};

use image::RgbImage;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::analysis::{
    assemble_report, define_rois, detect_hotspots, diff_map, neighborhood_validate, render_overlay, roi_stats,
    AnalysisConfig, AnalysisError, AnalysisReport, DirectionReport, Provenance, RoiSet, SubjectMetadata,
};
use crate::grid::Mask;
use crate::io::{self, IoError};
use crate::radiometry::{
    counts_to_temperature, CalibrationCurve, RadiometryError, RawFrame, SensorSpec, TemperatureMap,
};
use crate::registration::{align_pair, vertical_alignment, Foot, FootImage, LandmarkSet, Point, RegistrationError};
use crate::segmentation::{
    grabcut, normalize_for_segmentation, split_feet, FootMask, GrabCutResult, Rect, Scribble, SegmentationError,
    DEFAULT_ITERATIONS,
};

pub const SESSION_SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FramePaths {
    pub plantar: Option<String>,
    pub periphery: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SegmentationParams {
    /// Defaults to the image minus a 2 px border.
    pub init_rect: Option<Rect>,
    pub iterations: usize,
}

impl Default for SegmentationParams {
    fn default() -> Self {
        Self {
            init_rect: None,
            iterations: DEFAULT_ITERATIONS,
        }
    }
}

/// Four `[row, col]` pairs per foot, ordered toe tip, medial head, lateral
/// head, heel centre.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LandmarkPoints {
    pub left: Option<[[f64; 2]; 4]>,
    pub right: Option<[[f64; 2]; 4]>,
}

impl LandmarkPoints {
    pub fn from_sets(left: &LandmarkSet, right: &LandmarkSet) -> Self {
        let pts = |l: &LandmarkSet| l.points.map(|p| [p.row, p.col]);
        Self {
            left: Some(pts(left)),
            right: Some(pts(right)),
        }
    }

    pub fn get(&self, foot: Foot) -> Option<LandmarkSet> {
        let pts = match foot {
            Foot::Left => self.left?,
            Foot::Right => self.right?,
        };
        Some(LandmarkSet {
            foot,
            points: pts.map(|[r, c]| Point::new(r, c)),
        })
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OutputPaths {
    pub report: Option<String>,
    pub overlay: Option<String>,
    pub roi_csv: Option<String>,
    pub mask: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AuditEntry {
    pub seq: u64,
    pub action: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detail: Option<String>,
}

/// Everything needed to rerun an analysis. Relative paths resolve against
/// the directory holding the document.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SessionDocument {
    pub schema_version: u32,
    #[serde(default)]
    pub subject: SubjectMetadata,
    #[serde(default)]
    pub frames: FramePaths,
    #[serde(default)]
    pub calibration: Option<String>,
    #[serde(default)]
    pub segmentation: SegmentationParams,
    #[serde(default)]
    pub scribbles: Vec<Scribble>,
    #[serde(default)]
    pub landmarks: LandmarkPoints,
    /// Foot flagged as suspect; left when absent.
    #[serde(default)]
    pub reference_foot: Option<Foot>,
    #[serde(default)]
    pub config: AnalysisConfig,
    #[serde(default)]
    pub outputs: OutputPaths,
    #[serde(default)]
    pub audit: Vec<AuditEntry>,
}

impl SessionDocument {
    pub fn new(subject_id: &str) -> Self {
        Self {
            schema_version: SESSION_SCHEMA_VERSION,
            subject: SubjectMetadata {
                id: subject_id.to_string(),
                notes: None,
            },
            frames: FramePaths::default(),
            calibration: None,
            segmentation: SegmentationParams::default(),
            scribbles: Vec::new(),
            landmarks: LandmarkPoints::default(),
            reference_foot: None,
            config: AnalysisConfig::default(),
            outputs: OutputPaths::default(),
            audit: Vec::new(),
        }
    }

    pub fn load(path: &Path) -> Result<Self, SessionError> {
        let doc: SessionDocument = io::read_json(path)?;
        if doc.schema_version != SESSION_SCHEMA_VERSION {
            return Err(SessionError::SchemaVersion(doc.schema_version));
        }
        Ok(doc)
    }

    pub fn save(&self, path: &Path) -> Result<(), SessionError> {
        Ok(io::write_json(path, self)?)
    }

    pub fn record(&mut self, action: &str, detail: Option<String>) {
        let seq = self.audit.last().map_or(1, |e| e.seq + 1);
        self.audit.push(AuditEntry {
            seq,
            action: action.to_string(),
            detail,
        });
    }
}

/// Joins `rel` onto `base` unless it is already absolute.
pub fn resolve(base: &Path, rel: &str) -> PathBuf {
    let p = Path::new(rel);
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

#[derive(Debug, Error)]
pub enum SessionError {
    #[error("session document is missing {0}")]
    MissingField(&'static str),
    #[error("unsupported session schema version {0}")]
    SchemaVersion(u32),
    #[error(transparent)]
    Io(#[from] IoError),
    #[error("radiometry: {0}")]
    Radiometry(#[from] RadiometryError),
    #[error("segmentation: {0}")]
    Segmentation(#[from] SegmentationError),
    #[error("registration: {0}")]
    Registration(#[from] RegistrationError),
    #[error("analysis: {0}")]
    Analysis(#[from] AnalysisError),
}

impl SessionError {
    /// Whether the error comes from the inputs being absent or malformed
    /// rather than from a pipeline stage failing on valid inputs.
    pub fn is_input_error(&self) -> bool {
        matches!(
            self,
            SessionError::MissingField(_) | SessionError::SchemaVersion(_) | SessionError::Io(_)
        )
    }
}

/// Segmentation of a plantar map into the two feet.
#[derive(Clone, Debug)]
pub struct Segmented {
    pub rect: Rect,
    pub grabcut: GrabCutResult,
    pub left: FootMask,
    pub right: FootMask,
}

impl Segmented {
    pub fn mask(&self, foot: Foot) -> &Mask {
        match foot {
            Foot::Left => &self.left.mask,
            Foot::Right => &self.right.mask,
        }
    }
}

pub fn segment(
    map: &TemperatureMap,
    params: &SegmentationParams,
    scribbles: &[Scribble],
) -> Result<Segmented, SessionError> {
    let image = normalize_for_segmentation(map)?;
    let rect = params
        .init_rect
        .unwrap_or_else(|| Rect::inset(map.width(), map.height(), 2));
    let result = grabcut(&image, rect, scribbles, params.iterations)?;
    let (left, right) = split_feet(&result.mask)?;
    Ok(Segmented {
        rect,
        grabcut: result,
        left,
        right,
    })
}

/// Loaded inputs of a session.
#[derive(Clone, Debug)]
pub struct SessionInputs {
    pub frame: RawFrame,
    pub calibration: CalibrationCurve,
}

pub fn load_inputs(doc: &SessionDocument, base: &Path) -> Result<SessionInputs, SessionError> {
    let plantar = doc
        .frames
        .plantar
        .as_deref()
        .ok_or(SessionError::MissingField("frames.plantar"))?;
    let cal = doc
        .calibration
        .as_deref()
        .ok_or(SessionError::MissingField("calibration"))?;
    Ok(SessionInputs {
        frame: io::read_raw_frame(&resolve(base, plantar))?,
        calibration: io::read_calibration(&resolve(base, cal))?,
    })
}

/// Products of one analysis run.
#[derive(Clone, Debug)]
pub struct AnalysisOutput {
    pub report: AnalysisReport,
    pub map: TemperatureMap,
    pub segmented: Segmented,
    pub overlay: RgbImage,
}

/// Runs the whole pipeline on a loaded session: temperature conversion,
/// segmentation, alignment in both directions, hotspot detection and
/// validation, region statistics and the overlay.
pub fn analyze(doc: &SessionDocument, inputs: &SessionInputs) -> Result<AnalysisOutput, SessionError> {
    let cfg = &doc.config;
    cfg.validate()?;
    // checked before any heavy work so a missing field is reported promptly
    let left_lm = doc
        .landmarks
        .get(Foot::Left)
        .ok_or(SessionError::MissingField("landmarks.left"))?;
    let right_lm = doc
        .landmarks
        .get(Foot::Right)
        .ok_or(SessionError::MissingField("landmarks.right"))?;

    let sensor = SensorSpec::lepton3();
    let map = counts_to_temperature(&inputs.frame, &inputs.calibration, &sensor)?;
    left_lm.validate(map.width(), map.height())?;
    right_lm.validate(map.width(), map.height())?;

    let segmented = segment(&map, &doc.segmentation, &doc.scribbles)?;
    let landmarks = |f: Foot| match f {
        Foot::Left => &left_lm,
        Foot::Right => &right_lm,
    };
    let image = |f: Foot| FootImage {
        map: map.clone(),
        mask: segmented.mask(f).clone(),
    };

    let vertical_left = vertical_alignment(left_lm.medial_head(), left_lm.heel())?;
    let vertical_right = vertical_alignment(right_lm.medial_head(), right_lm.heel())?;
    let rois_left = define_rois(segmented.mask(Foot::Left), &vertical_left, cfg)?;
    let rois_right = define_rois(segmented.mask(Foot::Right), &vertical_right, cfg)?;
    let rois = |f: Foot| -> &RoiSet {
        match f {
            Foot::Left => &rois_left,
            Foot::Right => &rois_right,
        }
    };

    let reference_foot = doc.reference_foot.unwrap_or(Foot::Left);
    let mut directions = Vec::with_capacity(2);
    for reference in [reference_foot, reference_foot.other()] {
        let moving = reference.other();
        let pair = align_pair(
            &image(reference),
            landmarks(reference),
            &image(moving),
            landmarks(moving),
        )?;
        let diff = diff_map(&pair)?;
        let hotspots = detect_hotspots(&diff, cfg)
            .iter()
            .map(|c| {
                let mut h = neighborhood_validate(c, &map, segmented.mask(reference), cfg);
                let mut names: Vec<_> = h.pixels.iter().filter_map(|&i| rois(reference).membership(i)).collect();
                names.sort();
                names.dedup();
                h.roi_membership = names;
                h
            })
            .collect();
        directions.push(DirectionReport {
            reference_foot: reference,
            transform: pair.transform,
            overlap_px: pair.overlap_mask.count(),
            hotspots,
        });
    }

    let other = reference_foot.other();
    let stats = roi_stats(
        (
            reference_foot,
            &map,
            segmented.mask(reference_foot),
            rois(reference_foot),
        ),
        (other, &map, segmented.mask(other), rois(other)),
    )?;

    let provenance = Provenance {
        plantar_frame_id: inputs.frame.frame_id.clone(),
        calibration: inputs.calibration.clone(),
        mask_provenance: segmented.left.provenance,
        segmentation_rect: segmented.rect,
        segmentation_iterations: doc.segmentation.iterations,
        scribble_count: doc.scribbles.len(),
        grabcut_energies: segmented.grabcut.energies.clone(),
        landmarks: vec![left_lm.clone(), right_lm.clone()],
        vertical_alignment_left: vertical_left,
        vertical_alignment_right: vertical_right,
    };
    let all_hotspots: Vec<_> = directions.iter().flat_map(|d| d.hotspots.iter().cloned()).collect();
    let overlay = render_overlay(&map, &all_hotspots);
    let report = assemble_report(
        doc.subject.clone(),
        reference_foot,
        stats,
        directions,
        &[(Foot::Left, &rois_left), (Foot::Right, &rois_right)],
        cfg.clone(),
        provenance,
    );
    Ok(AnalysisOutput {
        report,
        map,
        segmented,
        overlay,
    })
}

/// Loads the document's inputs from `base` and analyses them.
pub fn analyze_session(doc: &SessionDocument, base: &Path) -> Result<AnalysisOutput, SessionError> {
    if doc.landmarks.left.is_none() {
        return Err(SessionError::MissingField("landmarks.left"));
    }
    if doc.landmarks.right.is_none() {
        return Err(SessionError::MissingField("landmarks.right"));
    }
    let inputs = load_inputs(doc, base)?;
    analyze(doc, &inputs)
}
