use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::{AnalysisConfig, Hotspot, RoiSet, RoiStats};
use crate::radiometry::CalibrationCurve;
use crate::registration::{AffineTransform, Foot, LandmarkSet};
use crate::segmentation::{MaskProvenance, Rect};

pub const REPORT_SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SubjectMetadata {
    pub id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub notes: Option<String>,
}

/// Hotspots found with one foot as the reference.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DirectionReport {
    pub reference_foot: Foot,
    /// Contralateral image coordinates -> reference image coordinates.
    pub transform: AffineTransform,
    pub overlap_px: usize,
    pub hotspots: Vec<Hotspot>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub plantar_frame_id: String,
    pub calibration: CalibrationCurve,
    pub mask_provenance: MaskProvenance,
    pub segmentation_rect: Rect,
    pub segmentation_iterations: usize,
    pub scribble_count: usize,
    pub grabcut_energies: Vec<f64>,
    pub landmarks: Vec<LandmarkSet>,
    pub vertical_alignment_left: AffineTransform,
    pub vertical_alignment_right: AffineTransform,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnalysisReport {
    pub schema_version: u32,
    pub subject: SubjectMetadata,
    /// Foot flagged as suspect; reported as foot A in the region table.
    pub reference_foot: Foot,
    pub roi_stats: RoiStats,
    pub directions: Vec<DirectionReport>,
    /// Share of confirmed-hotspot pixels inside toe, metatarsal or heel.
    /// `None` when nothing was confirmed.
    pub confirmed_roi_fraction: Option<f64>,
    pub config: AnalysisConfig,
    pub provenance: Provenance,
}

impl AnalysisReport {
    pub fn confirmed(&self) -> impl Iterator<Item = (Foot, &Hotspot)> {
        self.directions
            .iter()
            .flat_map(|d| d.hotspots.iter().map(move |h| (d.reference_foot, h)))
            .filter(|(_, h)| h.is_confirmed())
    }
}

/// `rois` holds the region sets of each reference foot.
pub fn confirmed_roi_fraction(directions: &[DirectionReport], rois: &[(Foot, &RoiSet)]) -> Option<f64> {
    let mut total = 0usize;
    let mut inside = 0usize;
    for d in directions {
        let Some((_, set)) = rois.iter().find(|(f, _)| *f == d.reference_foot) else {
            continue;
        };
        for h in d.hotspots.iter().filter(|h| h.is_confirmed()) {
            total += h.pixels.len();
            inside += h.pixels.iter().filter(|&&i| set.membership(i).is_some()).count();
        }
    }
    (total > 0).then(|| inside as f64 / total as f64)
}

pub fn assemble_report(
    subject: SubjectMetadata,
    reference_foot: Foot,
    roi_stats: RoiStats,
    directions: Vec<DirectionReport>,
    rois: &[(Foot, &RoiSet)],
    config: AnalysisConfig,
    provenance: Provenance,
) -> AnalysisReport {
    let confirmed_roi_fraction = confirmed_roi_fraction(&directions, rois);
    AnalysisReport {
        schema_version: REPORT_SCHEMA_VERSION,
        subject,
        reference_foot,
        roi_stats,
        directions,
        confirmed_roi_fraction,
        config,
        provenance,
    }
}

impl RoiStats {
    /// Region table in the order region, foot A, foot B, difference.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("region,foot_a_mt_c,foot_b_mt_c,diff_c\n");
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{:.2},{:.2},{:.2}",
                r.region.label(),
                r.foot_a_mt_c,
                r.foot_b_mt_c,
                r.diff_c
            );
        }
        out
    }
}
