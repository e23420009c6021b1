//! Contralateral comparison: difference map, hotspot detection, neighbourhood
//! validation, region-of-interest statistics and report assembly.

mod hotspots;
mod overlay;
mod report;
mod rois;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::radiometry::SensorSpec;

pub use hotspots::{
    detect_hotspots, diff_map, neighborhood_validate, DiffMap, Hotspot, Verdict, THRESHOLD_TOLERANCE_C,
};
pub use overlay::{palette_color, palette_index, render_overlay, CONFIRMED_COLOR, REJECTED_COLOR};
pub use report::{
    assemble_report, confirmed_roi_fraction, AnalysisReport, DirectionReport, Provenance, SubjectMetadata,
    REPORT_SCHEMA_VERSION,
};
pub use rois::{define_rois, roi_stats, RoiName, RoiRow, RoiSet, RoiStats, MIN_FOOT_LENGTH_PX};

#[derive(Debug, Error, PartialEq)]
pub enum AnalysisError {
    #[error("aligned feet do not overlap")]
    EmptyOverlap,
    #[error("foot length {0:.1} px is below the {MIN_FOOT_LENGTH_PX} px minimum for region bands")]
    MaskTooSmall(f64),
    #[error("region {region:?} has no valid pixels on the {foot} foot")]
    EmptyRoi { region: RoiName, foot: String },
    #[error("invalid analysis configuration: {0}")]
    InvalidConfig(String),
}

/// Fractional interval of foot length, measured from the toe end.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Band {
    pub start: f64,
    pub end: f64,
}

impl Band {
    /// Half-open `[start, end)`, closed at 1 so the heel tip is included.
    #[inline]
    pub fn contains(&self, f: f64) -> bool {
        f >= self.start && (f < self.end || (self.end >= 1.0 && f <= 1.0))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoiBands {
    pub toe: Band,
    pub metatarsal: Band,
    pub heel: Band,
}

impl Default for RoiBands {
    fn default() -> Self {
        Self {
            toe: Band { start: 0.0, end: 0.20 },
            metatarsal: Band { start: 0.20, end: 0.45 },
            heel: Band { start: 0.75, end: 1.0 },
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AnalysisConfig {
    /// Minimum reference-minus-contralateral difference flagged, degC.
    pub delta_threshold_c: f64,
    pub min_hotspot_px: usize,
    pub neighborhood_dilation_px: usize,
    /// A candidate is confirmed only if it is warmer than its surroundings
    /// by strictly more than this, degC.
    pub similarity_tol_c: f64,
    pub roi_bands: RoiBands,
    pub pixel_footprint_mm: f64,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        Self {
            delta_threshold_c: 2.2,
            min_hotspot_px: 4,
            neighborhood_dilation_px: 7,
            similarity_tol_c: 0.5,
            roi_bands: RoiBands::default(),
            pixel_footprint_mm: SensorSpec::lepton3().pixel_footprint_mm(),
        }
    }
}

impl AnalysisConfig {
    pub fn validate(&self) -> Result<(), AnalysisError> {
        let bad = |m: &str| Err(AnalysisError::InvalidConfig(m.to_string()));
        if !(self.delta_threshold_c > 0.0) {
            return bad("delta_threshold_c must be positive");
        }
        if !(self.similarity_tol_c >= 0.0) {
            return bad("similarity_tol_c must be non-negative");
        }
        if !(self.pixel_footprint_mm > 0.0) {
            return bad("pixel_footprint_mm must be positive");
        }
        let b = &self.roi_bands;
        let bands = [b.toe, b.metatarsal, b.heel];
        for band in &bands {
            if !(0.0 <= band.start && band.start < band.end && band.end <= 1.0) {
                return bad("roi bands must satisfy 0 <= start < end <= 1");
            }
        }
        for i in 0..3 {
            for j in i + 1..3 {
                if bands[i].start < bands[j].end && bands[j].start < bands[i].end {
                    return bad("roi bands must be pairwise disjoint");
                }
            }
        }
        Ok(())
    }
}
