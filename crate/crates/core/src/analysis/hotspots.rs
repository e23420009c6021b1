use serde::{Deserialize, Serialize};

use super::{AnalysisConfig, AnalysisError, RoiName};
use crate::grid::{BoundingBox, Grid, Mask};
use crate::radiometry::TemperatureMap;
use crate::registration::AlignedPair;

/// Temperatures are stored as f32, so a difference this close below the
/// threshold is treated as reaching it. Far smaller than the 0.01 degC count
/// quantum, so 2.19 degC never passes a 2.2 degC threshold.
pub const THRESHOLD_TOLERANCE_C: f64 = 1e-4;

/// Reference minus warped contralateral temperature. NaN off the overlap.
#[derive(Clone, Debug, PartialEq)]
pub struct DiffMap {
    pub diff: Grid<f64>,
}

impl DiffMap {
    #[inline]
    pub fn is_valid(&self, index: usize) -> bool {
        self.diff.as_slice()[index].is_finite()
    }
}

pub fn diff_map(pair: &AlignedPair) -> Result<DiffMap, AnalysisError> {
    let r = pair.reference.map.temps.as_slice();
    let m = pair.moving.map.temps.as_slice();
    let overlap = pair.overlap_mask.as_slice();
    let data: Vec<f64> = (0..r.len())
        .map(|i| {
            if overlap[i] && r[i].is_finite() && m[i].is_finite() {
                r[i] as f64 - m[i] as f64
            } else {
                f64::NAN
            }
        })
        .collect();
    if !data.iter().any(|d| d.is_finite()) {
        return Err(AnalysisError::EmptyOverlap);
    }
    let w = pair.overlap_mask.width();
    let h = pair.overlap_mask.height();
    Ok(DiffMap {
        diff: Grid::from_vec(w, h, data).expect("sized from overlap mask"),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    /// Warmer than its own surroundings: a possible ulcerated area.
    Confirmed,
    /// As warm as its surroundings: the contralateral point is cold.
    RejectedColdContralateral,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Hotspot {
    /// Flat pixel indices, ascending.
    pub pixels: Vec<usize>,
    pub bbox: BoundingBox,
    pub area_px: usize,
    pub area_cm2: f64,
    pub mean_delta_c: f64,
    pub peak_delta_c: f64,
    pub region_mt_c: Option<f64>,
    pub extended_mt_c: Option<f64>,
    pub verdict: Option<Verdict>,
    /// Set when no same-foot surround existed to validate against.
    pub degenerate_extended_region: bool,
    pub roi_membership: Vec<RoiName>,
}

impl Hotspot {
    pub fn is_confirmed(&self) -> bool {
        self.verdict == Some(Verdict::Confirmed)
    }
}

/// 8-connected regions where the difference reaches the threshold, minus
/// those smaller than `min_hotspot_px`. Verdicts are left unset.
pub fn detect_hotspots(d: &DiffMap, cfg: &AnalysisConfig) -> Vec<Hotspot> {
    let threshold = cfg.delta_threshold_c - THRESHOLD_TOLERANCE_C;
    let above: Mask = d.diff.map(|&v| v.is_finite() && v >= threshold);
    let px_cm2 = (cfg.pixel_footprint_mm / 10.0).powi(2);
    above
        .components8()
        .into_iter()
        .filter(|c| c.len() >= cfg.min_hotspot_px)
        .map(|pixels| {
            let values: Vec<f64> = pixels.iter().map(|&i| d.diff.as_slice()[i]).collect();
            let area_px = pixels.len();
            Hotspot {
                bbox: BoundingBox::of_indices(d.diff.width(), &pixels).expect("non-empty component"),
                area_px,
                area_cm2: area_px as f64 * px_cm2,
                mean_delta_c: values.iter().sum::<f64>() / area_px as f64,
                peak_delta_c: values.iter().copied().fold(f64::NEG_INFINITY, f64::max),
                pixels,
                region_mt_c: None,
                extended_mt_c: None,
                verdict: None,
                degenerate_extended_region: false,
                roi_membership: Vec::new(),
            }
        })
        .collect()
}

/// Compares the candidate's mean temperature on the reference foot with a
/// ring around it (dilation intersected with the foot, candidate removed).
pub fn neighborhood_validate(
    candidate: &Hotspot,
    reference: &TemperatureMap,
    reference_mask: &Mask,
    cfg: &AnalysisConfig,
) -> Hotspot {
    let (w, h) = (reference.width(), reference.height());
    let region = Mask::from_indices(w, h, &candidate.pixels);
    let extended = region
        .dilate_disk(cfg.neighborhood_dilation_px)
        .and(reference_mask)
        .and_not(&region);

    let region_mt = reference.mean_over(candidate.pixels.iter().copied());
    let extended_mt = reference.mean_over(extended.indices());

    let mut out = candidate.clone();
    out.region_mt_c = region_mt;
    out.extended_mt_c = extended_mt;
    match (region_mt, extended_mt) {
        (Some(r), Some(e)) => {
            out.verdict = Some(if r - e > cfg.similarity_tol_c {
                Verdict::Confirmed
            } else {
                Verdict::RejectedColdContralateral
            });
        }
        _ => {
            out.verdict = Some(Verdict::Confirmed);
            out.degenerate_extended_region = true;
        }
    }
    out
}
