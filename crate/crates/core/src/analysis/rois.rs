use serde::{Deserialize, Serialize};

use super::{AnalysisConfig, AnalysisError, Band};
use crate::grid::Mask;
use crate::radiometry::TemperatureMap;
use crate::registration::{AffineTransform, Foot, Point};

/// Shortest foot, in aligned rows, for which bands are defined.
pub const MIN_FOOT_LENGTH_PX: f64 = 20.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RoiName {
    Toe,
    Metatarsal,
    Heel,
    Overall,
}

impl RoiName {
    pub fn label(self) -> &'static str {
        match self {
            RoiName::Toe => "toe",
            RoiName::Metatarsal => "metatarsal",
            RoiName::Heel => "heel",
            RoiName::Overall => "overall",
        }
    }
}

/// Toe, metatarsal and heel pixel sets of one foot. Midfoot is unassigned.
#[derive(Clone, Debug, PartialEq)]
pub struct RoiSet {
    pub toe: Mask,
    pub metatarsal: Mask,
    pub heel: Mask,
}

impl RoiSet {
    pub fn regions(&self) -> [(RoiName, &Mask); 3] {
        [
            (RoiName::Toe, &self.toe),
            (RoiName::Metatarsal, &self.metatarsal),
            (RoiName::Heel, &self.heel),
        ]
    }

    /// Named regions containing this pixel.
    pub fn membership(&self, index: usize) -> Option<RoiName> {
        self.regions()
            .into_iter()
            .find(|(_, m)| m.as_slice()[index])
            .map(|(n, _)| n)
    }
}

/// Splits the foot into fractional length bands measured in the vertically
/// aligned frame given by `vertical` (toe end up). Membership is computed
/// per source pixel, so no resampling of the mask is involved.
pub fn define_rois(mask: &Mask, vertical: &AffineTransform, cfg: &AnalysisConfig) -> Result<RoiSet, AnalysisError> {
    let aligned_row = |i: usize| {
        let (r, c) = mask.coords(i);
        vertical.apply(Point::new(r as f64, c as f64)).row
    };
    let (lo, hi) = mask
        .indices()
        .map(aligned_row)
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), r| (lo.min(r), hi.max(r)));
    let length = if lo.is_finite() { hi - lo + 1.0 } else { 0.0 };
    if length < MIN_FOOT_LENGTH_PX {
        return Err(AnalysisError::MaskTooSmall(length));
    }
    let band_mask = |band: &Band| {
        let mut out = Mask::filled(mask.width(), mask.height(), false);
        for i in mask.indices() {
            if band.contains((aligned_row(i) - lo) / length) {
                out.as_mut_slice()[i] = true;
            }
        }
        out
    };
    let b = &cfg.roi_bands;
    Ok(RoiSet {
        toe: band_mask(&b.toe),
        metatarsal: band_mask(&b.metatarsal),
        heel: band_mask(&b.heel),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoiRow {
    pub region: RoiName,
    pub foot_a_mt_c: f64,
    pub foot_b_mt_c: f64,
    pub diff_c: f64,
}

/// Mean temperatures per region, laid out as toe, metatarsal, heel, overall.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoiStats {
    pub foot_a: Foot,
    pub foot_b: Foot,
    pub rows: Vec<RoiRow>,
}

impl RoiStats {
    pub fn row(&self, region: RoiName) -> Option<&RoiRow> {
        self.rows.iter().find(|r| r.region == region)
    }
}

fn region_mt(map: &TemperatureMap, region: &Mask, name: RoiName, foot: Foot) -> Result<f64, AnalysisError> {
    map.mean_over(region.indices()).ok_or(AnalysisError::EmptyRoi {
        region: name,
        foot: format!("{foot:?}").to_lowercase(),
    })
}

/// `a` and `b` are `(foot, map, foot mask, regions)`. Overall uses every valid
/// foot pixel, never the region means.
pub fn roi_stats(
    a: (Foot, &TemperatureMap, &Mask, &RoiSet),
    b: (Foot, &TemperatureMap, &Mask, &RoiSet),
) -> Result<RoiStats, AnalysisError> {
    let mut rows = Vec::with_capacity(4);
    for ((name, ra), (_, rb)) in a.3.regions().into_iter().zip(b.3.regions()) {
        let ma = region_mt(a.1, ra, name, a.0)?;
        let mb = region_mt(b.1, rb, name, b.0)?;
        rows.push(RoiRow {
            region: name,
            foot_a_mt_c: ma,
            foot_b_mt_c: mb,
            diff_c: (ma - mb).abs(),
        });
    }
    let ma = region_mt(a.1, a.2, RoiName::Overall, a.0)?;
    let mb = region_mt(b.1, b.2, RoiName::Overall, b.0)?;
    rows.push(RoiRow {
        region: RoiName::Overall,
        foot_a_mt_c: ma,
        foot_b_mt_c: mb,
        diff_c: (ma - mb).abs(),
    });
    Ok(RoiStats {
        foot_a: a.0,
        foot_b: b.0,
        rows,
    })
}
