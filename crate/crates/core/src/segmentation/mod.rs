//! Foot/background separation: intensity normalisation, GrabCut and
//! left/right foot splitting.

pub mod gmm;
pub mod grabcut;
pub mod maxflow;

use thiserror::Error;

use crate::grid::{Grid, Mask};
use crate::radiometry::TemperatureMap;

pub use grabcut::{
    grabcut, FootMask, GrabCutResult, MaskProvenance, Rect, Scribble, ScribbleLabel, TrimapLabel, DEFAULT_ITERATIONS,
};

/// Smallest connected component accepted as a foot, in pixels.
pub const MIN_FOOT_AREA: usize = 100;

#[derive(Debug, Error, PartialEq)]
pub enum SegmentationError {
    #[error("temperature map has fewer than two distinct valid values")]
    ConstantImage,
    #[error("segmentation produced no foreground pixels")]
    EmptyForeground,
    #[error("initialisation rectangle {0:?} must lie strictly inside the image and cover at least 64 px")]
    InvalidRect(Rect),
    #[error("iteration count must be at least 1")]
    ZeroIterations,
    #[error("scribble at ({row}, {col}) lies outside the image")]
    ScribbleOutOfBounds { row: usize, col: usize },
    #[error("found {0} component(s) of at least {MIN_FOOT_AREA} px; need two feet")]
    FeetNotSeparable(usize),
}

/// Single-channel image on [0, 255] plus pixels that must be background.
#[derive(Clone, Debug, PartialEq)]
pub struct IntensityImage {
    pub values: Grid<f64>,
    pub forced_background: Mask,
}

/// Affine rescale of the valid temperatures onto [0, 255]. Invalid pixels
/// become 0 and are pinned to background.
pub fn normalize_for_segmentation(map: &TemperatureMap) -> Result<IntensityImage, SegmentationError> {
    let (lo, hi) = map.finite_range().ok_or(SegmentationError::ConstantImage)?;
    if lo == hi {
        return Err(SegmentationError::ConstantImage);
    }
    let (lo, span) = (lo as f64, hi as f64 - lo as f64);
    let values = map.temps.map(|&t| {
        if t.is_finite() {
            (t as f64 - lo) / span * 255.0
        } else {
            0.0
        }
    });
    let forced_background = map.temps.map(|t| !t.is_finite());
    Ok(IntensityImage {
        values,
        forced_background,
    })
}

/// Splits a two-foot mask into `(left, right)`. The camera looks up at the
/// soles, so the subject's right foot is the component further to the image
/// left.
pub fn split_feet(mask: &FootMask) -> Result<(FootMask, FootMask), SegmentationError> {
    let m = &mask.mask;
    let mut comps: Vec<Vec<usize>> = m
        .components8()
        .into_iter()
        .filter(|c| c.len() >= MIN_FOOT_AREA)
        .collect();
    if comps.len() < 2 {
        return Err(SegmentationError::FeetNotSeparable(comps.len()));
    }
    // stable: equal areas keep raster order
    comps.sort_by_key(|c| std::cmp::Reverse(c.len()));
    let centroid_col = |c: &[usize]| c.iter().map(|&i| (i % m.width()) as f64).sum::<f64>() / c.len() as f64;
    let (a, b) = (&comps[0], &comps[1]);
    let (right, left) = if centroid_col(a) <= centroid_col(b) {
        (a, b)
    } else {
        (b, a)
    };
    let wrap = |idx: &[usize]| FootMask {
        mask: Mask::from_indices(m.width(), m.height(), idx),
        provenance: mask.provenance,
    };
    Ok((wrap(left), wrap(right)))
}
