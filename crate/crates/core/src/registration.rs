//! Landmark-driven alignment of the two feet.
//!
//! All coordinates are `(row, col)` in pixels, pixel centres at integers.
//! An [`AffineTransform`] maps `(row, col)` to
//! `(m[0]*row + m[1]*col + m[2], m[3]*row + m[4]*col + m[5])`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::{Grid, Mask};
use crate::radiometry::TemperatureMap;

/// Smallest |det| of the linear part accepted as invertible.
pub const MIN_DETERMINANT: f64 = 1e-6;
/// Smallest area, in px^2, of the toe/metatarsal/heel landmark triangle.
pub const MIN_LANDMARK_AREA: f64 = 4.0;

#[derive(Debug, Error, PartialEq)]
pub enum RegistrationError {
    #[error("alignment points coincide")]
    CoincidentPoints,
    #[error("correspondence points are collinear")]
    CollinearPoints,
    #[error("transform is singular (|det| < {MIN_DETERMINANT})")]
    SingularTransform,
    #[error("landmark {index} of the {foot:?} foot lies outside the image")]
    LandmarkOutOfBounds { foot: Foot, index: usize },
    #[error(
        "landmarks 1, 2 and 4 of the {0:?} foot are collinear or too close (triangle area < {MIN_LANDMARK_AREA} px^2)"
    )]
    DegenerateLandmarks(Foot),
    #[error("landmarks 2 and 4 of the {0:?} foot coincide")]
    CoincidentAxis(Foot),
    #[error("both landmark sets are labelled {0:?}; alignment needs one left and one right foot")]
    SameFoot(Foot),
    #[error("maps and masks must share dimensions")]
    DimensionMismatch,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Foot {
    Left,
    Right,
}

impl Foot {
    pub fn other(self) -> Foot {
        match self {
            Foot::Left => Foot::Right,
            Foot::Right => Foot::Left,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub row: f64,
    pub col: f64,
}

impl Point {
    pub const fn new(row: f64, col: f64) -> Self {
        Self { row, col }
    }

    pub fn distance(&self, other: &Point) -> f64 {
        (self.row - other.row).hypot(self.col - other.col)
    }
}

/// Twice the signed area of triangle `abc`.
fn cross(a: &Point, b: &Point, c: &Point) -> f64 {
    (b.row - a.row) * (c.col - a.col) - (b.col - a.col) * (c.row - a.row)
}

/// The four user-picked points of one foot: 1 toe tip, 2 medial metatarsal
/// head, 3 lateral metatarsal head, 4 heel centre.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LandmarkSet {
    pub foot: Foot,
    pub points: [Point; 4],
}

impl LandmarkSet {
    pub fn toe(&self) -> Point {
        self.points[0]
    }
    pub fn medial_head(&self) -> Point {
        self.points[1]
    }
    pub fn lateral_head(&self) -> Point {
        self.points[2]
    }
    pub fn heel(&self) -> Point {
        self.points[3]
    }

    pub fn validate(&self, width: usize, height: usize) -> Result<(), RegistrationError> {
        for (i, p) in self.points.iter().enumerate() {
            let inside = p.row >= 0.0 && p.col >= 0.0 && p.row <= (height - 1) as f64 && p.col <= (width - 1) as f64;
            if !inside {
                return Err(RegistrationError::LandmarkOutOfBounds {
                    foot: self.foot,
                    index: i + 1,
                });
            }
        }
        if self.medial_head() == self.heel() {
            return Err(RegistrationError::CoincidentAxis(self.foot));
        }
        if cross(&self.toe(), &self.medial_head(), &self.heel()).abs() / 2.0 < MIN_LANDMARK_AREA {
            return Err(RegistrationError::DegenerateLandmarks(self.foot));
        }
        Ok(())
    }
}

/// 2x3 affine map on `(row, col)`, stored row-major.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AffineTransform {
    pub m: [f64; 6],
}

impl AffineTransform {
    pub const IDENTITY: AffineTransform = AffineTransform {
        m: [1.0, 0.0, 0.0, 0.0, 1.0, 0.0],
    };

    pub fn translation(rows: f64, cols: f64) -> Self {
        AffineTransform {
            m: [1.0, 0.0, rows, 0.0, 1.0, cols],
        }
    }

    #[inline]
    pub fn apply(&self, p: Point) -> Point {
        let m = &self.m;
        Point {
            row: m[0] * p.row + m[1] * p.col + m[2],
            col: m[3] * p.row + m[4] * p.col + m[5],
        }
    }

    pub fn determinant(&self) -> f64 {
        self.m[0] * self.m[4] - self.m[1] * self.m[3]
    }

    pub fn is_reflection(&self) -> bool {
        self.determinant() < 0.0
    }

    pub fn inverse(&self) -> Result<AffineTransform, RegistrationError> {
        let det = self.determinant();
        if det.abs() < MIN_DETERMINANT || !det.is_finite() {
            return Err(RegistrationError::SingularTransform);
        }
        let [a, b, tx, c, d, ty] = self.m;
        let (ia, ib, ic, id) = (d / det, -b / det, -c / det, a / det);
        Ok(AffineTransform {
            m: [ia, ib, -(ia * tx + ib * ty), ic, id, -(ic * tx + id * ty)],
        })
    }

    /// `self` after `first`: `p -> self(first(p))`.
    pub fn compose(&self, first: &AffineTransform) -> AffineTransform {
        let [a, b, tx, c, d, ty] = self.m;
        let [e, f, ux, g, h, uy] = first.m;
        AffineTransform {
            m: [
                a * e + b * g,
                a * f + b * h,
                a * ux + b * uy + tx,
                c * e + d * g,
                c * f + d * h,
                c * ux + d * uy + ty,
            ],
        }
    }
}

/// Rigid rotation about the midpoint of `p2`-`p4` that makes the segment run
/// straight down the column axis, with `p4` (heel) below `p2`.
pub fn vertical_alignment(p2: Point, p4: Point) -> Result<AffineTransform, RegistrationError> {
    let (dr, dc) = (p4.row - p2.row, p4.col - p2.col);
    if dr == 0.0 && dc == 0.0 {
        return Err(RegistrationError::CoincidentPoints);
    }
    let angle = dc.atan2(dr);
    let (s, c) = angle.sin_cos();
    let mid = Point::new((p2.row + p4.row) / 2.0, (p2.col + p4.col) / 2.0);
    // rotate by -angle about mid
    let m = [
        c,
        s,
        mid.row - (c * mid.row + s * mid.col),
        -s,
        c,
        mid.col - (-s * mid.row + c * mid.col),
    ];
    Ok(AffineTransform { m })
}

/// The unique affine map sending each `src[i]` to `dst[i]`.
pub fn affine_from_three(src: [Point; 3], dst: [Point; 3]) -> Result<AffineTransform, RegistrationError> {
    for tri in [&src, &dst] {
        let scale = tri.iter().flat_map(|p| [p.row.abs(), p.col.abs()]).fold(1.0, f64::max);
        if cross(&tri[0], &tri[1], &tri[2]).abs() <= 1e-12 * scale * scale {
            return Err(RegistrationError::CollinearPoints);
        }
    }
    // linear part from edge vectors relative to the first point
    let (u1, u2) = (
        (src[1].row - src[0].row, src[1].col - src[0].col),
        (src[2].row - src[0].row, src[2].col - src[0].col),
    );
    let (v1, v2) = (
        (dst[1].row - dst[0].row, dst[1].col - dst[0].col),
        (dst[2].row - dst[0].row, dst[2].col - dst[0].col),
    );
    let det_u = u1.0 * u2.1 - u2.0 * u1.1;
    // inverse of U = [u1 u2] (columns)
    let (i00, i01, i10, i11) = (u2.1 / det_u, -u2.0 / det_u, -u1.1 / det_u, u1.0 / det_u);
    // L = V * U^-1
    let a = v1.0 * i00 + v2.0 * i10;
    let b = v1.0 * i01 + v2.0 * i11;
    let c = v1.1 * i00 + v2.1 * i10;
    let d = v1.1 * i01 + v2.1 * i11;
    let t = AffineTransform {
        m: [
            a,
            b,
            dst[0].row - (a * src[0].row + b * src[0].col),
            c,
            d,
            dst[0].col - (c * src[0].row + d * src[0].col),
        ],
    };
    if t.determinant().abs() < MIN_DETERMINANT {
        return Err(RegistrationError::SingularTransform);
    }
    Ok(t)
}

/// Resamples a temperature map through `t` (source -> destination) by inverse
/// mapping and bilinear interpolation. A destination pixel is invalid when it
/// samples outside the source or any contributing source pixel is invalid.
pub fn warp_map(map: &TemperatureMap, t: &AffineTransform) -> Result<TemperatureMap, RegistrationError> {
    let inv = t.inverse()?;
    let (w, h) = (map.width(), map.height());
    let src = &map.temps;
    let temps = Grid::from_fn(w, h, |row, col| {
        let p = inv.apply(Point::new(row as f64, col as f64));
        if !(p.row >= 0.0 && p.col >= 0.0 && p.row <= (h - 1) as f64 && p.col <= (w - 1) as f64) {
            return f32::NAN;
        }
        let (r0, c0) = (p.row.floor() as usize, p.col.floor() as usize);
        let (fr, fc) = (p.row - r0 as f64, p.col - c0 as f64);
        let mut acc = 0.0f64;
        for (dr, wr) in [(0usize, 1.0 - fr), (1, fr)] {
            for (dc, wc) in [(0usize, 1.0 - fc), (1, fc)] {
                let weight = wr * wc;
                if weight == 0.0 {
                    continue;
                }
                let v = *src.get(r0 + dr, c0 + dc);
                if !v.is_finite() {
                    return f32::NAN;
                }
                acc += weight * v as f64;
            }
        }
        acc as f32
    });
    Ok(TemperatureMap {
        temps,
        view: map.view,
        source_frame: map.source_frame.clone(),
    })
}

/// Nearest-neighbour resampling of a mask through `t`.
pub fn warp_mask(mask: &Mask, t: &AffineTransform) -> Result<Mask, RegistrationError> {
    let inv = t.inverse()?;
    let (w, h) = (mask.width(), mask.height());
    Ok(Grid::from_fn(w, h, |row, col| {
        let p = inv.apply(Point::new(row as f64, col as f64));
        let (r, c) = (p.row.round(), p.col.round());
        r >= 0.0 && c >= 0.0 && r < h as f64 && c < w as f64 && *mask.get(r as usize, c as usize)
    }))
}

/// Map and foot mask of one foot.
#[derive(Clone, Debug, PartialEq)]
pub struct FootImage {
    pub map: TemperatureMap,
    pub mask: Mask,
}

/// Reference foot plus the contralateral foot resampled onto it.
#[derive(Clone, Debug, PartialEq)]
pub struct AlignedPair {
    pub reference_foot: Foot,
    pub reference: FootImage,
    pub moving: FootImage,
    pub overlap_mask: Mask,
    /// Moving image coordinates -> reference image coordinates.
    pub transform: AffineTransform,
    pub reference_vertical: AffineTransform,
    pub moving_vertical: AffineTransform,
}

/// Maps the moving foot onto the reference foot using landmarks 1, 2 and 4
/// (toe tip, medial head, heel) of each. Left and right feet are mirror
/// images, so the recovered transform carries a reflection (det < 0).
///
/// Moving temperatures outside the moving foot mask are dropped before
/// resampling, so edge pixels never blend in background.
pub fn align_pair(
    reference: &FootImage,
    reference_landmarks: &LandmarkSet,
    moving: &FootImage,
    moving_landmarks: &LandmarkSet,
) -> Result<AlignedPair, RegistrationError> {
    let (w, h) = (reference.map.width(), reference.map.height());
    if !reference.map.temps.same_shape(&moving.map.temps)
        || !reference.mask.same_shape(&reference.map.temps)
        || !moving.mask.same_shape(&moving.map.temps)
    {
        return Err(RegistrationError::DimensionMismatch);
    }
    if reference_landmarks.foot == moving_landmarks.foot {
        return Err(RegistrationError::SameFoot(reference_landmarks.foot));
    }
    reference_landmarks.validate(w, h)?;
    moving_landmarks.validate(w, h)?;

    let pick = |l: &LandmarkSet| [l.toe(), l.medial_head(), l.heel()];
    let transform = affine_from_three(pick(moving_landmarks), pick(reference_landmarks))?;

    let mut moving_foot_only = moving.map.clone();
    for (t, &inside) in moving_foot_only
        .temps
        .as_mut_slice()
        .iter_mut()
        .zip(moving.mask.as_slice())
    {
        if !inside {
            *t = f32::NAN;
        }
    }
    let warped_map = warp_map(&moving_foot_only, &transform)?;
    let warped_mask = warp_mask(&moving.mask, &transform)?;
    let overlap_mask = reference.mask.and(&warped_mask);

    Ok(AlignedPair {
        reference_foot: reference_landmarks.foot,
        reference: reference.clone(),
        moving: FootImage {
            map: warped_map,
            mask: warped_mask,
        },
        overlap_mask,
        transform,
        reference_vertical: vertical_alignment(reference_landmarks.medial_head(), reference_landmarks.heel())?,
        moving_vertical: vertical_alignment(moving_landmarks.medial_head(), moving_landmarks.heel())?,
    })
}
