//! Synthetic plantar scenes with known ground truth.
//!
//! A foot is a union of discs and ellipses in a foot-local frame `(a, b)`:
//! `a` runs from the toes (negative) to the heel (positive), `b` across the
//! foot with the medial side negative. The left foot is drawn as-is and the
//! right foot mirrored in `b`, then each is placed with its own rotation,
//! scale and centre. Temperatures are synthesised in degC and converted to
//! counts through the inverse of the calibration line.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::analysis::{AnalysisConfig, Verdict};
use crate::grid::{BoundingBox, Grid, Mask};
use crate::radiometry::{CalibrationCurve, CalibrationSample, RawFrame, SensorSpec, View};
use crate::registration::{AffineTransform, Foot, LandmarkSet, Point};

/// Pixels kept clear between a foot and the image border.
pub const BORDER_MARGIN: usize = 3;

/// Landmarks 1..4 of the template, in foot-local `(a, b)`.
pub const TEMPLATE_LANDMARKS: [(f64, f64); 4] = [(-47.5, -10.0), (-22.0, -12.0), (-18.0, 12.0), (30.0, 0.0)];

// (centre a, centre b, semi-axis a, semi-axis b)
const TEMPLATE_ELLIPSES: [(f64, f64, f64, f64); 8] = [
    (30.0, 0.0, 14.0, 14.0),
    (5.0, 0.0, 28.0, 13.0),
    (-20.0, 0.0, 18.0, 18.0),
    (-41.0, -10.0, 6.5, 6.5),
    (-41.0, -2.0, 4.5, 4.5),
    (-40.0, 4.0, 4.0, 4.0),
    (-37.0, 9.0, 3.5, 3.5),
    (-33.0, 13.0, 3.0, 3.0),
];

/// Whether foot-local `(a, b)` lies on the template foot.
pub fn in_template(a: f64, b: f64) -> bool {
    TEMPLATE_ELLIPSES
        .iter()
        .any(|&(ca, cb, ra, rb)| ((a - ca) / ra).powi(2) + ((b - cb) / rb).powi(2) <= 1.0)
}

#[derive(Debug, Error, PartialEq)]
pub enum PhantomError {
    #[error("patch {index} on the {foot:?} foot is not fully inside the foot mask")]
    LesionOutsideFoot { index: usize, foot: Foot },
    #[error("periphery angle {0} is not one of 0, 90, 180, 270")]
    InvalidAngle(u16),
    #[error("{0:?} foot does not fit inside the frame")]
    FootOutsideFrame(Foot),
    #[error("feet touch or overlap")]
    FeetTouch,
    #[error("invalid phantom spec: {0}")]
    InvalidSpec(String),
}

/// Placement of a template foot in the image.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FootPose {
    pub center_row: f64,
    pub center_col: f64,
    /// Counter-clockwise from the row axis, degrees.
    pub rotation_deg: f64,
    pub scale: f64,
}

impl FootPose {
    /// Foot-local `(a, b)` (as `Point { row: a, col: b }`) to image coordinates.
    pub fn local_to_image(&self, foot: Foot) -> AffineTransform {
        let (s, c) = self.rotation_deg.to_radians().sin_cos();
        let m = match foot {
            Foot::Left => 1.0,
            Foot::Right => -1.0,
        };
        let k = self.scale;
        AffineTransform {
            m: [k * c, -k * s * m, self.center_row, k * s, k * c * m, self.center_col],
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PatchShape {
    /// Axis-aligned in foot-local coordinates.
    Square {
        half_width: f64,
    },
    Disc {
        radius: f64,
    },
}

/// A warm lesion or cold patch, placed in foot-local coordinates.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Patch {
    pub foot: Foot,
    pub a: f64,
    pub b: f64,
    pub shape: PatchShape,
    /// Magnitude in degC: added for lesions, subtracted for cold patches.
    pub delta_c: f64,
}

impl Patch {
    pub fn covers(&self, a: f64, b: f64) -> bool {
        let (da, db) = (a - self.a, b - self.b);
        match self.shape {
            PatchShape::Square { half_width } => da.abs() <= half_width && db.abs() <= half_width,
            PatchShape::Disc { radius } => da * da + db * db <= radius * radius,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PhantomSpec {
    pub name: String,
    pub sensor: SensorSpec,
    pub base_temp_left_c: f64,
    pub base_temp_right_c: f64,
    pub background_temp_c: f64,
    pub noise_sigma_c: f64,
    /// Heel-minus-toe temperature rise over 100 template units of length.
    pub gradient_c: f64,
    pub lesions: Vec<Patch>,
    pub cold_patches: Vec<Patch>,
    pub left_pose: FootPose,
    pub right_pose: FootPose,
    pub calibration: CalibrationCurve,
    pub captured_at_ms: u64,
}

impl Default for PhantomSpec {
    fn default() -> Self {
        Self {
            name: "phantom".into(),
            sensor: SensorSpec::lepton3(),
            base_temp_left_c: 30.5,
            base_temp_right_c: 30.5,
            background_temp_c: 22.0,
            noise_sigma_c: 0.0,
            gradient_c: 1.0,
            lesions: Vec::new(),
            cold_patches: Vec::new(),
            left_pose: FootPose {
                center_row: 60.0,
                center_col: 115.0,
                rotation_deg: 0.0,
                scale: 1.0,
            },
            right_pose: FootPose {
                center_row: 60.0,
                center_col: 45.0,
                rotation_deg: 0.0,
                scale: 1.0,
            },
            calibration: CalibrationCurve::linear(0.01, -273.15),
            captured_at_ms: 0,
        }
    }
}

impl PhantomSpec {
    /// A deterministic variation of the default scene: small rotations,
    /// scale and position changes and slightly different base temperatures.
    pub fn varied(seed: u64) -> Self {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_f007);
        let mut pose = |col: f64| FootPose {
            center_row: 60.0 + rng.random_range(-2.0..2.0),
            center_col: col + rng.random_range(-3.0..3.0),
            rotation_deg: rng.random_range(-6.0..6.0),
            scale: rng.random_range(0.93..1.02),
        };
        let left_pose = pose(116.0);
        let right_pose = pose(44.0);
        let base = rng.random_range(29.5..31.5);
        let offset = rng.random_range(-0.3..0.3);
        Self {
            name: format!("phantom-{seed}"),
            base_temp_left_c: round2(base + offset / 2.0),
            base_temp_right_c: round2(base - offset / 2.0),
            gradient_c: rng.random_range(0.5..1.5),
            left_pose,
            right_pose,
            ..Self::default()
        }
    }

    pub fn pose(&self, foot: Foot) -> FootPose {
        match foot {
            Foot::Left => self.left_pose,
            Foot::Right => self.right_pose,
        }
    }

    pub fn base_temp(&self, foot: Foot) -> f64 {
        match foot {
            Foot::Left => self.base_temp_left_c,
            Foot::Right => self.base_temp_right_c,
        }
    }

    pub fn validate(&self) -> Result<(), PhantomError> {
        let bad = |m: &str| Err(PhantomError::InvalidSpec(m.into()));
        if !(self.noise_sigma_c >= 0.0) {
            return bad("noise_sigma_c must be non-negative");
        }
        if !(self.calibration.slope > 0.0) {
            return bad("calibration slope must be positive");
        }
        if !self.sensor.is_valid() {
            return bad("sensor spec is invalid");
        }
        if [self.left_pose, self.right_pose].iter().any(|p| !(p.scale > 0.0)) {
            return bad("pose scale must be positive");
        }
        if self
            .lesions
            .iter()
            .chain(&self.cold_patches)
            .any(|p| !(p.delta_c >= 0.0))
        {
            return bad("patch delta_c is a non-negative magnitude");
        }
        Ok(())
    }
}

fn round2(x: f64) -> f64 {
    (x * 100.0).round() / 100.0
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PatchKind {
    Lesion,
    ColdPatch,
}

/// Where a patch landed, on its own foot and at the contralateral location.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PatchTruth {
    pub kind: PatchKind,
    pub foot: Foot,
    pub delta_c: f64,
    /// Reference-minus-contralateral difference the patch produces in the
    /// direction where it can show up as a candidate.
    pub expected_diff_c: f64,
    #[serde(skip)]
    pub pixels: Vec<usize>,
    pub bbox: BoundingBox,
    #[serde(skip)]
    pub contralateral_pixels: Vec<usize>,
    pub contralateral_bbox: BoundingBox,
}

/// A hotspot the pipeline should report.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ExpectedFinding {
    pub reference_foot: Foot,
    pub bbox: BoundingBox,
    pub verdict: Verdict,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GroundTruth {
    #[serde(skip)]
    pub left_mask: Mask,
    #[serde(skip)]
    pub right_mask: Mask,
    pub left_area_px: usize,
    pub right_area_px: usize,
    pub landmarks: [LandmarkSet; 2],
    /// Right-foot image coordinates to left-foot image coordinates.
    pub right_to_left: AffineTransform,
    pub patches: Vec<PatchTruth>,
    /// Noise-free scene temperature per pixel, degC.
    #[serde(skip)]
    pub scene: Grid<f64>,
}

impl GroundTruth {
    pub fn mask(&self, foot: Foot) -> &Mask {
        match foot {
            Foot::Left => &self.left_mask,
            Foot::Right => &self.right_mask,
        }
    }

    pub fn union_mask(&self) -> Mask {
        Grid::from_fn(self.left_mask.width(), self.left_mask.height(), |r, c| {
            *self.left_mask.get(r, c) || *self.right_mask.get(r, c)
        })
    }

    pub fn landmarks(&self, foot: Foot) -> &LandmarkSet {
        &self.landmarks[match foot {
            Foot::Left => 0,
            Foot::Right => 1,
        }]
    }

    /// Moving-foot image coordinates to reference-foot image coordinates.
    pub fn transform_to(&self, reference: Foot) -> AffineTransform {
        match reference {
            Foot::Left => self.right_to_left,
            Foot::Right => self.right_to_left.inverse().expect("mirror map is invertible"),
        }
    }

    /// Findings implied by the patches under `cfg`: a lesion is a candidate
    /// on its own foot, a cold patch on the opposite foot; only lesions that
    /// stand out from their own surroundings are confirmed.
    pub fn expected_findings(&self, cfg: &AnalysisConfig) -> Vec<ExpectedFinding> {
        self.patches
            .iter()
            .filter(|p| p.expected_diff_c >= cfg.delta_threshold_c)
            .map(|p| match p.kind {
                PatchKind::Lesion => ExpectedFinding {
                    reference_foot: p.foot,
                    bbox: p.bbox,
                    verdict: if p.delta_c > cfg.similarity_tol_c {
                        Verdict::Confirmed
                    } else {
                        Verdict::RejectedColdContralateral
                    },
                },
                PatchKind::ColdPatch => ExpectedFinding {
                    reference_foot: p.foot.other(),
                    bbox: p.contralateral_bbox,
                    verdict: Verdict::RejectedColdContralateral,
                },
            })
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Phantom {
    pub frame: RawFrame,
    pub truth: GroundTruth,
}

fn foot_mask(spec: &PhantomSpec, foot: Foot) -> Result<Mask, PhantomError> {
    let to_local = spec
        .pose(foot)
        .local_to_image(foot)
        .inverse()
        .map_err(|_| PhantomError::InvalidSpec("degenerate pose".into()))?;
    let (w, h) = (spec.sensor.width, spec.sensor.height);
    Ok(Grid::from_fn(w, h, |r, c| {
        let p = to_local.apply(Point::new(r as f64, c as f64));
        in_template(p.row, p.col)
    }))
}

fn patch_pixels(spec: &PhantomSpec, patch: &Patch, foot: Foot, mask: &Mask) -> Vec<usize> {
    let to_local = spec.pose(foot).local_to_image(foot).inverse().expect("pose checked");
    mask.indices()
        .filter(|&i| {
            let (r, c) = mask.coords(i);
            let p = to_local.apply(Point::new(r as f64, c as f64));
            patch.covers(p.row, p.col)
        })
        .collect()
}

/// Only the patch footprint must lie on the foot; pixels of the patch shape
/// are tested against the template itself, not the rasterised mask.
fn patch_inside(spec: &PhantomSpec, patch: &Patch, foot: Foot) -> bool {
    let to_local = spec.pose(foot).local_to_image(foot).inverse().expect("pose checked");
    let (w, h) = (spec.sensor.width, spec.sensor.height);
    let mut any = false;
    for r in 0..h {
        for c in 0..w {
            let p = to_local.apply(Point::new(r as f64, c as f64));
            if patch.covers(p.row, p.col) {
                if !in_template(p.row, p.col) {
                    return false;
                }
                any = true;
            }
        }
    }
    any
}

fn check_placement(mask: &Mask, foot: Foot) -> Result<(), PhantomError> {
    let (w, h) = (mask.width(), mask.height());
    let ok = mask.count() > 0
        && mask.indices().all(|i| {
            let (r, c) = mask.coords(i);
            r >= BORDER_MARGIN && c >= BORDER_MARGIN && r + BORDER_MARGIN < h && c + BORDER_MARGIN < w
        });
    if ok {
        Ok(())
    } else {
        Err(PhantomError::FootOutsideFrame(foot))
    }
}

fn to_counts(curve: &CalibrationCurve, temp_c: f64) -> u16 {
    curve.counts_for(temp_c).round().clamp(0.0, u16::MAX as f64) as u16
}

/// Renders the plantar frame and its ground truth. The same spec and seed
/// always give the same frame.
pub fn generate(spec: &PhantomSpec, seed: u64) -> Result<Phantom, PhantomError> {
    spec.validate()?;
    let (w, h) = (spec.sensor.width, spec.sensor.height);
    let left_mask = foot_mask(spec, Foot::Left)?;
    let right_mask = foot_mask(spec, Foot::Right)?;
    check_placement(&left_mask, Foot::Left)?;
    check_placement(&right_mask, Foot::Right)?;
    if left_mask.dilate_disk(1).and(&right_mask).count() > 0 {
        return Err(PhantomError::FeetTouch);
    }

    let landmark_set = |foot: Foot| {
        let t = spec.pose(foot).local_to_image(foot);
        LandmarkSet {
            foot,
            points: TEMPLATE_LANDMARKS.map(|(a, b)| t.apply(Point::new(a, b))),
        }
    };
    let landmarks = [landmark_set(Foot::Left), landmark_set(Foot::Right)];
    for l in &landmarks {
        l.validate(w, h).map_err(|_| PhantomError::FootOutsideFrame(l.foot))?;
    }

    let mask_of = |foot: Foot| match foot {
        Foot::Left => &left_mask,
        Foot::Right => &right_mask,
    };

    let mut scene = Grid::filled(w, h, spec.background_temp_c);
    for foot in [Foot::Left, Foot::Right] {
        let to_local = spec.pose(foot).local_to_image(foot).inverse().expect("pose checked");
        for i in mask_of(foot).indices() {
            let (r, c) = scene.coords(i);
            let p = to_local.apply(Point::new(r as f64, c as f64));
            scene.as_mut_slice()[i] = spec.base_temp(foot) + spec.gradient_c * p.row / 100.0;
        }
    }

    let mut patches = Vec::new();
    let all = spec
        .lesions
        .iter()
        .map(|p| (PatchKind::Lesion, p))
        .chain(spec.cold_patches.iter().map(|p| (PatchKind::ColdPatch, p)));
    for (index, (kind, patch)) in all.enumerate() {
        let other = patch.foot.other();
        if !patch_inside(spec, patch, patch.foot) || !patch_inside(spec, patch, other) {
            return Err(PhantomError::LesionOutsideFoot {
                index,
                foot: patch.foot,
            });
        }
        let pixels = patch_pixels(spec, patch, patch.foot, mask_of(patch.foot));
        let contralateral_pixels = patch_pixels(spec, patch, other, mask_of(other));
        let sign = if kind == PatchKind::Lesion { 1.0 } else { -1.0 };
        for &i in &pixels {
            scene.as_mut_slice()[i] += sign * patch.delta_c;
        }
        let base_gap = spec.base_temp(patch.foot) - spec.base_temp(other);
        patches.push(PatchTruth {
            kind,
            foot: patch.foot,
            delta_c: patch.delta_c,
            expected_diff_c: patch.delta_c + sign * base_gap,
            bbox: BoundingBox::of_indices(w, &pixels).expect("non-empty patch"),
            pixels,
            contralateral_bbox: BoundingBox::of_indices(w, &contralateral_pixels)
                .ok_or(PhantomError::LesionOutsideFoot { index, foot: other })?,
            contralateral_pixels,
        });
    }

    let mut noisy = scene.clone();
    if spec.noise_sigma_c > 0.0 {
        let normal = Normal::new(0.0, spec.noise_sigma_c).map_err(|e| PhantomError::InvalidSpec(e.to_string()))?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for t in noisy.as_mut_slice() {
            *t += normal.sample(&mut rng);
        }
    }
    let counts = noisy.map(|&t| to_counts(&spec.calibration, t));

    let right_to_left = spec.left_pose.local_to_image(Foot::Left).compose(
        &spec
            .right_pose
            .local_to_image(Foot::Right)
            .inverse()
            .expect("pose checked"),
    );

    Ok(Phantom {
        frame: RawFrame {
            counts,
            view: View::Plantar,
            captured_at_ms: spec.captured_at_ms,
            frame_id: format!("{}-s{seed}-plantar", spec.name),
        },
        truth: GroundTruth {
            left_area_px: left_mask.count(),
            right_area_px: right_mask.count(),
            left_mask,
            right_mask,
            landmarks,
            right_to_left,
            patches,
            scene,
        },
    })
}

/// Side silhouette of the right leg seen from the C-arm camera. Angles 0 and
/// 180 look at opposite sides and are exact mirror images; 90 and 270 are
/// the front and back views. Noise-free.
pub fn generate_periphery(spec: &PhantomSpec, angle: u16) -> Result<RawFrame, PhantomError> {
    spec.validate()?;
    let view = View::periphery(angle).ok_or(PhantomError::InvalidAngle(angle))?;
    let (w, h) = (spec.sensor.width, spec.sensor.height);
    let cx = (w as f64 - 1.0) / 2.0;
    let hf = h as f64;
    let (leg_half, sole_rows, toe_reach, heel_reach) = match angle {
        0 | 180 => (11.0, (0.68, 0.86), 52.0, 16.0),
        90 => (13.0, (0.70, 0.86), 18.0, 18.0),
        _ => (14.0, (0.72, 0.86), 15.0, 15.0),
    };
    let mirror = if angle == 180 { -1.0 } else { 1.0 };
    let counts = Grid::from_fn(w, h, |r, c| {
        let x = (c as f64 - cx) * mirror;
        let y = r as f64 / hf;
        let leg = y < sole_rows.1 && x.abs() <= leg_half - 3.0 * y;
        let sole = (sole_rows.0..sole_rows.1).contains(&y) && x >= -heel_reach && x <= toe_reach;
        let t = if leg || sole {
            spec.base_temp_right_c + 1.5 - spec.gradient_c * y
        } else {
            spec.background_temp_c
        };
        to_counts(&spec.calibration, t)
    });
    Ok(RawFrame {
        counts,
        view,
        captured_at_ms: spec.captured_at_ms + 1000 * (1 + angle as u64 / 90),
        frame_id: format!("{}-periphery-{angle}", spec.name),
    })
}

/// Reference temperatures of the water-bath protocol: 25 to 45 degC in
/// 0.5 degC steps.
pub fn water_bath_temperatures() -> Vec<f64> {
    (0..=40).map(|i| 25.0 + 0.5 * i as f64).collect()
}

/// Uniform frame of a water surface at `temp_c`, with optional per-pixel noise.
pub fn water_bath_frame(
    curve: &CalibrationCurve,
    sensor: &SensorSpec,
    temp_c: f64,
    noise_sigma_c: f64,
    seed: u64,
) -> RawFrame {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, noise_sigma_c.max(0.0)).expect("finite sigma");
    let counts = Grid::from_fn(sensor.width, sensor.height, |_, _| {
        let n = if noise_sigma_c > 0.0 {
            normal.sample(&mut rng)
        } else {
            0.0
        };
        to_counts(curve, temp_c + n)
    });
    RawFrame {
        counts,
        view: View::Plantar,
        captured_at_ms: 0,
        frame_id: format!("water-bath-{temp_c:.1}"),
    }
}

/// One calibration sample per protocol temperature, taken from synthetic
/// water-bath frames.
pub fn water_bath_samples(
    curve: &CalibrationCurve,
    sensor: &SensorSpec,
    noise_sigma_c: f64,
    seed: u64,
) -> Vec<CalibrationSample> {
    water_bath_temperatures()
        .into_iter()
        .enumerate()
        .map(|(i, t)| {
            let frame = water_bath_frame(curve, sensor, t, noise_sigma_c, seed.wrapping_add(i as u64));
            CalibrationSample::from_frame(&frame, t)
        })
        .collect()
}
