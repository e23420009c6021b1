//! Sensor model, linear counts-to-temperature calibration and the
//! calibration non-linearity metric.
//!
//! The calibration is a straight line `temp = slope * counts + intercept`
//! fitted by ordinary least squares over water-bath samples, one sample per
//! reference temperature, each sample being the mean raw count over the frame.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::Grid;

/// Lowest temperature a map pixel may hold before it is masked as invalid.
pub const MIN_PLAUSIBLE_C: f64 = -40.0;
/// Highest temperature a map pixel may hold before it is masked as invalid.
pub const MAX_PLAUSIBLE_C: f64 = 120.0;

#[derive(Debug, Error, PartialEq)]
pub enum RadiometryError {
    #[error("at least 3 calibration samples are required, got {0}")]
    TooFewSamples(usize),
    #[error("all samples share the same mean count; no unique line")]
    DegenerateSamples,
    #[error("no calibration samples")]
    EmptySamples,
    #[error("calibration slope must be positive, fitted {0}")]
    NonPositiveSlope(f64),
    #[error("reference temperature {0} outside [0, 100] degC")]
    ReferenceOutOfRange(f64),
    #[error("frame is {got_w}x{got_h}, sensor expects {want_w}x{want_h}")]
    DimensionMismatch {
        got_w: usize,
        got_h: usize,
        want_w: usize,
        want_h: usize,
    },
}

/// Geometry and sensitivity of the thermal camera.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SensorSpec {
    pub width: usize,
    pub height: usize,
    /// NETD in kelvin.
    pub thermal_sensitivity: f64,
    pub hfov_deg: f64,
    pub dfov_deg: f64,
    pub working_distance_m: f64,
}

impl SensorSpec {
    /// 160x120 long-wave radiometric core, placed so that the horizontal
    /// field of view spans 38 cm at the sole.
    pub fn lepton3() -> Self {
        let hfov_deg = 56.0_f64;
        Self {
            width: 160,
            height: 120,
            thermal_sensitivity: 0.05,
            hfov_deg,
            dfov_deg: 71.0,
            working_distance_m: 0.19 / (hfov_deg.to_radians() / 2.0).tan(),
        }
    }

    /// Side length in millimetres of the scene patch seen by one pixel.
    pub fn pixel_footprint_mm(&self) -> f64 {
        2.0 * self.working_distance_m * (self.hfov_deg.to_radians() / 2.0).tan() * 1000.0 / self.width as f64
    }

    pub fn is_valid(&self) -> bool {
        self.width > 0
            && self.height > 0
            && self.hfov_deg > 0.0
            && self.hfov_deg < self.dfov_deg
            && self.dfov_deg < 180.0
    }
}

impl Default for SensorSpec {
    fn default() -> Self {
        Self::lepton3()
    }
}

/// Which camera produced a frame.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "view", rename_all = "snake_case")]
pub enum View {
    Plantar,
    Periphery { angle: u16 },
}

impl View {
    pub const PERIPHERY_ANGLES: [u16; 4] = [0, 90, 180, 270];

    pub fn periphery(angle: u16) -> Option<Self> {
        Self::PERIPHERY_ANGLES
            .contains(&angle)
            .then_some(View::Periphery { angle })
    }

    /// Short label used in file names and URLs: `plantar`, `periphery-90`.
    pub fn label(&self) -> String {
        match self {
            View::Plantar => "plantar".to_string(),
            View::Periphery { angle } => format!("periphery-{angle}"),
        }
    }

    pub fn from_label(label: &str) -> Option<Self> {
        if label == "plantar" {
            return Some(View::Plantar);
        }
        label
            .strip_prefix("periphery-")
            .and_then(|a| a.parse().ok())
            .and_then(View::periphery)
    }
}

/// One acquisition from the sensor.
#[derive(Clone, Debug, PartialEq)]
pub struct RawFrame {
    pub counts: Grid<u16>,
    pub view: View,
    /// Milliseconds since the Unix epoch.
    pub captured_at_ms: u64,
    pub frame_id: String,
}

impl RawFrame {
    pub fn check_dims(&self, sensor: &SensorSpec) -> Result<(), RadiometryError> {
        if self.counts.width() != sensor.width || self.counts.height() != sensor.height {
            return Err(RadiometryError::DimensionMismatch {
                got_w: self.counts.width(),
                got_h: self.counts.height(),
                want_w: sensor.width,
                want_h: sensor.height,
            });
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CalibrationSample {
    pub reference_temp_c: f64,
    pub mean_counts: f64,
}

impl CalibrationSample {
    /// Water-bath sample: mean count over the whole frame.
    pub fn from_frame(frame: &RawFrame, reference_temp_c: f64) -> Self {
        let sum: f64 = frame.counts.as_slice().iter().map(|&c| c as f64).sum();
        Self {
            reference_temp_c,
            mean_counts: sum / frame.counts.len() as f64,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CalibrationCurve {
    /// degC per count.
    pub slope: f64,
    pub intercept: f64,
    pub residual_rms: f64,
    pub nonlinearity_pct: f64,
    pub sample_range_c: (f64, f64),
}

impl CalibrationCurve {
    /// A curve with known parameters and no fit diagnostics.
    pub fn linear(slope: f64, intercept: f64) -> Self {
        Self {
            slope,
            intercept,
            residual_rms: 0.0,
            nonlinearity_pct: 0.0,
            sample_range_c: (0.0, 0.0),
        }
    }

    #[inline]
    pub fn predict(&self, counts: f64) -> f64 {
        self.slope * counts + self.intercept
    }

    /// Inverse of [`predict`](Self::predict), unrounded.
    #[inline]
    pub fn counts_for(&self, temp_c: f64) -> f64 {
        (temp_c - self.intercept) / self.slope
    }
}

/// Least-squares line through `(mean_counts, reference_temp_c)`, minimising
/// squared temperature residuals.
pub fn fit_calibration(samples: &[CalibrationSample]) -> Result<CalibrationCurve, RadiometryError> {
    if samples.len() < 3 {
        return Err(RadiometryError::TooFewSamples(samples.len()));
    }
    if let Some(s) = samples.iter().find(|s| !(0.0..=100.0).contains(&s.reference_temp_c)) {
        return Err(RadiometryError::ReferenceOutOfRange(s.reference_temp_c));
    }

    let n = samples.len() as f64;
    let mean_x = samples.iter().map(|s| s.mean_counts).sum::<f64>() / n;
    let mean_y = samples.iter().map(|s| s.reference_temp_c).sum::<f64>() / n;
    let (mut sxx, mut sxy) = (0.0, 0.0);
    for s in samples {
        let dx = s.mean_counts - mean_x;
        sxx += dx * dx;
        sxy += dx * (s.reference_temp_c - mean_y);
    }
    if sxx == 0.0 {
        return Err(RadiometryError::DegenerateSamples);
    }
    let slope = sxy / sxx;
    if slope <= 0.0 || !slope.is_finite() {
        return Err(RadiometryError::NonPositiveSlope(slope));
    }
    let intercept = mean_y - slope * mean_x;

    let mut curve = CalibrationCurve::linear(slope, intercept);
    let sq: f64 = samples
        .iter()
        .map(|s| (curve.predict(s.mean_counts) - s.reference_temp_c).powi(2))
        .sum();
    curve.residual_rms = (sq / n).sqrt();
    curve.nonlinearity_pct = nonlinearity_percent(samples, &curve)?;
    curve.sample_range_c = samples.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), s| {
        (lo.min(s.reference_temp_c), hi.max(s.reference_temp_c))
    });
    Ok(curve)
}

/// Maximum deviation from the fitted line over the maximum full-scale input,
/// as a percentage. Full scale is the largest reference temperature.
pub fn nonlinearity_percent(samples: &[CalibrationSample], curve: &CalibrationCurve) -> Result<f64, RadiometryError> {
    if samples.is_empty() {
        return Err(RadiometryError::EmptySamples);
    }
    let max_dev = samples
        .iter()
        .map(|s| (curve.predict(s.mean_counts) - s.reference_temp_c).abs())
        .fold(0.0, f64::max);
    let full_scale = samples
        .iter()
        .map(|s| s.reference_temp_c)
        .fold(f64::NEG_INFINITY, f64::max);
    Ok(100.0 * max_dev / full_scale)
}

/// Calibrated temperatures. Invalid pixels hold NaN.
#[derive(Clone, Debug, PartialEq)]
pub struct TemperatureMap {
    pub temps: Grid<f32>,
    pub view: View,
    pub source_frame: String,
}

impl TemperatureMap {
    #[inline]
    pub fn width(&self) -> usize {
        self.temps.width()
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.temps.height()
    }

    /// Valid (finite) temperature at a pixel.
    #[inline]
    pub fn valid(&self, row: usize, col: usize) -> Option<f32> {
        let t = *self.temps.get(row, col);
        t.is_finite().then_some(t)
    }

    /// Smallest and largest valid temperature, if any pixel is valid.
    pub fn finite_range(&self) -> Option<(f32, f32)> {
        self.temps
            .as_slice()
            .iter()
            .filter(|t| t.is_finite())
            .fold(None, |acc, &t| match acc {
                None => Some((t, t)),
                Some((lo, hi)) => Some((lo.min(t), hi.max(t))),
            })
    }

    /// Mean of the valid pixels at the given flat indices.
    pub fn mean_over(&self, indices: impl IntoIterator<Item = usize>) -> Option<f64> {
        let (sum, n) = indices
            .into_iter()
            .map(|i| self.temps.as_slice()[i])
            .filter(|t| t.is_finite())
            .fold((0.0f64, 0usize), |(s, n), t| (s + t as f64, n + 1));
        (n > 0).then(|| sum / n as f64)
    }
}

/// Applies the calibration line to every pixel. Results outside the plausible
/// sensor range are masked to NaN rather than clamped.
pub fn counts_to_temperature(
    frame: &RawFrame,
    curve: &CalibrationCurve,
    sensor: &SensorSpec,
) -> Result<TemperatureMap, RadiometryError> {
    frame.check_dims(sensor)?;
    let temps = frame.counts.map(|&c| {
        let t = curve.predict(c as f64);
        if (MIN_PLAUSIBLE_C..=MAX_PLAUSIBLE_C).contains(&t) {
            t as f32
        } else {
            f32::NAN
        }
    });
    Ok(TemperatureMap {
        temps,
        view: frame.view,
        source_frame: frame.frame_id.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sample(t: f64, c: f64) -> CalibrationSample {
        CalibrationSample {
            reference_temp_c: t,
            mean_counts: c,
        }
    }

    fn frame_of(counts: Grid<u16>) -> RawFrame {
        RawFrame {
            counts,
            view: View::Plantar,
            captured_at_ms: 0,
            frame_id: "f".into(),
        }
    }

    #[test]
    fn collinear_fit_is_exact() {
        let s = [sample(25.0, 2500.0), sample(35.0, 3500.0), sample(45.0, 4500.0)];
        let c = fit_calibration(&s).unwrap();
        assert!((c.slope - 0.01).abs() < 1e-15);
        assert!(c.intercept.abs() < 1e-12);
        assert!(c.nonlinearity_pct < 1e-12);
        assert_eq!(c.sample_range_c, (25.0, 45.0));
    }

    #[test]
    fn fit_errors() {
        assert_eq!(
            fit_calibration(&[sample(25.0, 1.0), sample(30.0, 2.0)]),
            Err(RadiometryError::TooFewSamples(2))
        );
        assert_eq!(
            fit_calibration(&[sample(25.0, 7.0), sample(30.0, 7.0), sample(35.0, 7.0)]),
            Err(RadiometryError::DegenerateSamples)
        );
        assert!(matches!(
            fit_calibration(&[sample(45.0, 1.0), sample(35.0, 2.0), sample(25.0, 3.0)]),
            Err(RadiometryError::NonPositiveSlope(_))
        ));
        assert_eq!(
            nonlinearity_percent(&[], &CalibrationCurve::linear(1.0, 0.0)),
            Err(RadiometryError::EmptySamples)
        );
    }

    #[test]
    fn worst_deviation_over_full_scale() {
        // 1.332 degC worst-case deviation against a 45 degC full-scale input.
        let curve = CalibrationCurve::linear(0.01, 0.0);
        let s = [sample(25.0, 2500.0), sample(35.0, 3500.0 + 133.2), sample(45.0, 4500.0)];
        let pct = nonlinearity_percent(&s, &curve).unwrap();
        assert!((pct - 2.96).abs() < 1e-9, "{pct}");
    }

    #[test]
    fn constant_counts_convert_to_constant_map() {
        let s = [sample(25.0, 2500.0), sample(35.0, 3500.0), sample(45.0, 4500.0)];
        let curve = fit_calibration(&s).unwrap();
        let sensor = SensorSpec::lepton3();
        let map = counts_to_temperature(&frame_of(Grid::filled(160, 120, 3300)), &curve, &sensor).unwrap();
        assert!(map.temps.as_slice().iter().all(|&t| (t - 33.0).abs() < 1e-5));

        let zero = counts_to_temperature(
            &frame_of(Grid::filled(160, 120, 0)),
            &CalibrationCurve::linear(0.01, 0.0),
            &sensor,
        )
        .unwrap();
        assert!(zero.temps.as_slice().iter().all(|&t| t == 0.0));
    }

    #[test]
    fn implausible_pixels_are_masked() {
        let sensor = SensorSpec::lepton3();
        let mut counts = Grid::filled(160, 120, 30615u16);
        counts.set(0, 0, 0);
        counts.set(0, 1, u16::MAX);
        let map = counts_to_temperature(&frame_of(counts), &CalibrationCurve::linear(0.01, -273.15), &sensor).unwrap();
        assert!(map.temps.get(0, 0).is_nan());
        assert!(map.temps.get(0, 1).is_nan());
        assert!((map.temps.get(5, 5) - 33.0).abs() < 1e-4);
    }

    #[test]
    fn dimension_mismatch() {
        let err = counts_to_temperature(
            &frame_of(Grid::filled(10, 10, 0)),
            &CalibrationCurve::linear(0.01, 0.0),
            &SensorSpec::lepton3(),
        )
        .unwrap_err();
        assert!(matches!(err, RadiometryError::DimensionMismatch { .. }));
    }

    #[test]
    fn footprint_near_two_point_three_mm() {
        let s = SensorSpec::lepton3();
        assert!(s.is_valid());
        let fp = s.pixel_footprint_mm();
        assert!((2.3..2.4).contains(&fp), "{fp}");
    }

    #[test]
    fn view_labels_round_trip() {
        for v in [
            View::Plantar,
            View::Periphery { angle: 0 },
            View::Periphery { angle: 270 },
        ] {
            assert_eq!(View::from_label(&v.label()), Some(v));
        }
        assert_eq!(View::from_label("periphery-45"), None);
    }

    proptest! {
        #[test]
        fn scale_consistency(k in 0.1f64..20.0, bumps in proptest::collection::vec(-0.5f64..0.5, 5..20)) {
            let samples: Vec<_> = bumps.iter().enumerate()
                .map(|(i, b)| sample(25.0 + i as f64, 2500.0 + 100.0 * i as f64 + 10.0 * b))
                .collect();
            let scaled: Vec<_> = samples.iter()
                .map(|s| sample(s.reference_temp_c, s.mean_counts * k))
                .collect();
            let a = fit_calibration(&samples).unwrap();
            let b = fit_calibration(&scaled).unwrap();
            prop_assert!(((a.slope / k) - b.slope).abs() <= 1e-12 * a.slope.abs());
            for (s, t) in samples.iter().zip(&scaled) {
                prop_assert!((a.predict(s.mean_counts) - b.predict(t.mean_counts)).abs() < 1e-9);
            }
        }

        #[test]
        fn conversion_is_monotone(a in proptest::collection::vec(0u16..40000, 64), d in proptest::collection::vec(0u16..2000, 64)) {
            let sensor = SensorSpec { width: 8, height: 8, ..SensorSpec::lepton3() };
            let curve = CalibrationCurve::linear(0.01, -273.15);
            let lo = frame_of(Grid::from_vec(8, 8, a.clone()).unwrap());
            let hi = frame_of(Grid::from_vec(8, 8, a.iter().zip(&d).map(|(x, y)| x + y).collect()).unwrap());
            let tl = counts_to_temperature(&lo, &curve, &sensor).unwrap();
            let th = counts_to_temperature(&hi, &curve, &sensor).unwrap();
            for (x, y) in tl.temps.as_slice().iter().zip(th.temps.as_slice()) {
                if x.is_finite() && y.is_finite() {
                    prop_assert!(y >= x);
                }
            }
        }

        #[test]
        fn linear_round_trip(slope in 0.005f64..0.05, intercept in -300.0f64..0.0, temps in proptest::collection::vec(20.0f64..40.0, 3..30)) {
            prop_assume!(temps.iter().any(|t| (t - temps[0]).abs() > 0.1));
            let samples: Vec<_> = temps.iter().map(|&t| sample(t, (t - intercept) / slope)).collect();
            let c = fit_calibration(&samples).unwrap();
            for s in &samples {
                prop_assert!((c.predict(s.mean_counts) - s.reference_temp_c).abs() <= 1e-6);
            }
        }
    }
}
