//! On-disk formats: raw frames and temperature maps as little-endian binary
//! with a JSON sidecar, calibration and transform documents, mask PNG and
//! run-length text, overlay PNG.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use image::{GrayImage, Luma, RgbImage};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::{Grid, Mask};
use crate::radiometry::{CalibrationCurve, RawFrame, TemperatureMap, View};
use crate::registration::AffineTransform;

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {source}")]
    Json { path: PathBuf, source: serde_json::Error },
    #[error("{path}: {source}")]
    Image { path: PathBuf, source: image::ImageError },
    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> IoError + '_ {
    move |source| IoError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn format_err(path: &Path, message: impl Into<String>) -> IoError {
    IoError::Format {
        path: path.to_path_buf(),
        message: message.into(),
    }
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, IoError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&text).map_err(|source| IoError::Json {
        path: path.to_path_buf(),
        source,
    })
}

/// Pretty-printed, newline-terminated.
pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<(), IoError> {
    let mut text = serde_json::to_string_pretty(value).expect("serialisable value");
    text.push('\n');
    fs::write(path, text).map_err(io_err(path))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SampleFormat {
    U16le,
    F32le,
}

/// Metadata stored next to a binary frame or map.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sidecar {
    pub view: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub angle: Option<u16>,
    pub captured_at_ms: u64,
    pub frame_id: String,
    pub width: usize,
    pub height: usize,
    pub format: SampleFormat,
}

impl Sidecar {
    fn new(view: View, captured_at_ms: u64, frame_id: &str, width: usize, height: usize, format: SampleFormat) -> Self {
        let (view, angle) = match view {
            View::Plantar => ("plantar".to_string(), None),
            View::Periphery { angle } => ("periphery".to_string(), Some(angle)),
        };
        Self {
            view,
            angle,
            captured_at_ms,
            frame_id: frame_id.to_string(),
            width,
            height,
            format,
        }
    }

    pub fn view(&self) -> Option<View> {
        match (self.view.as_str(), self.angle) {
            ("plantar", None) => Some(View::Plantar),
            ("periphery", Some(a)) => View::periphery(a),
            _ => None,
        }
    }
}

/// `frame.raw` -> `frame.json`.
pub fn sidecar_path(data_path: &Path) -> PathBuf {
    data_path.with_extension("json")
}

pub fn encode_counts(counts: &Grid<u16>) -> Vec<u8> {
    counts.as_slice().iter().flat_map(|c| c.to_le_bytes()).collect()
}

pub fn decode_counts(bytes: &[u8], width: usize, height: usize) -> Option<Grid<u16>> {
    if bytes.len() != 2 * width * height {
        return None;
    }
    let data = bytes
        .chunks_exact(2)
        .map(|b| u16::from_le_bytes([b[0], b[1]]))
        .collect();
    Grid::from_vec(width, height, data)
}

pub fn frame_sidecar(frame: &RawFrame) -> Sidecar {
    Sidecar::new(
        frame.view,
        frame.captured_at_ms,
        &frame.frame_id,
        frame.counts.width(),
        frame.counts.height(),
        SampleFormat::U16le,
    )
}

pub fn frame_from_parts(sidecar: &Sidecar, bytes: &[u8]) -> Result<RawFrame, String> {
    if sidecar.format != SampleFormat::U16le {
        return Err("sidecar format is not u16le".into());
    }
    let view = sidecar
        .view()
        .ok_or_else(|| format!("unknown view {:?} / angle {:?}", sidecar.view, sidecar.angle))?;
    let counts = decode_counts(bytes, sidecar.width, sidecar.height).ok_or_else(|| {
        format!(
            "expected {} bytes for {}x{} counts, found {}",
            2 * sidecar.width * sidecar.height,
            sidecar.width,
            sidecar.height,
            bytes.len()
        )
    })?;
    Ok(RawFrame {
        counts,
        view,
        captured_at_ms: sidecar.captured_at_ms,
        frame_id: sidecar.frame_id.clone(),
    })
}

/// Writes `path` (counts) and its sidecar.
pub fn write_raw_frame(path: &Path, frame: &RawFrame) -> Result<(), IoError> {
    fs::write(path, encode_counts(&frame.counts)).map_err(io_err(path))?;
    write_json(&sidecar_path(path), &frame_sidecar(frame))
}

pub fn read_raw_frame(path: &Path) -> Result<RawFrame, IoError> {
    let sidecar: Sidecar = read_json(&sidecar_path(path))?;
    let bytes = fs::read(path).map_err(io_err(path))?;
    frame_from_parts(&sidecar, &bytes).map_err(|m| format_err(path, m))
}

pub fn write_temperature_map(path: &Path, map: &TemperatureMap) -> Result<(), IoError> {
    let bytes: Vec<u8> = map.temps.as_slice().iter().flat_map(|t| t.to_le_bytes()).collect();
    fs::write(path, bytes).map_err(io_err(path))?;
    let sidecar = Sidecar::new(
        map.view,
        0,
        &map.source_frame,
        map.width(),
        map.height(),
        SampleFormat::F32le,
    );
    write_json(&sidecar_path(path), &sidecar)
}

pub fn read_temperature_map(path: &Path) -> Result<TemperatureMap, IoError> {
    let sidecar: Sidecar = read_json(&sidecar_path(path))?;
    let bytes = fs::read(path).map_err(io_err(path))?;
    if sidecar.format != SampleFormat::F32le || bytes.len() != 4 * sidecar.width * sidecar.height {
        return Err(format_err(path, "not an f32le map of the sidecar's size"));
    }
    let view = sidecar.view().ok_or_else(|| format_err(path, "unknown view"))?;
    let data = bytes
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        .collect();
    Ok(TemperatureMap {
        temps: Grid::from_vec(sidecar.width, sidecar.height, data).expect("length checked"),
        view,
        source_frame: sidecar.frame_id,
    })
}

/// One line per scanline; invalid pixels are empty fields.
pub fn temperature_map_csv(map: &TemperatureMap) -> String {
    let mut out = String::with_capacity(map.temps.len() * 7);
    for r in 0..map.height() {
        for c in 0..map.width() {
            if c > 0 {
                out.push(',');
            }
            if let Some(t) = map.valid(r, c) {
                let _ = write!(out, "{t:.3}");
            }
        }
        out.push('\n');
    }
    out
}

pub fn write_calibration(path: &Path, curve: &CalibrationCurve) -> Result<(), IoError> {
    write_json(path, curve)
}

pub fn read_calibration(path: &Path) -> Result<CalibrationCurve, IoError> {
    let curve: CalibrationCurve = read_json(path)?;
    if !(curve.slope > 0.0) || !curve.intercept.is_finite() {
        return Err(format_err(
            path,
            "calibration slope must be positive and intercept finite",
        ));
    }
    Ok(curve)
}

pub fn mask_to_image(mask: &Mask) -> GrayImage {
    GrayImage::from_fn(mask.width() as u32, mask.height() as u32, |x, y| {
        Luma([if *mask.get(y as usize, x as usize) { 255 } else { 0 }])
    })
}

pub fn write_mask_png(path: &Path, mask: &Mask) -> Result<(), IoError> {
    mask_to_image(mask).save(path).map_err(|source| IoError::Image {
        path: path.to_path_buf(),
        source,
    })
}

/// Any grey level above 127 counts as foreground.
pub fn read_mask_png(path: &Path) -> Result<Mask, IoError> {
    let img = image::open(path)
        .map_err(|source| IoError::Image {
            path: path.to_path_buf(),
            source,
        })?
        .into_luma8();
    Ok(Grid::from_fn(img.width() as usize, img.height() as usize, |r, c| {
        img.get_pixel(c as u32, r as u32).0[0] > 127
    }))
}

/// `W H` on the first line, then alternating run lengths in raster order,
/// starting with a (possibly empty) background run.
pub fn mask_to_rle(mask: &Mask) -> String {
    let mut out = format!("{} {}\n", mask.width(), mask.height());
    let mut runs = Vec::new();
    let mut current = false;
    let mut len = 0usize;
    for &v in mask.as_slice() {
        if v == current {
            len += 1;
        } else {
            runs.push(len);
            current = v;
            len = 1;
        }
    }
    runs.push(len);
    let body: Vec<String> = runs.iter().map(|r| r.to_string()).collect();
    out.push_str(&body.join(" "));
    out.push('\n');
    out
}

pub fn mask_from_rle(text: &str) -> Result<Mask, String> {
    let mut nums = text
        .split_whitespace()
        .map(|t| t.parse::<usize>().map_err(|e| format!("{t:?}: {e}")));
    let width = nums.next().ok_or("missing width")??;
    let height = nums.next().ok_or("missing height")??;
    let mut data = Vec::with_capacity(width * height);
    let mut value = false;
    for run in nums {
        let run = run?;
        if data.len() + run > width * height {
            return Err("runs exceed mask size".into());
        }
        data.extend(std::iter::repeat_n(value, run));
        value = !value;
    }
    Grid::from_vec(width, height, data).ok_or_else(|| "runs do not cover the mask".to_string())
}

/// Six numbers, row-major: `a b tx c d ty`.
pub fn transform_to_text(t: &AffineTransform) -> String {
    let parts: Vec<String> = t.m.iter().map(|v| format!("{v:.17e}")).collect();
    parts.join(" ") + "\n"
}

pub fn transform_from_text(text: &str) -> Result<AffineTransform, String> {
    let vals: Vec<f64> = text
        .split_whitespace()
        .map(|t| t.parse::<f64>().map_err(|e| format!("{t:?}: {e}")))
        .collect::<Result<_, _>>()?;
    let m: [f64; 6] = vals
        .try_into()
        .map_err(|v: Vec<f64>| format!("expected 6 numbers, found {}", v.len()))?;
    Ok(AffineTransform { m })
}

pub fn write_png(path: &Path, img: &RgbImage) -> Result<(), IoError> {
    img.save(path).map_err(|source| IoError::Image {
        path: path.to_path_buf(),
        source,
    })
}

pub fn encode_png(img: &RgbImage) -> Vec<u8> {
    let mut buf = std::io::Cursor::new(Vec::new());
    img.write_to(&mut buf, image::ImageFormat::Png)
        .expect("in-memory PNG encoding");
    buf.into_inner()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn frame() -> RawFrame {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        RawFrame {
            counts: Grid::from_fn(16, 12, |_, _| rng.random()),
            view: View::Periphery { angle: 270 },
            captured_at_ms: 1234,
            frame_id: "f-1".into(),
        }
    }

    #[test]
    fn raw_frame_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.raw");
        let f = frame();
        write_raw_frame(&path, &f).unwrap();
        assert_eq!(fs::metadata(&path).unwrap().len(), 16 * 12 * 2);
        assert_eq!(read_raw_frame(&path).unwrap(), f);
    }

    #[test]
    fn counts_are_little_endian() {
        let g = Grid::from_vec(2, 1, vec![0x0102u16, 0xA0B0]).unwrap();
        assert_eq!(encode_counts(&g), [0x02, 0x01, 0xB0, 0xA0]);
        assert!(decode_counts(&[0, 1, 2], 2, 1).is_none());
    }

    #[test]
    fn truncated_raw_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.raw");
        write_raw_frame(&path, &frame()).unwrap();
        fs::write(&path, [0u8; 10]).unwrap();
        assert!(matches!(read_raw_frame(&path), Err(IoError::Format { .. })));
    }

    #[test]
    fn temperature_map_round_trip_keeps_nan() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.f32");
        let mut temps = Grid::from_fn(5, 4, |r, c| 30.0 + r as f32 * 0.25 + c as f32);
        temps.set(1, 1, f32::NAN);
        let map = TemperatureMap {
            temps,
            view: View::Plantar,
            source_frame: "x".into(),
        };
        write_temperature_map(&path, &map).unwrap();
        let back = read_temperature_map(&path).unwrap();
        assert!(back.temps.get(1, 1).is_nan());
        assert_eq!(back.temps.get(3, 4), map.temps.get(3, 4));
        let csv = temperature_map_csv(&map);
        assert_eq!(csv.lines().count(), 4);
        assert!(csv.lines().nth(1).unwrap().starts_with("30.250,,32.250,"));
    }

    #[test]
    fn calibration_reparse_agrees() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cal.json");
        let mut c = CalibrationCurve::linear(0.010000000123, -273.1500001);
        c.nonlinearity_pct = 2.96;
        c.sample_range_c = (25.0, 45.0);
        write_calibration(&path, &c).unwrap();
        let back = read_calibration(&path).unwrap();
        assert!((back.slope - c.slope).abs() < 1e-9);
        assert!((back.intercept - c.intercept).abs() < 1e-9);
        assert_eq!(back.sample_range_c, (25.0, 45.0));
    }

    #[test]
    fn mask_png_and_rle_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for case in 0..10 {
            let m = Grid::from_fn(13, 7, |_, _| rng.random_bool(0.4));
            let p = dir.path().join(format!("m{case}.png"));
            write_mask_png(&p, &m).unwrap();
            assert_eq!(read_mask_png(&p).unwrap(), m);
            assert_eq!(mask_from_rle(&mask_to_rle(&m)).unwrap(), m);
        }
        let full = Grid::filled(3, 2, true);
        assert_eq!(mask_to_rle(&full), "3 2\n0 6\n");
        assert!(mask_from_rle("3 2\n0 5\n").is_err());
    }

    #[test]
    fn transform_text_round_trip() {
        let t = AffineTransform {
            m: [0.1, -2.5, 1e-7, 3.0, 1.0 / 3.0, -120.25],
        };
        assert_eq!(transform_from_text(&transform_to_text(&t)).unwrap(), t);
        assert!(transform_from_text("1 2 3").is_err());
    }
}
