use image::{Rgb, RgbImage};

use super::{Hotspot, Verdict};
use crate::grid::BoundingBox;
use crate::radiometry::TemperatureMap;

pub const CONFIRMED_COLOR: Rgb<u8> = Rgb([0, 255, 0]);
pub const REJECTED_COLOR: Rgb<u8> = Rgb([0, 200, 255]);
const INVALID_COLOR: Rgb<u8> = Rgb([0, 0, 0]);

// iron-style ramp, cold to hot
const ANCHORS: [[u8; 3]; 6] = [
    [0, 0, 16],
    [40, 0, 140],
    [180, 0, 150],
    [250, 100, 0],
    [255, 210, 0],
    [255, 255, 230],
];

/// Palette slot for `t` on a linear `[lo, hi]` scale.
pub fn palette_index(t: f32, lo: f32, hi: f32) -> u8 {
    if hi <= lo {
        return 0;
    }
    let f = ((t - lo) / (hi - lo)).clamp(0.0, 1.0);
    (f * 255.0).floor() as u8
}

pub fn palette_color(index: u8) -> Rgb<u8> {
    let pos = index as f32 / 255.0 * (ANCHORS.len() - 1) as f32;
    let k = (pos.floor() as usize).min(ANCHORS.len() - 2);
    let f = pos - k as f32;
    let (a, b) = (ANCHORS[k], ANCHORS[k + 1]);
    Rgb(std::array::from_fn(|i| {
        (a[i] as f32 + (b[i] as f32 - a[i] as f32) * f).round() as u8
    }))
}

fn outline(img: &mut RgbImage, bb: &BoundingBox, color: Rgb<u8>, dashed: bool) {
    let mut put = |row: usize, col: usize, step: usize| {
        if (!dashed || step.is_multiple_of(2)) && (col as u32) < img.width() && (row as u32) < img.height() {
            img.put_pixel(col as u32, row as u32, color);
        }
    };
    for (step, col) in (bb.min_col..=bb.max_col).enumerate() {
        put(bb.min_row, col, step);
        put(bb.max_row, col, step);
    }
    for (step, row) in (bb.min_row..=bb.max_row).enumerate() {
        put(row, bb.min_col, step);
        put(row, bb.max_col, step);
    }
}

/// Pseudocolour rendering scaled to the map's valid range. Confirmed
/// hotspots get a solid rectangle on their bounding box, rejected candidates
/// a dashed one; confirmed outlines are drawn last.
pub fn render_overlay(map: &TemperatureMap, hotspots: &[Hotspot]) -> RgbImage {
    let (lo, hi) = map.finite_range().unwrap_or((0.0, 0.0));
    let mut img = RgbImage::from_fn(map.width() as u32, map.height() as u32, |x, y| {
        match map.valid(y as usize, x as usize) {
            Some(t) => palette_color(palette_index(t, lo, hi)),
            None => INVALID_COLOR,
        }
    });
    for h in hotspots
        .iter()
        .filter(|h| h.verdict == Some(Verdict::RejectedColdContralateral))
    {
        outline(&mut img, &h.bbox, REJECTED_COLOR, true);
    }
    for h in hotspots
        .iter()
        .filter(|h| h.verdict != Some(Verdict::RejectedColdContralateral))
    {
        outline(&mut img, &h.bbox, CONFIRMED_COLOR, false);
    }
    img
}
