//! Iterated graph-cut segmentation on a single-channel intensity image.
//!
//! Each iteration reassigns every pixel to its cheapest mixture component,
//! re-estimates both mixtures and then solves an exact min-cut over the free
//! (probable) pixels. The energy
//!
//! ```text
//! E = sum_p min_k D(alpha_p, k, z_p) + sum_{p~q} w_pq [alpha_p != alpha_q]
//! ```
//!
//! never increases: every step minimises it over one block of variables.

use serde::{Deserialize, Serialize};

use super::gmm::GmmModel;
use super::maxflow::FlowNetwork;
use super::{IntensityImage, SegmentationError};
use crate::grid::{Grid, Mask};

/// Pairwise smoothness weight.
pub const GAMMA: f64 = 50.0;
pub const DEFAULT_ITERATIONS: usize = 5;
/// Smallest rectangle accepted as initialisation.
pub const MIN_RECT_AREA: usize = 64;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum TrimapLabel {
    DefiniteBackground,
    DefiniteForeground,
    ProbableBackground,
    ProbableForeground,
}

impl TrimapLabel {
    #[inline]
    pub fn is_foreground(self) -> bool {
        matches!(self, TrimapLabel::DefiniteForeground | TrimapLabel::ProbableForeground)
    }

    #[inline]
    pub fn is_definite(self) -> bool {
        matches!(self, TrimapLabel::DefiniteForeground | TrimapLabel::DefiniteBackground)
    }
}

/// Axis-aligned initialisation rectangle; `row`/`col` is the top-left pixel.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rect {
    pub row: usize,
    pub col: usize,
    pub height: usize,
    pub width: usize,
}

impl Rect {
    /// The image minus a border of `margin` pixels.
    pub fn inset(width: usize, height: usize, margin: usize) -> Self {
        Rect {
            row: margin,
            col: margin,
            height: height.saturating_sub(2 * margin),
            width: width.saturating_sub(2 * margin),
        }
    }

    #[inline]
    pub fn contains(&self, row: usize, col: usize) -> bool {
        row >= self.row && row < self.row + self.height && col >= self.col && col < self.col + self.width
    }

    pub fn area(&self) -> usize {
        self.width * self.height
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScribbleLabel {
    Foreground,
    Background,
}

/// A user-forced pixel label.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Scribble {
    pub row: usize,
    pub col: usize,
    pub label: ScribbleLabel,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskProvenance {
    Automatic,
    UserCorrected,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FootMask {
    pub mask: Mask,
    pub provenance: MaskProvenance,
}

#[derive(Clone, Debug)]
pub struct GrabCutResult {
    pub mask: FootMask,
    /// Total energy after each iteration's cut.
    pub energies: Vec<f64>,
    pub foreground_model: GmmModel,
    pub background_model: GmmModel,
}

struct PairEdge {
    a: usize,
    b: usize,
    weight: f64,
}

/// Unordered 8-neighbour pairs with contrast-sensitive weights.
fn pair_edges(image: &Grid<f64>) -> Vec<PairEdge> {
    let (w, h) = (image.width(), image.height());
    let mut raw = Vec::with_capacity(4 * w * h);
    for row in 0..h {
        for col in 0..w {
            let a = image.index(row, col);
            let mut push = |r: usize, c: usize, dist: f64| {
                let b = image.index(r, c);
                let d = image.as_slice()[a] - image.as_slice()[b];
                raw.push((a, b, d * d, dist));
            };
            if col + 1 < w {
                push(row, col + 1, 1.0);
            }
            if row + 1 < h {
                push(row + 1, col, 1.0);
                if col + 1 < w {
                    push(row + 1, col + 1, std::f64::consts::SQRT_2);
                }
                if col > 0 {
                    push(row + 1, col - 1, std::f64::consts::SQRT_2);
                }
            }
        }
    }
    let mean_sq = raw.iter().map(|e| e.2).sum::<f64>() / raw.len().max(1) as f64;
    let beta = if mean_sq > 0.0 { 1.0 / (2.0 * mean_sq) } else { 0.0 };
    raw.into_iter()
        .map(|(a, b, d2, dist)| PairEdge {
            a,
            b,
            weight: GAMMA * (-beta * d2).exp() / dist,
        })
        .collect()
}

fn build_trimap(
    image: &IntensityImage,
    rect: &Rect,
    scribbles: &[Scribble],
) -> Result<Vec<TrimapLabel>, SegmentationError> {
    let (w, h) = (image.values.width(), image.values.height());
    let mut trimap: Vec<TrimapLabel> = (0..w * h)
        .map(|i| {
            let (r, c) = (i / w, i % w);
            if image.forced_background.as_slice()[i] || !rect.contains(r, c) {
                TrimapLabel::DefiniteBackground
            } else {
                TrimapLabel::ProbableForeground
            }
        })
        .collect();
    for s in scribbles {
        if s.row >= h || s.col >= w {
            return Err(SegmentationError::ScribbleOutOfBounds { row: s.row, col: s.col });
        }
        trimap[s.row * w + s.col] = match s.label {
            ScribbleLabel::Foreground => TrimapLabel::DefiniteForeground,
            ScribbleLabel::Background => TrimapLabel::DefiniteBackground,
        };
    }
    Ok(trimap)
}

fn validate_rect(rect: &Rect, width: usize, height: usize) -> Result<(), SegmentationError> {
    let inside = rect.row >= 1 && rect.col >= 1 && rect.row + rect.height < height && rect.col + rect.width < width;
    if !inside || rect.area() < MIN_RECT_AREA {
        return Err(SegmentationError::InvalidRect(*rect));
    }
    Ok(())
}

fn class_samples(values: &[f64], alpha: &[bool], fg: bool) -> Vec<f64> {
    values
        .iter()
        .zip(alpha)
        .filter_map(|(&z, &a)| (a == fg).then_some(z))
        .collect()
}

fn relearn(values: &[f64], alpha: &[bool], fg: bool, model: &GmmModel) -> GmmModel {
    let samples = class_samples(values, alpha, fg);
    let assign: Vec<usize> = samples.iter().map(|&z| model.best_component(z).0).collect();
    GmmModel::learn(&samples, &assign, Some(model))
}

fn energy(values: &[f64], alpha: &[bool], fg: &GmmModel, bg: &GmmModel, pairs: &[PairEdge]) -> f64 {
    let data: f64 = values
        .iter()
        .zip(alpha)
        .map(|(&z, &a)| {
            if a {
                fg.best_component(z).1
            } else {
                bg.best_component(z).1
            }
        })
        .sum();
    let smooth: f64 = pairs
        .iter()
        .filter(|e| alpha[e.a] != alpha[e.b])
        .map(|e| e.weight)
        .sum();
    data + smooth
}

/// Segments foreground from background starting from `rect`, with optional
/// user scribbles that pin pixels to a class.
pub fn grabcut(
    image: &IntensityImage,
    rect: Rect,
    scribbles: &[Scribble],
    iterations: usize,
) -> Result<GrabCutResult, SegmentationError> {
    let (w, h) = (image.values.width(), image.values.height());
    validate_rect(&rect, w, h)?;
    if iterations == 0 {
        return Err(SegmentationError::ZeroIterations);
    }
    let trimap = build_trimap(image, &rect, scribbles)?;
    let values = image.values.as_slice();
    let mut alpha: Vec<bool> = trimap.iter().map(|l| l.is_foreground()).collect();

    let fg_samples = class_samples(values, &alpha, true);
    let bg_samples = class_samples(values, &alpha, false);
    if fg_samples.is_empty() {
        return Err(SegmentationError::EmptyForeground);
    }
    let mut fg = GmmModel::learn(&fg_samples, &GmmModel::quantile_assignment(&fg_samples), None);
    let mut bg = GmmModel::learn(&bg_samples, &GmmModel::quantile_assignment(&bg_samples), None);

    let pairs = pair_edges(&image.values);
    // exceeds any achievable cut through a single pixel's neighbourhood
    let hard = 8.0 * GAMMA + 1.0e3;
    let n = w * h;
    let (source, sink) = (n, n + 1);
    let mut energies = Vec::with_capacity(iterations);

    for _ in 0..iterations {
        fg = relearn(values, &alpha, true, &fg);
        if bg_samples_exist(&alpha) {
            bg = relearn(values, &alpha, false, &bg);
        }

        let mut net = FlowNetwork::new(n + 2);
        for (p, (&z, &label)) in values.iter().zip(&trimap).enumerate() {
            match label {
                TrimapLabel::DefiniteForeground => net.add_edge(source, p, hard, 0.0),
                TrimapLabel::DefiniteBackground => net.add_edge(p, sink, hard, 0.0),
                _ => {
                    let cost_fg = fg.best_component(z).1;
                    let cost_bg = bg.best_component(z).1;
                    let m = cost_fg.min(cost_bg);
                    // source side = foreground; cutting s->p labels p background
                    if cost_bg > m {
                        net.add_edge(source, p, cost_bg - m, 0.0);
                    }
                    if cost_fg > m {
                        net.add_edge(p, sink, cost_fg - m, 0.0);
                    }
                }
            }
        }
        for e in &pairs {
            net.add_edge(e.a, e.b, e.weight, e.weight);
        }
        net.max_flow(source, sink);
        let side = net.source_side(source);
        for (p, label) in trimap.iter().enumerate() {
            alpha[p] = if label.is_definite() {
                label.is_foreground()
            } else {
                side[p]
            };
        }
        energies.push(energy(values, &alpha, &fg, &bg, &pairs));
        if !alpha.iter().any(|&a| a) {
            return Err(SegmentationError::EmptyForeground);
        }
    }

    Ok(GrabCutResult {
        mask: FootMask {
            mask: Grid::from_vec(w, h, alpha).expect("alpha sized to image"),
            provenance: if scribbles.is_empty() {
                MaskProvenance::Automatic
            } else {
                MaskProvenance::UserCorrected
            },
        },
        energies,
        foreground_model: fg,
        background_model: bg,
    })
}

fn bg_samples_exist(alpha: &[bool]) -> bool {
    alpha.iter().any(|&a| !a)
}
