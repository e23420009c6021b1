//! Semi-supervised plantar thermogram analysis.
//!
//! The pipeline converts raw radiometric frames to temperature maps, segments
//! both feet with GrabCut, aligns the contralateral foot onto the reference
//! foot from four landmarks per foot, flags pixels at least 2.2 degC warmer
//! than their contralateral point and validates each flagged region against
//! its own surroundings before reporting region mean temperatures.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod acquisition;
pub mod analysis;
pub mod grid;
pub mod io;
pub mod phantom;
pub mod radiometry;
pub mod registration;
pub mod segmentation;
pub mod session;
