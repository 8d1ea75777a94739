//! Evaluation toolkit for panoptic edge detection.
//!
//! Segmentation ground truth is converted into multi-label semantic and
//! per-instance boundary maps ([`gt_convert`]). Predictions are scored with a
//! dataset-level maximum F-measure over a threshold grid ([`boundary`]);
//! instance predictions are first paired with ground truth by box overlap
//! and boundary quality ([`matching`]). Per category, the boundary score and
//! the detection score F_object combine into F² ([`metric`]).
//!
//! [`eval`] runs the whole pipeline over a converted dataset, [`loss`] holds
//! the class-balanced edge loss, and [`perturb`] and [`synth`] build
//! controlled predictions and scenes for testing.

pub mod boundary;
mod edt;
pub mod error;
pub mod eval;
pub mod gt_convert;
pub mod io;
pub mod loss;
pub mod manifest;
pub mod matching;
pub mod metric;
pub mod perturb;
pub mod raster;
pub mod synth;

pub use error::{Error, Result};
