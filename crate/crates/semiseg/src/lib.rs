//! Semi- and self-supervised training for 2D microscopy semantic
//! segmentation.
//!
//! The crate trains a U-Net either from a partially labelled dataset
//! (consistency regularization between an image and its strongly augmented
//! view) or with no labels at all (mutual-information maximization between
//! an image and a rotated copy), and ships the evaluation and sweep harness
//! for label-ratio studies. See the `examples/` directory for one runnable
//! program per capability and `src/bin/semiseg.rs` for the CLI.

pub mod augment;
pub mod config;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod grid;
pub mod losses;
pub mod model;
pub mod rng;
pub mod train;

pub use error::{Error, Result};
pub use grid::{Image, Mask, SoftPrediction};
