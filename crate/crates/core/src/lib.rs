//! Quality-aware unsupervised domain adaptation for no-reference point cloud
//! quality assessment.
//!
//! Labeled natural images (source) and unlabeled point clouds (target) share
//! one input format through [`pcproj`], which renders a cloud onto the six
//! faces of its bounding cube. A small staged convolutional network
//! ([`nnx`]) extracts features; [`mixup`] augments them with quality-guided
//! style mixup routed to different stages by quality stratum; [`align`]
//! provides the adversarial and rank-weighted conditional alignment losses;
//! [`train`] runs the two-phase schedule; [`eval`] holds correlation metrics,
//! a synthetic two-domain benchmark and the ablation harness.

pub mod align;
pub mod commands;
pub mod error;
pub mod eval;
pub mod mixup;
pub mod nnx;
pub mod pcproj;
pub mod train;

pub use error::{Error, Result};
