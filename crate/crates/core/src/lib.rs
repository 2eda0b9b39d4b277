//! Point cloud geometry quality assessment.
//!
//! The crate covers the full pipeline: synthesizing distorted versions of
//! reference clouds, full-reference geometry metrics, a patch-based quality
//! network trained from pairwise rankings, fine-tuning on absolute scores,
//! and the correlation and ranking statistics used to evaluate all of it.

pub mod dataset;
pub mod distortion;
pub mod error;
pub mod geometry;
pub mod gqanet;
pub mod metrics;
pub mod nn;
pub mod seed;
pub mod stats;
pub mod synth;
pub mod train;

pub use error::{Error, Result};
