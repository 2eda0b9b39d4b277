//! A small dense-network engine: point-wise shared layers, activations,
//! max-pooling over points, manual backpropagation, and Adam.
//!
//! All arithmetic is in `f64` and single-threaded, so results are bitwise
//! reproducible for fixed inputs.

mod adam;
mod gradcheck;
mod layer;
mod params;

pub use adam::{scheduled_lr, Adam, BETA1, BETA2, EPSILON};
pub use gradcheck::{check_gradient, check_gradient_smooth, GradCheck};
pub use layer::{
    maxpool_backward, maxpool_backward_into, maxpool_points, maxpool_segments, relu, relu_backward, relu_inplace,
    sigmoid, sigmoid_vec, Dense,
};
pub use params::{BlockSubset, ModelParams, BLOCK_WIDTHS, FEATURE_DIM, HEAD_WIDTHS, INPUT_DIM};
