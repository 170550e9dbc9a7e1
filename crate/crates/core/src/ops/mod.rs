//! Forward kernels and their vector-Jacobian products.
//!
//! These are plain functions on tensors. [`crate::autodiff::Tape`] records
//! them and wires the matching backward functions together.

pub mod activation;
pub mod conv;
pub mod dropout;
pub mod linear;
pub mod loss;
pub mod pool;

pub use activation::{mish, relu};
pub use conv::{conv2d, conv2d_naive_loops, conv_output_hw, Conv2dGrads};
pub use dropout::{dropout_mask, dropout_mask_per_sample, DropoutScaling};
pub use linear::linear;
pub use loss::softmax_cross_entropy;
pub use pool::{adaptive_avg_pool2d, avg_pool2d, max_pool2d};
