//! KernelNorm, KNConv and the surrounding training stack.

// `!(x > 0.0)` is used on purpose so NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::too_many_arguments, clippy::single_range_in_vec_init)]

pub mod autodiff;
pub mod data;
pub mod element;
pub mod error;
pub mod gradcheck;
pub mod knconv;
pub mod models;
pub mod norm;
pub mod ops;
pub mod rng;
pub mod tensor;
pub mod train;
pub mod verify;

pub use element::{DType, Element};
pub use error::{KnError, Result};
pub use rng::Rng;
pub use tensor::{Shape4, Tensor4};
