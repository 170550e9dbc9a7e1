//! Normalization layers: KernelNorm and the affine family
//! (batch, layer, instance, group).

pub mod affine;
pub mod config;
pub mod kernel;

pub use affine::{batch_norm_eval, batch_norm_train, group_norm, instance_norm, layer_norm, update_running, AffineNorm, BatchStats};
pub use config::{AffineKind, AffineNormConfig, KernelNormConfig};
pub use kernel::{
    kernel_norm, kernel_norm_output_shape, kernel_norm_with_mask, kn_mean_var, kn_mean_var_with_mask, KernelNormOutput, WindowStats,
};
