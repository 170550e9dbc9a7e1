use thiserror::Error;

use crate::tensor::Shape4;

#[derive(Debug, Error)]
pub enum KnError {
    #[error("invalid shape {0:?}: all dimensions must be at least 1")]
    InvalidShape([usize; 4]),

    #[error("data length {got} does not match shape {shape} (expected {expected})")]
    DataLength { shape: Shape4, expected: usize, got: usize },

    #[error("shape mismatch in {op}: {detail}")]
    ShapeMismatch { op: &'static str, detail: String },

    #[error("kernel exceeds input extent: kernel {kernel:?} vs input {extent:?}")]
    KernelExceedsInput { kernel: (usize, usize), extent: (usize, usize) },

    #[error("channel mismatch: input has {input} channels, weights expect {weights}")]
    ChannelMismatch { input: usize, weights: usize },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("cycle detected in gradient graph at node {0}")]
    Cycle(usize),

    #[error("divergence: non-finite value in {0}")]
    Divergence(String),

    #[error("per-sample gradients unavailable: {0}")]
    PerSampleUnavailable(String),

    #[error("truncated record in {0}")]
    TruncatedRecord(String),

    #[error("bad record count in {path}: expected {expected}, found {found}")]
    BadRecordCount { path: String, expected: usize, found: usize },

    #[error("infeasible label assignment: {0}")]
    InfeasiblePartition(String),

    #[error("empty client shard for client {0}")]
    EmptyShard(usize),

    #[error("unknown {kind} '{name}'")]
    Unknown { kind: &'static str, name: String },

    #[error("bad tensor file: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = KnError> = std::result::Result<T, E>;

pub(crate) fn shape_err(op: &'static str, detail: impl Into<String>) -> KnError {
    KnError::ShapeMismatch { op, detail: detail.into() }
}
