//! Library side of the `kn` binary: presets, layered configuration and the
//! subcommand bodies, so integration tests can drive them directly.

pub mod commands;
pub mod config;
pub mod presets;

pub use commands::{bench, load_data, run, verify, BenchArgs, RunResult};
pub use config::{Command, RunConfig, Settings, UsageError};

/// Process exit codes.
pub mod exit {
    pub const OK: u8 = 0;
    /// A verification case failed or training diverged.
    pub const FAILED: u8 = 1;
    /// Bad flags, config file or preset; nothing was computed.
    pub const USAGE: u8 = 2;
}
