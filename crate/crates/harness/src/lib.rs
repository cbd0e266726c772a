//! Configuration, orchestration and output for the `brwre` command-line tool.

pub mod commands;
pub mod config;
pub mod manifest;
pub mod output;
pub mod workers;

/// Process exit codes.
pub mod exit {
    pub const OK: i32 = 0;
    /// A check or validation failed.
    pub const FAILED: i32 = 1;
    /// Bad input or an I/O problem.
    pub const ERROR: i32 = 2;
    /// Completed, but the results need attention (too many capped replicas).
    pub const ADVISORY: i32 = 3;
}
