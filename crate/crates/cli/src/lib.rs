//! Batch experiment runner behind the `rbsde` binary.
//!
//! A run reads one TOML configuration, resolves every experiment up front
//! (schema errors abort before any work), executes the experiments in order
//! and writes CSV/JSONL artifacts, a `checks.csv` with every verdict and a
//! `manifest.json`.

pub mod config;
pub mod experiments;
pub mod run;

/// Exit status of `rbsde run` / `rbsde validate-config`. `IO` covers an
/// unreadable config as well as artifact write failures.
pub mod exit {
    pub const PASS: i32 = 0;
    pub const CHECK_FAILED: i32 = 1;
    pub const SCHEMA: i32 = 2;
    pub const IO: i32 = 3;
}
