//! Experiment driver for `oed-core`: TOML configuration, shipped presets for
//! the quadratic, quadratic-OED and Timoshenko-beam benchmarks, and the work
//! behind the `oed` command-line tool.

pub mod commands;
pub mod config;
pub mod error;
pub mod output;
pub mod presets;

pub use config::ExperimentConfig;
pub use error::HarnessError;
