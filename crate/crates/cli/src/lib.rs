//! Pipeline orchestration behind the `aitsr` binary: synthesize sequences,
//! fit TSR features, train, evaluate, segment and reproduce the two
//! reference experiments.

pub mod commands;
pub mod config;
pub mod diagnostics;
pub mod error;
pub mod report;
pub mod repro;

pub use config::PipelineConfig;
pub use error::{CliError, CliResult, EXIT_COMPUTE, EXIT_VALIDATION};
pub use repro::{repro, Experiment, ReproOptions};
