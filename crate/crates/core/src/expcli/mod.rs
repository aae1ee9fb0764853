//! Experiment configs, the commands behind the `hypergrad` binary, and their
//! CSV output.

pub mod commands;
pub mod config;
pub mod records;

pub use commands::{class_means, derive_seed, run_experiment, CommandOutput, THREADS_ENV};
pub use config::{parse_config, parse_config_str, ExperimentConfig, ExperimentKind};
pub use records::{summarize, Table, SCHEMA_LINE};
