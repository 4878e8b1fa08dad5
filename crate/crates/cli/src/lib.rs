//! Experiment runner for Reptile and baseline training on the synthetic
//! speaker-variation benchmark.
//!
//! Each subcommand of the `reptile` binary is a plain function here so tests
//! and other tools can drive experiments without a subprocess.

pub mod commands;
pub mod config;
pub mod error;
pub mod runner;

pub use commands::{
    cmd_compare, cmd_cv, cmd_gradcheck, cmd_sweep, cmd_train, CompareReport, CvReport,
    GradcheckOptions, GradcheckPath, GradcheckReport, PairedTest, SeedCheck, SweepReport,
};
pub use config::{parse_methods, ExperimentConfig, Method};
pub use error::{CliError, CliResult};
pub use runner::{RunSummary, Splits};
