//! Experiment harness for the `twolmm` unmixers: scene generation, method
//! runs, result tables and parameter sweeps.

pub mod config;
pub mod error;
pub mod experiment;
pub mod report;

pub use config::{EndmemberSource, ExperimentConfig, Generator, Method, SweepKind};
pub use error::{BenchError, Result};
pub use experiment::{cmd_generate, cmd_sweep, cmd_unmix, run_experiment, run_sweep, Experiment, MethodRow, SweepRow};
