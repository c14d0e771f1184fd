//! Command-line front end: graph building, sparsity sweeps, synthetic data,
//! training, prediction, evaluation and scaling benchmarks.

pub mod alloc;
pub mod commands;
pub mod error;
pub mod svg;

pub use commands::{run, Cli, Command};
pub use error::{CliError, Result};
