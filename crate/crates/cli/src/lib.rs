//! The `ladx` command line: data generation, training stages, sampling,
//! evaluation and benchmarks, each leaving a self-describing run directory.

pub mod args;
pub mod commands;
pub mod error;
pub mod manifest;

pub use commands::run_args;
pub use error::{CliError, CliResult};
pub use manifest::{content_hash, Manifest};
