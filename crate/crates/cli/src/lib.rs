//! Experiment runner for `smtjsim`: TOML experiment specs, seeded runs,
//! gain sweeps, model analysis and annealing, with CSV/JSON export.

pub mod config;
pub mod error;
pub mod output;
pub mod run;

pub use config::ExperimentSpec;
pub use error::{CliError, CliResult};
pub use run::{Format, RunOptions};
