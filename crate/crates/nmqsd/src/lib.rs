//! Ensemble runs of the `nmqsd-core` solver: configuration files, parallel
//! execution, CSV output and reference checks.

pub mod checks;
pub mod config;
pub mod oracle;
pub mod output;
pub mod runner;

pub use config::{ConfigError, CouplingMode, HierarchyModeKey, RunConfig, UnravelingKey};
pub use output::{write_outputs, OutputError};
pub use runner::{run_ensemble, EnsembleRun, ErrorEstimate, RunError};
