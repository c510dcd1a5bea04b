//! Config-driven experiments and parameter sweeps.

pub mod config;
pub mod run;
pub mod sweep;

pub use config::ExperimentConfig;
pub use run::{run_experiment, ExperimentOutcome, MetricsTable};
pub use sweep::{sweep, write_sweep, SweepParam};
