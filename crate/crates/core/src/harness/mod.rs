//! Experiment orchestration: metrics, sweeps, the overestimation study,
//! configuration files and output formats.

#[cfg(feature = "cli")]
pub mod cli;
pub mod config;
pub mod experiment;
pub mod metrics;
pub mod output;
pub mod overestimate;
pub mod selftest;

pub use experiment::{
    aggregate, run_experiment, ExperimentSpec, ResultRow, SweepKind, TrialRecord,
};
pub use metrics::{nmse, nmse_kruskal, to_db};
