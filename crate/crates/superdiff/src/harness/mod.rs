//! Experiment configuration, runners, metrics, and output emission.

pub mod cli;
pub mod config;
pub mod experiment;
pub mod metrics;
pub mod output;

pub use config::{ExperimentKind, ModelSpec, RunConfig, TrainSpec};
pub use experiment::{run_experiment, ExperimentOutcome, ABORT_THRESHOLD};
pub use metrics::{metric_density_gap, metric_mixture_weights, MetricsReport};
