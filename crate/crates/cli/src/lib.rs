//! Experiment driver: synthetic models, survey layout, inversion runs in the
//! three modes, exports and the strong-scaling benchmark.

pub mod bench;
pub mod config;
pub mod experiment;
pub mod export;
pub mod layout;
pub mod model;

pub use config::ExperimentConfig;
pub use experiment::{run_experiment, ExperimentSummary, ModeResult};
