//! Experiment harness: configuration, language orders, run persistence,
//! transfer reports, heatmaps and parameter accounting.

pub mod config;
pub mod error;
pub mod export;
pub mod heatmap;
pub mod matrix;
pub mod orders;
pub mod params;
pub mod report;
pub mod runner;
pub mod workload;

pub use config::ExperimentConfig;
pub use error::{HarnessError, Result};
