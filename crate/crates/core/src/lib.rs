//! Core library for multilingual continual-learning experiments.

pub mod error;
pub mod gradcheck;
pub mod lora;
pub mod metrics;
pub mod model;
pub mod numeric;
pub mod regimes;
pub mod tasks;

pub use error::{Error, Result};
