//! Experiment harness: configuration, training loop, and one module per
//! subcommand.

pub mod audit;
pub mod config;
pub mod datasets;
pub mod error;
pub mod experiments;
pub mod method;
pub mod output;
pub mod train;

pub use config::ExperimentConfig;
pub use error::{HarnessError, Result};
pub use experiments::Context;
