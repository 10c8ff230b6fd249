//! File formats, configuration and the command line for `hypermsg-core`.

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod dataset;
pub mod fsio;
pub mod run;

pub use checkpoint::Checkpoint;
pub use config::ExperimentConfig;
pub use dataset::{Dataset, DatasetError};
pub use run::Failure;
