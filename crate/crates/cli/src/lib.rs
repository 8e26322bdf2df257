//! `seqlab` experiment runner: config files, runs, sweeps, comparison
//! tables, curve export and dataset preprocessing.

pub mod compare;
pub mod config;
pub mod curve;
pub mod dataset;
pub mod preprocess;
pub mod run;
pub mod sweep;

pub use config::{ExperimentConfig, DATA_ROOT_ENV};
