//! Experiment runner around `vnl-core`: JSON configuration, checkpoint and
//! result files, report aggregation and the `vnl` command line.

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod error;
pub mod experiment;
pub mod output;
pub mod report;

pub use error::{LabError, Result};
