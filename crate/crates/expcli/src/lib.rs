//! Experiment harness for low-rank adapter studies on synthetic
//! teacher/student data: configuration, training, residual spectra,
//! the exact regression suite, grids and checkpoints.

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod error;
pub mod grid;
pub mod output;
pub mod spectrum;
pub mod synthetic;
pub mod theorem;
pub mod train;

pub use config::TrainConfig;
pub use error::{ExpError, Result};
