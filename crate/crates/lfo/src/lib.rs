//! Pipeline orchestration, file formats and reports for the learning-from-observation
//! experiments built on `lfo-core`.

pub mod cli;
pub mod config;
pub mod error;
pub mod formats;
pub mod pipeline;
pub mod report;
pub mod store;

pub use config::ExperimentConfig;
pub use error::{HarnessError, Result};
pub use pipeline::{Context, Stage};
