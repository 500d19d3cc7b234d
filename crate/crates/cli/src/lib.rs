//! File formats, configuration and stage orchestration for the `gradflow`
//! binary. The numerical work lives in `gradflow-core`; this crate adds
//! CSV and checkpoint files, thread-level parallelism over realizations
//! and ensemble members, and per-stage caching.

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod error;
pub mod io;
pub mod pipeline;

pub use config::{RunConfig, Scenario};
pub use error::{CliError, Result};
pub use pipeline::{MetricsReport, Pipeline, Stage};
