//! Run store, HTTP API and pipeline glue behind the `lmd` binary.

pub mod config;
pub mod pipeline;
pub mod render;
pub mod server;
pub mod store;

use thiserror::Error;

pub use config::AppConfig;
pub use pipeline::{generate_from_layout, run_pipeline, PipelineError, RunOutput};
pub use store::{RunRecord, RunStatus, RunStore, StoreError};

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("cannot serve: {0}")]
    Bind(String),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
}
