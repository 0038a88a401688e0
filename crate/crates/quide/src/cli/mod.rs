//! Experiment commands, run persistence, and report emission.
//!
//! Every command produces a [`RunRecord`](record::RunRecord) whose stored
//! index values are recomputable from the stored raw `(P, C, T, thresh)`,
//! so records are self-verifying. Exit codes: 0 success, 1 usage/config
//! error, 2 data/parse error, 3 integrity/verification failure.

pub mod commands;
pub mod config;
pub mod record;
pub mod reference;
pub mod report;

pub use commands::{cmd_bench, cmd_report, cmd_search, cmd_sweep, cmd_train, cmd_verify_paper};
pub use config::{DatasetSpec, ExperimentConfig, Overrides, ReportFormat};
pub use record::{ReportRow, RunRecord, SweepTableRow, TrainSummary};
pub use reference::{verify_published_tables, VerifyReport};

use thiserror::Error;

use crate::bench::BenchError;
use crate::data::DataError;
use crate::metrics::MetricError;
use crate::model::ModelError;
use crate::quant::QuantError;
use crate::search::SearchError;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("usage error: {0}")]
    Usage(String),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Quant(#[from] QuantError),
    #[error(transparent)]
    Bench(#[from] BenchError),
    #[error(transparent)]
    Search(#[from] SearchError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error("record integrity failure: {0}")]
    Integrity(String),
    #[error("verification failed: {0}")]
    Verification(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl CliError {
    /// Process exit code for this error class.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Usage(_) => 1,
            CliError::Integrity(_) | CliError::Verification(_) => 3,
            _ => 2,
        }
    }
}
