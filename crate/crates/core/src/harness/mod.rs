//! Data ingestion, precision sweeps and reports.

mod data;
mod report;
mod sweep;

use std::io;
use std::path::PathBuf;

use thiserror::Error;

use crate::fixedpoint::FixedPointError;
use crate::kmeans::KMeansError;
use crate::perfmodel::ModelError;
use crate::weave::{FormatError, WeaveError};

pub use data::{gen_blobs, load_csv, write_csv};
pub use report::{emit_report, summary_path, to_json, ReportFormat};
pub use sweep::{
    centers_from_fractions, initial_centers, prepare, seeded_centers, sweep, sweep_with_workers, DatasetInfo,
    DatasetSource, InitCenters, PrecisionList, PreparedData, SweepConfig, SweepEntry, SweepReport, WallClock,
    REPORT_SCHEMA,
};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("file not found: {}", .0.display())]
    MissingFile(PathBuf),
    #[error("no data rows in {}", .0.display())]
    EmptyFile(PathBuf),
    #[error("line {line}: expected {expected} fields, found {actual}")]
    Ragged { line: u64, expected: usize, actual: usize },
    #[error("line {line}, column {column}: {value:?} is not a number")]
    NonNumeric { line: u64, column: usize, value: String },
    #[error("invalid shape: {0}")]
    InvalidShape(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: io::Error },
    #[error("thread pool: {0}")]
    ThreadPool(String),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    FixedPoint(#[from] FixedPointError),
    #[error(transparent)]
    Weave(#[from] WeaveError),
    #[error(transparent)]
    Format(#[from] FormatError),
    #[error(transparent)]
    KMeans(#[from] KMeansError),
    #[error(transparent)]
    Model(#[from] ModelError),
}
