use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Broad failure classes, used by the CLI to pick an exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Usage,
    Io,
    Numeric,
    MemoryBudget,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed header: {0}")]
    MalformedHeader(String),

    #[error("non-numeric cell {cell:?} at line {line}, column {column}")]
    NonNumeric {
        line: usize,
        column: usize,
        cell: String,
    },

    #[error("non-finite value at row {row}, column {column}")]
    NonFiniteValue { row: usize, column: usize },

    #[error("dataset must have at least one row and one column (got {rows}x{dims})")]
    EmptyDataset { rows: usize, dims: usize },

    #[error("row {line} has {found} cells, expected {expected}")]
    RaggedRow {
        line: usize,
        found: usize,
        expected: usize,
    },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("histogram needs {required} bytes, over the {cap} byte budget")]
    OutOfMemoryBudget { required: u128, cap: u128 },

    #[error("flow training diverged at step {step}")]
    TrainingDiverged { step: usize },

    #[error("target count {target} exceeds dataset size {available}; every point is selected")]
    AllPointsSelected { target: f64, available: usize },

    #[error("index {index} out of range for dataset of {rows} rows")]
    IndexOutOfRange { index: u64, rows: usize },

    #[error("worker failed on partition {partition}: {message}")]
    WorkerPanic { partition: usize, message: String },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidParameter(msg.into())
    }

    /// Stable machine-readable code, one per variant.
    pub fn code(&self) -> &'static str {
        match self {
            Error::Io { .. } => "io",
            Error::MalformedHeader(_) => "malformed_header",
            Error::NonNumeric { .. } => "non_numeric",
            Error::NonFiniteValue { .. } => "non_finite_value",
            Error::EmptyDataset { .. } => "empty_dataset",
            Error::RaggedRow { .. } => "ragged_row",
            Error::InvalidParameter(_) => "invalid_parameter",
            Error::OutOfMemoryBudget { .. } => "out_of_memory_budget",
            Error::TrainingDiverged { .. } => "training_diverged",
            Error::AllPointsSelected { .. } => "all_points_selected",
            Error::IndexOutOfRange { .. } => "index_out_of_range",
            Error::WorkerPanic { .. } => "worker_panic",
        }
    }

    pub fn class(&self) -> ErrorClass {
        match self {
            Error::InvalidParameter(_) => ErrorClass::Usage,
            Error::Io { .. }
            | Error::MalformedHeader(_)
            | Error::NonNumeric { .. }
            | Error::NonFiniteValue { .. }
            | Error::EmptyDataset { .. }
            | Error::RaggedRow { .. }
            | Error::IndexOutOfRange { .. } => ErrorClass::Io,
            Error::TrainingDiverged { .. }
            | Error::AllPointsSelected { .. }
            | Error::WorkerPanic { .. } => ErrorClass::Numeric,
            Error::OutOfMemoryBudget { .. } => ErrorClass::MemoryBudget,
        }
    }
}
