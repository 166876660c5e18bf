use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the soft-sensing pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("file not found: {}", .0.display())]
    NotFound(PathBuf),

    #[error("i/o error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("dataset has zero data rows")]
    EmptyDataset,

    #[error("row {row}: expected {expected} columns, found {found}")]
    ColumnCount {
        row: usize,
        expected: usize,
        found: usize,
    },

    #[error("metadata lists {meta} variables but the file has {columns} columns")]
    MetaMismatch { meta: usize, columns: usize },

    #[error("row {row}, column {column} ({tag}): cannot parse {value:?} as a real number")]
    Parse {
        row: usize,
        column: usize,
        tag: String,
        value: String,
    },

    #[error("row {row}, column {column} ({tag}): missing value")]
    Missing { row: usize, column: usize, tag: String },

    #[error("invalid row range {start}..{end} for {len} rows")]
    InvalidRange { start: usize, end: usize, len: usize },

    #[error("degenerate (constant) variables: {}", .0.join(", "))]
    DegenerateVariables(Vec<String>),

    #[error("shape mismatch in {context}: expected {expected}, found {found}")]
    Shape {
        context: String,
        expected: String,
        found: String,
    },

    #[error("index {index} out of range for {what} of size {size}")]
    IndexOutOfRange {
        what: &'static str,
        index: usize,
        size: usize,
    },

    #[error("unknown variable tag {0:?}")]
    UnknownTag(String),

    #[error("variable tag {0:?} names more than one column")]
    AmbiguousTag(String),

    #[error("window size {window} must satisfy 1 <= w < T = {len}")]
    InvalidWindow { window: usize, len: usize },

    #[error("invalid split fractions {0:?}")]
    InvalidFractions((f64, f64, f64)),

    #[error("split {0} is empty")]
    EmptySplit(&'static str),

    #[error("graph needs at least 2 nodes, got {0}")]
    TooFewNodes(usize),

    #[error("sensor {0} has a zero-norm embedding")]
    ZeroNorm(usize),

    #[error("k = {k} out of range for {nodes} nodes (need 0 <= k <= {})", nodes.saturating_sub(1))]
    InvalidK { k: usize, nodes: usize },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("series has constant ground truth; metric is undefined")]
    ConstantSeries,

    #[error("every sample has |y| below the MAPE threshold")]
    AllExcluded,

    #[error("variable {0} is constant; correlation is undefined")]
    ConstantVariable(String),

    #[error("non-finite gradient in parameter {0}")]
    NonFiniteGradient(&'static str),

    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },

    #[error("unsupported checkpoint format {0:?}")]
    Format(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        let path = path.into();
        if source.kind() == std::io::ErrorKind::NotFound {
            Error::NotFound(path)
        } else {
            Error::Io { path, source }
        }
    }

    pub(crate) fn shape(
        context: impl Into<String>,
        expected: impl ToString,
        found: impl ToString,
    ) -> Self {
        Error::Shape {
            context: context.into(),
            expected: expected.to_string(),
            found: found.to_string(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
