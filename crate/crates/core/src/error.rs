use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    #[error("invalid spectral sample: {0}")]
    InvalidSample(String),

    #[error("spectral sample does not match current parameters (point {point}, dim {dim})")]
    StaleSample { point: usize, dim: usize },

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("budget of {budget} spectral points cannot cover {components} components")]
    BudgetTooSmall { budget: usize, components: usize },

    #[error("cholesky factorization failed after jitters {jitters:?}")]
    NumericalFailure { jitters: Vec<f64> },

    #[error("{n} points exceeds the dense cap of {cap}; use the sparse-spectrum predictor instead")]
    TooLarge { n: usize, cap: usize },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error at row {row}, column {col}: {msg}")]
    Parse { row: usize, col: usize, msg: String },

    #[error("data error: {0}")]
    Data(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("internal error: {0}")]
    Internal(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code used by the command-line tool.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 2,
            Error::NumericalFailure { .. } => 4,
            Error::TooLarge { .. } => 5,
            Error::Io { .. }
            | Error::Parse { .. }
            | Error::Data(_)
            | Error::Checkpoint(_)
            | Error::InsufficientData(_) => 3,
            _ => 1,
        }
    }
}
