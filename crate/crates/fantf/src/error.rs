//! Crate-wide error type.
//!
//! Every fallible operation returns [`FantfError`]; messages carry the name of
//! the operation that failed so errors surfacing at the CLI identify their
//! origin. [`FantfError::exit_code`] maps error classes onto the process exit
//! statuses used by the binary (2 = configuration, 3 = data, 4 = numeric).

use thiserror::Error;

#[derive(Debug, Error)]
pub enum FantfError {
    /// Tensor extents do not line up for the requested operation.
    #[error("dimension error: {0}")]
    Dimension(String),

    /// An operation was invoked outside its stated contract.
    #[error("contract error: {0}")]
    Contract(String),

    /// A scalar parameter is outside its valid range.
    #[error("parameter error: {0}")]
    Parameter(String),

    /// Non-finite values or other numeric breakdown.
    #[error("numeric error: {0}")]
    Numeric(String),

    /// Ingestion or parsing failure in the data pipeline.
    #[error("data error: {0}")]
    Data(String),

    /// Experiment configuration problem.
    #[error("config error: {0}")]
    Config(String),

    /// The requested metric is undefined for the given inputs.
    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, FantfError>;

impl FantfError {
    /// An I/O error annotated with the path it occurred on.
    pub fn io_at(path: &std::path::Path, e: std::io::Error) -> FantfError {
        FantfError::Io(std::io::Error::new(
            e.kind(),
            format!("{}: {e}", path.display()),
        ))
    }

    /// Process exit status for the CLI: misuse of the library surfaces as a
    /// config error (2), broken inputs as a data error (3) and numeric
    /// breakdown as 4.
    pub fn exit_code(&self) -> i32 {
        match self {
            FantfError::Config(_)
            | FantfError::Contract(_)
            | FantfError::Parameter(_)
            | FantfError::Dimension(_) => 2,
            FantfError::Data(_) | FantfError::Io(_) => 3,
            FantfError::Numeric(_) | FantfError::UndefinedMetric(_) => 4,
        }
    }
}
