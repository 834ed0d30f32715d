use std::path::PathBuf;

/// Errors produced anywhere in the pipeline.
///
/// Variants are grouped by the category the CLI reports through its exit code
/// (see [`RimError::category`]).
#[derive(Debug, thiserror::Error)]
pub enum RimError {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("schema error: {0}")]
    Schema(String),

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("value error at line {line}, column `{column}`: {msg}")]
    Value { line: usize, column: String, msg: String },

    #[error("data error: {0}")]
    Data(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("unsupported {what} version {found} (expected {expected})")]
    Version {
        what: &'static str,
        found: u8,
        expected: u8,
    },

    #[error("corrupt file: {0}")]
    Corruption(String),

    #[error("stale retrieval cache: {0}")]
    StaleCache(String),

    #[error("numeric error in {layer}: {msg}")]
    Numeric { layer: String, msg: String },

    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    #[error("oracle mismatch: {0}")]
    OracleMismatch(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// Coarse error class, used for process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorCategory {
    Config,
    Data,
    Numeric,
    Oracle,
}

impl ErrorCategory {
    /// Process exit status for a failed command.
    pub fn exit_code(self) -> i32 {
        match self {
            ErrorCategory::Config => 2,
            ErrorCategory::Data => 3,
            ErrorCategory::Numeric => 4,
            ErrorCategory::Oracle => 5,
        }
    }
}

impl RimError {
    pub fn category(&self) -> ErrorCategory {
        match self {
            RimError::Config(_) | RimError::Schema(_) => ErrorCategory::Config,
            RimError::Numeric { .. } => ErrorCategory::Numeric,
            RimError::OracleMismatch(_) => ErrorCategory::Oracle,
            _ => ErrorCategory::Data,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        RimError::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T, E = RimError> = std::result::Result<T, E>;
