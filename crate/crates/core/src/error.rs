use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Shapes of vectors, masks or weight sets disagree.
    #[error("dimension mismatch in {what}: expected {expected}, got {actual}")]
    Dimension {
        what: &'static str,
        expected: usize,
        actual: usize,
    },

    /// An operation was called outside its contract (empty batch, bad rate, ...).
    #[error("{0}")]
    Usage(String),

    /// A non-finite or otherwise degenerate numeric value.
    #[error("numeric error: {0}")]
    Numeric(String),

    /// A configuration, spec or schema document failed validation.
    #[error("invalid {field}: {reason}")]
    Config { field: String, reason: String },

    /// A statistical test whose statistic is undefined for the given input.
    #[error("undefined test: {0}")]
    UndefinedTest(String),

    /// A CSV cell or record that cannot be interpreted.
    #[error("{path}: row {row}, column '{column}': {reason}")]
    Parse {
        path: String,
        row: usize,
        column: String,
        reason: String,
    },

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{context}: {source}")]
    Json {
        context: String,
        #[source]
        source: serde_json::Error,
    },

    #[error("{context}: {source}")]
    Csv {
        context: String,
        #[source]
        source: csv::Error,
    },
}

impl Error {
    pub(crate) fn usage(msg: impl Into<String>) -> Self {
        Error::Usage(msg.into())
    }

    pub(crate) fn numeric(msg: impl Into<String>) -> Self {
        Error::Numeric(msg.into())
    }

    pub(crate) fn config(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            reason: reason.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code for the command line: 2 for bad input, 3 for runtime failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Usage(_)
            | Error::Config { .. }
            | Error::Parse { .. }
            | Error::Dimension { .. }
            | Error::Json { .. }
            | Error::Csv { .. } => 2,
            Error::Numeric(_) | Error::UndefinedTest(_) | Error::Io { .. } => 3,
        }
    }
}

pub(crate) fn check_dim(what: &'static str, expected: usize, actual: usize) -> Result<()> {
    if expected == actual {
        Ok(())
    } else {
        Err(Error::Dimension {
            what,
            expected,
            actual,
        })
    }
}
