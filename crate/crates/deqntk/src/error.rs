use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Errors of the experiment layer, grouped by the exit code the CLI reports.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Kernel(#[from] deqntk_core::Error),

    #[error("kernel entry ({i}, {j}): {source}")]
    Entry {
        i: usize,
        j: usize,
        #[source]
        source: deqntk_core::Error,
    },

    #[error("{what} did not converge in {iterations} iterations (residual {residual:e})")]
    NoConvergence { what: &'static str, iterations: usize, residual: f64 },

    #[error("matrix is singular to working precision (condition estimate {condition:e})")]
    Singular { condition: f64 },

    #[error("operator norm {0} of the recurrent map is not below 1")]
    NotContractive(f64),

    #[error("linear algebra failure: {0}")]
    LinAlg(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("{path}: {reason}")]
    Data { path: PathBuf, reason: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv output: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn data(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        Error::Data { path: path.into(), reason: reason.into() }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    /// Process exit code: 2 for configuration, 3 for data and IO, 4 for numerical failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 2,
            Error::Kernel(deqntk_core::Error::InvalidParams(_) | deqntk_core::Error::NotContractive(_)) => 2,
            Error::Data { .. } | Error::Io { .. } | Error::Csv(_) => 3,
            _ => 4,
        }
    }
}
