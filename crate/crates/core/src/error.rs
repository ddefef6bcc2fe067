use thiserror::Error;

/// Errors raised across the library.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// The requested trial cannot meet its power constraint, or clip bounds are empty.
    #[error("infeasible design: {reason} (value {value})")]
    InfeasibleDesign { reason: String, value: f64 },

    /// Normal equations are not invertible (too few pulls or collinear regressors).
    #[error("singular design: {0}")]
    SingularDesign(String),

    /// An argument lies outside the domain where a formula is defined.
    #[error("domain error: {0}")]
    DomainError(String),

    /// A probability vector is negative somewhere or does not sum to one.
    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),

    /// No user contributed a usable estimate.
    #[error("no data: {0}")]
    NoData(String),

    /// Every candidate on the dynamics grid produced a rank-deficient fit.
    #[error("unidentifiable model: {0}")]
    UnidentifiableModel(String),

    /// Configuration failed to parse or validate; `path` locates the field.
    #[error("config error at `{path}`: {message}")]
    Config { path: String, message: String },

    #[error("i/o error on {path}: {message}")]
    Io { path: String, message: String },
}

impl Error {
    pub fn config(path: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            path: path.into(),
            message: message.into(),
        }
    }

    pub fn infeasible(reason: impl Into<String>, value: f64) -> Self {
        Error::InfeasibleDesign {
            reason: reason.into(),
            value,
        }
    }

    pub fn io(path: &std::path::Path, err: impl std::fmt::Display) -> Self {
        Error::Io {
            path: path.display().to_string(),
            message: err.to_string(),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
