use thiserror::Error;

/// Errors produced by model construction, estimation, and data handling.
#[derive(Debug, Error)]
pub enum Error {
    /// An evaluation point fell outside the unit interval.
    #[error("evaluation point {0} lies outside [0, 1]")]
    DomainPoint(f64),

    /// Options or sizes that do not define a valid model.
    #[error("invalid configuration: {0}")]
    Config(String),

    /// A file could not be opened or read.
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    /// A data file violates the expected layout; reports the offending location.
    #[error("{path}: row {row}, column {column}: {message}")]
    Parse {
        path: String,
        row: usize,
        column: usize,
        message: String,
    },

    /// The penalized system is numerically singular.
    #[error("ill-posed system: {0}")]
    IllPosed(String),

    /// Estimation produced a quantity outside its valid range.
    #[error("degenerate estimate: {0}")]
    Degenerate(String),

    /// An internal consistency check failed.
    #[error("internal error: {0}")]
    Internal(String),
}

pub type Result<T> = std::result::Result<T, Error>;
