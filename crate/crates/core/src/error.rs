use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("schema error: {0}")]
    Schema(String),

    #[error("duplicate row for country {country} in year {year}")]
    DuplicateRow { country: String, year: i32 },

    #[error("no rows survive complete-case filtering")]
    NoSurvivors,

    #[error("column {0} is constant; cannot standardize")]
    ConstantColumn(String),

    #[error("coordinate out of range: lat {lat}, lon {lon}")]
    CoordinateOutOfRange { lat: f64, lon: f64 },

    #[error("anchor country {0} not present after filtering")]
    AnchorMissing(String),

    #[error("too few countries: {got} (need at least {need})")]
    TooFewCountries { got: usize, need: usize },

    #[error("matrix is not symmetric positive definite")]
    NotPositiveDefinite,

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("unknown parameter name: {0}")]
    UnknownName(String),

    #[error("insufficient draws: have {have}, need {need}")]
    InsufficientDraws { have: usize, need: usize },

    #[error("non-finite log density at sweep {sweep} (state dumped to {dump:?})")]
    NonFinite { sweep: usize, dump: Option<PathBuf> },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("grid too large: {0} points")]
    GridTooLarge(u64),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
