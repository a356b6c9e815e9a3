use thiserror::Error;

/// Errors raised anywhere in the forecasting stack.
#[derive(Error, Debug)]
pub enum Error {
    #[error("invalid dimension: {0}")]
    InvalidDimension(String),

    #[error("dimension mismatch: expected {expected}, got {got} ({context})")]
    DimensionMismatch {
        expected: usize,
        got: usize,
        context: &'static str,
    },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("degenerate sample: {0}")]
    DegenerateSample(String),

    #[error("samples outside [{lower}, {upper}]: {offenders:?}")]
    OutOfBounds {
        lower: f64,
        upper: f64,
        offenders: Vec<(usize, f64)>,
    },

    #[error("insufficient history at index {t}: need more than {max_lag} prior steps")]
    InsufficientHistory { t: usize, max_lag: usize },

    #[error("missing data: {0}")]
    MissingData(String),

    #[error("load error at row {row}: {message}")]
    Load { row: usize, message: String },

    #[error("look-ahead violation: {0}")]
    LookAhead(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("config parse error: {0}")]
    Toml(#[from] toml::de::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Stable identifier for machine-readable error reports.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidDimension(_) => "invalid_dimension",
            Error::DimensionMismatch { .. } => "dimension_mismatch",
            Error::InvalidConfig(_) => "invalid_config",
            Error::Domain(_) => "domain",
            Error::InvalidInput(_) => "invalid_input",
            Error::Numeric(_) => "numeric",
            Error::DegenerateSample(_) => "degenerate_sample",
            Error::OutOfBounds { .. } => "out_of_bounds",
            Error::InsufficientHistory { .. } => "insufficient_history",
            Error::MissingData(_) => "missing_data",
            Error::Load { .. } => "load",
            Error::LookAhead(_) => "look_ahead",
            Error::Io(_) => "io",
            Error::Csv(_) => "csv",
            Error::Json(_) => "json",
            Error::Toml(_) => "config_parse",
        }
    }
}
