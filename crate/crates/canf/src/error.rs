//! Error type shared across the crate.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    // -- numeric / model fitting --
    #[error("need at least {min} rows, got {got}")]
    EmptyData { min: usize, got: usize },
    #[error("input contains non-finite values")]
    NonFiniteInput,
    #[error("covariance is not symmetric (max relative asymmetry {max_asym:e})")]
    AsymmetricCovariance { max_asym: f64 },
    #[error("matrix not positive definite after jitter escalation up to {max_jitter:e}")]
    NotPositiveDefinite { max_jitter: f64 },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("shape mismatch between parameters and gradients")]
    ShapeMismatch,
    #[error("tape does not match network architecture")]
    TapeMismatch,
    #[error("EM needs at least k={k} points, got {n}")]
    TooFewPoints { n: usize, k: usize },
    #[error("mixture component {component} starved of responsibility mass twice")]
    DegenerateComponent { component: usize },
    #[error("all candidate component counts failed to fit")]
    AllCandidatesFailed,
    #[error("all posterior mixture weights vanished; observation far outside the model")]
    AllWeightsVanish,
    #[error("training loss became non-finite at epoch {epoch}")]
    NonFiniteLoss { epoch: usize },
    #[error("log-density was non-finite at {count} of {total} points")]
    NonFiniteLogDensity { count: usize, total: usize },

    // -- data ingestion / windowing --
    #[error("parse error at row {row}: {message}")]
    ParseError { row: usize, message: String },
    #[error("non-hourly cadence at timestamp {timestamp}")]
    NonHourlyCadence { timestamp: String },
    #[error("negative load at row {row}")]
    NegativeLoad { row: usize },
    #[error("series too short: {hours} hours, need at least {min_hours}")]
    TooShort { hours: usize, min_hours: usize },
    #[error("every segment is shorter than one window")]
    SegmentTooShort,
    #[error("cannot standardize data with zero variance")]
    ZeroVariance,

    // -- forecasting / evaluation --
    #[error("forecaster used before fitting: {strategy}")]
    StrategyUnfit { strategy: String },
    #[error("input window has length {got}, expected {expected}")]
    WindowLengthMismatch { expected: usize, got: usize },
    #[error("optimal schedule utility is zero; proportional regret undefined")]
    ZeroOptimalUtility,
    #[error("bundles are incompatible: {reason}")]
    IncompatibleBundles { reason: String },

    // -- configuration / io --
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),
    #[error("TOML error: {0}")]
    Toml(String),
}

/// Coarse class used to map errors to process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Config,
    Data,
    Numeric,
}

impl Error {
    pub fn class(&self) -> ErrorClass {
        use Error::*;
        match self {
            InvalidConfig(_) | Toml(_) => ErrorClass::Config,
            ParseError { .. }
            | NonHourlyCadence { .. }
            | NegativeLoad { .. }
            | TooShort { .. }
            | SegmentTooShort
            | ZeroVariance
            | Io(_)
            | Json(_)
            | Csv(_)
            | WindowLengthMismatch { .. }
            | IncompatibleBundles { .. } => ErrorClass::Data,
            _ => ErrorClass::Numeric,
        }
    }

    /// Process exit code per error class: 2 config, 3 data, 4 numeric.
    pub fn exit_code(&self) -> i32 {
        match self.class() {
            ErrorClass::Config => 2,
            ErrorClass::Data => 3,
            ErrorClass::Numeric => 4,
        }
    }
}
