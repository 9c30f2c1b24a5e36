use chrono::NaiveDate;

/// Errors returned by this crate.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Fewer than two members, or a non-finite member value.
    #[error("invalid ensemble: {0}")]
    InvalidEnsemble(String),
    /// A run of missing observations could not be filled.
    #[error("imputation failed for gap starting at index {start} (length {len})")]
    ImputationFailure { start: usize, len: usize },
    /// Schema or ordering problem in an input file.
    #[error("parse error at row {row}: {msg}")]
    Parse { row: usize, msg: String },
    /// Invalid synthetic or run configuration.
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    /// The series has (numerically) zero variance.
    #[error("degenerate series: {0}")]
    DegenerateSeries(String),
    #[error("history too short: need {needed} values, got {got}")]
    HistoryTooShort { needed: usize, got: usize },
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("numerical failure: {0}")]
    NumericalFailure(String),
    #[error("interval level {0} outside (0, 1)")]
    InvalidLevel(f64),
    #[error("empty input")]
    EmptyInput,
    #[error("reference score must be positive, got {0}")]
    InvalidReference(f64),
    /// The objective is not finite at the starting point.
    #[error("objective not finite at the initial point")]
    InvalidStart,
    #[error("insufficient history before {date}: need {needed} days, got {got}")]
    InsufficientHistory {
        date: NaiveDate,
        needed: usize,
        got: usize,
    },
    /// Loss differential with zero long-run variance.
    #[error("degenerate loss differential")]
    DegenerateDifferential,
    #[error("PIT value {0} outside [0, 1]")]
    InvalidPit(f64),
    #[error("alignment error: {0}")]
    Alignment(String),
    #[error("missing observations: {0}")]
    MissingObservations(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
