use thiserror::Error;

/// Errors raised by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("empty corpus: no non-gap measurement found")]
    EmptyCorpus,

    #[error("negative measurement: {0}")]
    NegativeMeasurement(f64),

    #[error("non-finite value: {0}")]
    NonFinite(f64),

    #[error("state {state} outside 0..{num_states}")]
    InvalidState { state: usize, num_states: usize },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("duplicate station id `{0}`")]
    DuplicateStation(String),

    #[error("unknown station `{0}`")]
    UnknownStation(String),

    #[error("instant {t} outside 1..={horizon}")]
    InstantOutOfRange { t: i64, horizon: usize },

    #[error("unparseable value `{value}` at line {line}")]
    UnparseableValue { value: String, line: u64 },

    #[error("duplicate entry for station `{station}` at t={t}")]
    DuplicateEntry { station: String, t: usize },

    #[error("input arity mismatch: table expects {expected}, query has {got}")]
    ArityMismatch { expected: usize, got: usize },

    #[error("initial instant incomplete: station `{0}` has a gap at t=1")]
    InitialInstantIncomplete(String),

    #[error("too few observations: need at least {needed}, found {found}")]
    TooFewObservations { needed: usize, found: usize },

    #[error("no outcome for test position station `{station}` t={t}")]
    MissingOutcome { station: String, t: usize },

    #[error("station sets differ between reports")]
    MismatchedStations,

    #[error("{path}: {reason}")]
    Format { path: String, reason: String },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
