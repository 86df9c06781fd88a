use thiserror::Error;

/// Crate-wide error type. Variants carry enough context to act on the
/// failure without re-deriving it from the call site.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("sensor {index}: standard deviation must be positive, got {value}")]
    NonPositiveScale { index: usize, value: f64 },

    #[error("mixture weight p0 must lie in (0, 1], got {0}")]
    MixtureWeightOutOfRange(f64),

    #[error("window length must be at least 1")]
    EmptyWindow,

    #[error("segment length tau must be positive")]
    ZeroTau,

    #[error("candidate k={k} is not retained at time {t} (window {w})")]
    CandidateEvicted { k: u64, t: u64, w: usize },

    #[error("no candidate change points yet: detector has not seen any data")]
    NoCandidates,

    #[error("change-point estimate requested before any alarm")]
    NotAlarmed,

    #[error("nominal post-change rates are required for this detector")]
    MissingNominalRates,

    #[error("tilt parameter theta={0} outside (0, 1)")]
    ThetaOutOfRange(f64),

    #[error("per-sensor drift b/N = {0} is outside the attainable range of the tilted mean")]
    DriftNotAttainable(f64),

    #[error("run-length target {target} must exceed {min}")]
    RunLengthTargetTooSmall { target: f64, min: f64 },

    #[error("{what} must be positive, got {value}")]
    NonPositive { what: &'static str, value: f64 },

    #[error("threshold search failed to bracket the target {target} (last value {last})")]
    ThresholdSearchFailed { target: f64, last: f64 },

    #[error("delay bound needs window w > {min_w:.3}, got {w}")]
    WindowTooShortForBound { w: usize, min_w: f64 },

    #[error("affected-sensor set is empty")]
    NoAffectedSensors,

    #[error("covariance is not positive definite: smallest eigenvalue {0:.3e}")]
    CovarianceNotPositiveDefinite(f64),

    #[error(
        "covariance matrix must be square and match the sensor count {expected}, got {rows}x{cols}"
    )]
    CovarianceShape {
        expected: usize,
        rows: usize,
        cols: usize,
    },

    #[error("series too short: need at least {need} points, got {got}")]
    SeriesTooShort { need: usize, got: usize },

    #[error("design matrix is rank deficient (rank {rank} of {cols} columns)")]
    RankDeficient { rank: usize, cols: usize },

    #[error("no alarm before end of stream at t={horizon}; system unresolved")]
    NoAlarm { horizon: u64 },

    #[error("not enough resolved systems to fit the life model")]
    NoTrainingSystems,

    #[error("row {row}: {msg}")]
    MalformedRow { row: usize, msg: String },

    #[error("scenario is invalid: {0}")]
    InvalidScenario(String),

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
