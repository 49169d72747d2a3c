use thiserror::Error;

/// Errors raised anywhere in the library.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum ScoreError {
    #[error("calibration set is empty")]
    EmptyCalibration,
    #[error("test set is empty")]
    EmptyTest,
    #[error("input list is empty")]
    EmptyInput,
    #[error("risk at index {0} is outside [0, 1]")]
    RiskOutOfRange(usize),
    #[error("weight at index {0} is not strictly positive")]
    NonPositiveWeight(usize),
    #[error("score at index {0} is not finite")]
    NonFiniteScore(usize),
    #[error("value {value} is outside [{lo}, {hi}]")]
    OutOfRange { value: f64, lo: f64, hi: f64 },
    #[error("rescaler bounds must satisfy lo < hi (got lo={lo}, hi={hi})")]
    InvalidRescaler { lo: f64, hi: f64 },
    #[error("alpha must lie in (0, 1), got {0}")]
    InvalidAlpha(f64),
    #[error("gamma must be positive and finite, got {0}")]
    InvalidGamma(f64),
    #[error("boosting draws must lie in (0, 1] and match the number of e-values")]
    InvalidDraws,
    #[error("grid needs at least 2 points, got {0}")]
    InvalidGrid(usize),
    #[error("length mismatch: expected {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("unknown data-generating setting {0}")]
    UnknownSetting(u8),
    #[error("dimension mismatch: need at least {expected} features, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("rejection sampler accepted too few draws after {attempts} attempts")]
    SamplingStalled { attempts: usize },
    #[error("k={k} exceeds the {n} available training points")]
    KTooLarge { k: usize, n: usize },
    #[error("logistic fit diverged (non-finite loss)")]
    DivergedFit,
    #[error("line {line}: {message}")]
    Csv { line: u64, message: String },
    #[error("io error: {0}")]
    Io(String),
}

pub type Result<T> = std::result::Result<T, ScoreError>;
