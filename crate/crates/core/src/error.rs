use std::path::PathBuf;

/// Every failure the library can report.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("row {0} is the zero vector and cannot be normalized")]
    ZeroRow(usize),

    #[error("row {row} has L2 norm {norm}, expected 1")]
    NotUnitNorm { row: usize, norm: f64 },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("at least 2 rows are required, got {0}")]
    TooFewRows(usize),

    #[error("similarity ({row}, {col}) = {value} lies outside [-1, 1]")]
    SimilarityOutOfRange { row: usize, col: usize, value: f64 },

    #[error("temperature must be positive and finite, got {0}")]
    InvalidTemperature(f64),

    #[error("alpha must lie in (0, 1], got {0}")]
    InvalidAlpha(f64),

    #[error("lambda must be non-negative and finite, got {0}")]
    InvalidLambda(f64),

    #[error("anchor has no negatives")]
    EmptyNegatives,

    #[error("temperatures must be strictly ascending")]
    NotAscending,

    #[error("degenerate batch: {0}")]
    DegenerateBatch(String),

    #[error("no pair of distinct points shares a label")]
    NoPositivePairs,

    #[error("k = {k} exceeds the maximum of {max}")]
    KTooLarge { k: usize, max: usize },

    #[error("mean direction has norm {0}, expected 1")]
    InvalidDirection(f64),

    #[error("concentration must be non-negative, got {0}")]
    InvalidConcentration(f64),

    #[error("rejection sampler made no progress after {0} proposals")]
    SamplerStall(usize),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("loss became non-finite at step {step}")]
    NonFiniteLoss { step: usize },

    #[error("labels are required for {0}")]
    MissingLabels(&'static str),

    #[error("corrupt header: {0}")]
    CorruptHeader(String),

    #[error("truncated payload: needed {needed} bytes at offset {offset}, file has {available}")]
    TruncatedPayload {
        offset: usize,
        needed: usize,
        available: usize,
    },

    #[error("unsupported dump version {0:?}")]
    UnsupportedVersion(char),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
