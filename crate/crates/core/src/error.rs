use std::path::PathBuf;

/// Errors raised anywhere in the workbench.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("index {index} out of range for {bound}")]
    IndexOutOfRange { index: usize, bound: usize },
    #[error("backward requires a scalar loss, got shape {0:?}")]
    NotScalar(Vec<usize>),
    #[error("token {token} out of range (vocab {vocab})")]
    TokenOutOfRange { token: usize, vocab: usize },
    #[error("feature length {got} does not match feature_dim {expected}")]
    FeatureDimMismatch { expected: usize, got: usize },
    #[error("base digest mismatch: expected {expected}, found {found}")]
    DigestMismatch { expected: String, found: String },
    #[error("schema mismatch: {0}")]
    SchemaMismatch(String),
    #[error("invalid config: {0}")]
    Config(String),
    #[error("vocabulary overflow: {0}")]
    VocabOverflow(String),
    #[error("forget ratio selects {wanted} profiles but only {available} are trained")]
    RatioTooLarge { wanted: usize, available: usize },
    #[error("refusal pool is empty")]
    EmptyPool,
    #[error("no training data")]
    EmptyData,
    #[error("loss diverged at epoch {epoch}, step {step}: {value}")]
    DivergedLoss { epoch: usize, step: usize, value: f64 },
    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("training target not reached: {0}")]
    TargetNotReached(String),
    #[error("unknown method `{name}` (expected one of: {known})")]
    UnknownMethod { name: String, known: String },
    #[error("format error: {0}")]
    Format(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
