//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("input error: {0}")]
    Input(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("range error: {0}")]
    Range(String),

    #[error("numerical failure at {context}: non-finite value")]
    Numerical { context: String },

    #[error("decay step overshoots: factor 1 - lr*wd = {factor} at step {step} is not positive")]
    DecayDivergence { factor: f64, step: u64 },

    #[error("undefined cosine: zero-norm operand")]
    UndefinedCosine,

    #[error("undefined correlation: zero variance in {side}")]
    UndefinedCorrelation { side: &'static str },

    #[error("no fitted model: no run reached the training accuracy threshold {threshold}")]
    NoFittedModel { threshold: f64 },

    #[error("record parse error at line {line}: {message}")]
    RecordParse { line: usize, message: String },

    #[error("record schema version mismatch: found {found}, expected {expected}")]
    SchemaVersion { found: u64, expected: u64 },

    #[error("orchestration error: {0}")]
    Orchestration(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
