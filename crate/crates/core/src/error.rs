use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("non-finite value at index {index}")]
    NonFiniteValue { index: usize },

    #[error("guidance produced a non-finite value at index {index}")]
    NonFiniteResult { index: usize },

    #[error("empty input")]
    EmptyInput,

    #[error("percentile {0} outside [0, 100]")]
    InvalidPercentile(f64),

    #[error("invalid robust window: need 0 <= l < h <= 100, got l={l}, h={h}")]
    InvalidWindow { l: f64, h: f64 },

    #[error("guidance strength must be >= 1, got {0}")]
    InvalidStrength(f64),

    #[error("interpolation weight phi must lie in [0, 1], got {0}")]
    InvalidPhi(f64),

    #[error("invalid range: {0}")]
    InvalidRange(String),

    #[error("alpha_bar = {0} leaves no noise to separate")]
    DegenerateAlpha(f64),

    #[error("step index {t} outside 1..={steps}")]
    IndexOutOfRange { t: usize, steps: usize },

    #[error("invalid mixture: {0}")]
    InvalidMixture(String),

    #[error("empty batch")]
    EmptyBatch,

    #[error("trajectory logs have different lengths ({expected} vs {found})")]
    RaggedLogs { expected: usize, found: usize },

    #[error("bad magic {0:?}, expected \"EPL1\"")]
    BadMagic([u8; 4]),

    #[error("truncated latent file: need {needed} bytes, have {available}")]
    TruncatedFile { needed: usize, available: usize },

    #[error("{0} trailing bytes after latent payload")]
    TrailingBytes(usize),

    #[error("malformed CSV: {0}")]
    MalformedCsv(String),

    #[error("config line {line}: {message}")]
    Config { line: usize, message: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
