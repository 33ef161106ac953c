use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid action index {index} (action set has {len} levels)")]
    InvalidAction { index: usize, len: usize },

    #[error("linearized coefficient is undefined for a zero-throughput trajectory")]
    ZeroThroughput,

    #[error("episode finished at step {0}")]
    EpisodeFinished(usize),

    #[error("empty input: {0}")]
    Empty(String),

    #[error("{path}:{line}: {message}")]
    Parse {
        path: String,
        line: u64,
        message: String,
    },

    #[error("cadence mismatch in {path}: {message}")]
    Cadence { path: String, message: String },

    #[error("weights file has unknown magic or version")]
    WeightsVersion,

    #[error("weights file is truncated")]
    WeightsTruncated,

    #[error("weights file is malformed: {0}")]
    WeightsFormat(String),

    #[error("shape mismatch: expected {expected:?}, found {found:?}")]
    Shape {
        expected: Vec<usize>,
        found: Vec<usize>,
    },

    #[error("misaligned report lists: {0}")]
    Misaligned(String),

    #[error("config: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
