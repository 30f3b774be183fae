use std::path::PathBuf;

use crate::latency::BlockSignature;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("invalid architecture: {0}")]
    InvalidArchitecture(String),

    #[error("search space has {cardinality} architectures, limit is {limit}")]
    SpaceTooLarge { cardinality: String, limit: u64 },

    #[error("malformed action sequence: {0}")]
    MalformedActions(String),

    #[error("group {0} has no records")]
    EmptyGroup(usize),

    #[error("baseline unfairness is zero")]
    ZeroBaseline,

    #[error("{path}: line {line}: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("duplicate latency entry for {0}")]
    DuplicateSignature(BlockSignature),

    #[error("non-positive latency {latency_ms} for {signature}")]
    NonPositiveLatency {
        signature: BlockSignature,
        latency_ms: f64,
    },

    #[error("no latency entry for {0}")]
    MissingEntry(BlockSignature),

    #[error("feature dimension mismatch in layer {layer}: expected {expected}, got {got}")]
    DimensionMismatch {
        layer: usize,
        expected: usize,
        got: usize,
    },

    #[error("all layer variations are zero")]
    AllZeroVariations,

    #[error("inconsistent layer-to-block map: {0}")]
    InconsistentMap(String),

    #[error("controller sampled the all-skip architecture {0} times in a row")]
    DegenerateSampling(usize),

    #[error("batch has {got} episodes, controller expects {expected}")]
    BatchSizeMismatch { expected: usize, got: usize },

    #[error("gradient component {index} is not finite")]
    NonFiniteGradient { index: usize },

    #[error("unknown architecture `{0}`")]
    UnknownArchitecture(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn parse(path: impl Into<PathBuf>, line: usize, msg: impl ToString) -> Self {
        Error::Parse {
            path: path.into(),
            line,
            msg: msg.to_string(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by I/O rather than by invalid inputs.
    pub fn is_io(&self) -> bool {
        matches!(self, Error::Io { .. })
    }
}
