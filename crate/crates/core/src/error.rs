use std::path::PathBuf;

/// Errors raised by the engine.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    Dimension { expected: usize, actual: usize },

    #[error("zero-norm vector in {context}")]
    ZeroNorm { context: &'static str },

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("schema error in {path}: {message}")]
    Schema { path: PathBuf, message: String },

    #[error("duplicate instance id `{0}`")]
    DuplicateId(String),

    #[error("labeled row `{0}` has no label")]
    MissingLabel(String),

    #[error("could not place {centers} centers {separation} apart within {attempts} attempts")]
    Separation {
        centers: usize,
        separation: f64,
        attempts: usize,
    },

    #[error("cannot form {k} clusters from {distinct} distinct points")]
    InfeasibleK { k: usize, distinct: usize },

    #[error("known category `{0}` has no labeled instances")]
    MissingCategory(String),

    #[error("cluster {0} is empty")]
    EmptyCluster(usize),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("label `{0}` is not a known category")]
    Label(String),

    #[error("evaluation data: {0}")]
    EvalData(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error("output directory {0} is locked by another run (remove the lock file if stale)")]
    Locked(PathBuf),

    #[error("I/O error on {path}: {source}")]
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

    pub(crate) fn schema(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        Error::Schema {
            path: path.into(),
            message: message.into(),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
