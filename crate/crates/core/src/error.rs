use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("matrix is not symmetric")]
    NotSymmetric,

    #[error("eigensolver did not converge after {0} sweeps")]
    NoConvergence(usize),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("graph is disconnected")]
    Disconnected,

    #[error("invalid graph: {0}")]
    InvalidGraph(String),

    #[error("invalid compressor spec `{0}`")]
    InvalidCompressor(String),

    #[error("invalid topology spec `{0}`")]
    InvalidTopology(String),

    #[error("consensus stepsize undefined: {0}")]
    InvalidStepsize(String),

    #[error("diverged at round {round} on worker {worker} (|x| = {norm:e})")]
    Diverged {
        round: u64,
        worker: usize,
        norm: f64,
    },

    #[error("config error: {0}")]
    Config(String),

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
