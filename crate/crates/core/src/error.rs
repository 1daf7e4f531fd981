use thiserror::Error;

/// Broad failure class, used by front ends to pick an exit status.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Config,
    Data,
    Numerical,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("parse error at byte offset {offset}: {reason}")]
    Parse { offset: u64, reason: String },

    #[error("invalid data: {0}")]
    Data(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("system is not stable: {0}")]
    Unstable(String),

    #[error("requested rank {requested} exceeds numerical rank {rank}")]
    Rank { requested: usize, rank: usize },

    #[error("matrix of order {n} exceeds the dense solver limit {limit}")]
    TooLarge { n: usize, limit: usize },

    #[error("divergence detected at step {step}: {reason}")]
    Divergence { step: usize, reason: String },

    #[error("ill-conditioned system: {0}")]
    Conditioning(String),

    #[error("insufficient samples: {have} available, {need} required")]
    SampleBudget { have: usize, need: usize },

    #[error("allocation of {bytes} bytes exceeds the memory cap of {cap} bytes; consider output partitioning or tangential projection")]
    MemoryCap { bytes: u64, cap: u64 },

    #[error("full-state output required (q = {q}, n = {n})")]
    FullStateRequired { q: usize, n: usize },

    #[error("degenerate variable block '{0}': zero energy")]
    DegenerateBlock(String),
}

impl Error {
    pub fn class(&self) -> ErrorClass {
        match self {
            Error::Dimension(_) | Error::Config(_) | Error::SampleBudget { .. } => ErrorClass::Config,
            Error::Parse { .. } | Error::Data(_) | Error::Io(_) | Error::DegenerateBlock(_) => {
                ErrorClass::Data
            }
            Error::Unstable(_)
            | Error::Rank { .. }
            | Error::TooLarge { .. }
            | Error::Divergence { .. }
            | Error::Conditioning(_)
            | Error::MemoryCap { .. }
            | Error::FullStateRequired { .. } => ErrorClass::Numerical,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
