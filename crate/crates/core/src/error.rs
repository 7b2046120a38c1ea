use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid lattice size: {0}")]
    LatticeSize(String),

    #[error("parameter out of domain: {0}")]
    Domain(String),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("checkpoint integrity check failed: {0}")]
    Integrity(String),

    #[error("enumeration bound exceeded: {0}")]
    TooLarge(String),

    #[error("invalid configuration:\n  {}", .0.join("\n  "))]
    Config(Vec<String>),

    #[error("analysis failed: {0}")]
    Analysis(String),

    #[error("malformed input: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
