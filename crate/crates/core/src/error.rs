use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("step called on a terminal state (step_count = {step_count})")]
    TerminalStep { step_count: usize },

    #[error("scripted controller failed: {0}")]
    Controller(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("backward called without a cached forward pass")]
    NoForwardCache,

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("training diverged: {0}")]
    Diverged(String),

    #[error("train/test instance overlap: {0}")]
    InstanceOverlap(String),

    #[error("unsupported format version {found} (expected {expected})")]
    FormatVersion { found: u32, expected: u32 },

    #[error("malformed data: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
