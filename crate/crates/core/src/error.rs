use thiserror::Error;

/// Errors raised across the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("index {index} out of range for vocabulary of size {size}")]
    Index { index: usize, size: usize },
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("empty dataset: {0}")]
    EmptyData(String),
    #[error("calibration failed: {0}")]
    Calibration(String),
    #[error("split failed: {0}")]
    Split(String),
    #[error("feature `{0}` is entirely missing in the training cohort")]
    MissingFeature(String),
    #[error("degenerate labels: {0}")]
    DegenerateLabels(String),
    #[error("layout mismatch: {0}")]
    Layout(String),
    #[error("participation error: {0}")]
    Participation(String),
    #[error("client `{client}` failed: {reason}")]
    ClientFailed { client: String, reason: String },
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("frame checksum mismatch (expected {expected:#010x}, got {actual:#010x})")]
    Corruption { expected: u32, actual: u32 },
    #[error("payload of {0} bytes exceeds the frame limit")]
    FrameTooLarge(usize),
    #[error("handshake rejected: {0}")]
    Handshake(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("format error: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
