use std::fmt;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("degenerate window: need at least {needed} samples, got {got}")]
    DegenerateWindow { needed: usize, got: usize },

    #[error("window underflow: cannot pop {requested} entries from a window of {available}")]
    Underflow { requested: usize, available: usize },

    #[error("shape mismatch: expected {expected}, got {got}")]
    Shape { expected: usize, got: usize },

    #[error("training failed: {0}")]
    Training(String),

    #[error("model file rejected: {0}")]
    ModelFormat(String),

    #[error("probe-set mismatch: model trained against {model:016x}, monitor uses {monitor:016x}")]
    ProbeMismatch { model: u64, monitor: u64 },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("protocol error: {0}")]
    Protocol(String),

    #[error("parse error at {location}: {message}")]
    Parse { location: String, message: String },

    #[error("trace format error at byte {offset}: {kind}")]
    Frame { offset: u64, kind: FrameErrorKind },

    #[error("rewrite failed: {0}")]
    Rewrite(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, PartialEq)]
pub enum FrameErrorKind {
    BadMagic([u8; 4]),
    UnsupportedVersion(u16),
    Truncated,
    NonMonotoneIndex { previous: u64, got: u64 },
    StreamIdChanged { expected: u64, got: u64 },
    ChannelCount { expected: usize, got: usize },
    NonFinite { channel: usize },
    InvalidText,
    Oversized(u64),
    MissingEndOfStream,
    TrailingData,
    Malformed(String),
}

impl fmt::Display for FrameErrorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::BadMagic(m) => write!(f, "bad magic {m:?}"),
            Self::UnsupportedVersion(v) => write!(f, "unsupported version {v}"),
            Self::Truncated => write!(f, "truncated record"),
            Self::NonMonotoneIndex { previous, got } => {
                write!(f, "token index {got} does not follow {previous}")
            }
            Self::StreamIdChanged { expected, got } => {
                write!(f, "stream id changed from {expected} to {got}")
            }
            Self::ChannelCount { expected, got } => {
                write!(f, "channel count {got} differs from stream's {expected}")
            }
            Self::NonFinite { channel } => write!(f, "non-finite value in channel {channel}"),
            Self::InvalidText => write!(f, "token text is not valid UTF-8"),
            Self::Oversized(n) => write!(f, "record length {n} exceeds limit"),
            Self::MissingEndOfStream => write!(f, "stream ended without end-of-stream record"),
            Self::TrailingData => write!(f, "data after end-of-stream record"),
            Self::Malformed(msg) => write!(f, "{msg}"),
        }
    }
}
