use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: shape mismatch on axis `{axis}`: expected {expected}, got {actual}")]
    Shape {
        op: &'static str,
        axis: String,
        expected: usize,
        actual: usize,
    },

    #[error("{op}: expected rank {expected}, got rank {actual}")]
    Rank {
        op: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("{op}: output extent on axis `{axis}` would be {extent} (< 1)")]
    Degenerate {
        op: &'static str,
        axis: &'static str,
        extent: i64,
    },

    #[error("invalid tensor: {0}")]
    InvalidTensor(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("{op}: extent {extent} on axis `{axis}` is not divisible by {divisor}")]
    NotDivisible {
        op: &'static str,
        axis: &'static str,
        extent: usize,
        divisor: usize,
    },

    #[error("backward called without a retained forward pass")]
    BackwardWithoutForward,

    #[error("network holds only the encoder; use `encode`")]
    EncoderOnly,

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("unreadable image {path}: {message}")]
    UnreadableFile { path: PathBuf, message: String },

    #[error("directory {0} contains no frames")]
    EmptyDirectory(PathBuf),

    #[error("frame {path} is {found_h}x{found_w}, expected {expected_h}x{expected_w}")]
    FrameDimensions {
        path: PathBuf,
        expected_h: usize,
        expected_w: usize,
        found_h: usize,
        found_w: usize,
    },

    #[error("frame index {index} out of range for sequence of {len} frames")]
    OutOfRange { index: usize, len: usize },

    #[error("synthetic object leaves the frame at frame {frame}")]
    ObjectLeavesFrame { frame: usize },

    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: String, found: String },

    #[error("unsupported format version {found} (expected {expected})")]
    Version { found: u32, expected: u32 },

    #[error("file truncated while reading {0}")]
    Truncated(&'static str),

    #[error("malformed file: {0}")]
    Malformed(String),

    #[error("parameter names do not match the network: missing {missing:?}, unexpected {unexpected:?}")]
    NameMismatch {
        missing: Vec<String>,
        unexpected: Vec<String>,
    },

    #[error("image {height}x{width} is smaller than the {window}x{window} SSIM window")]
    WindowTooLarge {
        height: usize,
        width: usize,
        window: usize,
    },

    #[error("{0}")]
    Context(String, #[source] Box<Error>),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Wraps the error with a short description of what was being attempted.
    pub fn context(self, what: impl Into<String>) -> Self {
        Error::Context(what.into(), Box::new(self))
    }

    /// The innermost error beneath any context layers.
    pub fn root(&self) -> &Error {
        match self {
            Error::Context(_, inner) => inner.root(),
            other => other,
        }
    }
}
