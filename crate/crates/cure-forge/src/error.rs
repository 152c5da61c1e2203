//! Crate-wide error type.

use std::fmt;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug)]
pub enum Error {
    /// Operand shapes do not conform for the named operation.
    ShapeMismatch {
        op: String,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    /// NaN or infinity encountered where finite values are required.
    NonFinite { context: String },
    /// A reduction to a scalar was expected.
    NotScalar { shape: Vec<usize> },
    /// The requested tensor does not participate in the loss graph.
    NotInGraph,
    /// A trainable parameter was stepped without a populated gradient.
    MissingGrad { name: String },
    /// A named configuration key or argument is invalid.
    InvalidArgument { key: String, message: String },
    /// Training aborted because the loss left the finite range.
    Diverged { context: String },
    Io {
        path: String,
        source: std::io::Error,
    },
    /// Malformed on-disk content (config, CSV, checkpoint, dump).
    Format { path: String, message: String },
}

impl Error {
    pub fn invalid(key: impl Into<String>, message: impl Into<String>) -> Self {
        Error::InvalidArgument {
            key: key.into(),
            message: message.into(),
        }
    }

    pub fn format(path: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            message: message.into(),
        }
    }

    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::ShapeMismatch { op, lhs, rhs } => {
                write!(f, "shape mismatch in {op}: {lhs:?} vs {rhs:?}")
            }
            Error::NonFinite { context } => write!(f, "non-finite values in {context}"),
            Error::NotScalar { shape } => {
                write!(f, "expected a scalar tensor, got shape {shape:?}")
            }
            Error::NotInGraph => write!(f, "target tensor does not participate in the loss graph"),
            Error::MissingGrad { name } => {
                write!(f, "parameter `{name}` has no gradient; run backward first")
            }
            Error::InvalidArgument { key, message } => {
                write!(f, "invalid value for `{key}`: {message}")
            }
            Error::Diverged { context } => write!(f, "training diverged: {context}"),
            Error::Io { path, source } => write!(f, "{path}: {source}"),
            Error::Format { path, message } => write!(f, "{path}: {message}"),
        }
    }
}

impl std::error::Error for Error {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        match self {
            Error::Io { source, .. } => Some(source),
            _ => None,
        }
    }
}
