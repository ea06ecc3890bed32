use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: corrupt or truncated file: {reason}")]
    Corrupt { path: PathBuf, reason: String },

    #[error("{path}: unsupported format: {reason}")]
    Unsupported { path: PathBuf, reason: String },

    #[error("{path}: bad magic bytes, expected {expected:?}")]
    BadMagic { path: PathBuf, expected: &'static str },

    #[error("{path}: unsupported version {found}, expected {expected}")]
    Version {
        path: PathBuf,
        found: u32,
        expected: u32,
    },

    #[error("{path}: dimensions {height}x{width}x{channels} overflow")]
    DimensionOverflow {
        path: PathBuf,
        height: u32,
        width: u32,
        channels: u32,
    },

    #[error("{path}: payload holds {found} values, expected {expected}")]
    LengthMismatch {
        path: PathBuf,
        found: usize,
        expected: usize,
    },

    #[error("dimension mismatch in {what}: expected {expected}, found {found}")]
    DimensionMismatch {
        what: &'static str,
        expected: String,
        found: String,
    },

    #[error("{path}:{line}: {reason}")]
    Manifest {
        path: PathBuf,
        line: usize,
        reason: String,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("ground truth has no salient pixel; recall is undefined")]
    EmptyGroundTruth,

    #[error("{entry}: {source}")]
    Entry {
        entry: String,
        #[source]
        source: Box<Error>,
    },

    #[error("internal invariant violated: {0}")]
    Invariant(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn corrupt(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        Error::Corrupt {
            path: path.into(),
            reason: reason.into(),
        }
    }

    pub(crate) fn dims(what: &'static str, expected: (usize, usize), found: (usize, usize)) -> Self {
        Error::DimensionMismatch {
            what,
            expected: format!("{}x{}", expected.0, expected.1),
            found: format!("{}x{}", found.0, found.1),
        }
    }

    /// Wraps an error with the manifest entry it came from.
    pub fn in_entry(self, entry: impl Into<String>) -> Self {
        Error::Entry {
            entry: entry.into(),
            source: Box::new(self),
        }
    }

    /// The innermost error, skipping entry context.
    pub fn root(&self) -> &Error {
        match self {
            Error::Entry { source, .. } => source.root(),
            other => other,
        }
    }

    /// True for errors that indicate a bug rather than bad input.
    pub fn is_internal(&self) -> bool {
        matches!(self.root(), Error::Invariant(_))
    }
}
