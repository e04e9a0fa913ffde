use std::path::PathBuf;

/// Why a binary or CSV payload was rejected.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum FormatErrorKind {
    BadMagic,
    BadHeader(String),
    Truncated { expected: usize, found: usize },
    TrailingBytes,
    NonFinite,
    Csv(String),
}

impl std::fmt::Display for FormatErrorKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            FormatErrorKind::BadMagic => write!(f, "bad magic"),
            FormatErrorKind::BadHeader(msg) => write!(f, "bad header: {msg}"),
            FormatErrorKind::Truncated { expected, found } => {
                write!(f, "truncated payload: expected {expected} values, found {found}")
            }
            FormatErrorKind::TrailingBytes => write!(f, "trailing bytes after payload"),
            FormatErrorKind::NonFinite => write!(f, "non-finite value"),
            FormatErrorKind::Csv(msg) => write!(f, "{msg}"),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("format error at byte {offset}: {kind}")]
    Format { offset: u64, kind: FormatErrorKind },

    #[error("undefined score: {0}")]
    UndefinedScore(String),

    #[error("training diverged at step {step}: gain for k={k} is {gain}")]
    Diverged { step: usize, k: usize, gain: f64 },

    #[error("missing variable `{0}`")]
    MissingVariable(String),

    #[error("{}: {source}", path.display())]
    InFile {
        path: PathBuf,
        #[source]
        source: Box<Error>,
    },

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn param(msg: impl Into<String>) -> Self {
        Error::Parameter(msg.into())
    }

    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub(crate) fn format(offset: u64, kind: FormatErrorKind) -> Self {
        Error::Format { offset, kind }
    }

    pub fn in_file(path: impl Into<PathBuf>, source: Error) -> Self {
        Error::InFile {
            path: path.into(),
            source: Box::new(source),
        }
    }

    /// The innermost error, looking through file context.
    pub fn root(&self) -> &Error {
        match self {
            Error::InFile { source, .. } => source.root(),
            other => other,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
