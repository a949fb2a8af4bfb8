use thiserror::Error;

/// Errors raised anywhere in the pipeline.
///
/// The variants map onto the operator-facing exit codes: `Usage` and
/// `Config` are caller mistakes, `Parse`/`Io` are data problems, and
/// `Numeric`/`Domain` report values outside what an operation accepts.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: {lhs:?} vs {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("configuration error: {0}")]
    Config(String),
    #[error("usage error: {0}")]
    Usage(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("numeric error: {0}")]
    Numeric(String),
    #[error("unsupported mode: {0}")]
    Unsupported(String),
    #[error("parse error in {path}: {msg}")]
    Parse { path: String, msg: String },
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn shape(op: &'static str, lhs: &[usize], rhs: &[usize]) -> Self {
        Error::Shape {
            op,
            lhs: lhs.to_vec(),
            rhs: rhs.to_vec(),
        }
    }

    pub fn parse(path: impl Into<String>, msg: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            msg: msg.into(),
        }
    }

    pub fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }

    /// Process exit code for this error class (0 is reserved for success).
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Usage(_) | Error::Config(_) | Error::Unsupported(_) => 2,
            Error::Parse { .. } | Error::Io { .. } | Error::Shape { .. } => 3,
            Error::Numeric(_) | Error::Domain(_) => 4,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
