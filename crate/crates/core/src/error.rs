use thiserror::Error;

/// Errors shared by every module in the crate.
#[derive(Debug, Error)]
pub enum Error {
    /// An argument violated a documented precondition. `name` identifies the
    /// offending parameter or config key so callers can surface it verbatim.
    #[error("invalid {name}: {detail}")]
    InvalidArgument {
        name: &'static str,
        detail: String,
    },

    /// Vector/matrix shapes disagree.
    #[error("dimension mismatch for {what}: expected {expected}, got {got}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    /// A serialized artifact (IDX file, checkpoint, CSV) is malformed.
    /// `context` names the field or line that failed.
    #[error("format error in {source_name}: {context}")]
    Format {
        source_name: String,
        context: String,
    },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn invalid(name: &'static str, detail: impl Into<String>) -> Self {
        Error::InvalidArgument {
            name,
            detail: detail.into(),
        }
    }

    pub(crate) fn format(source_name: impl Into<String>, context: impl Into<String>) -> Self {
        Error::Format {
            source_name: source_name.into(),
            context: context.into(),
        }
    }

    pub(crate) fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
