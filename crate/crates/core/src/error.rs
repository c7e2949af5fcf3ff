use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("hand spec field `{field}`: {message}")]
    HandSpec { field: String, message: String },

    #[error("hand spec parse error: {0}")]
    HandSpecParse(String),

    #[error("mesh error: {0}")]
    Mesh(String),

    #[error("degenerate 6D rotation: {0}")]
    DegenerateRotation(&'static str),

    #[error("convex hull construction failed: {0}")]
    Hull(String),

    #[error("no opposition space available")]
    OppositionSpacesExhausted,

    #[error("opposition space {0} is not available")]
    OppositionSpaceUnavailable(usize),

    #[error("opposition space {0} has candidates on only one side")]
    OneSidedContacts(usize),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("sdf cache error: {0}")]
    SdfCache(String),

    #[error("record error: {0}")]
    Record(String),

    #[error("dataset error: {0}")]
    Dataset(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn spec(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::HandSpec {
            field: field.into(),
            message: message.into(),
        }
    }
}
