use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("schema error in {path}: {msg}")]
    Schema { path: PathBuf, msg: String },

    #[error("invalid label for document {doc_id}: {msg}")]
    Label { doc_id: String, msg: String },

    #[error("duplicate document id {0}")]
    DuplicateId(String),

    #[error("unknown document id {0}")]
    UnknownDoc(String),

    #[error("no frozen embedding for document {0}")]
    MissingEmbedding(String),

    #[error("dimension mismatch: {what} expected {expected}, got {got}")]
    Dimension {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("protocol integrity violated: {0}")]
    Integrity(String),

    #[error("missing artifact for trait={trait_name} fold={fold} setting={setting}: {msg}")]
    MissingArtifact {
        trait_name: String,
        fold: String,
        setting: String,
        msg: String,
    },

    #[error("malformed {what}: {msg}")]
    Format { what: &'static str, msg: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
