use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("embeddings line {line}: {message}")]
    EmbeddingParse { line: usize, message: String },

    #[error("embedding source is empty")]
    EmptyEmbeddings,

    #[error("unresolved label {0:?}: not in the embedding vocabulary and no substitution applies")]
    UnresolvedLabel(String),

    #[error("dimension mismatch: {0} vs {1}")]
    DimensionMismatch(usize, usize),

    #[error("zero vector has no cosine similarity")]
    ZeroVector,

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("empty mask: {0}")]
    EmptyMask(String),

    #[error("unknown category {0:?}")]
    UnknownCategory(String),

    #[error("object bank has no usable entries")]
    EmptyBank,

    #[error("image has no annotated objects to anchor a paste")]
    NoHostObjects,

    #[error("unplaceable instance: {0}")]
    Unplaceable(String),

    #[error("placement lies entirely outside the frame")]
    OutOfFrame,

    #[error("{location}: {message}")]
    Annotation { location: String, message: String },

    #[error("unknown image id {0:?}")]
    UnknownImage(String),

    #[error("{path}: {source}")]
    File {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Image(#[from] image::ImageError),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error("xml: {0}")]
    Xml(String),

    #[error("png: {0}")]
    Png(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn annotation(location: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Annotation {
            location: location.into(),
            message: message.into(),
        }
    }

    pub(crate) fn file(path: &std::path::Path, source: std::io::Error) -> Self {
        Error::File {
            path: path.display().to_string(),
            source,
        }
    }

    /// Process exit code: 1 usage, 2 data error, 3 fatal I/O.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::InvalidArgument(_) | Error::Config(_) => 1,
            Error::Io(_) | Error::File { .. } => 3,
            _ => 2,
        }
    }
}
