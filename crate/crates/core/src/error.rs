use std::path::PathBuf;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{}:{line}: {message}", path.display())]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("validation failed: {0}")]
    Validation(String),

    #[error("config key `{key}`: {message}")]
    Config { key: String, message: String },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("no embedding stored for `{0}`")]
    MissingEmbedding(String),

    #[error("transport error after {retries} retries: {message}")]
    Transport { message: String, retries: u32 },

    #[error("corrupt file: {0}")]
    Corruption(String),

    #[error("unsupported file format: {0}")]
    Format(String),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("cosine similarity is undefined for a zero vector")]
    UndefinedSimilarity,

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("training failed: {0}")]
    Training(String),

    #[error("invalid threshold policy: {0}")]
    InvalidPolicy(String),

    #[error("metric undefined: {0}")]
    UndefinedMetric(String),

    #[error("fold {index} failed: {source}")]
    Fold {
        index: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("grid combination {index} ({description}) failed: {source}")]
    Grid {
        index: usize,
        description: String,
        #[source]
        source: Box<Error>,
    },

    #[error("incomplete answers, missing items: {}", missing.join(", "))]
    IncompleteAnswers { missing: Vec<String> },

    #[error("protocol violation: {0}")]
    Protocol(String),

    #[error("conflict: {0}")]
    Conflict(String),

    #[error("not found: {0}")]
    NotFound(String),

    #[error("language model returned an empty completion")]
    EmptyCompletion,

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Short tag naming the subsystem the error originated from.
    pub fn module(&self) -> &'static str {
        match self {
            Error::Parse { .. } | Error::Validation(_) => "corpus",
            Error::Config { .. } => "config",
            Error::Io(_) | Error::Json(_) => "io",
            Error::MissingEmbedding(_)
            | Error::Transport { .. }
            | Error::Corruption(_)
            | Error::UndefinedSimilarity => "encoder",
            Error::Format(_)
            | Error::DimensionMismatch { .. }
            | Error::Numerical(_)
            | Error::Training(_) => "detector",
            Error::InvalidPolicy(_) => "thresholding",
            Error::EmptyCompletion => "explain",
            Error::UndefinedMetric(_) | Error::Fold { .. } | Error::Grid { .. } => "eval",
            Error::IncompleteAnswers { .. }
            | Error::Protocol(_)
            | Error::Conflict(_)
            | Error::NotFound(_) => "survey",
        }
    }

    pub(crate) fn validation(msg: impl Into<String>) -> Self {
        Error::Validation(msg.into())
    }
}
