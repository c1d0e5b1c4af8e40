use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape error: {0}")]
    Shape(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("sequencing error: expected chunk {expected}, got {got}")]
    Sequencing { expected: usize, got: usize },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("softmax row {row} is fully masked")]
    FullyMasked { row: usize },

    #[error("invalid score: {0}")]
    Score(String),

    #[error("weight file: {0}")]
    Format(String),

    #[error("model bundle does not match its config:\n{}", .0.join("\n"))]
    Bundle(Vec<String>),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    /// Short stable identifier, used for machine-readable CLI errors.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Shape(_) => "shape",
            Error::Config(_) => "config",
            Error::Sequencing { .. } => "sequencing",
            Error::Domain(_) => "domain",
            Error::FullyMasked { .. } => "fully_masked",
            Error::Score(_) => "score",
            Error::Format(_) => "format",
            Error::Bundle(_) => "bundle",
            Error::Json(_) => "json",
            Error::Io(_) => "io",
        }
    }
}
