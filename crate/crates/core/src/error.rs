use thiserror::Error;

use crate::corpus::CorpusError;
use crate::embedding::EmbeddingError;
use crate::eval::EvalError;
use crate::llm::LlmError;
use crate::masking::MaskError;
use crate::pipeline::ConfigError;
use crate::promptgen::PromptError;
use crate::selection::SelectionError;
use crate::sqlkit::SqlError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Crate-level error. Each module has its own error enum; this wraps them.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Sql(#[from] SqlError),
    #[error(transparent)]
    Mask(#[from] MaskError),
    #[error(transparent)]
    Embedding(#[from] EmbeddingError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Selection(#[from] SelectionError),
    #[error(transparent)]
    Llm(#[from] LlmError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("json error in {path}: {source}")]
    Json {
        path: String,
        #[source]
        source: serde_json::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }

    pub(crate) fn json(path: impl AsRef<std::path::Path>, source: serde_json::Error) -> Self {
        Error::Json {
            path: path.as_ref().display().to_string(),
            source,
        }
    }
}
