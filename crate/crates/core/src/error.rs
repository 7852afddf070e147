use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {left} vs {right}")]
    Shape {
        op: &'static str,
        left: String,
        right: String,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("{path}:{line}: {msg}")]
    Parse {
        path: String,
        line: u64,
        msg: String,
    },

    #[error("unknown paper id `{0}`")]
    UnknownPaper(String),

    #[error("empty corpus: {0}")]
    EmptyCorpus(String),

    #[error("metric population contract violated: {0}")]
    Population(String),

    #[error("non-finite value in block `{block}`")]
    NonFinite { block: String },

    #[error("training diverged at epoch {epoch}: loss = {loss}")]
    Diverged { epoch: usize, loss: f64 },

    #[error("model file: {0}")]
    ModelFormat(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn shape(op: &'static str, left: impl ToString, right: impl ToString) -> Self {
        Error::Shape {
            op,
            left: left.to_string(),
            right: right.to_string(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
