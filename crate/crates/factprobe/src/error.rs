use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the probing workbench.
#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error in {path} at line {line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("invalid vocabulary: {0}")]
    Vocabulary(String),

    #[error("unknown token {0:?}")]
    UnknownToken(String),

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("train/test overlap: {count} shared subject-object pairs (first: {first:?})")]
    Overlap {
        count: usize,
        first: Option<(String, String)>,
    },

    #[error("cannot fit on empty training set for relation {0}")]
    EmptyTrain(String),

    #[error("unknown relation {0}")]
    UnknownRelation(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("render error for fact {subject:?} ({relation}): {message}")]
    Render {
        relation: String,
        subject: String,
        message: String,
    },

    #[error("training aborted: non-finite loss at step {step} (epoch {epoch}); grad norm {grad_norm}, lr {lr}")]
    NonFiniteLoss {
        step: usize,
        epoch: usize,
        grad_norm: f64,
        lr: f64,
    },

    #[error("trigger search failed: {0}")]
    Search(String),

    #[error("partition error: {0}")]
    Partition(String),

    #[error("comparison error: {0}")]
    Compare(String),

    #[error("manifest error: {0}")]
    Manifest(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
