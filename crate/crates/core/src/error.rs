use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error: {0}")]
    Io(#[from] io::Error),

    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("shape mismatch in {op}: {left:?} vs {right:?}")]
    Shape {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },

    #[error("non-finite value produced by {0}")]
    NonFinite(&'static str),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid file format: {0}")]
    Format(String),

    #[error("missing context vector for sentence {sent_id:?}, token {token_index}")]
    MissingVector { sent_id: String, token_index: i64 },

    #[error("sentence {sent_id:?}: {msg}")]
    Alignment { sent_id: String, msg: String },

    #[error("training diverged at epoch {epoch}, batch {batch} (lr {lr}): {msg}")]
    Diverged {
        epoch: usize,
        batch: usize,
        lr: f64,
        msg: String,
    },

    #[error("config error: {0}")]
    Config(String),
}

impl Error {
    pub(crate) fn parse(line: usize, msg: impl Into<String>) -> Self {
        Error::Parse {
            line,
            msg: msg.into(),
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
