use std::io;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension error: {0}")]
    Dimension(String),
    #[error("geometry error: {0}")]
    Geometry(String),
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("empty box after clipping")]
    EmptyBox,
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error("training diverged at iteration {iteration}: {reason}")]
    Divergence { iteration: usize, reason: String },
    #[error("data error: {0}")]
    Data(String),
    #[error("graph error: {0}")]
    Graph(String),
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
}

impl Error {
    /// Short stable tag used in machine-parsable error lines.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Dimension(_) => "dimension",
            Error::Geometry(_) => "geometry",
            Error::NonFinite(_) => "non_finite",
            Error::Config(_) => "config",
            Error::EmptyBox => "empty_box",
            Error::Checkpoint(_) => "checkpoint",
            Error::Divergence { .. } => "divergence",
            Error::Data(_) => "data",
            Error::Graph(_) => "graph",
            Error::Io(_) => "io",
        }
    }

    /// The message without the kind prefix of `Display`.
    pub fn detail(&self) -> String {
        match self {
            Error::Dimension(m)
            | Error::Geometry(m)
            | Error::Config(m)
            | Error::Checkpoint(m)
            | Error::Data(m)
            | Error::Graph(m) => m.clone(),
            Error::NonFinite(m) => format!("non-finite value in {m}"),
            Error::EmptyBox => "empty box after clipping".into(),
            Error::Divergence { iteration, reason } => format!("iteration {iteration}: {reason}"),
            Error::Io(e) => e.to_string(),
        }
    }
}
