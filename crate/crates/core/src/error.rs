use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("need at least {needed} points, got {got}")]
    TooFewPoints { needed: usize, got: usize },

    #[error("point cloud has degenerate extent (all points coincide)")]
    DegenerateExtent,

    #[error("cloud is not normalized to the unit cube (longest side {side})")]
    NotNormalized { side: f64 },

    #[error("point cloud has no normals")]
    MissingNormals,

    #[error("degenerate normal at point {index}")]
    DegenerateNormal { index: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("non-finite value in {context}")]
    NonFinite { context: String },

    #[error("correlation undefined: {0}")]
    UndefinedCorrelation(&'static str),

    #[error("missing (content, distortion) cells: {}", .0.join(", "))]
    MissingCells(Vec<String>),

    #[error("invalid weights file: {0}")]
    Weights(String),

    #[error("source {source_id}: {inner}")]
    Source {
        source_id: String,
        #[source]
        inner: Box<Error>,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for failures of the numerical machinery (as opposed to bad input).
    pub fn is_numerical(&self) -> bool {
        match self {
            Error::NonFinite { .. } | Error::UndefinedCorrelation(_) => true,
            Error::Source { inner, .. } => inner.is_numerical(),
            _ => false,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
