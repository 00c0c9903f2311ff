use std::path::PathBuf;

use thiserror::Error;

/// Errors raised anywhere in the embedding, training and evaluation pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0} vs {1}")]
    DimensionMismatch(usize, usize),

    #[error("embedding dimension must be at least 1")]
    EmptyEmbedding,

    #[error("non-finite value in {what} at index {index}")]
    NonFinite { what: &'static str, index: usize },

    #[error("degenerate variance {value} at index {index}")]
    DegenerateVariance { index: usize, value: f64 },

    #[error("KL divergence came out negative ({0}); inputs are numerically unstable")]
    NegativeDivergence(f64),

    #[error("sentence not found in precomputed vectors: {0:?}")]
    UnknownSentence(String),

    #[error("sentence has no tokens: {0:?}")]
    EmptySentence(String),

    #[error("failed to encode example {index}: {source}")]
    Example {
        index: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("{path}:{line}: {message}")]
    Parse { path: PathBuf, line: usize, message: String },

    #[error("unknown label {0:?}")]
    UnknownLabel(String),

    #[error("invalid format: {0}")]
    Format(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("non-finite loss{}", step.map(|s| format!(" at step {s}")).unwrap_or_default())]
    NonFiniteLoss { step: Option<usize> },

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("AUPRC needs at least one positive label")]
    NoPositives,

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
