//! Crate-wide error type.
//!
//! One enum keeps signatures uniform across modules while still carrying
//! enough structure for callers to react (and for the CLI to serialize
//! machine-readable diagnostics). Variants name the offending file, line,
//! field, document, or provider wherever the failure is about one.

use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// I/O failure touching `path`.
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// A JSONL record that does not match its declared schema.
    /// `line` is 1-based; `message` names the offending field.
    #[error("{path}:{line}: {message}")]
    Schema {
        path: PathBuf,
        line: usize,
        message: String,
    },

    /// A document that cannot be chunked (empty text, bad chunk size, ...).
    #[error("document {doc_id}: {reason}")]
    InvalidDocument { doc_id: String, reason: String },

    /// A QA instance referencing evidence that does not exist.
    #[error("query {query_id}: {reason}")]
    InvalidQuery { query_id: String, reason: String },

    /// Embedding vectors of different dimensions were combined.
    #[error("embedding dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },

    /// Invalid input to an embedding operation (empty batch, empty text,
    /// non-finite component, ...).
    #[error("embedding: {0}")]
    Embedding(String),

    /// An embedding or chat provider failed. `retryable` distinguishes
    /// transient transport trouble from permanent errors.
    #[error("provider {provider}: {message}")]
    Provider {
        provider: String,
        message: String,
        retryable: bool,
    },

    /// A scripted provider had no entry for the requested prompt.
    #[error("no scripted response for prompt digest {digest}")]
    MissingScript { digest: String },

    /// An LLM response that could not be used (no parseable rationales,
    /// unjudgeable verdict, ...).
    #[error("response unusable: {0}")]
    BadResponse(String),

    /// Invalid input to a selection operation (unsorted scores, NaN,
    /// empty rationale list, ...).
    #[error("selection: {0}")]
    Selection(String),

    /// Invalid input to an evaluation operation.
    #[error("evaluation: {0}")]
    Evaluation(String),

    /// Poisoning harness failure (missing poison texts, bad fraction, ...).
    #[error("poisoning: {0}")]
    Poisoning(String),

    /// Invalid run configuration.
    #[error("config: {0}")]
    Config(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub fn schema(path: impl Into<PathBuf>, line: usize, message: impl Into<String>) -> Self {
        Error::Schema { path: path.into(), line, message: message.into() }
    }

    /// True when retrying the same call may succeed (transport-level
    /// provider failures only).
    pub fn is_retryable(&self) -> bool {
        matches!(self, Error::Provider { retryable: true, .. })
    }
}
