//! Embedding providers and vector operations.
//!
//! Providers implement [`EmbeddingProvider::embed_raw`]; callers go through
//! [`EmbeddingProvider::embed_batch`], which enforces the batch contract
//! (non-empty input, non-empty texts, index-aligned results, consistent
//! finite dimensions) on both sides of the transport.

mod cache;
#[cfg(feature = "http")]
mod http;
mod mock;

pub use cache::CachedEmbedder;
#[cfg(feature = "http")]
pub use http::{HttpEmbedder, HttpEmbedderConfig};
pub use mock::HashedNgramEmbedder;

use crate::error::{Error, Result};

/// A dense embedding. Scores and components are 64-bit floats throughout.
pub type Embedding = Vec<f64>;

pub trait EmbeddingProvider: Send + Sync {
    /// Stable provider identity; cache entries are keyed by it.
    fn name(&self) -> &str;

    /// Output dimension of every vector this provider returns.
    fn dim(&self) -> usize;

    /// Transport-level embedding, one vector per text, aligned by index.
    /// Implementations may assume the input was validated by
    /// [`EmbeddingProvider::embed_batch`].
    fn embed_raw(&self, texts: &[&str]) -> Result<Vec<Embedding>>;

    /// Validated batch embedding: rejects empty batches and empty texts
    /// before any transport happens, then checks that the provider returned
    /// one finite, `dim()`-sized vector per input.
    fn embed_batch(&self, texts: &[&str]) -> Result<Vec<Embedding>> {
        if texts.is_empty() {
            return Err(Error::Embedding("batch is empty".into()));
        }
        for (idx, text) in texts.iter().enumerate() {
            if text.trim().is_empty() {
                return Err(Error::Embedding(format!("text at index {idx} is empty")));
            }
        }
        let vectors = self.embed_raw(texts)?;
        if vectors.len() != texts.len() {
            return Err(Error::Provider {
                provider: self.name().to_string(),
                message: format!("returned {} vectors for {} inputs", vectors.len(), texts.len()),
                retryable: false,
            });
        }
        for vector in &vectors {
            if vector.len() != self.dim() {
                return Err(Error::DimensionMismatch { left: self.dim(), right: vector.len() });
            }
            if vector.iter().any(|v| !v.is_finite()) {
                return Err(Error::Provider {
                    provider: self.name().to_string(),
                    message: "returned a non-finite component".into(),
                    retryable: false,
                });
            }
        }
        Ok(vectors)
    }

    fn embed_one(&self, text: &str) -> Result<Embedding> {
        Ok(self.embed_batch(&[text])?.pop().expect("validated length 1"))
    }
}

/// Cosine similarity. Zero-norm inputs yield 0.0 with a warning rather than
/// NaN; mismatched dimensions are an error.
pub fn cosine_similarity(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch { left: a.len(), right: b.len() });
    }
    let mut dot = 0.0;
    let mut norm_a = 0.0;
    let mut norm_b = 0.0;
    for (x, y) in a.iter().zip(b) {
        dot += x * y;
        norm_a += x * x;
        norm_b += y * y;
    }
    if norm_a == 0.0 || norm_b == 0.0 {
        log::warn!("cosine_similarity: zero-norm vector, returning 0.0");
        return Ok(0.0);
    }
    Ok(dot / (norm_a.sqrt() * norm_b.sqrt()))
}

/// Componentwise mean of a non-empty list of same-dimension vectors.
pub fn pool_mean(vectors: &[Embedding]) -> Result<Embedding> {
    let first = vectors
        .first()
        .ok_or_else(|| Error::Embedding("cannot pool an empty vector list".into()))?;
    let dim = first.len();
    let mut out = vec![0.0; dim];
    for vector in vectors {
        if vector.len() != dim {
            return Err(Error::DimensionMismatch { left: dim, right: vector.len() });
        }
        for (acc, v) in out.iter_mut().zip(vector) {
            *acc += v;
        }
    }
    let n = vectors.len() as f64;
    for acc in &mut out {
        *acc /= n;
    }
    Ok(out)
}
