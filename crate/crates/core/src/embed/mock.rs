//! Deterministic offline embedder: hashed character n-grams.
//!
//! Texts are lowercased and whitespace-normalized, padded with one boundary
//! space on each side, and every character n-gram is hashed (FNV-1a, fixed
//! keys, stable across processes) into a signed bucket of a fixed-dimension
//! vector, which is then L2-normalized. Lexically similar texts share n-gram
//! mass and land close in cosine space, which is what desk-scale pipeline
//! tests need from a stand-in embedder.

use super::{Embedding, EmbeddingProvider};
use crate::error::Result;

#[derive(Debug, Clone)]
pub struct HashedNgramEmbedder {
    dim: usize,
    ngram: usize,
    name: String,
}

impl HashedNgramEmbedder {
    pub fn new(dim: usize, ngram: usize) -> Self {
        assert!(dim >= 1, "dimension must be at least 1");
        assert!(ngram >= 1, "n-gram size must be at least 1");
        HashedNgramEmbedder { dim, ngram, name: format!("hashed-ngram-d{dim}-n{ngram}") }
    }

    fn embed_text(&self, text: &str) -> Embedding {
        let normalized: Vec<char> = {
            let mut chars = vec![' '];
            let mut last_was_space = true;
            for ch in text.trim().chars() {
                if ch.is_whitespace() {
                    if !last_was_space {
                        chars.push(' ');
                        last_was_space = true;
                    }
                } else {
                    chars.extend(ch.to_lowercase());
                    last_was_space = false;
                }
            }
            chars.push(' ');
            chars
        };

        let mut vector = vec![0.0f64; self.dim];
        let window = self.ngram.min(normalized.len());
        let mut buf = [0u8; 4];
        for gram in normalized.windows(window) {
            let mut hash = FNV_OFFSET;
            for ch in gram {
                for byte in ch.encode_utf8(&mut buf).as_bytes() {
                    hash ^= u64::from(*byte);
                    hash = hash.wrapping_mul(FNV_PRIME);
                }
            }
            let bucket = (hash % self.dim as u64) as usize;
            let sign = if hash >> 63 == 0 { 1.0 } else { -1.0 };
            vector[bucket] += sign;
        }

        let norm: f64 = vector.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 0.0 {
            for v in &mut vector {
                *v /= norm;
            }
        }
        vector
    }
}

impl Default for HashedNgramEmbedder {
    fn default() -> Self {
        HashedNgramEmbedder::new(256, 3)
    }
}

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

impl EmbeddingProvider for HashedNgramEmbedder {
    fn name(&self) -> &str {
        &self.name
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn embed_raw(&self, texts: &[&str]) -> Result<Vec<Embedding>> {
        Ok(texts.iter().map(|t| self.embed_text(t)).collect())
    }
}
