//! Content-addressed on-disk embedding cache.
//!
//! Layout: `<root>/<provider-name>/<sha256-of-text>.vec` holding the raw
//! little-endian f64 components, next to a `.json` sidecar with the provider
//! name and dimension. Keys include the provider name, so one cache
//! directory can safely serve several providers. Writes go through a
//! temporary file and an atomic rename, so concurrent writers of the same
//! key serialize to a last-write-wins full file.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{Embedding, EmbeddingProvider};
use crate::error::{Error, Result};

#[derive(Debug, Serialize, Deserialize)]
struct Sidecar {
    provider: String,
    dim: usize,
}

/// Wraps any provider with a read-through disk cache. The wrapper is
/// transparent: it reports the inner provider's name and dimension.
pub struct CachedEmbedder<P> {
    inner: P,
    root: PathBuf,
}

static TEMP_COUNTER: AtomicU64 = AtomicU64::new(0);

impl<P: EmbeddingProvider> CachedEmbedder<P> {
    pub fn new(inner: P, root: impl Into<PathBuf>) -> Self {
        CachedEmbedder { inner, root: root.into() }
    }

    fn entry_paths(&self, text: &str) -> (PathBuf, PathBuf) {
        let hash = hex::encode(Sha256::digest(text.as_bytes()));
        let dir = self.root.join(sanitize(self.inner.name()));
        (dir.join(format!("{hash}.vec")), dir.join(format!("{hash}.json")))
    }

    fn read_entry(&self, vec_path: &Path, sidecar_path: &Path) -> Option<Embedding> {
        let sidecar: Sidecar = serde_json::from_str(&fs::read_to_string(sidecar_path).ok()?).ok()?;
        if sidecar.provider != self.inner.name() || sidecar.dim != self.inner.dim() {
            return None;
        }
        let bytes = fs::read(vec_path).ok()?;
        if bytes.len() != sidecar.dim * 8 {
            log::warn!("embedding cache entry {} has wrong size; recomputing", vec_path.display());
            return None;
        }
        Some(
            bytes
                .chunks_exact(8)
                .map(|b| f64::from_le_bytes(b.try_into().expect("chunked by 8")))
                .collect(),
        )
    }

    fn write_entry(&self, vec_path: &Path, sidecar_path: &Path, vector: &[f64]) -> Result<()> {
        let dir = vec_path.parent().expect("entry path has a parent");
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut bytes = Vec::with_capacity(vector.len() * 8);
        for v in vector {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        atomic_write(vec_path, &bytes)?;
        let sidecar = Sidecar { provider: self.inner.name().to_string(), dim: self.inner.dim() };
        atomic_write(sidecar_path, serde_json::to_string(&sidecar).expect("serializable").as_bytes())
    }
}

fn sanitize(name: &str) -> String {
    name.chars().map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' }).collect()
}

fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension(format!(
        "tmp.{}.{}",
        std::process::id(),
        TEMP_COUNTER.fetch_add(1, Ordering::Relaxed)
    ));
    fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

impl<P: EmbeddingProvider> EmbeddingProvider for CachedEmbedder<P> {
    fn name(&self) -> &str {
        self.inner.name()
    }

    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn embed_raw(&self, texts: &[&str]) -> Result<Vec<Embedding>> {
        let mut results: Vec<Option<Embedding>> = Vec::with_capacity(texts.len());
        let mut misses: Vec<usize> = Vec::new();
        for (idx, text) in texts.iter().enumerate() {
            let (vec_path, sidecar_path) = self.entry_paths(text);
            match self.read_entry(&vec_path, &sidecar_path) {
                Some(vector) => results.push(Some(vector)),
                None => {
                    results.push(None);
                    misses.push(idx);
                }
            }
        }
        if !misses.is_empty() {
            let miss_texts: Vec<&str> = misses.iter().map(|&i| texts[i]).collect();
            let fresh = self.inner.embed_batch(&miss_texts)?;
            for (&idx, vector) in misses.iter().zip(fresh) {
                let (vec_path, sidecar_path) = self.entry_paths(texts[idx]);
                self.write_entry(&vec_path, &sidecar_path, &vector)?;
                results[idx] = Some(vector);
            }
        }
        Ok(results.into_iter().map(|v| v.expect("filled above")).collect())
    }
}
