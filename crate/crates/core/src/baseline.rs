//! Similarity-ranked top-k baseline and the matched-k comparison protocol.
//!
//! The baseline embeds the raw query, scores every chunk by cosine
//! similarity, and keeps the k best — the fixed-budget strategy the
//! rationale-driven selector replaces. To compare the two fairly, the
//! baseline's k is *matched* to the selector's behavior: the mean number
//! of chunks the selector kept per query, rounded half-up.
//!
//! Third-party ranker outputs can be ingested from a JSON Lines file of
//! `{"query_id", "ranked": [{"doc_id", "chunk_index", "score"}]}` records
//! so the evaluation module can score them under the same protocol.

use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::{read_jsonl, write_jsonl, ChunkKey, ChunkedCorpus};
use crate::embed::{cosine_similarity, EmbeddingProvider};
use crate::error::{Error, Result};

/// One ranked entry: a chunk and its similarity to the query.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedEntry {
    #[serde(flatten)]
    pub key: ChunkKey,
    pub score: f64,
}

/// A full descending ranking of chunks for one query.
///
/// Invariants: scores non-increasing; entries unique by chunk key.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedList {
    pub query_id: String,
    pub ranked: Vec<RankedEntry>,
}

impl RankedList {
    /// The first `k` chunk keys (all of them when `k` exceeds the length).
    pub fn top_k(&self, k: usize) -> Vec<ChunkKey> {
        self.ranked.iter().take(k).map(|e| e.key.clone()).collect()
    }

    fn validate(&self, path: &Path, line: usize) -> Result<()> {
        if let Some(pos) = self.ranked.windows(2).position(|w| w[0].score < w[1].score) {
            return Err(Error::schema(
                path,
                line,
                format!(
                    "ranking for query {:?} is not descending at position {pos} ({} < {})",
                    self.query_id,
                    self.ranked[pos].score,
                    self.ranked[pos + 1].score
                ),
            ));
        }
        let mut seen: BTreeSet<&ChunkKey> = BTreeSet::new();
        for entry in &self.ranked {
            if !seen.insert(&entry.key) {
                return Err(Error::schema(
                    path,
                    line,
                    format!("ranking for query {:?} repeats chunk {}", self.query_id, entry.key),
                ));
            }
        }
        Ok(())
    }
}

/// Scores every chunk against the embedded query and returns the full
/// descending ranking (ties toward the smaller chunk key).
pub fn rank_chunks(
    query_id: &str,
    query_text: &str,
    corpus: &ChunkedCorpus,
    provider: &dyn EmbeddingProvider,
) -> Result<RankedList> {
    if corpus.is_empty() {
        return Err(Error::Selection("cannot rank an empty corpus".into()));
    }
    let query_vec = provider.embed_one(query_text)?;
    let keys: Vec<&ChunkKey> = corpus.sorted_keys().collect();
    let texts: Vec<&str> = keys
        .iter()
        .map(|key| corpus.get(key).expect("key from corpus").text.as_str())
        .collect();
    let chunk_vecs = provider.embed_batch(&texts)?;
    let mut ranked: Vec<RankedEntry> = keys
        .iter()
        .zip(&chunk_vecs)
        .map(|(key, vec)| {
            Ok(RankedEntry { key: (*key).clone(), score: cosine_similarity(&query_vec, vec)? })
        })
        .collect::<Result<_>>()?;
    ranked.sort_by(|a, b| {
        b.score
            .partial_cmp(&a.score)
            .expect("cosine scores are finite")
            .then_with(|| a.key.cmp(&b.key))
    });
    Ok(RankedList { query_id: query_id.to_string(), ranked })
}

/// Returns the `k` most query-similar chunk keys (`k >= 1`; `k > n` clips
/// to all `n` chunks).
pub fn rerank_topk(
    query_id: &str,
    query_text: &str,
    corpus: &ChunkedCorpus,
    provider: &dyn EmbeddingProvider,
    k: usize,
) -> Result<Vec<ChunkKey>> {
    if k == 0 {
        return Err(Error::Selection("top-k baseline requires k >= 1".into()));
    }
    Ok(rank_chunks(query_id, query_text, corpus, provider)?.top_k(k))
}

/// Matches the baseline's k to the selector: the arithmetic mean of
/// per-query final-set sizes, rounded half-up, never below 1.
pub fn matched_k(final_set_sizes: &[usize]) -> Result<usize> {
    if final_set_sizes.is_empty() {
        return Err(Error::Evaluation("matched_k requires at least one selection result".into()));
    }
    let mean = final_set_sizes.iter().sum::<usize>() as f64 / final_set_sizes.len() as f64;
    Ok(((mean + 0.5).floor() as usize).max(1))
}

/// Reads third-party ranking lines, validating order and uniqueness.
pub fn load_rankings(path: &Path) -> Result<Vec<RankedList>> {
    let lists: Vec<RankedList> = read_jsonl(path)?;
    let mut seen: BTreeSet<&str> = BTreeSet::new();
    for (idx, list) in lists.iter().enumerate() {
        let line = idx + 1;
        if !seen.insert(&list.query_id) {
            return Err(Error::schema(path, line, format!("duplicate query_id {:?}", list.query_id)));
        }
        list.validate(path, line)?;
    }
    Ok(lists)
}

/// Writes ranking lines in the external baseline format.
pub fn save_rankings(path: &Path, lists: &[RankedList]) -> Result<()> {
    write_jsonl(path, lists)
}
