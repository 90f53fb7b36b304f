//! Rationale-driven evidence selection.
//!
//! Selection runs three stages over the chunked corpus and unions them:
//!
//! 1. **Paired** — each rationale is embedded and paired with its single
//!    most similar chunk (argmax over cosine similarity). Rationales that
//!    converge on one chunk merge into one entry listing all of them.
//! 2. **Pooled** — the rationale embeddings are mean-pooled into one query
//!    intent vector; every chunk is scored against it, sorted descending,
//!    and cut at a statistically detected elbow ([`detect_elbow`]) instead
//!    of a fixed top-k.
//! 3. **Expanded** (optional) — index-neighbors (`chunk_index` ± 1, same
//!    document) of every stage-1/2 chunk are added for local context; each
//!    expanded chunk records every parent that pulled it in.
//!
//! The final set is the union with per-chunk provenance, so a selected
//! chunk is always attributable to the rationale or stage that selected it.
//! Ties anywhere break toward the lexicographically smaller
//! `(doc_id, chunk_index)`; all scores are 64-bit floats, compared exactly.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::corpus::{ChunkKey, ChunkedCorpus};
use crate::embed::{cosine_similarity, pool_mean, Embedding, EmbeddingProvider};
use crate::error::{Error, Result};
use crate::llm::Rationale;

// ---------------------------------------------------------------------------
// Elbow detection
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ElbowMethod {
    #[serde(rename = "z-score")]
    ZScore,
    #[serde(rename = "curvature")]
    Curvature,
    #[serde(rename = "degenerate")]
    Degenerate,
}

/// Outcome of elbow detection over a descending score list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ElbowResult {
    /// Number of leading scores to keep (1-based; `1 <= k_star <= n`).
    pub k_star: usize,
    pub method: ElbowMethod,
    /// First-order gaps `delta_i = s_i - s_(i+1)` (empty when n < 2).
    pub deltas: Vec<f64>,
    /// Z-scores of the gaps (populated when n >= 3 and the gap spread is
    /// non-zero). With method `z-score`, `z_scores[k_star - 1]` is the first
    /// value strictly above tau.
    pub z_scores: Vec<f64>,
    /// Second-order differences (populated only when the curvature fallback
    /// ran).
    pub curvatures: Vec<f64>,
}

impl Default for ElbowResult {
    fn default() -> Self {
        ElbowResult {
            k_star: 1,
            method: ElbowMethod::Degenerate,
            deltas: Vec::new(),
            z_scores: Vec::new(),
            curvatures: Vec::new(),
        }
    }
}

/// Finds the cut position in a descending score list.
///
/// Gaps are z-score-normalized against their own mean and population
/// standard deviation; the first gap with `z > tau` sets the cut. If no gap
/// stands out (or the gaps have zero spread), the largest absolute
/// second-order difference locates the bend instead; a perfectly linear
/// decay degenerates to keeping a single score. Inputs must be sorted
/// descending and finite.
pub fn detect_elbow(scores: &[f64], tau: f64) -> Result<ElbowResult> {
    if scores.is_empty() {
        return Err(Error::Selection("cannot detect an elbow in an empty score list".into()));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::Selection("scores contain a non-finite value".into()));
    }
    if !tau.is_finite() {
        return Err(Error::Selection("tau must be finite".into()));
    }
    if let Some(pos) = scores.windows(2).position(|w| w[0] < w[1]) {
        return Err(Error::Selection(format!(
            "scores must be sorted descending (violation at index {pos}: {} < {})",
            scores[pos], scores[pos + 1]
        )));
    }

    let n = scores.len();
    let deltas: Vec<f64> = scores.windows(2).map(|w| w[0] - w[1]).collect();
    let mut result = ElbowResult { deltas, ..ElbowResult::default() };
    if n <= 2 {
        return Ok(result);
    }

    let m = result.deltas.len() as f64;
    let mean = result.deltas.iter().sum::<f64>() / m;
    let variance = result.deltas.iter().map(|d| (d - mean) * (d - mean)).sum::<f64>() / m;
    let std_dev = variance.sqrt();

    if std_dev > 0.0 {
        result.z_scores = result.deltas.iter().map(|d| (d - mean) / std_dev).collect();
        if let Some(idx) = result.z_scores.iter().position(|z| *z > tau) {
            result.k_star = idx + 1;
            result.method = ElbowMethod::ZScore;
            return Ok(result);
        }
    }

    // Fallback: largest curvature. Curvature point i (1-based over gaps)
    // maps to a cut after score i + 1, which keeps the two methods aligned
    // on the same bend.
    result.curvatures = result.deltas.windows(2).map(|w| w[1] - w[0]).collect();
    let max_abs = result.curvatures.iter().fold(0.0f64, |acc, c| acc.max(c.abs()));
    if max_abs > 0.0 {
        let first = result
            .curvatures
            .iter()
            .position(|c| c.abs() == max_abs)
            .expect("max exists");
        result.k_star = first + 2;
        result.method = ElbowMethod::Curvature;
        return Ok(result);
    }

    result.k_star = 1;
    result.method = ElbowMethod::Degenerate;
    Ok(result)
}

// ---------------------------------------------------------------------------
// Result types
// ---------------------------------------------------------------------------

/// One rationale's similarity to the chunk it selected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RationaleMatch {
    pub ordinal: usize,
    pub score: f64,
}

/// A chunk selected by rationale pairing, with every rationale that chose it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairedEntry {
    #[serde(flatten)]
    pub key: ChunkKey,
    pub rationales: Vec<RationaleMatch>,
}

/// A chunk scored against the pooled rationale embedding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredChunk {
    #[serde(flatten)]
    pub key: ChunkKey,
    pub score: f64,
}

/// A neighbor chunk added for context, with every selected chunk that
/// pulled it in.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpandedEntry {
    #[serde(flatten)]
    pub key: ChunkKey,
    pub parents: Vec<ChunkKey>,
}

/// Which stage(s) put a chunk into the final set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SelectionSource {
    Paired,
    Pooled,
    Expanded,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProvenanceEntry {
    #[serde(flatten)]
    pub key: ChunkKey,
    pub sources: Vec<SelectionSource>,
}

/// Full selection outcome for one query; serializes as the per-query
/// selection report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionResult {
    pub query_id: String,
    pub k_star: usize,
    pub elbow_method: ElbowMethod,
    /// Pairing stage output, sorted by chunk key.
    pub paired: Vec<PairedEntry>,
    /// Pooled stage output in descending score order (the elbow cut).
    pub pooled: Vec<ScoredChunk>,
    /// Context-expansion output, sorted by chunk key.
    pub expanded: Vec<ExpandedEntry>,
    /// Union of all stages, sorted by chunk key.
    #[serde(rename = "final")]
    pub final_set: Vec<ChunkKey>,
    /// Stage attribution for every final chunk, sorted by chunk key.
    pub provenance: Vec<ProvenanceEntry>,
    /// Elbow diagnostics (not part of the report wire format).
    #[serde(skip)]
    pub elbow: ElbowResult,
}

/// Selection stage settings.
#[derive(Debug, Clone, Copy)]
pub struct SelectionConfig {
    /// Z-score threshold for the elbow cut.
    pub tau: f64,
    /// Whether to run context expansion (stage 3).
    pub expansion: bool,
}

impl Default for SelectionConfig {
    fn default() -> Self {
        SelectionConfig { tau: 1.0, expansion: true }
    }
}

// ---------------------------------------------------------------------------
// Stages
// ---------------------------------------------------------------------------

/// Chunk keys with their embeddings, in key order.
struct EmbeddedChunks {
    keys: Vec<ChunkKey>,
    vectors: Vec<Embedding>,
}

fn embed_chunks(corpus: &ChunkedCorpus, provider: &dyn EmbeddingProvider) -> Result<EmbeddedChunks> {
    let keys: Vec<ChunkKey> = corpus.sorted_keys().cloned().collect();
    let texts: Vec<&str> = keys
        .iter()
        .map(|key| corpus.get(key).expect("key from corpus").text.as_str())
        .collect();
    let vectors = provider.embed_batch(&texts)?;
    Ok(EmbeddedChunks { keys, vectors })
}

fn embed_rationales(
    rationales: &[Rationale],
    provider: &dyn EmbeddingProvider,
) -> Result<Vec<Embedding>> {
    let texts: Vec<String> = rationales.iter().map(Rationale::display_text).collect();
    let refs: Vec<&str> = texts.iter().map(String::as_str).collect();
    provider.embed_batch(&refs)
}

fn pair_with(embedded: &EmbeddedChunks, rationale_vectors: &[Embedding], rationales: &[Rationale]) -> Result<Vec<PairedEntry>> {
    let mut merged: BTreeMap<ChunkKey, Vec<RationaleMatch>> = BTreeMap::new();
    for (rationale, vector) in rationales.iter().zip(rationale_vectors) {
        let mut best: Option<(usize, f64)> = None;
        for (idx, chunk_vector) in embedded.vectors.iter().enumerate() {
            let score = cosine_similarity(vector, chunk_vector)?;
            // Strict `>` keeps the first (lexicographically smallest) key on
            // exact ties, because keys are scanned in sorted order.
            let better = match best {
                None => true,
                Some((_, best_score)) => score > best_score,
            };
            if better {
                best = Some((idx, score));
            }
        }
        let (idx, score) = best.expect("corpus verified non-empty");
        merged
            .entry(embedded.keys[idx].clone())
            .or_default()
            .push(RationaleMatch { ordinal: rationale.ordinal, score });
    }
    Ok(merged
        .into_iter()
        .map(|(key, mut matches)| {
            matches.sort_by_key(|m| m.ordinal);
            PairedEntry { key, rationales: matches }
        })
        .collect())
}

fn pooled_rank_with(
    embedded: &EmbeddedChunks,
    rationale_vectors: &[Embedding],
) -> Result<Vec<ScoredChunk>> {
    let pooled = pool_mean(rationale_vectors)?;
    let mut scored: Vec<ScoredChunk> = embedded
        .keys
        .iter()
        .zip(&embedded.vectors)
        .map(|(key, vector)| {
            Ok(ScoredChunk { key: key.clone(), score: cosine_similarity(&pooled, vector)? })
        })
        .collect::<Result<_>>()?;
    scored.sort_by(|a, b| {
        b.score
            .partial_cmp(&a.score)
            .expect("scores are finite")
            .then_with(|| a.key.cmp(&b.key))
    });
    Ok(scored)
}

fn pooled_with(
    embedded: &EmbeddedChunks,
    rationale_vectors: &[Embedding],
    tau: f64,
) -> Result<(Vec<ScoredChunk>, ElbowResult)> {
    let mut scored = pooled_rank_with(embedded, rationale_vectors)?;
    let scores: Vec<f64> = scored.iter().map(|c| c.score).collect();
    let elbow = detect_elbow(&scores, tau)?;
    scored.truncate(elbow.k_star);
    Ok((scored, elbow))
}

/// Stage 1: pairs every rationale with its most similar chunk.
pub fn pair_rationales(
    rationales: &[Rationale],
    corpus: &ChunkedCorpus,
    provider: &dyn EmbeddingProvider,
) -> Result<Vec<PairedEntry>> {
    ensure_inputs(rationales, corpus)?;
    let embedded = embed_chunks(corpus, provider)?;
    let rationale_vectors = embed_rationales(rationales, provider)?;
    pair_with(&embedded, &rationale_vectors, rationales)
}

/// The full stage-2 ranking: every chunk scored against the mean-pooled
/// rationale embedding, descending, with no cut applied. `pooled_select`
/// is this list truncated at the detected elbow.
pub fn pooled_rank(
    rationales: &[Rationale],
    corpus: &ChunkedCorpus,
    provider: &dyn EmbeddingProvider,
) -> Result<Vec<ScoredChunk>> {
    ensure_inputs(rationales, corpus)?;
    let embedded = embed_chunks(corpus, provider)?;
    let rationale_vectors = embed_rationales(rationales, provider)?;
    pooled_rank_with(&embedded, &rationale_vectors)
}

/// Stage 2: scores every chunk against the mean-pooled rationale embedding
/// and cuts at the detected elbow.
pub fn pooled_select(
    rationales: &[Rationale],
    corpus: &ChunkedCorpus,
    provider: &dyn EmbeddingProvider,
    tau: f64,
) -> Result<(Vec<ScoredChunk>, ElbowResult)> {
    ensure_inputs(rationales, corpus)?;
    let embedded = embed_chunks(corpus, provider)?;
    let rationale_vectors = embed_rationales(rationales, provider)?;
    pooled_with(&embedded, &rationale_vectors, tau)
}

/// Stage 3: index-neighbors of every selected chunk (same document,
/// `chunk_index` ± 1, clipped at document boundaries), excluding chunks
/// already selected. Each neighbor lists all of its parents.
pub fn expand_context(selected: &BTreeSet<ChunkKey>, corpus: &ChunkedCorpus) -> Vec<ExpandedEntry> {
    let mut parents_by_neighbor: BTreeMap<ChunkKey, BTreeSet<ChunkKey>> = BTreeMap::new();
    for key in selected {
        for neighbor in corpus.neighbors(key) {
            if !selected.contains(&neighbor) {
                parents_by_neighbor.entry(neighbor).or_default().insert(key.clone());
            }
        }
    }
    parents_by_neighbor
        .into_iter()
        .map(|(key, parents)| ExpandedEntry { key, parents: parents.into_iter().collect() })
        .collect()
}

fn ensure_inputs(rationales: &[Rationale], corpus: &ChunkedCorpus) -> Result<()> {
    if rationales.is_empty() {
        return Err(Error::Selection("rationale list is empty".into()));
    }
    if corpus.is_empty() {
        return Err(Error::Selection("corpus has no chunks".into()));
    }
    Ok(())
}

/// Runs all selection stages for one query and unions them with provenance.
pub fn select_evidence(
    query_id: &str,
    rationales: &[Rationale],
    corpus: &ChunkedCorpus,
    provider: &dyn EmbeddingProvider,
    config: &SelectionConfig,
) -> Result<SelectionResult> {
    ensure_inputs(rationales, corpus)?;
    let embedded = embed_chunks(corpus, provider)?;
    let rationale_vectors = embed_rationales(rationales, provider)?;

    let paired = pair_with(&embedded, &rationale_vectors, rationales)?;
    let (pooled, elbow) = pooled_with(&embedded, &rationale_vectors, config.tau)?;

    let mut sources: BTreeMap<ChunkKey, BTreeSet<SelectionSource>> = BTreeMap::new();
    for entry in &paired {
        sources.entry(entry.key.clone()).or_default().insert(SelectionSource::Paired);
    }
    for chunk in &pooled {
        sources.entry(chunk.key.clone()).or_default().insert(SelectionSource::Pooled);
    }

    let expanded = if config.expansion {
        let selected: BTreeSet<ChunkKey> = sources.keys().cloned().collect();
        let expanded = expand_context(&selected, corpus);
        for entry in &expanded {
            sources.entry(entry.key.clone()).or_default().insert(SelectionSource::Expanded);
        }
        expanded
    } else {
        Vec::new()
    };

    let final_set: Vec<ChunkKey> = sources.keys().cloned().collect();
    let provenance = sources
        .iter()
        .map(|(key, stage_set)| ProvenanceEntry {
            key: key.clone(),
            sources: stage_set.iter().copied().collect(),
        })
        .collect();

    Ok(SelectionResult {
        query_id: query_id.to_string(),
        k_star: elbow.k_star,
        elbow_method: elbow.method,
        paired,
        pooled,
        expanded,
        final_set,
        provenance,
        elbow,
    })
}

// ---------------------------------------------------------------------------
// Tests
// ---------------------------------------------------------------------------
