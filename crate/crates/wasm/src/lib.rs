//! Browser bindings for the evidence-selection engine.
//!
//! Three operations back the single-page demo, each a thin JSON-string
//! facade over the core crate. Strings cross the wasm boundary with no
//! extra glue, and failures come back as `{"error": "..."}` instead of
//! thrown exceptions so the page can render them inline. The same
//! functions compile and run natively, which is how they are unit-tested.
//!
//! Requests accept these fields (missing optional fields take the listed
//! defaults):
//!
//! * [`chunk_text`] — `{"text", "chunk_size" = 8, "merge_short_tail" = true}`
//! * [`detect_cut`] — `{"scores", "tau" = 1.0}` with `scores` descending
//! * [`run_selection`] — `{"docs": [{"doc_id", "text"}], "rationales",
//!   "chunk_size" = 8, "merge_short_tail" = true, "tau" = 1.0,
//!   "expansion" = true}`

use serde::Deserialize;
use serde_json::{json, Value};
use wasm_bindgen::prelude::*;

use ragsel_core::corpus::{chunk_corpus, ChunkOptions, Document, WhitespaceTokenizer};
use ragsel_core::embed::HashedNgramEmbedder;
use ragsel_core::llm::Rationale;
use ragsel_core::selection::{detect_elbow, pooled_rank, select_evidence, SelectionConfig};

/// Dimension of the deterministic hashed character n-gram embedder the
/// demo runs on (the engine itself is provider-agnostic).
const DEMO_EMBED_DIM: usize = 256;
const DEMO_EMBED_NGRAM: usize = 3;

fn default_chunk_size() -> usize {
    8
}

fn default_tau() -> f64 {
    1.0
}

fn default_true() -> bool {
    true
}

fn respond(result: Result<Value, String>) -> String {
    match result {
        Ok(value) => value.to_string(),
        Err(error) => json!({ "error": error }).to_string(),
    }
}

fn parse<'a, T: Deserialize<'a>>(request: &'a str) -> Result<T, String> {
    serde_json::from_str(request).map_err(|e| format!("bad request: {e}"))
}

fn to_value<T: serde::Serialize>(value: &T) -> Result<Value, String> {
    serde_json::to_value(value).map_err(|e| e.to_string())
}

// ---------------------------------------------------------------------------
// chunk_text
// ---------------------------------------------------------------------------

#[derive(Deserialize)]
struct ChunkRequest {
    text: String,
    #[serde(default = "default_chunk_size")]
    chunk_size: usize,
    #[serde(default = "default_true")]
    merge_short_tail: bool,
}

/// Splits pasted text into fixed-size token chunks and reports each
/// chunk's key, text, and token count.
#[wasm_bindgen]
pub fn chunk_text(request: &str) -> String {
    respond((|| {
        let req: ChunkRequest = parse(request)?;
        let docs = vec![Document { doc_id: "pasted".into(), text: req.text, metadata: None }];
        let options =
            ChunkOptions { chunk_size: req.chunk_size, merge_short_tail: req.merge_short_tail };
        let (corpus, _) =
            chunk_corpus(&docs, &options, &WhitespaceTokenizer).map_err(|e| e.to_string())?;
        let chunks: Vec<Value> = corpus
            .sorted_keys()
            .map(|key| to_value(corpus.get(key).expect("key from corpus")))
            .collect::<Result<_, _>>()?;
        let token_total: usize = corpus
            .sorted_keys()
            .map(|key| corpus.get(key).expect("key from corpus").token_count)
            .sum();
        Ok(json!({ "chunks": chunks, "token_total": token_total }))
    })())
}

// ---------------------------------------------------------------------------
// detect_cut
// ---------------------------------------------------------------------------

#[derive(Deserialize)]
struct DetectCutRequest {
    scores: Vec<f64>,
    #[serde(default = "default_tau")]
    tau: f64,
}

/// Runs elbow detection on a descending score list and returns the cut
/// position, the method that decided it, and the full diagnostics
/// (gaps, z-scores, curvatures).
#[wasm_bindgen]
pub fn detect_cut(request: &str) -> String {
    respond((|| {
        let req: DetectCutRequest = parse(request)?;
        let result = detect_elbow(&req.scores, req.tau).map_err(|e| e.to_string())?;
        to_value(&result)
    })())
}

// ---------------------------------------------------------------------------
// run_selection
// ---------------------------------------------------------------------------

#[derive(Deserialize)]
struct DocInput {
    doc_id: String,
    text: String,
}

#[derive(Deserialize)]
struct SelectionRequest {
    docs: Vec<DocInput>,
    rationales: Vec<String>,
    #[serde(default = "default_chunk_size")]
    chunk_size: usize,
    #[serde(default = "default_true")]
    merge_short_tail: bool,
    #[serde(default = "default_tau")]
    tau: f64,
    #[serde(default = "default_true")]
    expansion: bool,
}

/// Runs the full selection pipeline — chunk, pair each rationale with its
/// best chunk, rank everything against the pooled rationale embedding,
/// cut at the elbow, expand neighbors — and returns every stage:
///
/// * `chunks`: the chunked corpus,
/// * `ranking`: the complete pooled ranking (no cut), for the score chart,
/// * `elbow`: cut diagnostics over that ranking,
/// * `selection`: paired / pooled / expanded / final sets with provenance.
#[wasm_bindgen]
pub fn run_selection(request: &str) -> String {
    respond((|| {
        let req: SelectionRequest = parse(request)?;
        let docs: Vec<Document> = req
            .docs
            .into_iter()
            .map(|d| Document { doc_id: d.doc_id, text: d.text, metadata: None })
            .collect();
        let options =
            ChunkOptions { chunk_size: req.chunk_size, merge_short_tail: req.merge_short_tail };
        let (corpus, _) =
            chunk_corpus(&docs, &options, &WhitespaceTokenizer).map_err(|e| e.to_string())?;

        let rationales: Vec<Rationale> = req
            .rationales
            .iter()
            .map(|s| s.trim())
            .filter(|s| !s.is_empty())
            .enumerate()
            .map(|(i, body)| Rationale { ordinal: i + 1, tag: String::new(), body: body.into() })
            .collect();
        if rationales.is_empty() {
            return Err("at least one non-empty rationale is required".into());
        }

        let embedder = HashedNgramEmbedder::new(DEMO_EMBED_DIM, DEMO_EMBED_NGRAM);
        let ranking = pooled_rank(&rationales, &corpus, &embedder).map_err(|e| e.to_string())?;
        let config = SelectionConfig { tau: req.tau, expansion: req.expansion };
        let result = select_evidence("demo", &rationales, &corpus, &embedder, &config)
            .map_err(|e| e.to_string())?;

        let chunks: Vec<Value> = corpus
            .sorted_keys()
            .map(|key| to_value(corpus.get(key).expect("key from corpus")))
            .collect::<Result<_, _>>()?;
        Ok(json!({
            "chunks": chunks,
            "ranking": to_value(&ranking)?,
            "elbow": to_value(&result.elbow)?,
            "selection": to_value(&result)?,
        }))
    })())
}
