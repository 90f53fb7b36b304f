//! Rank-free, rationale-driven evidence selection for retrieval-augmented
//! generation.
//!
//! Instead of asking an LLM to rank chunks or tuning a per-dataset top-k, the
//! pipeline asks the LLM *why* evidence would answer the query (short, tagged
//! "rationales"), then lets those rationales drive selection:
//!
//! 1. [`llm::generate_rationales`] produces query-conditioned rationales.
//! 2. [`selection::select_evidence`] pairs each rationale with its nearest
//!    chunk, adds a pooled-similarity cut chosen by a statistical elbow
//!    ([`selection::detect_elbow`]), and optionally expands to adjacent
//!    chunks. The result carries full provenance: every selected chunk knows
//!    which stage (and which rationale) put it there.
//! 3. [`verify`] optionally re-reads each selected chunk against the
//!    rationales and flags poisoned or contradictory content before the
//!    chunks reach a generator.
//!
//! Supporting modules: [`corpus`] (documents, chunking, JSONL I/O),
//! [`embed`] (embedding providers, cosine/pooling, on-disk cache),
//! [`baseline`] (top-k similarity baseline and the matched-k protocol),
//! [`poison`] (corpus-poisoning harness), [`eval`] (precision/recall/F1,
//! efficiency ratios, poison-detection metrics), [`prefdata`] (DPO
//! preference-pair export), and [`pipeline`] (per-query orchestration).
//!
//! Everything is deterministic given fixed inputs, a fixed seed, and
//! deterministic providers; scripted chat providers and a hashed-n-gram mock
//! embedder make the full pipeline runnable offline in tests.

pub mod baseline;
pub mod corpus;
pub mod embed;
pub mod error;
pub mod eval;
pub mod llm;
#[cfg(feature = "http")]
pub(crate) mod net;
pub mod pipeline;
pub mod poison;
pub mod prefdata;
pub mod selection;
pub mod verify;

pub use error::{Error, Result};
#[cfg(feature = "http")]
pub use net::RetryPolicy;
