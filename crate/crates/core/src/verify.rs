//! Conservative per-chunk verification of the selected evidence set.
//!
//! Each selected chunk is judged by a chat model against the query, the
//! rationale bodies (which double as flagging instructions), and one-line
//! summaries of every previously verified chunk — so later judgments can
//! catch contradictions with earlier evidence. The pass is strictly
//! sequential within a query because of that summary chain.
//!
//! The verifier is deliberately conservative: a chunk is removed only when
//! the model explicitly answers `"flagged": true`. Malformed responses,
//! unknown flag types, and inconsistent flag sets all degrade toward
//! *keeping* evidence (with warnings), never toward silently discarding it.
//! A provider failure mid-pass aborts the pass and returns the decisions
//! made so far with an explicit `incomplete` marker.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::corpus::{ChunkKey, EvidenceChunk};
use crate::error::{Error, Result};
use crate::llm::{
    extract_json_object,
    prompts::{build_verifier_request, PromptTemplates},
    ChatProvider, Rationale,
};

/// Closed vocabulary of flag categories.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum FlagType {
    Instruction,
    Contradiction,
    Factual,
}

impl FlagType {
    pub const ALL: [FlagType; 3] = [FlagType::Instruction, FlagType::Contradiction, FlagType::Factual];

    pub fn as_str(self) -> &'static str {
        match self {
            FlagType::Instruction => "Instruction",
            FlagType::Contradiction => "Contradiction",
            FlagType::Factual => "Factual",
        }
    }

    /// Case-insensitive parse; unknown strings bucket into `Instruction`
    /// with a warning so a creative model answer never drops a flag.
    pub fn parse_lossy(raw: &str) -> FlagType {
        match raw.trim().to_ascii_lowercase().as_str() {
            "instruction" => FlagType::Instruction,
            "contradiction" => FlagType::Contradiction,
            "factual" => FlagType::Factual,
            other => {
                log::warn!("unknown flag type {other:?}; mapping to Instruction");
                FlagType::Instruction
            }
        }
    }
}

impl fmt::Display for FlagType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One chunk's verification outcome.
///
/// Invariants (enforced at parse time): `flagged == false` implies
/// `flag_types` is empty; `flagged == true` implies it is non-empty.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifierDecision {
    #[serde(flatten)]
    pub chunk_key: ChunkKey,
    pub flagged: bool,
    pub flag_types: Vec<FlagType>,
    pub chunk_summary: String,
}

/// Raw wire shape of the model's JSON answer.
#[derive(Debug, Deserialize)]
struct WireDecision {
    flagged: bool,
    #[serde(default)]
    chunk_summary: String,
    #[serde(default)]
    flag_types: Vec<String>,
}

/// Summary used when the model's answer cannot be parsed.
pub const UNVERIFIABLE_SUMMARY: &str = "unverifiable response";

/// Parses a model response into a decision, conservatively.
///
/// Any response that is not the expected JSON object keeps the chunk:
/// the decision comes back unflagged with the summary
/// [`UNVERIFIABLE_SUMMARY`] and a warning is logged. Inconsistent answers
/// are repaired toward the invariants: an unflagged answer with flag types
/// drops them; a flagged answer with no types gets `[Instruction]`.
pub fn parse_decision(chunk_key: &ChunkKey, response: &str) -> VerifierDecision {
    let wire: WireDecision = match serde_json::from_str(extract_json_object(response)) {
        Ok(wire) => wire,
        Err(err) => {
            log::warn!("unparseable verifier response for {chunk_key}: {err}; keeping chunk");
            return VerifierDecision {
                chunk_key: chunk_key.clone(),
                flagged: false,
                flag_types: Vec::new(),
                chunk_summary: UNVERIFIABLE_SUMMARY.to_string(),
            };
        }
    };

    let mut flag_types: Vec<FlagType> = wire.flag_types.iter().map(|s| FlagType::parse_lossy(s)).collect();
    flag_types.sort();
    flag_types.dedup();
    if !wire.flagged && !flag_types.is_empty() {
        log::warn!("unflagged decision for {chunk_key} listed flag types; clearing them");
        flag_types.clear();
    }
    if wire.flagged && flag_types.is_empty() {
        log::warn!("flagged decision for {chunk_key} listed no flag types; defaulting to Instruction");
        flag_types.push(FlagType::Instruction);
    }
    let chunk_summary = if wire.chunk_summary.trim().is_empty() {
        log::warn!("verifier response for {chunk_key} had an empty summary");
        UNVERIFIABLE_SUMMARY.to_string()
    } else {
        wire.chunk_summary
    };

    VerifierDecision { chunk_key: chunk_key.clone(), flagged: wire.flagged, flag_types, chunk_summary }
}

/// Iteration order for a verification pass.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
#[derive(Default)]
pub enum VerifyOrder {
    /// Ascending `(doc_id, chunk_index)` — document narrative order.
    #[default]
    Corpus,
    /// Exactly the order the chunks were handed in.
    Given,
}


/// Verifier pass settings.
#[derive(Debug, Clone)]
pub struct VerifierConfig {
    pub order: VerifyOrder,
    /// Optional cap on how many characters of chunk text are sent to the
    /// model. `None` sends chunks verbatim.
    pub max_chunk_chars: Option<usize>,
}

impl Default for VerifierConfig {
    fn default() -> Self {
        VerifierConfig { order: VerifyOrder::Corpus, max_chunk_chars: None }
    }
}

/// Result of verifying one query's selected chunks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifyOutcome {
    /// One decision per chunk reached before any abort, in pass order.
    pub decisions: Vec<VerifierDecision>,
    /// Keys of unflagged chunks among those decided, in pass order.
    pub kept: Vec<ChunkKey>,
    /// True when a provider failure aborted the pass part-way.
    #[serde(default, skip_serializing_if = "is_false")]
    pub incomplete: bool,
}

fn is_false(value: &bool) -> bool {
    !*value
}

/// Per-query verification report line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerificationReport {
    pub query_id: String,
    pub decisions: Vec<VerifierDecision>,
    pub kept: Vec<ChunkKey>,
    #[serde(default, skip_serializing_if = "is_false")]
    pub incomplete: bool,
}

impl VerificationReport {
    pub fn new(query_id: &str, outcome: VerifyOutcome) -> Self {
        VerificationReport {
            query_id: query_id.to_string(),
            decisions: outcome.decisions,
            kept: outcome.kept,
            incomplete: outcome.incomplete,
        }
    }
}

/// Judges a single chunk against the query, flagging instructions, and the
/// summaries of previously verified chunks.
///
/// Returns an error only when the provider itself fails; a provider that
/// responds with garbage yields a conservative unflagged decision.
pub fn verify_chunk(
    provider: &dyn ChatProvider,
    templates: &PromptTemplates,
    query_text: &str,
    rationales: &[Rationale],
    prior_summaries: &[String],
    chunk: &EvidenceChunk,
    max_chunk_chars: Option<usize>,
) -> Result<VerifierDecision> {
    if rationales.is_empty() {
        return Err(Error::BadResponse("verification requires at least one rationale".into()));
    }
    let text = clip_chars(&chunk.text, max_chunk_chars);
    let request = build_verifier_request(templates, query_text, rationales, prior_summaries, text);
    let response = provider.complete(&request)?;
    Ok(parse_decision(&chunk.key(), &response))
}

fn clip_chars(text: &str, cap: Option<usize>) -> &str {
    match cap {
        Some(cap) => match text.char_indices().nth(cap) {
            Some((byte, _)) => {
                log::warn!("clipping chunk text to {cap} characters for verification");
                &text[..byte]
            }
            None => text,
        },
        None => text,
    }
}

/// Verifies every chunk in `chunks`, chaining summaries from one decision
/// into the next prompt.
///
/// With [`VerifyOrder::Corpus`] the chunks are visited in ascending
/// `(doc_id, chunk_index)`; with [`VerifyOrder::Given`] in the order
/// passed. On a provider failure the pass stops and the outcome carries
/// the decisions made so far with `incomplete = true`.
pub fn verify_all(
    provider: &dyn ChatProvider,
    templates: &PromptTemplates,
    query_text: &str,
    rationales: &[Rationale],
    chunks: &[&EvidenceChunk],
    config: &VerifierConfig,
) -> Result<VerifyOutcome> {
    if chunks.is_empty() {
        return Err(Error::BadResponse("verification requires a non-empty chunk set".into()));
    }
    let mut ordered: Vec<&EvidenceChunk> = chunks.to_vec();
    if config.order == VerifyOrder::Corpus {
        ordered.sort_by_key(|c| c.key());
    }

    let mut outcome = VerifyOutcome { decisions: Vec::new(), kept: Vec::new(), incomplete: false };
    let mut summaries: Vec<String> = Vec::new();
    for chunk in ordered {
        match verify_chunk(
            provider,
            templates,
            query_text,
            rationales,
            &summaries,
            chunk,
            config.max_chunk_chars,
        ) {
            Ok(decision) => {
                summaries.push(decision.chunk_summary.clone());
                if !decision.flagged {
                    outcome.kept.push(decision.chunk_key.clone());
                }
                outcome.decisions.push(decision);
            }
            Err(err) => {
                log::warn!(
                    "verification aborted after {} of {} chunks: {err}",
                    outcome.decisions.len(),
                    chunks.len()
                );
                outcome.incomplete = true;
                break;
            }
        }
    }
    Ok(outcome)
}
