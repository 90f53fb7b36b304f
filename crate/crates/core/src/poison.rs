//! Corpus-poisoning harness and detection metrics.
//!
//! The attack protocol: sample a seeded fraction of QA instances and, for
//! each, inject a misleading passage as a brand-new chunk immediately
//! after the instance's first gold chunk — inside a document that carries
//! correct context, where it is hardest to spot. Subsequent chunks in the
//! document shift up by one, and every gold key in the QA set is remapped
//! so the original evidence stays addressable. Injected chunks carry
//! `poison_label = true`; all others `false`.
//!
//! Poison text comes from either a chat model (asked to write a plausible
//! passage supporting a wrong answer) or a user-supplied file — the file
//! path keeps desk-scale runs fully offline and deterministic.
//!
//! Detection metrics score a verifier's decisions against the labels:
//! a true positive is a *flagged, poisoned* selected chunk. All 0/0
//! ratios collapse to 0, matching the no-defense convention.

use std::collections::BTreeMap;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{
    read_jsonl, ChunkKey, ChunkedCorpus, EvidenceChunk, QaInstance, Tokenizer,
};
use crate::error::{Error, Result};
use crate::llm::{
    extract_json_object,
    prompts::{build_poison_request, PromptTemplates},
    ChatProvider,
};
use crate::verify::{FlagType, VerifierDecision};

// ---------------------------------------------------------------------------
// Poison text sources
// ---------------------------------------------------------------------------

/// Where a poison passage came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PoisonSource {
    #[serde(rename = "llm-generated")]
    LlmGenerated,
    #[serde(rename = "file-supplied")]
    FileSupplied,
}

/// Supplies one poison passage per sampled QA instance.
pub trait PoisonTextSource {
    fn source(&self) -> PoisonSource;

    /// Called once with every sampled query id before any mutation, so a
    /// file-backed source can reject the whole run listing all missing ids.
    fn ensure_available(&self, _query_ids: &[&str]) -> Result<()> {
        Ok(())
    }

    /// Returns the passage to inject for this instance. `gold_context` is
    /// the concatenated text of the instance's gold chunks.
    fn poison_text(&self, qa: &QaInstance, gold_context: &str) -> Result<String>;
}

/// One line of the poison file: `{"query_id", "poison_text"}`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PoisonTextEntry {
    pub query_id: String,
    pub poison_text: String,
}

/// File-backed source mapping query ids to pre-written passages.
#[derive(Debug, Clone, Default)]
pub struct FilePoisonSource {
    texts: BTreeMap<String, String>,
}

impl FilePoisonSource {
    pub fn new(texts: BTreeMap<String, String>) -> Self {
        FilePoisonSource { texts }
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let entries: Vec<PoisonTextEntry> = read_jsonl(path)?;
        let mut texts = BTreeMap::new();
        for (idx, entry) in entries.into_iter().enumerate() {
            if texts.insert(entry.query_id.clone(), entry.poison_text).is_some() {
                return Err(Error::schema(
                    path,
                    idx + 1,
                    format!("duplicate poison text for query {:?}", entry.query_id),
                ));
            }
        }
        Ok(FilePoisonSource { texts })
    }
}

impl PoisonTextSource for FilePoisonSource {
    fn source(&self) -> PoisonSource {
        PoisonSource::FileSupplied
    }

    fn ensure_available(&self, query_ids: &[&str]) -> Result<()> {
        let missing: Vec<&str> =
            query_ids.iter().copied().filter(|id| !self.texts.contains_key(*id)).collect();
        if missing.is_empty() {
            Ok(())
        } else {
            Err(Error::Poisoning(format!(
                "poison file has no entry for sampled queries: {}",
                missing.join(", ")
            )))
        }
    }

    fn poison_text(&self, qa: &QaInstance, _gold_context: &str) -> Result<String> {
        self.texts
            .get(&qa.query_id)
            .cloned()
            .ok_or_else(|| Error::Poisoning(format!("no poison text for query {:?}", qa.query_id)))
    }
}

/// Wire shape of the model's poisoning answer.
#[derive(Debug, Deserialize)]
struct PoisonWire {
    #[allow(dead_code)]
    incorrect_answer: String,
    poisoned_passage: String,
}

/// Chat-model-backed source: asks for a plausible passage supporting an
/// incorrect answer to the query.
pub struct LlmPoisonSource<'a> {
    pub provider: &'a dyn ChatProvider,
    pub templates: &'a PromptTemplates,
}

impl PoisonTextSource for LlmPoisonSource<'_> {
    fn source(&self) -> PoisonSource {
        PoisonSource::LlmGenerated
    }

    fn poison_text(&self, qa: &QaInstance, gold_context: &str) -> Result<String> {
        let request = build_poison_request(self.templates, &qa.query_text, gold_context);
        let response = self.provider.complete(&request)?;
        let wire: PoisonWire = serde_json::from_str(extract_json_object(&response))
            .map_err(|err| Error::BadResponse(format!(
                "poison generation for query {:?} returned malformed JSON: {err}",
                qa.query_id
            )))?;
        if wire.poisoned_passage.trim().is_empty() {
            return Err(Error::BadResponse(format!(
                "poison generation for query {:?} returned an empty passage",
                qa.query_id
            )));
        }
        Ok(wire.poisoned_passage)
    }
}

// ---------------------------------------------------------------------------
// Corpus mutation
// ---------------------------------------------------------------------------

/// Poisoning run settings.
#[derive(Debug, Clone, Copy)]
pub struct PoisonConfig {
    /// Fraction of QA instances to poison, in (0, 1].
    pub fraction: f64,
    /// Seed for the instance sample.
    pub seed: u64,
    /// Injected chunks per sampled instance (consecutive copies).
    pub per_instance: usize,
}

impl Default for PoisonConfig {
    fn default() -> Self {
        PoisonConfig { fraction: 0.3, seed: 0, per_instance: 1 }
    }
}

/// Provenance of one injected chunk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoisonRecord {
    pub query_id: String,
    pub doc_id: String,
    pub injected_chunk_key: ChunkKey,
    pub poison_text: String,
    pub source: PoisonSource,
}

/// Result of a poisoning run: the mutated corpus, the QA set with gold
/// keys remapped past the injections, and one record per injected chunk.
#[derive(Debug, Clone)]
pub struct PoisonOutcome {
    pub corpus: ChunkedCorpus,
    pub qa: Vec<QaInstance>,
    pub records: Vec<PoisonRecord>,
}

/// Samples `ceil(fraction * |qa|)` instances with the given seed and
/// injects one poison chunk (or `per_instance` consecutive copies) right
/// after each sampled instance's first gold chunk.
///
/// Deterministic for a fixed seed and source: the same inputs produce
/// byte-identical outcomes. Instances are processed in QA-list order so
/// multiple injections into one document compose predictably; every
/// remapped gold key still resolves to its original, unmodified text.
pub fn poison_corpus(
    corpus: &ChunkedCorpus,
    qa: &[QaInstance],
    config: &PoisonConfig,
    source: &dyn PoisonTextSource,
    tokenizer: &dyn Tokenizer,
) -> Result<PoisonOutcome> {
    if qa.is_empty() {
        return Err(Error::Poisoning("QA set is empty".into()));
    }
    if !(config.fraction > 0.0 && config.fraction <= 1.0) {
        return Err(Error::Poisoning(format!(
            "poison fraction must be in (0, 1], got {}",
            config.fraction
        )));
    }
    if config.per_instance == 0 {
        return Err(Error::Poisoning("per_instance must be at least 1".into()));
    }
    for instance in qa {
        if instance.gold_chunk_keys.is_empty() {
            return Err(Error::Poisoning(format!(
                "query {:?} has no gold chunks to anchor an injection",
                instance.query_id
            )));
        }
        for key in &instance.gold_chunk_keys {
            if !corpus.contains(key) {
                return Err(Error::Poisoning(format!(
                    "gold chunk {key} of query {:?} is not in the corpus",
                    instance.query_id
                )));
            }
        }
    }

    let count = ((config.fraction * qa.len() as f64).ceil() as usize).min(qa.len());
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut sampled: Vec<usize> = rand::seq::index::sample(&mut rng, qa.len(), count).into_vec();
    sampled.sort_unstable();

    let sampled_ids: Vec<&str> = sampled.iter().map(|&i| qa[i].query_id.as_str()).collect();
    source.ensure_available(&sampled_ids)?;

    // Mutable per-document chunk lists, every chunk labeled clean.
    let mut docs: BTreeMap<String, Vec<EvidenceChunk>> = BTreeMap::new();
    for chunk in corpus.chunks() {
        let mut chunk = chunk.clone();
        chunk.poison_label = Some(false);
        docs.entry(chunk.doc_id.clone()).or_default().push(chunk);
    }
    for list in docs.values_mut() {
        list.sort_by_key(|c| c.chunk_index);
    }

    let mut out_qa: Vec<QaInstance> = qa.to_vec();
    let mut records: Vec<PoisonRecord> = Vec::new();

    for &idx in &sampled {
        // Gold keys are maintained sorted, so the first is the anchor.
        let anchor = out_qa[idx].gold_chunk_keys[0].clone();
        let gold_context = out_qa[idx]
            .gold_chunk_keys
            .iter()
            .map(|key| {
                docs[&key.doc_id]
                    .iter()
                    .find(|c| c.chunk_index == key.chunk_index)
                    .map(|c| c.text.clone())
                    .ok_or_else(|| {
                        Error::Poisoning(format!("gold chunk {key} vanished during poisoning"))
                    })
            })
            .collect::<Result<Vec<String>>>()?
            .join("\n\n");

        let text = source.poison_text(&out_qa[idx], &gold_context)?;
        if text.trim().is_empty() {
            return Err(Error::Poisoning(format!(
                "empty poison text for query {:?}",
                out_qa[idx].query_id
            )));
        }

        let insert_at = anchor.chunk_index + 1;
        let shift = config.per_instance;

        // Remap gold keys and earlier records past the insertion point.
        for instance in &mut out_qa {
            for key in &mut instance.gold_chunk_keys {
                if key.doc_id == anchor.doc_id && key.chunk_index >= insert_at {
                    key.chunk_index += shift;
                }
            }
        }
        for record in &mut records {
            let key = &mut record.injected_chunk_key;
            if key.doc_id == anchor.doc_id && key.chunk_index >= insert_at {
                key.chunk_index += shift;
            }
        }

        let doc_chunks = docs.get_mut(&anchor.doc_id).expect("anchor doc exists");
        for copy in 0..shift {
            let injected = EvidenceChunk {
                doc_id: anchor.doc_id.clone(),
                chunk_index: 0, // renumbered below
                text: text.clone(),
                token_count: tokenizer.count_tokens(&text),
                poison_label: Some(true),
            };
            doc_chunks.insert(insert_at + copy, injected);
        }
        for (i, chunk) in doc_chunks.iter_mut().enumerate() {
            chunk.chunk_index = i;
        }

        let query_id = out_qa[idx].query_id.clone();
        for copy in 0..shift {
            records.push(PoisonRecord {
                query_id: query_id.clone(),
                doc_id: anchor.doc_id.clone(),
                injected_chunk_key: ChunkKey::new(anchor.doc_id.clone(), insert_at + copy),
                poison_text: text.clone(),
                source: source.source(),
            });
        }
    }

    let corpus = ChunkedCorpus::from_chunks(docs.into_values().flatten().collect())?;
    Ok(PoisonOutcome { corpus, qa: out_qa, records })
}

// ---------------------------------------------------------------------------
// Detection metrics
// ---------------------------------------------------------------------------

/// Verifier-as-defense scores over a poisoned corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionMetrics {
    pub true_positives: u64,
    pub false_positives: u64,
    pub false_negatives: u64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Scores flagging decisions against poison labels.
///
/// A decision's chunk is poisoned when its key resolves to a chunk with
/// `poison_label = true` in the poisoned corpus. True positive: flagged
/// and poisoned. False positive: flagged and clean. False negative:
/// unflagged and poisoned. `F1 = 2·TP / (2·TP + FP + FN)`; empty
/// denominators give 0.
pub fn detection_metrics<'a>(
    decisions: impl IntoIterator<Item = &'a VerifierDecision>,
    corpus: &ChunkedCorpus,
) -> DetectionMetrics {
    let mut tp = 0u64;
    let mut fp = 0u64;
    let mut fn_ = 0u64;
    for decision in decisions {
        let poisoned = corpus
            .get(&decision.chunk_key)
            .and_then(|c| c.poison_label)
            .unwrap_or(false);
        match (decision.flagged, poisoned) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            (false, false) => {}
        }
    }
    DetectionMetrics {
        true_positives: tp,
        false_positives: fp,
        false_negatives: fn_,
        precision: ratio(tp, tp + fp),
        recall: ratio(tp, tp + fn_),
        f1: ratio(2 * tp, 2 * tp + fp + fn_),
    }
}

/// Percentages of the poisoned selected population flagged per category.
///
/// Each flagged poisoned chunk counts toward exactly one category — the
/// first type listed in its decision — so the three per-type values sum
/// to `total`, the overall flagged percentage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlagTypeBreakdown {
    #[serde(rename = "Instruction")]
    pub instruction: f64,
    #[serde(rename = "Contradiction")]
    pub contradiction: f64,
    #[serde(rename = "Factual")]
    pub factual: f64,
    #[serde(rename = "Total")]
    pub total: f64,
}

pub fn flag_type_breakdown<'a>(
    decisions: impl IntoIterator<Item = &'a VerifierDecision>,
    corpus: &ChunkedCorpus,
) -> FlagTypeBreakdown {
    let mut poisoned_total = 0u64;
    let mut flagged_poisoned = 0u64;
    let mut per_type: BTreeMap<FlagType, u64> = BTreeMap::new();
    for decision in decisions {
        let poisoned = corpus
            .get(&decision.chunk_key)
            .and_then(|c| c.poison_label)
            .unwrap_or(false);
        if !poisoned {
            continue;
        }
        poisoned_total += 1;
        if decision.flagged {
            flagged_poisoned += 1;
            let attributed = decision.flag_types.first().copied().unwrap_or_else(|| {
                log::warn!(
                    "flagged decision for {} has no flag types; attributing to Instruction",
                    decision.chunk_key
                );
                FlagType::Instruction
            });
            *per_type.entry(attributed).or_default() += 1;
        }
    }
    let pct = |count: u64| 100.0 * ratio(count, poisoned_total);
    FlagTypeBreakdown {
        instruction: pct(per_type.get(&FlagType::Instruction).copied().unwrap_or(0)),
        contradiction: pct(per_type.get(&FlagType::Contradiction).copied().unwrap_or(0)),
        factual: pct(per_type.get(&FlagType::Factual).copied().unwrap_or(0)),
        total: pct(flagged_poisoned),
    }
}
