//! Preference-pair construction for rationale-model tuning (DPO-style).
//!
//! The idea: a rationale is *good* exactly when pairing it against the
//! instance's documents lands on a gold chunk. For each QA instance this
//! module generates several candidate rationales at a diversity-friendly
//! temperature, replays the selection engine's pairing argmax for each
//! candidate over the chunks of the documents named by the gold keys, and
//! splits candidates into hits (argmax ∈ gold) and misses. Every hit ×
//! miss combination (capped) becomes a preference pair — no human labels
//! involved.
//!
//! Export writes JSON Lines of `{"prompt", "chosen", "rejected"}`, where
//! the prompt carries the query and the gold evidence text under labeled
//! delimiters, optionally shuffled by seed into 80/10/10
//! train/validation/test files.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{read_jsonl, write_jsonl, ChunkKey, ChunkedCorpus};
use crate::embed::{cosine_similarity, EmbeddingProvider};
use crate::error::{Error, Result};
use crate::corpus::QaInstance;
use crate::llm::{
    generate_rationales, prompts::PromptTemplates, ChatProvider, Rationale, RationaleOptions,
};

/// One preference example: for this query, `chosen` located gold evidence
/// and `rejected` did not.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreferencePair {
    pub query_id: String,
    pub query_text: String,
    /// The gold chunk the chosen rationale's pairing argmax hit.
    pub gold_chunk_key: ChunkKey,
    /// Preferred rationale text (as embedded: `[tag] body`).
    pub chosen: String,
    /// Dispreferred rationale text.
    pub rejected: String,
}

/// Pair-construction settings.
#[derive(Debug, Clone, Copy)]
pub struct PrefConfig {
    /// Candidate rationales requested per instance (>= 2).
    pub samples_per_query: usize,
    /// Sampling temperature for candidate diversity.
    pub temperature: f64,
    /// Token budget for the candidate-generation response.
    pub max_tokens: u32,
    /// Cap on pairs emitted per instance.
    pub max_pairs_per_instance: usize,
}

impl Default for PrefConfig {
    fn default() -> Self {
        PrefConfig { samples_per_query: 4, temperature: 0.8, max_tokens: 1024, max_pairs_per_instance: 8 }
    }
}

/// Why instances produced no pairs, by query id.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PrefStats {
    /// Instances whose candidates all missed gold.
    pub no_positives: Vec<String>,
    /// Instances whose candidates all hit gold.
    pub no_negatives: Vec<String>,
    /// Instances whose candidate generation failed.
    pub generation_failures: Vec<String>,
}

/// The pairing argmax a single rationale text gets over a chunk set —
/// the same strict-`>` scan (ties to the smaller key) the selection
/// engine uses, restricted here to the instance's gold documents.
fn argmax_chunk(
    vector: &[f64],
    keys: &[ChunkKey],
    chunk_vectors: &[Vec<f64>],
) -> Result<ChunkKey> {
    let mut best: Option<(usize, f64)> = None;
    for (idx, chunk_vector) in chunk_vectors.iter().enumerate() {
        let score = cosine_similarity(vector, chunk_vector)?;
        let better = match best {
            None => true,
            Some((_, best_score)) => score > best_score,
        };
        if better {
            best = Some((idx, score));
        }
    }
    let (idx, _) = best.ok_or_else(|| Error::Selection("no chunks to pair against".into()))?;
    Ok(keys[idx].clone())
}

/// Builds preference pairs for every QA instance.
///
/// Candidates come from one rationale-generation call per instance asking
/// for `samples_per_query` rationales at the configured temperature.
/// A generation failure (provider error or an unparseable response) skips
/// the instance with a warning; one-sided instances (all hits or all
/// misses) are skipped and counted in the stats.
pub fn build_preference_pairs(
    provider: &dyn ChatProvider,
    templates: &PromptTemplates,
    embedder: &dyn EmbeddingProvider,
    qa: &[QaInstance],
    corpus: &ChunkedCorpus,
    config: &PrefConfig,
) -> Result<(Vec<PreferencePair>, PrefStats)> {
    if config.samples_per_query < 2 {
        return Err(Error::Config(format!(
            "samples_per_query must be at least 2 to form pairs, got {}",
            config.samples_per_query
        )));
    }
    if config.max_pairs_per_instance == 0 {
        return Err(Error::Config("max_pairs_per_instance must be at least 1".into()));
    }
    for instance in qa {
        if instance.gold_chunk_keys.is_empty() {
            return Err(Error::InvalidQuery {
                query_id: instance.query_id.clone(),
                reason: "preference building requires gold chunks".into(),
            });
        }
        for key in &instance.gold_chunk_keys {
            if !corpus.contains(key) {
                return Err(Error::InvalidQuery {
                    query_id: instance.query_id.clone(),
                    reason: format!("gold chunk {key} is not in the corpus"),
                });
            }
        }
    }

    let options = RationaleOptions {
        n_rationales: config.samples_per_query,
        temperature: config.temperature,
        max_tokens: config.max_tokens,
    };

    let mut pairs = Vec::new();
    let mut stats = PrefStats::default();
    for instance in qa {
        let candidates =
            match generate_rationales(provider, templates, &instance.query_text, &options) {
                Ok(candidates) => candidates,
                Err(err) => {
                    log::warn!(
                        "skipping query {:?}: candidate generation failed: {err}",
                        instance.query_id
                    );
                    stats.generation_failures.push(instance.query_id.clone());
                    continue;
                }
            };

        // Score against the chunks of the documents the gold keys name.
        let gold_docs: BTreeSet<&str> =
            instance.gold_chunk_keys.iter().map(|k| k.doc_id.as_str()).collect();
        let scope: Vec<&ChunkKey> = corpus
            .sorted_keys()
            .filter(|key| gold_docs.contains(key.doc_id.as_str()))
            .collect();
        let keys: Vec<ChunkKey> = scope.iter().map(|k| (*k).clone()).collect();
        let texts: Vec<&str> =
            scope.iter().map(|key| corpus.get(key).expect("scoped key").text.as_str()).collect();
        let chunk_vectors = embedder.embed_batch(&texts)?;

        let candidate_texts: Vec<String> = candidates.iter().map(Rationale::display_text).collect();
        let refs: Vec<&str> = candidate_texts.iter().map(String::as_str).collect();
        let candidate_vectors = embedder.embed_batch(&refs)?;

        let gold: BTreeSet<&ChunkKey> = instance.gold_chunk_keys.iter().collect();
        let mut hits: Vec<(String, ChunkKey)> = Vec::new();
        let mut misses: Vec<String> = Vec::new();
        for (text, vector) in candidate_texts.iter().zip(&candidate_vectors) {
            let target = argmax_chunk(vector, &keys, &chunk_vectors)?;
            if gold.contains(&target) {
                hits.push((text.clone(), target));
            } else {
                misses.push(text.clone());
            }
        }

        if hits.is_empty() {
            stats.no_positives.push(instance.query_id.clone());
            continue;
        }
        if misses.is_empty() {
            stats.no_negatives.push(instance.query_id.clone());
            continue;
        }

        let mut emitted = 0usize;
        'cross: for (chosen, gold_key) in &hits {
            for rejected in &misses {
                if emitted == config.max_pairs_per_instance {
                    break 'cross;
                }
                if chosen == rejected {
                    log::warn!(
                        "query {:?}: identical hit and miss text; skipping pair",
                        instance.query_id
                    );
                    continue;
                }
                pairs.push(PreferencePair {
                    query_id: instance.query_id.clone(),
                    query_text: instance.query_text.clone(),
                    gold_chunk_key: gold_key.clone(),
                    chosen: chosen.clone(),
                    rejected: rejected.clone(),
                });
                emitted += 1;
            }
        }
    }
    Ok((pairs, stats))
}

// ---------------------------------------------------------------------------
// Export
// ---------------------------------------------------------------------------

/// One exported training line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DpoLine {
    pub prompt: String,
    pub chosen: String,
    pub rejected: String,
}

/// The prompt serialization: query and gold evidence under labeled
/// delimiters (training conditions on both; inference uses the query
/// alone).
pub fn dpo_prompt(query_text: &str, evidence_text: &str) -> String {
    format!("Query:\n{query_text}\n\nGround-truth evidence:\n{evidence_text}")
}

fn to_lines(pairs: &[PreferencePair], corpus: &ChunkedCorpus) -> Result<Vec<DpoLine>> {
    pairs
        .iter()
        .map(|pair| {
            let evidence = corpus.get(&pair.gold_chunk_key).ok_or_else(|| {
                Error::Evaluation(format!(
                    "gold chunk {} of pair for query {:?} is not in the corpus",
                    pair.gold_chunk_key, pair.query_id
                ))
            })?;
            Ok(DpoLine {
                prompt: dpo_prompt(&pair.query_text, &evidence.text),
                chosen: pair.chosen.clone(),
                rejected: pair.rejected.clone(),
            })
        })
        .collect()
}

/// Writes all pairs to one JSON Lines file.
pub fn export_dpo_file(pairs: &[PreferencePair], corpus: &ChunkedCorpus, path: &Path) -> Result<()> {
    if pairs.is_empty() {
        return Err(Error::Evaluation("no preference pairs to export".into()));
    }
    write_jsonl(path, &to_lines(pairs, corpus)?)
}

/// Reads an exported file back.
pub fn load_dpo_file(path: &Path) -> Result<Vec<DpoLine>> {
    read_jsonl(path)
}

/// The three split files.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitFiles {
    pub train: PathBuf,
    pub val: PathBuf,
    pub test: PathBuf,
}

/// Split sizes: floor(80%) train, floor(10%) validation, remainder test.
pub fn split_sizes(n: usize) -> (usize, usize, usize) {
    let train = n * 8 / 10;
    let val = n / 10;
    (train, val, n - train - val)
}

/// Shuffles the pairs with the seed and writes `pairs.train.jsonl`,
/// `pairs.val.jsonl`, and `pairs.test.jsonl` into `dir` (80/10/10).
pub fn export_dpo_splits(
    pairs: &[PreferencePair],
    corpus: &ChunkedCorpus,
    dir: &Path,
    seed: u64,
) -> Result<SplitFiles> {
    if pairs.is_empty() {
        return Err(Error::Evaluation("no preference pairs to export".into()));
    }
    let lines = to_lines(pairs, corpus)?;
    let mut order: Vec<usize> = (0..lines.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);

    let (n_train, n_val, _) = split_sizes(lines.len());
    let files = SplitFiles {
        train: dir.join("pairs.train.jsonl"),
        val: dir.join("pairs.val.jsonl"),
        test: dir.join("pairs.test.jsonl"),
    };
    let take = |range: std::ops::Range<usize>| -> Vec<DpoLine> {
        order[range].iter().map(|&i| lines[i].clone()).collect()
    };
    write_jsonl(&files.train, take(0..n_train))?;
    write_jsonl(&files.val, take(n_train..n_train + n_val))?;
    write_jsonl(&files.test, take(n_train + n_val..lines.len()))?;
    Ok(files)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{chunk_corpus, ChunkOptions, Document, WhitespaceTokenizer};
    use crate::embed::HashedNgramEmbedder;
    use crate::llm::{prompts::build_rationale_request, ScriptedChatProvider};
    use crate::selection::{pair_rationales, PairedEntry};

    const HIT_TEXT: &str = "the quick brown fox jumps over the lazy dog";
    const MISS_TEXT: &str = "turtles enjoy calm ponds and slow afternoons";

    fn corpus() -> ChunkedCorpus {
        let docs = vec![
            Document {
                doc_id: "gold-doc".into(),
                text: format!("{HIT_TEXT} {MISS_TEXT}"),
                metadata: None,
            },
            Document {
                doc_id: "unrelated".into(),
                text: "completely separate material about quarterly budgets".into(),
                metadata: None,
            },
        ];
        chunk_corpus(
            &docs,
            &ChunkOptions { chunk_size: 9, merge_short_tail: false },
            &WhitespaceTokenizer,
        )
        .unwrap()
        .0
    }

    fn qa() -> Vec<QaInstance> {
        vec![QaInstance {
            query_id: "q1".into(),
            query_text: "what does the fox do?".into(),
            gold_chunk_keys: vec![ChunkKey::new("gold-doc", 0)],
            gold_answer: Some("it jumps".into()),
        }]
    }

    fn scripted(response: &str, config: &PrefConfig) -> ScriptedChatProvider {
        let templates = PromptTemplates::default();
        let options = RationaleOptions {
            n_rationales: config.samples_per_query,
            temperature: config.temperature,
            max_tokens: config.max_tokens,
        };
        let request = build_rationale_request(&templates, "what does the fox do?", &options);
        let mut provider = ScriptedChatProvider::new();
        provider.insert(&request, response);
        provider
    }

    #[test]
    fn one_hit_one_miss_yields_one_pair() {
        let config = PrefConfig { samples_per_query: 2, ..PrefConfig::default() };
        let response =
            format!("<rationale_1>{HIT_TEXT}</rationale_1>\n<rationale_2>{MISS_TEXT}</rationale_2>");
        let provider = scripted(&response, &config);
        let (pairs, stats) = build_preference_pairs(
            &provider,
            &PromptTemplates::default(),
            &HashedNgramEmbedder::default(),
            &qa(),
            &corpus(),
            &config,
        )
        .unwrap();
        assert_eq!(pairs.len(), 1);
        assert_eq!(pairs[0].chosen, HIT_TEXT);
        assert_eq!(pairs[0].rejected, MISS_TEXT);
        assert_eq!(pairs[0].gold_chunk_key, ChunkKey::new("gold-doc", 0));
        assert_eq!(stats, PrefStats::default());
    }

    #[test]
    fn all_hits_counts_no_negatives() {
        let config = PrefConfig { samples_per_query: 2, ..PrefConfig::default() };
        let response = format!(
            "<rationale_1>{HIT_TEXT}</rationale_1>\n<rationale_2>the quick brown fox jumps</rationale_2>"
        );
        let provider = scripted(&response, &config);
        let (pairs, stats) = build_preference_pairs(
            &provider,
            &PromptTemplates::default(),
            &HashedNgramEmbedder::default(),
            &qa(),
            &corpus(),
            &config,
        )
        .unwrap();
        assert!(pairs.is_empty());
        assert_eq!(stats.no_negatives, vec!["q1".to_string()]);
        assert!(stats.no_positives.is_empty());
    }

    #[test]
    fn cross_product_respects_the_cap() {
        // 3 hits x 2 misses = 6 crossings, cap 4 -> 4 pairs.
        let config =
            PrefConfig { samples_per_query: 5, max_pairs_per_instance: 4, ..PrefConfig::default() };
        let response = format!(
            "<rationale_1>{HIT_TEXT}</rationale_1>\
             <rationale_2>the quick brown fox jumps over</rationale_2>\
             <rationale_3>quick brown fox jumps over the lazy</rationale_3>\
             <rationale_4>{MISS_TEXT}</rationale_4>\
             <rationale_5>turtles enjoy calm ponds</rationale_5>"
        );
        let provider = scripted(&response, &config);
        let (pairs, stats) = build_preference_pairs(
            &provider,
            &PromptTemplates::default(),
            &HashedNgramEmbedder::default(),
            &qa(),
            &corpus(),
            &config,
        )
        .unwrap();
        assert_eq!(pairs.len(), 4);
        assert!(stats.no_positives.is_empty() && stats.no_negatives.is_empty());
    }

    #[test]
    fn generation_failure_skips_and_counts() {
        let config = PrefConfig { samples_per_query: 2, ..PrefConfig::default() };
        let provider = ScriptedChatProvider::new(); // nothing scripted -> failure
        let (pairs, stats) = build_preference_pairs(
            &provider,
            &PromptTemplates::default(),
            &HashedNgramEmbedder::default(),
            &qa(),
            &corpus(),
            &config,
        )
        .unwrap();
        assert!(pairs.is_empty());
        assert_eq!(stats.generation_failures, vec!["q1".to_string()]);
    }

    #[test]
    fn labels_replay_under_pairing() {
        let config = PrefConfig { samples_per_query: 2, ..PrefConfig::default() };
        let response =
            format!("<rationale_1>{HIT_TEXT}</rationale_1>\n<rationale_2>{MISS_TEXT}</rationale_2>");
        let provider = scripted(&response, &config);
        let full = corpus();
        let (pairs, _) = build_preference_pairs(
            &provider,
            &PromptTemplates::default(),
            &HashedNgramEmbedder::default(),
            &qa(),
            &full,
            &config,
        )
        .unwrap();

        // Replay: restrict the corpus to the gold docs, run the selection
        // engine's pairing for chosen and rejected texts independently.
        let scoped = ChunkedCorpus::from_chunks(
            full.chunks().iter().filter(|c| c.doc_id == "gold-doc").cloned().collect(),
        )
        .unwrap();
        let embedder = HashedNgramEmbedder::default();
        for pair in &pairs {
            let replay = |text: &str| -> PairedEntry {
                let rationale =
                    Rationale { ordinal: 1, tag: String::new(), body: text.to_string() };
                pair_rationales(&[rationale], &scoped, &embedder).unwrap().remove(0)
            };
            assert_eq!(replay(&pair.chosen).key, pair.gold_chunk_key);
            assert_ne!(replay(&pair.rejected).key, pair.gold_chunk_key);
        }
    }

    #[test]
    fn samples_below_two_are_rejected() {
        let config = PrefConfig { samples_per_query: 1, ..PrefConfig::default() };
        let provider = ScriptedChatProvider::new();
        let err = build_preference_pairs(
            &provider,
            &PromptTemplates::default(),
            &HashedNgramEmbedder::default(),
            &qa(),
            &corpus(),
            &config,
        )
        .unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    fn sample_pairs(n: usize) -> Vec<PreferencePair> {
        (0..n)
            .map(|i| PreferencePair {
                query_id: format!("q{i}"),
                query_text: "what does the fox do?".into(),
                gold_chunk_key: ChunkKey::new("gold-doc", 0),
                chosen: format!("good rationale {i}"),
                rejected: format!("bad rationale {i}"),
            })
            .collect()
    }

    #[test]
    fn split_sizes_match_the_declared_rule() {
        assert_eq!(split_sizes(10), (8, 1, 1));
        assert_eq!(split_sizes(25), (20, 2, 3));
        assert_eq!(split_sizes(7), (5, 0, 2));
        assert_eq!(split_sizes(0), (0, 0, 0));
    }

    #[test]
    fn export_and_reload_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("pairs.jsonl");
        let pairs = sample_pairs(3);
        export_dpo_file(&pairs, &corpus(), &path).unwrap();
        let lines = load_dpo_file(&path).unwrap();
        assert_eq!(lines.len(), 3);
        assert!(lines[0].prompt.starts_with("Query:\nwhat does the fox do?"));
        assert!(lines[0].prompt.contains("Ground-truth evidence:\n"));
        assert!(lines[0].prompt.contains(HIT_TEXT), "prompt embeds the gold chunk text");
        assert_eq!(lines[1].chosen, "good rationale 1");
    }

    #[test]
    fn splits_partition_deterministically() {
        let dir = tempfile::tempdir().unwrap();
        let pairs = sample_pairs(10);
        let corpus = corpus();
        let files = export_dpo_splits(&pairs, &corpus, dir.path(), 17).unwrap();
        let train = load_dpo_file(&files.train).unwrap();
        let val = load_dpo_file(&files.val).unwrap();
        let test = load_dpo_file(&files.test).unwrap();
        assert_eq!((train.len(), val.len(), test.len()), (8, 1, 1));

        // Partition: every line appears exactly once across the splits.
        let mut seen: Vec<String> = train
            .iter()
            .chain(&val)
            .chain(&test)
            .map(|l| l.chosen.clone())
            .collect();
        seen.sort();
        let mut want: Vec<String> = pairs.iter().map(|p| p.chosen.clone()).collect();
        want.sort();
        assert_eq!(seen, want);

        // Same seed -> byte-identical files.
        let dir2 = tempfile::tempdir().unwrap();
        let files2 = export_dpo_splits(&pairs, &corpus, dir2.path(), 17).unwrap();
        assert_eq!(
            std::fs::read(&files.train).unwrap(),
            std::fs::read(&files2.train).unwrap()
        );
        assert_eq!(std::fs::read(&files.val).unwrap(), std::fs::read(&files2.val).unwrap());
        assert_eq!(std::fs::read(&files.test).unwrap(), std::fs::read(&files2.test).unwrap());
    }

    #[test]
    fn empty_exports_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        assert!(export_dpo_file(&[], &corpus(), &dir.path().join("x.jsonl")).is_err());
        assert!(export_dpo_splits(&[], &corpus(), dir.path(), 0).is_err());
    }
}
