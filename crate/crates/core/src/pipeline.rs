//! Per-query orchestration: rationales → selection → optional verification.
//!
//! One [`run_query`] call is everything the pipeline does for a single
//! query. [`run_queries`] fans runs out over a bounded worker pool —
//! queries are independent, so the pool size only bounds concurrent
//! provider calls (it is the run's rate limiter); within one query,
//! verification stays strictly sequential because of its summary chain.
//! Results come back sorted by query id so downstream reports are
//! deterministic for any worker count.

use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::corpus::{ChunkedCorpus, EvidenceChunk, QaInstance};
use crate::embed::EmbeddingProvider;
use crate::error::{Error, Result};
use crate::llm::{generate_rationales, prompts::PromptTemplates, ChatProvider, Rationale, RationaleOptions};
use crate::selection::{select_evidence, SelectionConfig, SelectionResult};
use crate::verify::{verify_all, VerificationReport, VerifierConfig};

/// Everything one query's pipeline pass needs.
#[derive(Debug, Clone)]
pub struct PipelineConfig {
    pub rationale: RationaleOptions,
    pub selection: SelectionConfig,
    /// `Some` runs the verifier over the selected set.
    pub verifier: Option<VerifierConfig>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            rationale: RationaleOptions::default(),
            selection: SelectionConfig::default(),
            verifier: Some(VerifierConfig::default()),
        }
    }
}

/// One query's full pipeline output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryRun {
    pub query_id: String,
    pub rationales: Vec<Rationale>,
    pub selection: SelectionResult,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub verification: Option<VerificationReport>,
}

/// Runs rationale generation, evidence selection, and (optionally) the
/// verifier for one query.
pub fn run_query(
    chat: &dyn ChatProvider,
    templates: &PromptTemplates,
    embedder: &dyn EmbeddingProvider,
    corpus: &ChunkedCorpus,
    instance: &QaInstance,
    config: &PipelineConfig,
) -> Result<QueryRun> {
    let rationales =
        generate_rationales(chat, templates, &instance.query_text, &config.rationale).map_err(
            |err| Error::InvalidQuery {
                query_id: instance.query_id.clone(),
                reason: format!("rationale generation failed: {err}"),
            },
        )?;

    let selection = select_evidence(
        &instance.query_id,
        &rationales,
        corpus,
        embedder,
        &config.selection,
    )?;

    let verification = match &config.verifier {
        Some(verifier_config) => {
            let chunks: Vec<&EvidenceChunk> = selection
                .final_set
                .iter()
                .map(|key| {
                    corpus.get(key).ok_or_else(|| {
                        Error::Selection(format!("selected chunk {key} is not in the corpus"))
                    })
                })
                .collect::<Result<_>>()?;
            let outcome = verify_all(
                chat,
                templates,
                &instance.query_text,
                &rationales,
                &chunks,
                verifier_config,
            )?;
            Some(VerificationReport::new(&instance.query_id, outcome))
        }
        None => None,
    };

    Ok(QueryRun { query_id: instance.query_id.clone(), rationales, selection, verification })
}

/// Runs every query over at most `workers` threads and returns the runs
/// sorted by query id. The first failure (in QA-list order) aborts the
/// run; the worker count never changes results, only wall time.
pub fn run_queries(
    chat: &dyn ChatProvider,
    templates: &PromptTemplates,
    embedder: &dyn EmbeddingProvider,
    corpus: &ChunkedCorpus,
    qa: &[QaInstance],
    config: &PipelineConfig,
    workers: usize,
) -> Result<Vec<QueryRun>> {
    if qa.is_empty() {
        return Err(Error::Config("no queries to run".into()));
    }
    let workers = workers.max(1).min(qa.len());

    let mut slots: Vec<Option<Result<QueryRun>>> = Vec::new();
    if workers == 1 {
        for instance in qa {
            slots.push(Some(run_query(chat, templates, embedder, corpus, instance, config)));
        }
    } else {
        slots.resize_with(qa.len(), || None);
        let next = Mutex::new(0usize);
        let results = Mutex::new(Vec::<(usize, Result<QueryRun>)>::new());
        std::thread::scope(|scope| {
            for _ in 0..workers {
                scope.spawn(|| loop {
                    let idx = {
                        let mut guard = next.lock().expect("queue lock");
                        let idx = *guard;
                        if idx >= qa.len() {
                            break;
                        }
                        *guard += 1;
                        idx
                    };
                    let run = run_query(chat, templates, embedder, corpus, &qa[idx], config);
                    results.lock().expect("results lock").push((idx, run));
                });
            }
        });
        for (idx, run) in results.into_inner().expect("results lock") {
            slots[idx] = Some(run);
        }
    }

    let mut runs = Vec::with_capacity(qa.len());
    for slot in slots {
        runs.push(slot.expect("every query processed")?);
    }
    runs.sort_by(|a, b| a.query_id.cmp(&b.query_id));
    Ok(runs)
}
