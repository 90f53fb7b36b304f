//! `ragsel eval`: score a selection run against gold evidence and assemble
//! the evaluation report.
//!
//! The report covers, in one JSON file:
//! - per-query and aggregate precision / recall / F1 of the selector
//!   (verified runs are scored on the chunks the verifier kept);
//! - a dense-retrieval top-k baseline at a matched cutoff (the selector's
//!   mean final-set size, rounded half-up), plus any configured external
//!   ranking files;
//! - the efficiency sweep: the smallest k each baseline needs to reach the
//!   target recall, as a ratio of the selector's mean selected count;
//! - poison-detection metrics whenever the corpus carries injection labels
//!   (with no verification decisions, a no-defense run is assumed: every
//!   selected chunk counts as kept unflagged);
//! - optional generation accuracy, judging supplied answers against the
//!   gold answers with the chat provider.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::Deserialize;
use serde_json::json;

use ragsel_core::baseline::{matched_k, rank_chunks, save_rankings, RankedList};
use ragsel_core::corpus::{read_jsonl, ChunkKey, ChunkedCorpus, QaInstance};
use ragsel_core::eval::{
    aggregate, build_cp_section, cp_metrics, efficiency_sweep, generation_accuracy, Aggregate,
    BaselineSection, DetectionReport, EfficiencyEntry, EvalReport, GenerationAccuracy,
    QueryScore,
};
use ragsel_core::llm::{judge_answer, prompts::PromptTemplates};
use ragsel_core::poison::{detection_metrics, flag_type_breakdown};
use ragsel_core::selection::SelectionResult;
use ragsel_core::verify::{VerificationReport, VerifierDecision};

use super::{
    emit_status, ensure_out_dir, load_corpus, load_qa_validated, require_artifact,
    require_exists, Ctx, BASELINE_RANKINGS, EVAL_CSV, EVAL_REPORT, SELECTION, VERIFICATION,
};
use crate::manifest::record_artifacts;
use crate::providers::{build_chat, build_embedder};

/// Name under which the built-in dense retriever appears in the report.
const DENSE_BASELINE: &str = "dense-topk";

pub fn cmd_eval(ctx: &Ctx<'_>) -> Result<()> {
    let (corpus, layout) = load_corpus(ctx.config)?;
    let qa = load_qa_validated(ctx.config, &corpus, layout.as_ref())?;

    // --- selector artifacts -------------------------------------------------
    let selection_path = require_artifact(ctx.out_dir, SELECTION, "select")?;
    let selections: Vec<SelectionResult> = read_jsonl(&selection_path)?;
    let verification = load_verification(ctx)?;

    let golds: BTreeMap<String, BTreeSet<ChunkKey>> = qa
        .iter()
        .map(|inst| (inst.query_id.clone(), inst.gold_chunk_keys.iter().cloned().collect()))
        .collect();

    // Score what actually reaches the generator: the verifier's kept set
    // when a verification pass ran, the raw final set otherwise.
    let evaluated: BTreeMap<String, BTreeSet<ChunkKey>> = match &verification {
        Some(reports) => {
            let kept: BTreeMap<&str, &Vec<ChunkKey>> =
                reports.iter().map(|r| (r.query_id.as_str(), &r.kept)).collect();
            selections
                .iter()
                .map(|sel| {
                    let set = match kept.get(sel.query_id.as_str()) {
                        Some(keys) => keys.iter().cloned().collect(),
                        None => sel.final_set.iter().cloned().collect(),
                    };
                    (sel.query_id.clone(), set)
                })
                .collect()
        }
        None => selections
            .iter()
            .map(|sel| (sel.query_id.clone(), sel.final_set.iter().cloned().collect()))
            .collect(),
    };

    let (per_query, agg, excluded) = build_cp_section(&evaluated, &golds)?;
    let scored_golds: BTreeMap<String, BTreeSet<ChunkKey>> = golds
        .iter()
        .filter(|(_, gold)| !gold.is_empty())
        .map(|(id, gold)| (id.clone(), gold.clone()))
        .collect();

    // --- baselines at the matched cutoff ------------------------------------
    let sizes: Vec<usize> = per_query.iter().map(|q| q.n_selected).collect();
    let k = match ctx.config.eval.baseline_k {
        Some(k) => k,
        None => matched_k(&sizes)?,
    };

    ensure_out_dir(ctx.out_dir)?;
    let dense = compute_dense_rankings(ctx, &corpus, &qa)?;
    let rankings_path = ctx.out_dir.join(BASELINE_RANKINGS);
    save_rankings(&rankings_path, &dense)?;

    let mut ranking_sets: Vec<(String, Vec<RankedList>)> =
        vec![(DENSE_BASELINE.to_string(), dense)];
    for path in &ctx.config.eval.external_rankings {
        require_exists(path, "eval.external_rankings")?;
        let name = baseline_name(path);
        let lists = ragsel_core::baseline::load_rankings(path)?;
        ranking_sets.push((name, lists));
    }

    let mut baselines: Vec<BaselineSection> = Vec::new();
    let mut efficiency: Vec<EfficiencyEntry> = Vec::new();
    for (name, lists) in &ranking_sets {
        baselines.push(score_baseline(name, k, lists, &scored_golds)?);
        efficiency.push(efficiency_sweep(
            name,
            lists,
            &scored_golds,
            ctx.config.eval.target_recall,
            agg.n_selected,
        )?);
    }

    // --- poisoning defense ---------------------------------------------------
    let detection = detection_section(&corpus, &verification, &evaluated);

    // --- generation accuracy -------------------------------------------------
    let generation = judge_answers(ctx, &qa)?;

    let report = EvalReport {
        config_digest: Some(ctx.digest.to_string()),
        per_query,
        aggregate: agg,
        excluded_queries: excluded,
        baselines,
        efficiency,
        generation_accuracy: generation,
        detection,
    };

    // --- artifacts -----------------------------------------------------------
    let report_path = ctx.out_dir.join(EVAL_REPORT);
    let mut body = serde_json::to_string_pretty(&report).expect("report serializes");
    body.push('\n');
    std::fs::write(&report_path, body)
        .with_context(|| format!("cannot write {}", report_path.display()))?;

    let mut files: Vec<&Path> = vec![&rankings_path, &report_path];
    let csv_path = ctx.out_dir.join(EVAL_CSV);
    if ctx.config.eval.csv {
        write_csv(&csv_path, &report)?;
        files.push(&csv_path);
    }
    let artifacts = record_artifacts(ctx.out_dir, "eval", ctx.digest, &files)?;

    emit_status(
        "eval",
        ctx,
        &artifacts,
        json!({
            "queries_scored": report.per_query.len(),
            "queries_excluded": report.excluded_queries.len(),
            "matched_k": k,
            "f1": report.aggregate.f1,
            "recall": report.aggregate.recall,
        }),
    )
}

/// Verification reports keyed by the run's verifier setting: required when
/// the verifier is enabled (a verified run must have produced them),
/// optional leftovers are ignored when it is disabled.
fn load_verification(ctx: &Ctx<'_>) -> Result<Option<Vec<VerificationReport>>> {
    if !ctx.config.verifier.enabled {
        return Ok(None);
    }
    let path = require_artifact(ctx.out_dir, VERIFICATION, "select")
        .context("the verifier is enabled, so evaluation needs the verification decisions")?;
    Ok(Some(read_jsonl(&path)?))
}

fn compute_dense_rankings(
    ctx: &Ctx<'_>,
    corpus: &ChunkedCorpus,
    qa: &[QaInstance],
) -> Result<Vec<RankedList>> {
    let embedder = build_embedder(&ctx.config.embedder)?;
    let mut lists = Vec::with_capacity(qa.len());
    for inst in qa {
        lists.push(rank_chunks(&inst.query_id, &inst.query_text, corpus, embedder.as_ref())?);
    }
    lists.sort_by(|a, b| a.query_id.cmp(&b.query_id));
    Ok(lists)
}

fn baseline_name(path: &Path) -> String {
    path.file_stem()
        .map(|stem| stem.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.to_string_lossy().into_owned())
}

fn score_baseline(
    name: &str,
    k: usize,
    lists: &[RankedList],
    golds: &BTreeMap<String, BTreeSet<ChunkKey>>,
) -> Result<BaselineSection> {
    let by_id: BTreeMap<&str, &RankedList> =
        lists.iter().map(|list| (list.query_id.as_str(), list)).collect();
    let mut per_query = Vec::new();
    for (query_id, gold) in golds {
        let list = by_id.get(query_id.as_str()).ok_or_else(|| {
            anyhow::anyhow!("baseline {name:?} has no ranking for query {query_id:?}")
        })?;
        let selected: BTreeSet<ChunkKey> = list.top_k(k).into_iter().collect();
        let n_selected = selected.len();
        let metrics = cp_metrics(&selected, gold)
            .expect("scored golds are non-empty by construction");
        per_query.push(QueryScore {
            query_id: query_id.clone(),
            precision: metrics.precision,
            recall: metrics.recall,
            f1: metrics.f1,
            n_selected,
        });
    }
    let agg = aggregate(&per_query)?;
    Ok(BaselineSection { name: name.to_string(), k, per_query, aggregate: agg })
}

/// Builds the detection section whenever the corpus carries injection
/// labels. Without verification decisions, every evaluated chunk counts as
/// kept unflagged — the no-defense condition.
fn detection_section(
    corpus: &ChunkedCorpus,
    verification: &Option<Vec<VerificationReport>>,
    evaluated: &BTreeMap<String, BTreeSet<ChunkKey>>,
) -> Option<DetectionReport> {
    let labeled = corpus.chunks().iter().any(|chunk| chunk.poison_label == Some(true));
    if !labeled {
        return None;
    }
    let decisions: Vec<VerifierDecision> = match verification {
        Some(reports) => reports
            .iter()
            .flat_map(|report| report.decisions.iter().cloned())
            .collect(),
        None => evaluated
            .values()
            .flatten()
            .map(|key| VerifierDecision {
                chunk_key: key.clone(),
                flagged: false,
                flag_types: Vec::new(),
                chunk_summary: String::new(),
            })
            .collect(),
    };
    Some(DetectionReport {
        metrics: detection_metrics(decisions.iter(), corpus),
        flag_breakdown: flag_type_breakdown(decisions.iter(), corpus),
    })
}

/// One generated answer to judge.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct AnswerRecord {
    query_id: String,
    answer: String,
}

fn judge_answers(ctx: &Ctx<'_>, qa: &[QaInstance]) -> Result<Option<GenerationAccuracy>> {
    let Some(path) = &ctx.config.eval.answers else {
        return Ok(None);
    };
    require_exists(path, "eval.answers")?;
    let records: Vec<AnswerRecord> = read_jsonl(path)?;
    let mut answers: BTreeMap<&str, &str> = BTreeMap::new();
    for record in &records {
        if answers.insert(&record.query_id, &record.answer).is_some() {
            bail!(
                "{} has two answers for query {:?}",
                path.display(),
                record.query_id
            );
        }
    }

    let chat = build_chat(&ctx.config.chat)?;
    let templates = PromptTemplates::default();
    let mut judgments = Vec::new();
    for inst in qa {
        let (Some(reference), Some(answer)) =
            (&inst.gold_answer, answers.get(inst.query_id.as_str()))
        else {
            continue;
        };
        let verdict = judge_answer(chat.as_ref(), &templates, &inst.query_text, reference, answer)
            .with_context(|| format!("judging the answer for query {:?}", inst.query_id))?;
        judgments.push(verdict);
    }
    if judgments.is_empty() {
        bail!(
            "{} matched no QA instance with a gold answer, so nothing could be judged",
            path.display()
        );
    }
    Ok(Some(GenerationAccuracy {
        accuracy: generation_accuracy(&judgments)?,
        judged: judgments.len(),
        unjudged: qa.len() - judgments.len(),
    }))
}

fn write_csv(path: &Path, report: &EvalReport) -> Result<()> {
    let mut writer = csv::Writer::from_path(path)
        .with_context(|| format!("cannot write {}", path.display()))?;
    writer.write_record(["query_id", "precision", "recall", "f1", "n_selected"])?;
    for row in &report.per_query {
        writer.write_record([
            row.query_id.as_str(),
            &format_float(row.precision),
            &format_float(row.recall),
            &format_float(row.f1),
            &row.n_selected.to_string(),
        ])?;
    }
    write_aggregate_row(&mut writer, &report.aggregate)?;
    writer.flush()?;
    Ok(())
}

fn write_aggregate_row<W: std::io::Write>(
    writer: &mut csv::Writer<W>,
    agg: &Aggregate,
) -> Result<()> {
    writer.write_record([
        "(aggregate)",
        &format_float(agg.precision),
        &format_float(agg.recall),
        &format_float(agg.f1),
        &format_float(agg.n_selected),
    ])?;
    Ok(())
}

/// Shortest representation that round-trips through `f64`.
fn format_float(value: f64) -> String {
    format!("{value:?}")
}
