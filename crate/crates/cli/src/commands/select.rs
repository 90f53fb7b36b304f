//! `ragsel select`: rationale generation, evidence selection, and the
//! optional verification pass, for every QA query.

use std::path::Path;

use anyhow::Result;
use serde_json::json;

use ragsel_core::corpus::write_jsonl;
use ragsel_core::llm::{prompts::PromptTemplates, RationaleOptions};
use ragsel_core::pipeline::{run_queries, PipelineConfig, QueryRun};
use ragsel_core::selection::SelectionConfig;
use ragsel_core::verify::{VerifierConfig, VerifyOrder};

use super::{
    emit_status, ensure_out_dir, load_corpus, load_qa_validated, Ctx, RationaleRecord,
    RATIONALES, SELECTION, VERIFICATION,
};
use crate::config::{RunConfig, VerifyOrderSetting};
use crate::manifest::record_artifacts;
use crate::providers::build_providers;

/// The core pipeline settings this configuration asks for.
pub fn pipeline_config(config: &RunConfig) -> PipelineConfig {
    PipelineConfig {
        rationale: RationaleOptions {
            n_rationales: config.selection.n_rationales,
            temperature: config.selection.rationale_temperature,
            max_tokens: config.selection.rationale_max_tokens,
        },
        selection: SelectionConfig {
            tau: config.selection.tau,
            expansion: config.selection.expansion,
        },
        verifier: config.verifier.enabled.then_some(VerifierConfig {
            order: match config.verifier.order {
                VerifyOrderSetting::Corpus => VerifyOrder::Corpus,
                VerifyOrderSetting::Given => VerifyOrder::Given,
            },
            max_chunk_chars: config.verifier.max_chunk_chars,
        }),
    }
}

pub fn cmd_select(ctx: &Ctx<'_>) -> Result<()> {
    let (corpus, layout) = load_corpus(ctx.config)?;
    let qa = load_qa_validated(ctx.config, &corpus, layout.as_ref())?;
    let (chat, embedder) = build_providers(ctx.config)?;
    let templates = PromptTemplates::default();
    let config = pipeline_config(ctx.config);

    let runs = run_queries(
        chat.as_ref(),
        &templates,
        embedder.as_ref(),
        &corpus,
        &qa,
        &config,
        ctx.config.run.workers,
    )?;

    ensure_out_dir(ctx.out_dir)?;
    let artifacts = write_run_artifacts(ctx, &runs)?;

    let verified = runs.iter().filter(|run| run.verification.is_some()).count();
    emit_status(
        "select",
        ctx,
        &artifacts,
        json!({
            "queries": runs.len(),
            "verified_queries": verified,
            "mean_final_size": mean_final_size(&runs),
        }),
    )
}

fn write_run_artifacts(ctx: &Ctx<'_>, runs: &[QueryRun]) -> Result<Vec<String>> {
    let rationales_path = ctx.out_dir.join(RATIONALES);
    write_jsonl(
        &rationales_path,
        runs.iter().map(|run| RationaleRecord {
            query_id: run.query_id.clone(),
            rationales: run.rationales.clone(),
        }),
    )?;

    let selection_path = ctx.out_dir.join(SELECTION);
    write_jsonl(&selection_path, runs.iter().map(|run| &run.selection))?;

    let mut files: Vec<&Path> = vec![&rationales_path, &selection_path];
    let verification_path = ctx.out_dir.join(VERIFICATION);
    let reports: Vec<_> = runs.iter().filter_map(|run| run.verification.as_ref()).collect();
    if !reports.is_empty() {
        write_jsonl(&verification_path, reports)?;
        files.push(&verification_path);
    }
    record_artifacts(ctx.out_dir, "select", ctx.digest, &files)
}

fn mean_final_size(runs: &[QueryRun]) -> f64 {
    if runs.is_empty() {
        return 0.0;
    }
    runs.iter().map(|run| run.selection.final_set.len()).sum::<usize>() as f64 / runs.len() as f64
}
