//! `ragsel build-prefs`: preference pairs for tuning the rationale
//! generator.
//!
//! Samples several candidate rationales per query, scores each against the
//! corpus (does its best-matching chunk hit the gold evidence?), and crosses
//! hits with misses into chosen/rejected pairs. Exported either as a single
//! `pairs.jsonl` or as shuffled train/val/test splits.

use std::path::Path;

use anyhow::{Context, Result};
use serde::Serialize;
use serde_json::json;

use ragsel_core::llm::prompts::PromptTemplates;
use ragsel_core::prefdata::{
    build_preference_pairs, export_dpo_file, export_dpo_splits, PrefConfig, PrefStats,
};

use super::{emit_status, ensure_out_dir, load_corpus, load_qa_validated, Ctx, PREF_PAIRS, PREF_STATS};
use crate::manifest::record_artifacts;
use crate::providers::build_providers;

/// `prefs_stats.json`: how pair construction went.
#[derive(Debug, Serialize)]
struct StatsReport<'a> {
    config_digest: &'a str,
    pairs: usize,
    samples_per_query: usize,
    split: bool,
    stats: &'a PrefStats,
}

pub fn cmd_build_prefs(ctx: &Ctx<'_>) -> Result<()> {
    let (corpus, layout) = load_corpus(ctx.config)?;
    let qa = load_qa_validated(ctx.config, &corpus, layout.as_ref())?;
    let (chat, embedder) = build_providers(ctx.config)?;

    let config = PrefConfig {
        samples_per_query: ctx.config.prefs.samples_per_query,
        temperature: ctx.config.prefs.temperature,
        max_tokens: ctx.config.prefs.max_tokens,
        max_pairs_per_instance: ctx.config.prefs.max_pairs_per_instance,
    };
    let templates = PromptTemplates::default();
    let (pairs, stats) =
        build_preference_pairs(chat.as_ref(), &templates, embedder.as_ref(), &qa, &corpus, &config)?;

    ensure_out_dir(ctx.out_dir)?;
    let mut files: Vec<std::path::PathBuf> = Vec::new();
    if ctx.config.prefs.split {
        let split_files = export_dpo_splits(&pairs, &corpus, ctx.out_dir, ctx.config.prefs_seed())?;
        files.extend([split_files.train, split_files.val, split_files.test]);
    } else {
        let path = ctx.out_dir.join(PREF_PAIRS);
        export_dpo_file(&pairs, &corpus, &path)?;
        files.push(path);
    }

    let stats_path = ctx.out_dir.join(PREF_STATS);
    let report = StatsReport {
        config_digest: ctx.digest,
        pairs: pairs.len(),
        samples_per_query: config.samples_per_query,
        split: ctx.config.prefs.split,
        stats: &stats,
    };
    let mut body = serde_json::to_string_pretty(&report).expect("stats serialize");
    body.push('\n');
    std::fs::write(&stats_path, body)
        .with_context(|| format!("cannot write {}", stats_path.display()))?;
    files.push(stats_path);

    let file_refs: Vec<&Path> = files.iter().map(|p| p.as_path()).collect();
    let artifacts = record_artifacts(ctx.out_dir, "build-prefs", ctx.digest, &file_refs)?;

    emit_status(
        "build-prefs",
        ctx,
        &artifacts,
        json!({
            "queries": qa.len(),
            "pairs": pairs.len(),
        }),
    )
}
