//! `ragsel poison`: inject adversarial chunks next to gold evidence.

use std::collections::BTreeSet;

use anyhow::Result;
use serde_json::json;

use ragsel_core::corpus::{save_chunks, save_qa, write_jsonl, WhitespaceTokenizer};
use ragsel_core::llm::prompts::PromptTemplates;
use ragsel_core::poison::{
    poison_corpus, FilePoisonSource, LlmPoisonSource, PoisonConfig, PoisonTextSource,
};

use super::{
    emit_status, ensure_out_dir, load_corpus, load_qa_validated, require_exists, Ctx,
    POISONED_CHUNKS, POISON_RECORDS, QA_POISONED,
};
use crate::config::PoisonSourceKind;
use crate::manifest::record_artifacts;
use crate::providers::build_chat;

pub fn cmd_poison(ctx: &Ctx<'_>) -> Result<()> {
    let (corpus, layout) = load_corpus(ctx.config)?;
    let qa = load_qa_validated(ctx.config, &corpus, layout.as_ref())?;

    let config = PoisonConfig {
        fraction: ctx.config.poisoning.fraction,
        seed: ctx.config.poison_seed(),
        per_instance: ctx.config.poisoning.per_instance,
    };

    // Both arms keep their provider alive for the duration of the run.
    let templates = PromptTemplates::default();
    let chat;
    let file_source;
    let llm_source;
    let source: &dyn PoisonTextSource = match ctx.config.poisoning.source {
        PoisonSourceKind::File => {
            let path = ctx
                .config
                .poisoning
                .file
                .as_deref()
                .expect("validated: poisoning.file is set");
            require_exists(path, "poisoning.file")?;
            file_source = FilePoisonSource::from_file(path)?;
            &file_source
        }
        PoisonSourceKind::Llm => {
            chat = build_chat(&ctx.config.chat)?;
            llm_source = LlmPoisonSource { provider: chat.as_ref(), templates: &templates };
            &llm_source
        }
    };

    let outcome = poison_corpus(&corpus, &qa, &config, source, &WhitespaceTokenizer)?;

    ensure_out_dir(ctx.out_dir)?;
    let chunks_path = ctx.out_dir.join(POISONED_CHUNKS);
    save_chunks(&chunks_path, &outcome.corpus)?;
    let qa_path = ctx.out_dir.join(QA_POISONED);
    save_qa(&qa_path, &outcome.qa)?;
    let records_path = ctx.out_dir.join(POISON_RECORDS);
    write_jsonl(&records_path, &outcome.records)?;
    let artifacts = record_artifacts(
        ctx.out_dir,
        "poison",
        ctx.digest,
        &[&chunks_path, &qa_path, &records_path],
    )?;

    let poisoned_queries: BTreeSet<&str> =
        outcome.records.iter().map(|r| r.query_id.as_str()).collect();
    emit_status(
        "poison",
        ctx,
        &artifacts,
        json!({
            "queries": qa.len(),
            "poisoned_queries": poisoned_queries.len(),
            "injected_chunks": outcome.records.len(),
            "seed": config.seed,
        }),
    )
}
