//! Subcommand implementations and the helpers they share.
//!
//! Commands communicate through files in the output directory. The
//! producing command for each artifact:
//!
//! | artifact                  | producer      |
//! |---------------------------|---------------|
//! | `chunks.jsonl`            | `chunk`       |
//! | `rationales.jsonl`        | `select`      |
//! | `selection.jsonl`         | `select`      |
//! | `verification.jsonl`      | `select` (verifier enabled) |
//! | `poisoned_chunks.jsonl`   | `poison`      |
//! | `qa_poisoned.jsonl`       | `poison`      |
//! | `poison_records.jsonl`    | `poison`      |
//! | `baseline_rankings.jsonl` | `eval`        |
//! | `eval_report.json` (+csv) | `eval`        |
//! | `pairs*.jsonl`, `prefs_stats.json` | `build-prefs` |
//!
//! `manifest.json` indexes them all with config digests and content hashes.

mod chunk;
mod eval;
mod poison;
mod prefs;
mod select;

pub use chunk::cmd_chunk;
pub use eval::cmd_eval;
pub use poison::cmd_poison;
pub use prefs::cmd_build_prefs;
pub use select::cmd_select;

use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use serde::{Deserialize, Serialize};

use ragsel_core::corpus::{
    chunk_corpus, load_chunks, load_documents, load_qa, ChunkOptions, ChunkedCorpus,
    CorpusLayout, GoldResolver, QaInstance, WhitespaceTokenizer,
};
use ragsel_core::llm::Rationale;

use crate::config::RunConfig;

pub const CHUNKS: &str = "chunks.jsonl";
pub const RATIONALES: &str = "rationales.jsonl";
pub const SELECTION: &str = "selection.jsonl";
pub const VERIFICATION: &str = "verification.jsonl";
pub const BASELINE_RANKINGS: &str = "baseline_rankings.jsonl";
pub const POISONED_CHUNKS: &str = "poisoned_chunks.jsonl";
pub const QA_POISONED: &str = "qa_poisoned.jsonl";
pub const POISON_RECORDS: &str = "poison_records.jsonl";
pub const EVAL_REPORT: &str = "eval_report.json";
pub const EVAL_CSV: &str = "eval_report.csv";
pub const PREF_PAIRS: &str = "pairs.jsonl";
pub const PREF_STATS: &str = "prefs_stats.json";

/// Everything a command needs: the resolved config, its digest, and the
/// output directory (already created).
pub struct Ctx<'a> {
    pub config: &'a RunConfig,
    pub digest: &'a str,
    pub out_dir: &'a Path,
}

/// Per-query rationales as written to `rationales.jsonl`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RationaleRecord {
    pub query_id: String,
    pub rationales: Vec<Rationale>,
}

// ---------------------------------------------------------------------------
// Input loading
// ---------------------------------------------------------------------------

/// The chunked corpus for selection, poisoning, and evaluation: the
/// pre-chunked artifact when `corpus.chunks` is set, otherwise the
/// documents chunked in memory (which also yields the span layout needed
/// to resolve character-span golds).
pub fn load_corpus(config: &RunConfig) -> Result<(ChunkedCorpus, Option<CorpusLayout>)> {
    if let Some(path) = &config.corpus.chunks {
        require_exists(path, "corpus.chunks")?;
        let corpus = load_chunks(path)?;
        return Ok((corpus, None));
    }
    if let Some(path) = &config.corpus.documents {
        require_exists(path, "corpus.documents")?;
        let docs = load_documents(path)?;
        let opts = ChunkOptions {
            chunk_size: config.corpus.chunk_size,
            merge_short_tail: config.corpus.merge_short_tail,
        };
        let (corpus, layout) = chunk_corpus(&docs, &opts, &WhitespaceTokenizer)?;
        return Ok((corpus, Some(layout)));
    }
    bail!(
        "no corpus configured: set corpus.chunks (a chunked corpus, e.g. the \
         chunks.jsonl written by `ragsel chunk`) or corpus.documents"
    );
}

/// QA instances with golds validated against (and spans resolved onto) the
/// given corpus.
pub fn load_qa_validated(
    config: &RunConfig,
    corpus: &ChunkedCorpus,
    layout: Option<&CorpusLayout>,
) -> Result<Vec<QaInstance>> {
    let path = config
        .corpus
        .qa
        .as_deref()
        .ok_or_else(|| anyhow!("no QA file configured: set corpus.qa"))?;
    require_exists(path, "corpus.qa")?;
    load_qa(path, Some(GoldResolver { corpus, layout })).map_err(|err| {
        let message = err.to_string();
        if layout.is_none() && message.contains("chunk layout") {
            anyhow!(err).context(
                "character-span golds need the document text to map onto chunks: \
                 point corpus.documents at the raw documents (instead of, or in \
                 addition to, corpus.chunks), or rewrite the golds in \
                 {\"doc_id\", \"chunk_index\"} form",
            )
        } else {
            anyhow!(err)
        }
    })
}

/// Errors when a configured input path does not exist on disk.
pub fn require_exists(path: &Path, field: &str) -> Result<()> {
    if !path.exists() {
        bail!("{field} points at {}, which does not exist", path.display());
    }
    Ok(())
}

/// Locates an artifact a command depends on, naming the producer when it is
/// missing.
pub fn require_artifact(dir: &Path, name: &str, producer: &str) -> Result<PathBuf> {
    let path = dir.join(name);
    if !path.exists() {
        bail!(
            "missing artifact {name} in {}: run `ragsel {producer}` first",
            dir.display()
        );
    }
    Ok(path)
}

// ---------------------------------------------------------------------------
// Status output
// ---------------------------------------------------------------------------

/// Prints the one-line JSON status a successful command ends with.
pub fn emit_status(
    command: &str,
    ctx: &Ctx<'_>,
    artifacts: &[String],
    extra: serde_json::Value,
) -> Result<()> {
    let mut status = serde_json::Map::new();
    status.insert("command".into(), command.into());
    status.insert(
        "output_dir".into(),
        ctx.out_dir.to_string_lossy().into_owned().into(),
    );
    status.insert("config_digest".into(), ctx.digest.into());
    status.insert("artifacts".into(), serde_json::to_value(artifacts)?);
    if let serde_json::Value::Object(extra) = extra {
        for (key, value) in extra {
            status.insert(key, value);
        }
    }
    println!("{}", serde_json::Value::Object(status));
    Ok(())
}

/// Creates the output directory (and parents) if needed.
pub fn ensure_out_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)
        .with_context(|| format!("cannot create output directory {}", dir.display()))
}
