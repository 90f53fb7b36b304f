//! `ragsel chunk`: split documents into fixed-size chunks.

use anyhow::{anyhow, Result};
use serde_json::json;

use ragsel_core::corpus::{chunk_corpus, load_documents, save_chunks, ChunkOptions, WhitespaceTokenizer};

use super::{emit_status, ensure_out_dir, require_exists, Ctx, CHUNKS};
use crate::manifest::record_artifacts;

pub fn cmd_chunk(ctx: &Ctx<'_>) -> Result<()> {
    let path = ctx
        .config
        .corpus
        .documents
        .as_deref()
        .ok_or_else(|| anyhow!("no documents configured: set corpus.documents"))?;
    require_exists(path, "corpus.documents")?;
    let docs = load_documents(path)?;

    let opts = ChunkOptions {
        chunk_size: ctx.config.corpus.chunk_size,
        merge_short_tail: ctx.config.corpus.merge_short_tail,
    };
    let (corpus, _layout) = chunk_corpus(&docs, &opts, &WhitespaceTokenizer)?;

    ensure_out_dir(ctx.out_dir)?;
    let out_path = ctx.out_dir.join(CHUNKS);
    save_chunks(&out_path, &corpus)?;
    let artifacts = record_artifacts(ctx.out_dir, "chunk", ctx.digest, &[&out_path])?;

    emit_status(
        "chunk",
        ctx,
        &artifacts,
        json!({
            "documents": docs.len(),
            "chunks": corpus.len(),
            "chunk_size": opts.chunk_size,
        }),
    )
}
