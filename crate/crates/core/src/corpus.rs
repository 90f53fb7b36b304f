//! Documents, evidence chunks, QA instances, chunking, and JSONL I/O.
//!
//! File formats (one JSON object per line, UTF-8, blank lines ignored):
//!
//! * documents: `{"doc_id", "text", "metadata"?}`
//! * chunked corpus: `{"doc_id", "chunk_index", "text", "token_count", "poison_label"?}`
//! * QA instances: `{"query_id", "query_text", "gold": [...], "gold_answer"?}`
//!   where each gold entry is either `{"doc_id", "chunk_index"}` or
//!   `{"doc_id", "char_start", "char_end"}` (a character span that resolves
//!   to every chunk it overlaps).
//!
//! Schema violations are reported with the file, 1-based line number, and the
//! offending field. Loading and saving round-trip structurally.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

// ---------------------------------------------------------------------------
// Core types
// ---------------------------------------------------------------------------

/// A source document as ingested.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Document {
    pub doc_id: String,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub metadata: Option<serde_json::Value>,
}

/// Stable identity of a chunk: `(doc_id, chunk_index)`.
///
/// Ordering is lexicographic on `doc_id`, then numeric on `chunk_index`;
/// this is the tie-break and iteration order used throughout the crate.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChunkKey {
    pub doc_id: String,
    pub chunk_index: usize,
}

impl ChunkKey {
    pub fn new(doc_id: impl Into<String>, chunk_index: usize) -> Self {
        ChunkKey { doc_id: doc_id.into(), chunk_index }
    }
}

impl fmt::Display for ChunkKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}#{}", self.doc_id, self.chunk_index)
    }
}

/// A contiguous token window of a document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvidenceChunk {
    pub doc_id: String,
    pub chunk_index: usize,
    pub text: String,
    pub token_count: usize,
    /// Ground-truth poison marker, present in evaluation corpora only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub poison_label: Option<bool>,
}

impl EvidenceChunk {
    pub fn key(&self) -> ChunkKey {
        ChunkKey::new(self.doc_id.clone(), self.chunk_index)
    }
}

/// One evaluation query with its gold evidence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QaInstance {
    pub query_id: String,
    pub query_text: String,
    pub gold_chunk_keys: Vec<ChunkKey>,
    pub gold_answer: Option<String>,
}

// ---------------------------------------------------------------------------
// Tokenizer contract
// ---------------------------------------------------------------------------

/// Byte and character extent of one token within its source text.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TokenSpan {
    pub byte_start: usize,
    pub byte_end: usize,
    pub char_start: usize,
    pub char_end: usize,
}

/// Token-counting contract used by the chunker. Implementations must return
/// non-overlapping spans in source order.
pub trait Tokenizer: Send + Sync {
    fn spans(&self, text: &str) -> Vec<TokenSpan>;

    fn count_tokens(&self, text: &str) -> usize {
        self.spans(text).len()
    }
}

/// Default tokenizer: maximal runs of non-whitespace characters.
#[derive(Debug, Clone, Copy, Default)]
pub struct WhitespaceTokenizer;

impl Tokenizer for WhitespaceTokenizer {
    fn spans(&self, text: &str) -> Vec<TokenSpan> {
        let mut spans = Vec::new();
        let mut current: Option<TokenSpan> = None;
        for (char_idx, (byte_idx, ch)) in text.char_indices().enumerate() {
            if ch.is_whitespace() {
                if let Some(span) = current.take() {
                    spans.push(span);
                }
            } else {
                let byte_end = byte_idx + ch.len_utf8();
                match current.as_mut() {
                    Some(span) => {
                        span.byte_end = byte_end;
                        span.char_end = char_idx + 1;
                    }
                    None => {
                        current = Some(TokenSpan {
                            byte_start: byte_idx,
                            byte_end,
                            char_start: char_idx,
                            char_end: char_idx + 1,
                        });
                    }
                }
            }
        }
        if let Some(span) = current {
            spans.push(span);
        }
        spans
    }
}

// ---------------------------------------------------------------------------
// Chunking
// ---------------------------------------------------------------------------

/// Chunker settings.
#[derive(Debug, Clone)]
pub struct ChunkOptions {
    /// Tokens per chunk (every chunk except possibly the last).
    pub chunk_size: usize,
    /// Merge a trailing remainder shorter than `chunk_size / 2` into the
    /// previous chunk instead of emitting a stub chunk.
    pub merge_short_tail: bool,
}

impl Default for ChunkOptions {
    fn default() -> Self {
        ChunkOptions { chunk_size: 512, merge_short_tail: true }
    }
}

/// Character extent of one chunk within its source document.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ChunkSpan {
    pub byte_start: usize,
    pub byte_end: usize,
    pub char_start: usize,
    pub char_end: usize,
}

/// Splits a document into fixed-size token windows, returning each chunk with
/// its source extent. Chunk text is the raw document slice spanning the
/// window's tokens, so token sequences round-trip under the same tokenizer.
pub fn chunk_document_with_spans(
    doc: &Document,
    opts: &ChunkOptions,
    tokenizer: &dyn Tokenizer,
) -> Result<Vec<(EvidenceChunk, ChunkSpan)>> {
    if opts.chunk_size == 0 {
        return Err(Error::Config("chunk_size must be at least 1".into()));
    }
    let tokens = tokenizer.spans(&doc.text);
    if tokens.is_empty() {
        return Err(Error::InvalidDocument {
            doc_id: doc.doc_id.clone(),
            reason: "text contains no tokens".into(),
        });
    }

    // Token index boundaries of each window: [start, end).
    let mut bounds: Vec<(usize, usize)> = (0..tokens.len())
        .step_by(opts.chunk_size)
        .map(|start| (start, (start + opts.chunk_size).min(tokens.len())))
        .collect();
    if opts.merge_short_tail && bounds.len() > 1 {
        let (last_start, last_end) = *bounds.last().expect("non-empty");
        let tail_len = last_end - last_start;
        if 2 * tail_len < opts.chunk_size {
            bounds.pop();
            bounds.last_mut().expect("non-empty").1 = last_end;
        }
    }

    let chunks = bounds
        .iter()
        .enumerate()
        .map(|(chunk_index, &(start, end))| {
            let first = &tokens[start];
            let last = &tokens[end - 1];
            let span = ChunkSpan {
                byte_start: first.byte_start,
                byte_end: last.byte_end,
                char_start: first.char_start,
                char_end: last.char_end,
            };
            let chunk = EvidenceChunk {
                doc_id: doc.doc_id.clone(),
                chunk_index,
                text: doc.text[span.byte_start..span.byte_end].to_string(),
                token_count: end - start,
                poison_label: None,
            };
            (chunk, span)
        })
        .collect();
    Ok(chunks)
}

/// [`chunk_document_with_spans`] without the span bookkeeping.
pub fn chunk_document(
    doc: &Document,
    opts: &ChunkOptions,
    tokenizer: &dyn Tokenizer,
) -> Result<Vec<EvidenceChunk>> {
    Ok(chunk_document_with_spans(doc, opts, tokenizer)?
        .into_iter()
        .map(|(chunk, _)| chunk)
        .collect())
}

/// Character spans of every chunk, per document. Needed to resolve
/// character-span gold references against a chunk layout.
pub type CorpusLayout = BTreeMap<String, Vec<ChunkSpan>>;

/// Chunks every document and indexes the result.
pub fn chunk_corpus(
    docs: &[Document],
    opts: &ChunkOptions,
    tokenizer: &dyn Tokenizer,
) -> Result<(ChunkedCorpus, CorpusLayout)> {
    let mut chunks = Vec::new();
    let mut layout = CorpusLayout::new();
    for doc in docs {
        let doc_chunks = chunk_document_with_spans(doc, opts, tokenizer)?;
        let spans: Vec<ChunkSpan> = doc_chunks.iter().map(|(_, span)| *span).collect();
        if layout.insert(doc.doc_id.clone(), spans).is_some() {
            return Err(Error::InvalidDocument {
                doc_id: doc.doc_id.clone(),
                reason: "duplicate doc_id".into(),
            });
        }
        chunks.extend(doc_chunks.into_iter().map(|(chunk, _)| chunk));
    }
    Ok((ChunkedCorpus::from_chunks(chunks)?, layout))
}

// ---------------------------------------------------------------------------
// Chunked corpus (indexed)
// ---------------------------------------------------------------------------

/// A validated set of chunks with key-based lookup. Per document, chunk
/// indices are dense `0..n`; keys are unique.
#[derive(Debug, Clone, PartialEq)]
pub struct ChunkedCorpus {
    chunks: Vec<EvidenceChunk>,
    by_key: BTreeMap<ChunkKey, usize>,
}

impl ChunkedCorpus {
    pub fn from_chunks(chunks: Vec<EvidenceChunk>) -> Result<Self> {
        let mut by_key = BTreeMap::new();
        let mut per_doc: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
        for (pos, chunk) in chunks.iter().enumerate() {
            if chunk.text.is_empty() {
                return Err(Error::InvalidDocument {
                    doc_id: chunk.doc_id.clone(),
                    reason: format!("chunk {} has empty text", chunk.chunk_index),
                });
            }
            if by_key.insert(chunk.key(), pos).is_some() {
                return Err(Error::InvalidDocument {
                    doc_id: chunk.doc_id.clone(),
                    reason: format!("duplicate chunk_index {}", chunk.chunk_index),
                });
            }
            per_doc.entry(&chunk.doc_id).or_default().push(chunk.chunk_index);
        }
        for (doc_id, mut indices) in per_doc {
            indices.sort_unstable();
            if indices.iter().enumerate().any(|(want, &got)| want != got) {
                return Err(Error::InvalidDocument {
                    doc_id: doc_id.to_string(),
                    reason: format!(
                        "chunk indices are not dense 0..{} (saw {:?})",
                        indices.len(),
                        indices
                    ),
                });
            }
        }
        Ok(ChunkedCorpus { chunks, by_key })
    }

    pub fn len(&self) -> usize {
        self.chunks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.chunks.is_empty()
    }

    /// Chunks in file/insertion order.
    pub fn chunks(&self) -> &[EvidenceChunk] {
        &self.chunks
    }

    pub fn get(&self, key: &ChunkKey) -> Option<&EvidenceChunk> {
        self.by_key.get(key).map(|&pos| &self.chunks[pos])
    }

    pub fn contains(&self, key: &ChunkKey) -> bool {
        self.by_key.contains_key(key)
    }

    /// All keys in `(doc_id, chunk_index)` order.
    pub fn sorted_keys(&self) -> impl Iterator<Item = &ChunkKey> {
        self.by_key.keys()
    }

    /// Existing index-neighbors (`chunk_index` ± 1) of `key` within the same
    /// document, clipped at document boundaries.
    pub fn neighbors(&self, key: &ChunkKey) -> Vec<ChunkKey> {
        let mut out = Vec::new();
        if let Some(prev) = key.chunk_index.checked_sub(1) {
            let candidate = ChunkKey::new(key.doc_id.clone(), prev);
            if self.contains(&candidate) {
                out.push(candidate);
            }
        }
        let candidate = ChunkKey::new(key.doc_id.clone(), key.chunk_index + 1);
        if self.contains(&candidate) {
            out.push(candidate);
        }
        out
    }

    pub fn into_chunks(self) -> Vec<EvidenceChunk> {
        self.chunks
    }
}

// ---------------------------------------------------------------------------
// JSONL I/O
// ---------------------------------------------------------------------------

fn read_jsonl_numbered<T: DeserializeOwned>(path: &Path) -> Result<Vec<(usize, T)>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut records = Vec::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let record: T = serde_json::from_str(&line)
            .map_err(|e| Error::schema(path, line_no, e.to_string()))?;
        records.push((line_no, record));
    }
    Ok(records)
}

/// Reads one JSON record per line (blank lines skipped); parse errors name
/// the file and 1-based line.
pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    Ok(read_jsonl_numbered(path)?.into_iter().map(|(_, record)| record).collect())
}

/// Writes one JSON record per line.
pub fn write_jsonl<T: Serialize>(path: &Path, records: impl IntoIterator<Item = T>) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = std::io::BufWriter::new(file);
    for record in records {
        let line = serde_json::to_string(&record)
            .map_err(|e| Error::schema(path, 0, format!("serialization failed: {e}")))?;
        writeln!(out, "{line}").map_err(|e| Error::io(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}

pub fn load_documents(path: &Path) -> Result<Vec<Document>> {
    let records: Vec<(usize, Document)> = read_jsonl_numbered(path)?;
    let mut seen = BTreeSet::new();
    for (line, doc) in &records {
        if doc.doc_id.is_empty() {
            return Err(Error::schema(path, *line, "doc_id must be non-empty"));
        }
        if !seen.insert(doc.doc_id.clone()) {
            return Err(Error::schema(path, *line, format!("duplicate doc_id `{}`", doc.doc_id)));
        }
    }
    Ok(records.into_iter().map(|(_, doc)| doc).collect())
}

pub fn save_documents(path: &Path, docs: &[Document]) -> Result<()> {
    write_jsonl(path, docs)
}

pub fn load_chunks(path: &Path) -> Result<ChunkedCorpus> {
    let records: Vec<(usize, EvidenceChunk)> = read_jsonl_numbered(path)?;
    for (line, chunk) in &records {
        if chunk.doc_id.is_empty() {
            return Err(Error::schema(path, *line, "doc_id must be non-empty"));
        }
        if chunk.text.is_empty() {
            return Err(Error::schema(path, *line, "text must be non-empty"));
        }
        if chunk.token_count == 0 {
            return Err(Error::schema(path, *line, "token_count must be at least 1"));
        }
    }
    ChunkedCorpus::from_chunks(records.into_iter().map(|(_, c)| c).collect())
}

pub fn save_chunks(path: &Path, corpus: &ChunkedCorpus) -> Result<()> {
    write_jsonl(path, corpus.chunks())
}

// --- QA wire format ---------------------------------------------------------

/// Gold reference as written in QA files: either a chunk key or a character
/// span within a document.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum GoldRef {
    Chunk { doc_id: String, chunk_index: usize },
    Span { doc_id: String, char_start: usize, char_end: usize },
}

impl Serialize for GoldRef {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        use serde::ser::SerializeMap;
        match self {
            GoldRef::Chunk { doc_id, chunk_index } => {
                let mut map = serializer.serialize_map(Some(2))?;
                map.serialize_entry("doc_id", doc_id)?;
                map.serialize_entry("chunk_index", chunk_index)?;
                map.end()
            }
            GoldRef::Span { doc_id, char_start, char_end } => {
                let mut map = serializer.serialize_map(Some(3))?;
                map.serialize_entry("doc_id", doc_id)?;
                map.serialize_entry("char_start", char_start)?;
                map.serialize_entry("char_end", char_end)?;
                map.end()
            }
        }
    }
}

impl<'de> Deserialize<'de> for GoldRef {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        use serde::de::Error as _;
        let map = serde_json::Map::deserialize(deserializer)?;
        let mut doc_id = None;
        let mut chunk_index = None;
        let mut char_start = None;
        let mut char_end = None;
        for (field, value) in &map {
            match field.as_str() {
                "doc_id" => {
                    doc_id = Some(
                        value
                            .as_str()
                            .ok_or_else(|| D::Error::custom("field `doc_id` must be a string"))?
                            .to_string(),
                    );
                }
                "chunk_index" => chunk_index = Some(parse_index::<D>(value, "chunk_index")?),
                "char_start" => char_start = Some(parse_index::<D>(value, "char_start")?),
                "char_end" => char_end = Some(parse_index::<D>(value, "char_end")?),
                other => {
                    return Err(D::Error::custom(format!("unknown field `{other}` in gold entry")));
                }
            }
        }
        let doc_id = doc_id.ok_or_else(|| D::Error::custom("missing field `doc_id` in gold entry"))?;
        match (chunk_index, char_start, char_end) {
            (Some(chunk_index), None, None) => Ok(GoldRef::Chunk { doc_id, chunk_index }),
            (None, Some(char_start), Some(char_end)) => {
                if char_end <= char_start {
                    return Err(D::Error::custom("field `char_end` must exceed `char_start`"));
                }
                Ok(GoldRef::Span { doc_id, char_start, char_end })
            }
            (None, Some(_), None) => Err(D::Error::custom("missing field `char_end` in gold entry")),
            (None, None, Some(_)) => Err(D::Error::custom("missing field `char_start` in gold entry")),
            (None, None, None) => Err(D::Error::custom(
                "gold entry needs either `chunk_index` or `char_start`/`char_end`",
            )),
            _ => Err(D::Error::custom(
                "gold entry mixes `chunk_index` with `char_start`/`char_end`",
            )),
        }
    }
}

fn parse_index<'de, D: serde::Deserializer<'de>>(
    value: &serde_json::Value,
    field: &str,
) -> std::result::Result<usize, D::Error> {
    use serde::de::Error as _;
    value
        .as_u64()
        .map(|v| v as usize)
        .ok_or_else(|| D::Error::custom(format!("field `{field}` must be a non-negative integer")))
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct QaRecord {
    query_id: String,
    query_text: String,
    gold: Vec<GoldRef>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    gold_answer: Option<String>,
}

/// Context needed to resolve and validate gold references.
#[derive(Clone, Copy)]
pub struct GoldResolver<'a> {
    pub corpus: &'a ChunkedCorpus,
    /// Required only when the QA file contains character-span golds.
    pub layout: Option<&'a CorpusLayout>,
}

/// Loads QA instances. With a resolver, every gold key is validated against
/// the corpus and character-span golds are resolved to all overlapping
/// chunks; without one, span golds are rejected and keys pass unvalidated.
pub fn load_qa(path: &Path, resolver: Option<GoldResolver<'_>>) -> Result<Vec<QaInstance>> {
    let records: Vec<(usize, QaRecord)> = read_jsonl_numbered(path)?;
    let mut seen = BTreeSet::new();
    let mut instances = Vec::new();
    for (line, record) in records {
        if record.query_id.is_empty() {
            return Err(Error::schema(path, line, "query_id must be non-empty"));
        }
        if !seen.insert(record.query_id.clone()) {
            return Err(Error::schema(path, line, format!("duplicate query_id `{}`", record.query_id)));
        }
        if record.gold.is_empty() {
            return Err(Error::schema(path, line, "gold must be non-empty"));
        }
        let mut keys = BTreeSet::new();
        for gold in &record.gold {
            match gold {
                GoldRef::Chunk { doc_id, chunk_index } => {
                    let key = ChunkKey::new(doc_id.clone(), *chunk_index);
                    if let Some(resolver) = resolver {
                        if !resolver.corpus.contains(&key) {
                            return Err(Error::schema(
                                path,
                                line,
                                format!("gold chunk {key} does not exist in the corpus"),
                            ));
                        }
                    }
                    keys.insert(key);
                }
                GoldRef::Span { doc_id, char_start, char_end } => {
                    let resolver = resolver.ok_or_else(|| {
                        Error::schema(path, line, "char-span gold requires corpus context to resolve")
                    })?;
                    let layout = resolver.layout.ok_or_else(|| {
                        Error::schema(path, line, "char-span gold requires a chunk layout to resolve")
                    })?;
                    let spans = layout.get(doc_id).ok_or_else(|| {
                        Error::schema(path, line, format!("gold references unknown doc_id `{doc_id}`"))
                    })?;
                    let overlapping: Vec<ChunkKey> = spans
                        .iter()
                        .enumerate()
                        .filter(|(_, span)| span.char_start < *char_end && *char_start < span.char_end)
                        .map(|(chunk_index, _)| ChunkKey::new(doc_id.clone(), chunk_index))
                        .collect();
                    if overlapping.is_empty() {
                        return Err(Error::schema(
                            path,
                            line,
                            format!("char span {char_start}..{char_end} in `{doc_id}` overlaps no chunk"),
                        ));
                    }
                    keys.extend(overlapping);
                }
            }
        }
        instances.push(QaInstance {
            query_id: record.query_id,
            query_text: record.query_text,
            gold_chunk_keys: keys.into_iter().collect(),
            gold_answer: record.gold_answer,
        });
    }
    Ok(instances)
}

/// Saves QA instances with golds in chunk-key form.
pub fn save_qa(path: &Path, instances: &[QaInstance]) -> Result<()> {
    write_jsonl(
        path,
        instances.iter().map(|inst| QaRecord {
            query_id: inst.query_id.clone(),
            query_text: inst.query_text.clone(),
            gold: inst
                .gold_chunk_keys
                .iter()
                .map(|key| GoldRef::Chunk { doc_id: key.doc_id.clone(), chunk_index: key.chunk_index })
                .collect(),
            gold_answer: inst.gold_answer.clone(),
        }),
    )
}

// ---------------------------------------------------------------------------
// Tests
// ---------------------------------------------------------------------------
