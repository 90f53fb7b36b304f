//! Chat providers, rationale generation, and answer judging.
//!
//! Rationales are the pipeline's plan for *why* evidence should be
//! retrieved: short, tagged strategies the selection engine pairs against
//! chunks. They come back from the model in numbered XML-style blocks
//! (`<rationale_1>[tag] body</rationale_1>`) which [`parse_rationales`]
//! turns into ordered [`Rationale`] values, renumbering sparse ordinals and
//! truncating overlong responses rather than failing.
//!
//! The [`ScriptedChatProvider`] replays canned responses keyed by a digest
//! of the prompts, which makes every LLM-dependent pipeline stage
//! reproducible offline.

#[cfg(feature = "http")]
mod http;
pub mod prompts;

#[cfg(feature = "http")]
pub use http::{HttpChatProvider, HttpChatProviderConfig};

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use prompts::PromptTemplates;

// ---------------------------------------------------------------------------
// Requests and providers
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
pub struct ChatRequest {
    pub system_prompt: String,
    pub user_prompt: String,
    pub temperature: f64,
    pub max_tokens: u32,
}

impl ChatRequest {
    /// Digest used by scripted providers and script files: SHA-256 over the
    /// length-prefixed system and user prompts (temperature and token limits
    /// do not participate), hex-encoded.
    pub fn digest(&self) -> String {
        prompt_digest(&self.system_prompt, &self.user_prompt)
    }
}

pub fn prompt_digest(system_prompt: &str, user_prompt: &str) -> String {
    let mut hasher = Sha256::new();
    hasher.update((system_prompt.len() as u64).to_le_bytes());
    hasher.update(system_prompt.as_bytes());
    hasher.update((user_prompt.len() as u64).to_le_bytes());
    hasher.update(user_prompt.as_bytes());
    hex::encode(hasher.finalize())
}

/// Returns the first balanced top-level `{...}` object in the text, so JSON
/// answers wrapped in prose or code fences still parse. Falls back to the
/// whole text when no balanced object is found.
pub fn extract_json_object(text: &str) -> &str {
    let Some(start) = text.find('{') else { return text };
    let bytes = text.as_bytes();
    let mut depth = 0usize;
    let mut in_string = false;
    let mut escaped = false;
    for (offset, &b) in bytes[start..].iter().enumerate() {
        if in_string {
            if escaped {
                escaped = false;
            } else if b == b'\\' {
                escaped = true;
            } else if b == b'"' {
                in_string = false;
            }
            continue;
        }
        match b {
            b'"' => in_string = true,
            b'{' => depth += 1,
            b'}' => {
                depth -= 1;
                if depth == 0 {
                    return &text[start..=start + offset];
                }
            }
            _ => {}
        }
    }
    text
}

pub trait ChatProvider: Send + Sync {
    fn name(&self) -> &str;

    /// Returns the model's text response. Implementations retry transient
    /// transport failures internally (see the HTTP provider); a returned
    /// error is final for this request.
    fn complete(&self, request: &ChatRequest) -> Result<String>;
}

// ---------------------------------------------------------------------------
// Scripted provider
// ---------------------------------------------------------------------------

/// Script file record: one canned response per prompt digest.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScriptEntry {
    pub prompt_digest: String,
    pub response: String,
}

/// Replays canned responses keyed by [`prompt_digest`]. Requests with no
/// matching entry fail with the digest named, which is also how tests
/// simulate a provider falling over mid-run. All requests are captured for
/// inspection.
#[derive(Default)]
pub struct ScriptedChatProvider {
    responses: BTreeMap<String, String>,
    calls: Mutex<Vec<ChatRequest>>,
}

impl ScriptedChatProvider {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut provider = Self::new();
        for (idx, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let entry: ScriptEntry = serde_json::from_str(&line)
                .map_err(|e| Error::schema(path, idx + 1, e.to_string()))?;
            if provider.responses.insert(entry.prompt_digest.clone(), entry.response).is_some() {
                return Err(Error::schema(
                    path,
                    idx + 1,
                    format!("duplicate prompt_digest `{}`", entry.prompt_digest),
                ));
            }
        }
        Ok(provider)
    }

    /// Registers a response for the given request's prompts.
    pub fn insert(&mut self, request: &ChatRequest, response: impl Into<String>) {
        self.insert_prompts(&request.system_prompt, &request.user_prompt, response);
    }

    /// Registers a response for the given prompts.
    pub fn insert_prompts(
        &mut self,
        system_prompt: &str,
        user_prompt: &str,
        response: impl Into<String>,
    ) {
        self.responses.insert(prompt_digest(system_prompt, user_prompt), response.into());
    }

    pub fn insert_digest(&mut self, digest: impl Into<String>, response: impl Into<String>) {
        self.responses.insert(digest.into(), response.into());
    }

    /// Every request seen so far, in call order.
    pub fn captured_calls(&self) -> Vec<ChatRequest> {
        self.calls.lock().expect("not poisoned").clone()
    }

    pub fn entries(&self) -> impl Iterator<Item = (&String, &String)> {
        self.responses.iter()
    }
}

pub fn save_script(path: &Path, entries: &[ScriptEntry]) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = std::io::BufWriter::new(file);
    for entry in entries {
        let line = serde_json::to_string(entry).expect("serializable");
        writeln!(out, "{line}").map_err(|e| Error::io(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}

impl ChatProvider for ScriptedChatProvider {
    fn name(&self) -> &str {
        "scripted"
    }

    fn complete(&self, request: &ChatRequest) -> Result<String> {
        self.calls.lock().expect("not poisoned").push(request.clone());
        let digest = request.digest();
        self.responses
            .get(&digest)
            .cloned()
            .ok_or(Error::MissingScript { digest })
    }
}

// ---------------------------------------------------------------------------
// Rationales
// ---------------------------------------------------------------------------

/// One retrieval strategy produced for a query. Ordinals are 1-based and
/// contiguous after parsing.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rationale {
    pub ordinal: usize,
    pub tag: String,
    pub body: String,
}

impl Rationale {
    /// The rationale as the model wrote it: `[tag] body` (or just the body
    /// when no tag was given). This is the text used for embedding.
    pub fn display_text(&self) -> String {
        if self.tag.is_empty() {
            self.body.clone()
        } else {
            format!("[{}] {}", self.tag, self.body)
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct RationaleOptions {
    pub n_rationales: usize,
    pub temperature: f64,
    pub max_tokens: u32,
}

impl Default for RationaleOptions {
    fn default() -> Self {
        RationaleOptions { n_rationales: 10, temperature: 0.0, max_tokens: 1024 }
    }
}

/// Extracts `<rationale_i>` blocks from a model response.
///
/// Returns the parsed rationales (at most `max`, in order of appearance)
/// plus human-readable warnings for anything repaired along the way:
/// non-contiguous ordinals are renumbered `1..=n`, blocks beyond `max` are
/// dropped, malformed blocks are skipped. A response with no parseable
/// block at all is an error.
pub fn parse_rationales(response: &str, max: usize) -> Result<(Vec<Rationale>, Vec<String>)> {
    let mut warnings = Vec::new();
    let mut parsed: Vec<(usize, String)> = Vec::new(); // (claimed ordinal, inner text)

    let mut cursor = 0;
    while let Some(offset) = response[cursor..].find("<rationale_") {
        let tag_start = cursor + offset;
        let digits_start = tag_start + "<rationale_".len();
        let Some(gt) = response[digits_start..].find('>') else { break };
        let digits = &response[digits_start..digits_start + gt];
        cursor = digits_start;
        let Ok(ordinal) = digits.parse::<usize>() else {
            warnings.push(format!("skipped rationale block with non-numeric ordinal `{digits}`"));
            continue;
        };
        let body_start = digits_start + gt + 1;
        let close = format!("</rationale_{ordinal}>");
        let Some(close_offset) = response[body_start..].find(&close) else {
            warnings.push(format!("skipped unterminated block <rationale_{ordinal}>"));
            continue;
        };
        let inner = response[body_start..body_start + close_offset].trim().to_string();
        parsed.push((ordinal, inner));
        cursor = body_start + close_offset + close.len();
    }

    if parsed.is_empty() {
        return Err(Error::BadResponse("no rationale blocks found in response".into()));
    }
    if parsed.len() > max {
        warnings.push(format!("response contained {} rationale blocks; truncated to {max}", parsed.len()));
        parsed.truncate(max);
    }
    let claimed: Vec<usize> = parsed.iter().map(|(ordinal, _)| *ordinal).collect();
    let contiguous = claimed.iter().enumerate().all(|(idx, &ordinal)| ordinal == idx + 1);
    if !contiguous {
        warnings.push(format!("rationale ordinals {claimed:?} renumbered to 1..={}", parsed.len()));
    }

    let rationales = parsed
        .into_iter()
        .enumerate()
        .map(|(idx, (_, inner))| {
            let (tag, body) = split_tag(&inner);
            Rationale { ordinal: idx + 1, tag, body }
        })
        .collect();
    Ok((rationales, warnings))
}

/// Splits a leading `[tag]` off the rationale text, if present.
fn split_tag(inner: &str) -> (String, String) {
    if let Some(rest) = inner.strip_prefix('[') {
        if let Some(end) = rest.find(']') {
            let tag = rest[..end].trim().to_string();
            let body = rest[end + 1..].trim().to_string();
            return (tag, body);
        }
    }
    (String::new(), inner.trim().to_string())
}

/// Asks the provider for `n_rationales` retrieval rationales for `query`
/// and parses the response. Repair warnings are logged.
pub fn generate_rationales(
    provider: &dyn ChatProvider,
    templates: &PromptTemplates,
    query: &str,
    options: &RationaleOptions,
) -> Result<Vec<Rationale>> {
    let request = prompts::build_rationale_request(templates, query, options);
    let response = provider.complete(&request)?;
    let (rationales, warnings) = parse_rationales(&response, options.n_rationales)?;
    for warning in &warnings {
        log::warn!("rationale parse ({}): {warning}", provider.name());
    }
    Ok(rationales)
}

// ---------------------------------------------------------------------------
// Answer judging
// ---------------------------------------------------------------------------

/// Asks the provider whether `generated` answers the query consistently
/// with `reference`. The response must parse to a bare `0` or `1`; anything
/// else is an unjudged-response error.
pub fn judge_answer(
    provider: &dyn ChatProvider,
    templates: &PromptTemplates,
    query: &str,
    reference: &str,
    generated: &str,
) -> Result<bool> {
    let request = prompts::build_judge_request(templates, query, reference, generated);
    let response = provider.complete(&request)?;
    match response.trim() {
        "0" => Ok(false),
        "1" => Ok(true),
        other => Err(Error::BadResponse(format!(
            "judge verdict must be a single token 0 or 1, got `{other}`"
        ))),
    }
}

// ---------------------------------------------------------------------------
// Tests
// ---------------------------------------------------------------------------
