//! Run configuration: a TOML file plus `--set key=value` overrides.
//!
//! Loading order:
//! 1. parse the TOML file into a raw value tree,
//! 2. apply `--set` overrides (and the dedicated `--seed`/`--workers` flags),
//! 3. deserialize into [`RunConfig`] (unknown fields are rejected, missing
//!    ones take documented defaults),
//! 4. validate value ranges and provider requirements, collecting every
//!    problem with its field path,
//! 5. compute the [config digest](RunConfig::digest),
//! 6. resolve relative paths against the config file's directory.
//!
//! The digest is a SHA-256 over the canonical JSON form of the resolved
//! configuration, with the output directory and worker count removed first:
//! those two change where results are written and how fast they appear, but
//! never what they contain. Reports embed the digest so any artifact can be
//! traced back to the exact settings that produced it.

use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

// ---------------------------------------------------------------------------
// Schema
// ---------------------------------------------------------------------------

/// The whole run configuration. Every section has defaults; an empty file is
/// a valid configuration (mock embedder, scripted chat with no script —
/// commands that need more will say what is missing).
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub corpus: CorpusConfig,
    pub embedder: EmbedderConfig,
    pub chat: ChatConfig,
    pub selection: SelectionSettings,
    pub verifier: VerifierSettings,
    pub poisoning: PoisoningSettings,
    pub prefs: PrefSettings,
    pub eval: EvalSettings,
    pub output: OutputSettings,
    pub run: RunSettings,
}

/// Input corpus and chunking settings.
///
/// When both `chunks` and `documents` are set, commands that consume a
/// chunked corpus prefer `chunks` (the explicit artifact wins); `documents`
/// is then only used by `chunk`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorpusConfig {
    /// Raw documents (JSONL: `{"doc_id", "text"}`).
    pub documents: Option<PathBuf>,
    /// Pre-chunked corpus (JSONL: `{"doc_id", "chunk_index", "text", ...}`).
    pub chunks: Option<PathBuf>,
    /// QA instances (JSONL: `{"query_id", "query_text", "gold", ...}`).
    pub qa: Option<PathBuf>,
    /// Chunk size in tokens.
    pub chunk_size: usize,
    /// Merge a short trailing chunk into its predecessor.
    pub merge_short_tail: bool,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        CorpusConfig {
            documents: None,
            chunks: None,
            qa: None,
            chunk_size: 512,
            merge_short_tail: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EmbedderKind {
    /// Deterministic hashed character-n-gram embedder (offline).
    Mock,
    /// OpenAI-style `POST {url}` embeddings endpoint.
    Http,
}

/// Embedding provider settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmbedderConfig {
    pub provider: EmbedderKind,
    /// Embedding dimension (declared for `http`, constructed for `mock`).
    pub dim: usize,
    /// Character n-gram size (`mock` only).
    pub ngram: usize,
    /// Endpoint URL (`http` only).
    pub url: Option<String>,
    /// Model name sent to the endpoint (`http` only).
    pub model: Option<String>,
    /// Environment variable holding the API key (`http` only). The key
    /// itself never appears in configuration or artifacts.
    pub api_key_env: Option<String>,
    pub timeout_secs: u64,
    pub max_attempts: u32,
    pub retry_base_delay_ms: u64,
    /// Directory for the on-disk embedding cache. Unset disables caching.
    pub cache_dir: Option<PathBuf>,
}

impl Default for EmbedderConfig {
    fn default() -> Self {
        EmbedderConfig {
            provider: EmbedderKind::Mock,
            dim: 256,
            ngram: 3,
            url: None,
            model: None,
            api_key_env: None,
            timeout_secs: 30,
            max_attempts: 3,
            retry_base_delay_ms: 250,
            cache_dir: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ChatKind {
    /// Replays canned responses from a script file (offline).
    Scripted,
    /// OpenAI-style `POST {url}` chat-completions endpoint.
    Http,
}

/// Chat (LLM) provider settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChatConfig {
    pub provider: ChatKind,
    /// Script file of canned responses (`scripted` only).
    pub script: Option<PathBuf>,
    /// Endpoint URL (`http` only).
    pub url: Option<String>,
    /// Model name sent to the endpoint (`http` only).
    pub model: Option<String>,
    /// Environment variable holding the API key (`http` only).
    pub api_key_env: Option<String>,
    pub timeout_secs: u64,
    pub max_attempts: u32,
    pub retry_base_delay_ms: u64,
}

impl Default for ChatConfig {
    fn default() -> Self {
        ChatConfig {
            provider: ChatKind::Scripted,
            script: None,
            url: None,
            model: None,
            api_key_env: None,
            timeout_secs: 60,
            max_attempts: 3,
            retry_base_delay_ms: 250,
        }
    }
}

/// Rationale generation and evidence selection settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SelectionSettings {
    /// Z-score threshold for the elbow cut.
    pub tau: f64,
    /// Include neighbors of selected chunks (context expansion).
    pub expansion: bool,
    /// Rationales requested per query.
    pub n_rationales: usize,
    /// Sampling temperature for rationale generation.
    pub rationale_temperature: f64,
    /// Token budget for the rationale response.
    pub rationale_max_tokens: u32,
}

impl Default for SelectionSettings {
    fn default() -> Self {
        SelectionSettings {
            tau: 1.0,
            expansion: true,
            n_rationales: 10,
            rationale_temperature: 0.0,
            rationale_max_tokens: 1024,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum VerifyOrderSetting {
    /// Ascending `(doc_id, chunk_index)` — document narrative order.
    Corpus,
    /// The order chunks come out of selection.
    Given,
}

/// Post-selection verification settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VerifierSettings {
    /// Run the verifier pass after selection.
    pub enabled: bool,
    pub order: VerifyOrderSetting,
    /// Cap on chunk characters sent to the model. Unset sends chunks whole.
    pub max_chunk_chars: Option<usize>,
}

impl Default for VerifierSettings {
    fn default() -> Self {
        VerifierSettings {
            enabled: true,
            order: VerifyOrderSetting::Corpus,
            max_chunk_chars: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PoisonSourceKind {
    /// Ask the chat provider to write each poison passage.
    Llm,
    /// Read pre-written passages from `poisoning.file`.
    File,
}

/// Corpus-poisoning settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PoisoningSettings {
    /// Fraction of QA instances to poison, in (0, 1].
    pub fraction: f64,
    /// Seed for instance sampling. Unset falls back to `run.seed`.
    pub seed: Option<u64>,
    /// Injected chunks per sampled instance.
    pub per_instance: usize,
    pub source: PoisonSourceKind,
    /// Poison passages (JSONL: `{"query_id", "poison_text"}`; `file` source).
    pub file: Option<PathBuf>,
}

impl Default for PoisoningSettings {
    fn default() -> Self {
        PoisoningSettings {
            fraction: 0.3,
            seed: None,
            per_instance: 1,
            source: PoisonSourceKind::Llm,
            file: None,
        }
    }
}

/// Preference-pair construction settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PrefSettings {
    /// Candidate rationales sampled per instance (at least 2).
    pub samples_per_query: usize,
    /// Sampling temperature for candidate diversity.
    pub temperature: f64,
    /// Token budget for the candidate-generation response.
    pub max_tokens: u32,
    /// Cap on pairs emitted per instance.
    pub max_pairs_per_instance: usize,
    /// Write shuffled train/val/test splits instead of a single file.
    pub split: bool,
    /// Seed for the split shuffle. Unset falls back to `run.seed`.
    pub seed: Option<u64>,
}

impl Default for PrefSettings {
    fn default() -> Self {
        PrefSettings {
            samples_per_query: 4,
            temperature: 0.8,
            max_tokens: 1024,
            max_pairs_per_instance: 8,
            split: true,
            seed: None,
        }
    }
}

/// Evaluation settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSettings {
    /// Recall level the efficiency sweep must reach, in (0, 1].
    pub target_recall: f64,
    /// Fixed baseline cutoff. Unset matches the selector's mean final-set
    /// size (rounded half-up, floor 1).
    pub baseline_k: Option<usize>,
    /// Also write the per-query table as CSV.
    pub csv: bool,
    /// Generated answers to judge (JSONL: `{"query_id", "answer"}`).
    pub answers: Option<PathBuf>,
    /// Extra pre-computed ranking files to score as baselines alongside the
    /// built-in dense retriever (same JSONL schema as its rankings).
    pub external_rankings: Vec<PathBuf>,
}

impl Default for EvalSettings {
    fn default() -> Self {
        EvalSettings {
            target_recall: 1.0,
            baseline_k: None,
            csv: false,
            answers: None,
            external_rankings: Vec::new(),
        }
    }
}

/// Where artifacts are written.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSettings {
    pub dir: PathBuf,
}

impl Default for OutputSettings {
    fn default() -> Self {
        OutputSettings { dir: PathBuf::from("out") }
    }
}

/// Run-wide settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSettings {
    /// Base random seed; sections with their own unset seed fall back here.
    pub seed: u64,
    /// Worker threads for per-query work (never changes results).
    pub workers: usize,
}

impl Default for RunSettings {
    fn default() -> Self {
        RunSettings { seed: 0, workers: 1 }
    }
}

// ---------------------------------------------------------------------------
// Loading
// ---------------------------------------------------------------------------

impl RunConfig {
    /// Loads, overrides, validates, digests, and path-resolves in one step.
    pub fn load(path: &Path, overrides: &[String]) -> Result<LoadedConfig> {
        let raw = std::fs::read_to_string(path)
            .with_context(|| format!("cannot read config file {}", path.display()))?;
        let mut table: toml::Table = raw
            .parse()
            .with_context(|| format!("config file {} is not valid TOML", path.display()))?;
        for entry in overrides {
            apply_override(&mut table, entry)?;
        }
        let resolved = toml::to_string(&table).context("config re-serialization failed")?;
        let mut config: RunConfig = toml::from_str(&resolved)
            .with_context(|| format!("config file {} has invalid fields", path.display()))?;
        config.validate()?;
        let digest = config.digest();
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        config.resolve_paths(base);
        Ok(LoadedConfig { config, digest })
    }

    /// SHA-256 (hex) over the canonical JSON form of this configuration,
    /// excluding `output.dir` and `run.workers` — neither influences what
    /// artifacts contain, only where they go and how fast they are written.
    pub fn digest(&self) -> String {
        let mut value = serde_json::to_value(self).expect("config serializes");
        let map = value.as_object_mut().expect("config is an object");
        map.remove("output");
        if let Some(run) = map.get_mut("run").and_then(|v| v.as_object_mut()) {
            run.remove("workers");
        }
        let canonical = serde_json::to_string(&value).expect("canonical JSON");
        hex::encode(Sha256::digest(canonical.as_bytes()))
    }

    /// Checks value ranges and provider requirements. Reports every problem,
    /// each with its field path.
    pub fn validate(&self) -> Result<()> {
        let mut problems: Vec<String> = Vec::new();
        let mut check = |ok: bool, field: &str, message: String| {
            if !ok {
                problems.push(format!("{field}: {message}"));
            }
        };

        check(
            self.corpus.chunk_size >= 1,
            "corpus.chunk_size",
            "must be at least 1".into(),
        );
        check(
            self.selection.tau.is_finite(),
            "selection.tau",
            format!("must be finite (got {})", self.selection.tau),
        );
        check(
            self.selection.n_rationales >= 1,
            "selection.n_rationales",
            "must be at least 1".into(),
        );
        check(
            self.selection.rationale_temperature.is_finite()
                && self.selection.rationale_temperature >= 0.0,
            "selection.rationale_temperature",
            format!(
                "must be finite and non-negative (got {})",
                self.selection.rationale_temperature
            ),
        );
        check(
            self.verifier.max_chunk_chars != Some(0),
            "verifier.max_chunk_chars",
            "must be at least 1 when set".into(),
        );
        check(
            self.poisoning.fraction.is_finite()
                && self.poisoning.fraction > 0.0
                && self.poisoning.fraction <= 1.0,
            "poisoning.fraction",
            format!("must be in (0, 1] (got {})", self.poisoning.fraction),
        );
        check(
            self.poisoning.per_instance >= 1,
            "poisoning.per_instance",
            "must be at least 1".into(),
        );
        if self.poisoning.source == PoisonSourceKind::File {
            check(
                self.poisoning.file.is_some(),
                "poisoning.file",
                "must be set when poisoning.source is \"file\"".into(),
            );
        }
        check(self.embedder.dim >= 1, "embedder.dim", "must be at least 1".into());
        check(self.embedder.ngram >= 1, "embedder.ngram", "must be at least 1".into());
        check(
            self.embedder.max_attempts >= 1,
            "embedder.max_attempts",
            "must be at least 1".into(),
        );
        if self.embedder.provider == EmbedderKind::Http {
            check(
                self.embedder.url.is_some(),
                "embedder.url",
                "must be set when embedder.provider is \"http\"".into(),
            );
            check(
                self.embedder.model.is_some(),
                "embedder.model",
                "must be set when embedder.provider is \"http\"".into(),
            );
        }
        check(self.chat.max_attempts >= 1, "chat.max_attempts", "must be at least 1".into());
        // `chat.script` is not required here: the scripted provider is the
        // default, and commands that never talk to the model (chunk, plain
        // eval) must work without one. The requirement is enforced when a
        // chat provider is actually built.
        if self.chat.provider == ChatKind::Http {
            check(
                self.chat.url.is_some(),
                "chat.url",
                "must be set when chat.provider is \"http\"".into(),
            );
            check(
                self.chat.model.is_some(),
                "chat.model",
                "must be set when chat.provider is \"http\"".into(),
            );
        }
        check(
            self.prefs.samples_per_query >= 2,
            "prefs.samples_per_query",
            format!("must be at least 2 to form pairs (got {})", self.prefs.samples_per_query),
        );
        check(
            self.prefs.temperature.is_finite() && self.prefs.temperature >= 0.0,
            "prefs.temperature",
            format!("must be finite and non-negative (got {})", self.prefs.temperature),
        );
        check(
            self.prefs.max_pairs_per_instance >= 1,
            "prefs.max_pairs_per_instance",
            "must be at least 1".into(),
        );
        check(
            self.eval.target_recall.is_finite()
                && self.eval.target_recall > 0.0
                && self.eval.target_recall <= 1.0,
            "eval.target_recall",
            format!("must be in (0, 1] (got {})", self.eval.target_recall),
        );
        check(
            self.eval.baseline_k != Some(0),
            "eval.baseline_k",
            "must be at least 1 when set".into(),
        );

        if problems.is_empty() {
            Ok(())
        } else {
            bail!("invalid configuration:\n  - {}", problems.join("\n  - "))
        }
    }

    /// Resolves every relative input path against `base` (the config file's
    /// directory), including the output directory.
    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        let fix_opt = |p: &mut Option<PathBuf>| {
            if let Some(p) = p {
                if p.is_relative() {
                    *p = base.join(&*p);
                }
            }
        };
        fix_opt(&mut self.corpus.documents);
        fix_opt(&mut self.corpus.chunks);
        fix_opt(&mut self.corpus.qa);
        fix_opt(&mut self.embedder.cache_dir);
        fix_opt(&mut self.chat.script);
        fix_opt(&mut self.poisoning.file);
        fix_opt(&mut self.eval.answers);
        for p in &mut self.eval.external_rankings {
            fix(p);
        }
        fix(&mut self.output.dir);
    }

    /// Effective poisoning seed (section seed, else the run seed).
    pub fn poison_seed(&self) -> u64 {
        self.poisoning.seed.unwrap_or(self.run.seed)
    }

    /// Effective preference-split seed (section seed, else the run seed).
    pub fn prefs_seed(&self) -> u64 {
        self.prefs.seed.unwrap_or(self.run.seed)
    }
}

/// A validated configuration plus its digest. The digest is computed before
/// path resolution, so it is independent of where the checkout lives.
#[derive(Debug, Clone)]
pub struct LoadedConfig {
    pub config: RunConfig,
    pub digest: String,
}

// ---------------------------------------------------------------------------
// Overrides
// ---------------------------------------------------------------------------

/// Applies one `key=value` override to the raw TOML tree. The key is a
/// dotted path (`selection.tau`); the value is parsed as TOML, falling back
/// to a plain string when it does not parse (so `--set chat.script=run.jsonl`
/// works without quoting).
pub fn apply_override(table: &mut toml::Table, entry: &str) -> Result<()> {
    let (key, raw_value) = entry
        .split_once('=')
        .ok_or_else(|| anyhow!("override `{entry}` must have the form key=value"))?;
    let key = key.trim();
    if key.is_empty() {
        bail!("override `{entry}` has an empty key");
    }
    let value = parse_override_value(raw_value.trim());

    let segments: Vec<&str> = key.split('.').collect();
    if segments.iter().any(|s| s.is_empty()) {
        bail!("override key `{key}` has an empty path segment");
    }
    let mut current = table;
    for segment in &segments[..segments.len() - 1] {
        current = current
            .entry(segment.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()))
            .as_table_mut()
            .ok_or_else(|| {
                anyhow!("override key `{key}` descends into non-table field `{segment}`")
            })?;
    }
    current.insert(segments[segments.len() - 1].to_string(), value);
    Ok(())
}

fn parse_override_value(raw: &str) -> toml::Value {
    // Parse through a one-entry document so the full TOML value grammar
    // (numbers, booleans, arrays, quoted strings) is available.
    match format!("value = {raw}").parse::<toml::Table>() {
        Ok(mut table) => table.remove("value").expect("entry just inserted"),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}
