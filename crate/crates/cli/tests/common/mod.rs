//! Shared machinery for the golden-fixture and acceptance tests.
//!
//! The golden fixtures under `tests/fixtures/golden/` are complete `ragsel`
//! runs over two hand-built corpora, with every output byte committed. The
//! scripted chat responses in those fixtures are *derived*, not hand-typed:
//! the scenario builders here replay the engine's own deterministic stages
//! in-process to learn exactly which requests each run will make, write
//! matching script entries, and assert the scenario's structural invariants
//! (which chunk each rationale pairs with, where the elbow falls, where the
//! worst gold ranks in the dense baseline) so fixture drift fails loudly at
//! regeneration time instead of silently committing different goldens.
//!
//! Regenerate with:
//!
//! ```text
//! cargo test -p ragsel-cli --test golden -- --ignored regenerate
//! ```

#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use ragsel_core::corpus::ChunkKey;
use ragsel_core::corpus::ChunkedCorpus;
use ragsel_core::llm::prompts::{build_verifier_request, PromptTemplates};
use ragsel_core::llm::{save_script, ChatRequest, Rationale, ScriptEntry};
use ragsel_core::selection::SelectionResult;

/// Path of the compiled `ragsel` binary under test.
pub const BIN: &str = env!("CARGO_BIN_EXE_ragsel");

/// Root of the committed golden fixtures.
pub fn fixture_root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/golden")
}

// ---------------------------------------------------------------------------
// Running the binary
// ---------------------------------------------------------------------------

/// Runs one `ragsel` subcommand with `--config` and `--output`.
pub fn run_ragsel(config: &Path, out_dir: &Path, subcommand: &str) -> Output {
    Command::new(BIN)
        .arg("--config")
        .arg(config)
        .arg("--output")
        .arg(out_dir)
        .arg(subcommand)
        .output()
        .expect("spawn ragsel")
}

/// Runs one subcommand and panics (with both streams) on failure.
pub fn run_ragsel_ok(config: &Path, out_dir: &Path, subcommand: &str) {
    let output = run_ragsel(config, out_dir, subcommand);
    assert!(
        output.status.success(),
        "`ragsel {subcommand}` failed for config {config:?}\n--- stdout ---\n{}\n--- stderr ---\n{}",
        String::from_utf8_lossy(&output.stdout),
        String::from_utf8_lossy(&output.stderr),
    );
}

// ---------------------------------------------------------------------------
// Byte-for-byte directory comparison
// ---------------------------------------------------------------------------

fn collect_files(root: &Path, dir: &Path, out: &mut BTreeMap<String, Vec<u8>>) {
    for entry in fs::read_dir(dir).unwrap_or_else(|e| panic!("read {dir:?}: {e}")) {
        let entry = entry.expect("directory entry");
        let path = entry.path();
        if path.is_dir() {
            collect_files(root, &path, out);
        } else {
            let name = path
                .strip_prefix(root)
                .expect("path under root")
                .to_string_lossy()
                .replace('\\', "/");
            out.insert(name, fs::read(&path).expect("readable file"));
        }
    }
}

/// Every file under `dir` (recursively), keyed by `/`-separated relative path.
pub fn dir_files(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut files = BTreeMap::new();
    collect_files(dir, dir, &mut files);
    files
}

/// Asserts that two directories hold the same file names with identical
/// bytes, reporting the first differing line of the first differing file.
pub fn assert_dirs_equal(expected: &Path, actual: &Path) {
    let want = dir_files(expected);
    let got = dir_files(actual);
    let want_names: Vec<&String> = want.keys().collect();
    let got_names: Vec<&String> = got.keys().collect();
    assert_eq!(
        want_names, got_names,
        "file sets differ between {expected:?} (expected) and {actual:?} (actual)"
    );
    for (name, want_bytes) in &want {
        let got_bytes = &got[name];
        if want_bytes == got_bytes {
            continue;
        }
        let want_text = String::from_utf8_lossy(want_bytes);
        let got_text = String::from_utf8_lossy(got_bytes);
        for (idx, (w, g)) in want_text.lines().zip(got_text.lines()).enumerate() {
            assert_eq!(
                w,
                g,
                "{name}: first difference at line {} (expected vs actual)",
                idx + 1
            );
        }
        panic!(
            "{name}: contents differ in length only ({} vs {} bytes); \
             one file is a prefix of the other",
            want_bytes.len(),
            got_bytes.len()
        );
    }
}

// ---------------------------------------------------------------------------
// Script assembly
// ---------------------------------------------------------------------------

/// Accumulates scripted chat responses, deduplicating identical entries and
/// refusing to register two different responses for one prompt.
#[derive(Default)]
pub struct Script {
    entries: Vec<ScriptEntry>,
    by_digest: BTreeMap<String, String>,
}

impl Script {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, request: &ChatRequest, response: impl Into<String>) {
        let digest = request.digest();
        let response = response.into();
        match self.by_digest.get(&digest) {
            Some(existing) => assert_eq!(
                existing, &response,
                "two different responses scripted for one prompt digest {digest}"
            ),
            None => {
                self.by_digest.insert(digest.clone(), response.clone());
                self.entries.push(ScriptEntry { prompt_digest: digest, response });
            }
        }
    }

    pub fn save(&self, path: &Path) {
        save_script(path, &self.entries).unwrap_or_else(|e| panic!("write {path:?}: {e}"));
    }
}

/// Renders bodies as the `<rationale_N>` blocks a chat model would return.
pub fn rationale_response<S: AsRef<str>>(bodies: &[S]) -> String {
    bodies
        .iter()
        .enumerate()
        .map(|(idx, body)| {
            let n = idx + 1;
            format!("<rationale_{n}>{}</rationale_{n}>", body.as_ref())
        })
        .collect::<Vec<_>>()
        .join("\n")
}

/// The parsed form of [`rationale_response`]: untagged rationales whose
/// display text is exactly the body, so embedding them reproduces the
/// source chunk's vector and the pairing argmax is exact.
pub fn rationales<S: AsRef<str>>(bodies: &[S]) -> Vec<Rationale> {
    bodies
        .iter()
        .enumerate()
        .map(|(idx, body)| Rationale {
            ordinal: idx + 1,
            tag: String::new(),
            body: body.as_ref().to_string(),
        })
        .collect()
}

/// Deterministic one-line summary the scripted verifier returns for a chunk.
pub fn chunk_note(key: &ChunkKey) -> String {
    format!("Notes {} passage {}.", key.doc_id, key.chunk_index)
}

/// A scripted verifier answer for one chunk.
pub fn verifier_response(key: &ChunkKey, flagged: bool, flag_types: &[&str]) -> String {
    serde_json::json!({
        "flagged": flagged,
        "chunk_summary": chunk_note(key),
        "flag_types": flag_types,
    })
    .to_string()
}

/// Scripts a whole verification pass over `final_set` (already in corpus
/// order), reproducing the verifier's summary chain: each request carries
/// the summaries of every previously decided chunk, flagged or not.
pub fn script_verifier_chain(
    script: &mut Script,
    templates: &PromptTemplates,
    query_text: &str,
    rats: &[Rationale],
    corpus: &ChunkedCorpus,
    final_set: &[ChunkKey],
    mut decide: impl FnMut(&ChunkKey) -> (bool, Vec<&'static str>),
) {
    let mut summaries: Vec<String> = Vec::new();
    for key in final_set {
        let chunk = corpus.get(key).expect("selected chunk is in the corpus");
        let request = build_verifier_request(templates, query_text, rats, &summaries, &chunk.text);
        let (flagged, types) = decide(key);
        script.add(&request, verifier_response(key, flagged, &types));
        summaries.push(chunk_note(key));
    }
}

// ---------------------------------------------------------------------------
// Diagnostics
// ---------------------------------------------------------------------------

/// Human-readable dump of a selection result, for assertion messages while
/// tuning fixture texts.
pub fn explain_selection(result: &SelectionResult) -> String {
    let mut out = String::new();
    out.push_str(&format!(
        "k_star={} method={:?}\n  deltas={:?}\n  z_scores={:?}\n  curvatures={:?}\n",
        result.k_star,
        result.elbow_method,
        result.elbow.deltas,
        result.elbow.z_scores,
        result.elbow.curvatures
    ));
    out.push_str("  pooled (kept):\n");
    for chunk in &result.pooled {
        out.push_str(&format!("    {} {:.6}\n", chunk.key, chunk.score));
    }
    out.push_str("  paired:\n");
    for entry in &result.paired {
        let ords: Vec<usize> = entry.rationales.iter().map(|m| m.ordinal).collect();
        out.push_str(&format!("    {} by rationales {:?}\n", entry.key, ords));
    }
    out.push_str(&format!(
        "  final: {:?}\n",
        result.final_set.iter().map(ToString::to_string).collect::<Vec<_>>()
    ));
    out
}

/// Human-readable dense ranking, for tuning the baseline-rank invariants.
pub fn explain_ranking(list: &ragsel_core::baseline::RankedList) -> String {
    let mut out = String::new();
    for (idx, entry) in list.ranked.iter().enumerate() {
        out.push_str(&format!("  rank {:>2}: {} {:.6}\n", idx + 1, entry.key, entry.score));
    }
    out
}

// ---------------------------------------------------------------------------
// Scenario: three-document corpus with one query ("cp")
// ---------------------------------------------------------------------------

/// A small three-document corpus with one query and three gold chunks.
///
/// Tuned so the run is exact end to end: the scripted rationales are the
/// gold chunk texts (pairing similarity 1.0), the pooled elbow keeps
/// exactly the three golds at tau = 1.0 via the z-score rule, and the
/// dense baseline places the worst gold at rank 6 — so with matched k = 3
/// the baseline-vs-selector efficiency ratio is exactly 6 / 3.0 = 2.0.
pub mod cp {
    use super::*;
    use ragsel_core::baseline::rank_chunks;
    use ragsel_core::corpus::{
        chunk_corpus, save_qa, write_jsonl, ChunkOptions, Document, QaInstance,
        WhitespaceTokenizer,
    };
    use ragsel_core::embed::HashedNgramEmbedder;
    use ragsel_core::llm::prompts::build_rationale_request;
    use ragsel_core::llm::{RationaleOptions, ScriptedChatProvider};
    use ragsel_core::prefdata::{build_preference_pairs, PrefConfig};
    use ragsel_core::selection::{select_evidence, ElbowMethod, SelectionConfig};

    pub const QUERY_ID: &str = "coastal-archive";
    pub const QUERY: &str = "which coastal city hosts the ancient lighthouse archive";

    /// `(doc_id, chunk texts)`; every chunk is exactly eight whitespace
    /// tokens, so chunking at size 8 reproduces these strings verbatim.
    pub const DOCS: &[(&str, &[&str])] = &[
        (
            "harbor",
            &[
                "granite sea wall shelters the fleet in winter",
                "the ancient lighthouse archive sits in pelagos city",
                "lamp oil ledgers record three centuries of trade",
                "the city harbor hosts visiting vessels each winter",
            ],
        ),
        (
            "meadow",
            &[
                "pelagos scribes preserve coastal charts inside the archive",
                "the lighthouse keeper hosts guided city tours daily",
                "wildflowers bloom across the upper meadow every spring",
            ],
        ),
        (
            "quarry",
            &[
                "ancient limestone blocks supply the coastal city walls",
                "stone masons carve municipal seals for the city",
                "records say beacon towers once guarded pelagos harbor",
            ],
        ),
    ];

    /// The query's gold chunks, in key order.
    pub const GOLDS: &[(&str, usize)] = &[("harbor", 1), ("meadow", 0), ("quarry", 2)];

    /// 1-based dense-baseline rank the worst-placed gold must occupy; with
    /// a mean selector size of 3 this fixes the efficiency ratio at 2.0.
    pub const WORST_GOLD_RANK: usize = 6;

    /// Candidate rationales for preference building: two that pair with
    /// gold chunks (hits), then two that pair with non-gold chunks
    /// (misses), giving exactly 2 x 2 = 4 preference pairs.
    pub fn pref_candidates() -> [&'static str; 4] {
        [
            chunk_text("harbor", 1),
            chunk_text("meadow", 0),
            chunk_text("meadow", 2),
            chunk_text("quarry", 0),
        ]
    }

    pub fn chunk_text(doc_id: &str, chunk_index: usize) -> &'static str {
        DOCS.iter()
            .find(|(id, _)| *id == doc_id)
            .map(|(_, texts)| texts[chunk_index])
            .expect("known chunk")
    }

    pub fn documents() -> Vec<Document> {
        DOCS.iter()
            .map(|(doc_id, texts)| Document {
                doc_id: (*doc_id).to_string(),
                text: texts.join(" "),
                metadata: None,
            })
            .collect()
    }

    pub fn corpus() -> ChunkedCorpus {
        let options = ChunkOptions { chunk_size: 8, merge_short_tail: true };
        chunk_corpus(&documents(), &options, &WhitespaceTokenizer)
            .expect("chunkable corpus")
            .0
    }

    pub fn gold_keys() -> Vec<ChunkKey> {
        GOLDS.iter().map(|(doc, idx)| ChunkKey::new(*doc, *idx)).collect()
    }

    pub fn gold_texts() -> Vec<&'static str> {
        GOLDS.iter().map(|(doc, idx)| chunk_text(doc, *idx)).collect()
    }

    pub fn qa() -> Vec<QaInstance> {
        vec![QaInstance {
            query_id: QUERY_ID.into(),
            query_text: QUERY.into(),
            gold_chunk_keys: gold_keys(),
            gold_answer: None,
        }]
    }

    pub fn embedder() -> HashedNgramEmbedder {
        HashedNgramEmbedder::new(256, 3)
    }

    /// Writes `docs.jsonl`, `qa.jsonl`, both chat scripts, and both config
    /// files into `dir`, asserting every scenario invariant along the way.
    pub fn write_inputs(dir: &Path) {
        fs::create_dir_all(dir).expect("create scenario dir");
        write_jsonl(&dir.join("docs.jsonl"), documents()).expect("write docs");
        save_qa(&dir.join("qa.jsonl"), &qa()).expect("write qa");

        let corpus = corpus();
        assert_eq!(corpus.len(), 10, "scenario expects exactly ten chunks");
        let mut unique: BTreeSet<&str> = BTreeSet::new();
        for (doc_id, texts) in DOCS {
            for (idx, text) in texts.iter().enumerate() {
                let chunk = corpus
                    .get(&ChunkKey::new(*doc_id, idx))
                    .unwrap_or_else(|| panic!("missing chunk {doc_id}#{idx}"));
                assert_eq!(&chunk.text, text, "chunking must reproduce {doc_id}#{idx} verbatim");
                assert_eq!(chunk.token_count, 8, "{doc_id}#{idx} must be eight tokens");
                assert!(unique.insert(text), "duplicate chunk text breaks argmax ties: {text}");
            }
        }

        let embedder = embedder();
        let rats = rationales(&gold_texts());

        // Expansion off: pairing and the pooled elbow must both produce
        // exactly the three golds.
        let off = select_evidence(
            QUERY_ID,
            &rats,
            &corpus,
            &embedder,
            &SelectionConfig { tau: 1.0, expansion: false },
        )
        .expect("selection succeeds");
        let golds = gold_keys();
        let paired: Vec<&ChunkKey> = off.paired.iter().map(|e| &e.key).collect();
        let want: Vec<&ChunkKey> = golds.iter().collect();
        assert_eq!(paired, want, "pairing must select the golds\n{}", explain_selection(&off));
        for entry in &off.paired {
            for m in &entry.rationales {
                assert!(
                    (m.score - 1.0).abs() < 1e-12,
                    "rationale {} must match {} exactly (got {})",
                    m.ordinal,
                    entry.key,
                    m.score
                );
            }
        }
        assert_eq!(
            off.elbow_method,
            ElbowMethod::ZScore,
            "elbow must fire on the z-score rule\n{}",
            explain_selection(&off)
        );
        assert_eq!(off.k_star, 3, "elbow must keep three chunks\n{}", explain_selection(&off));
        let pooled: Vec<ChunkKey> = {
            let mut keys: Vec<ChunkKey> = off.pooled.iter().map(|c| c.key.clone()).collect();
            keys.sort();
            keys
        };
        assert_eq!(pooled, golds, "pooled cut must keep the golds\n{}", explain_selection(&off));
        assert_eq!(off.final_set, golds, "final set must be the golds\n{}", explain_selection(&off));

        // Expansion on: index neighbors of the golds join the set.
        let on = select_evidence(
            QUERY_ID,
            &rats,
            &corpus,
            &embedder,
            &SelectionConfig { tau: 1.0, expansion: true },
        )
        .expect("selection succeeds");
        let mut expected_on: Vec<ChunkKey> = vec![
            ChunkKey::new("harbor", 0),
            ChunkKey::new("harbor", 1),
            ChunkKey::new("harbor", 2),
            ChunkKey::new("meadow", 0),
            ChunkKey::new("meadow", 1),
            ChunkKey::new("quarry", 1),
            ChunkKey::new("quarry", 2),
        ];
        expected_on.sort();
        assert_eq!(
            on.final_set,
            expected_on,
            "expansion must add exactly the golds' neighbors\n{}",
            explain_selection(&on)
        );

        // Dense baseline: the worst gold must sit at rank 6 exactly, so
        // reaching full recall needs k = 6 against the selector's 3.
        let ranking = rank_chunks(QUERY_ID, QUERY, &corpus, &embedder).expect("ranking succeeds");
        let rank_of = |key: &ChunkKey| -> usize {
            ranking.ranked.iter().position(|e| &e.key == key).expect("ranked") + 1
        };
        let worst = golds.iter().map(rank_of).max().expect("golds non-empty");
        assert_eq!(
            worst,
            WORST_GOLD_RANK,
            "worst gold rank must be exactly {WORST_GOLD_RANK}\n{}",
            explain_ranking(&ranking)
        );

        // Preference building: the four candidates must split 2 hits / 2
        // misses and emit exactly four pairs.
        let templates = PromptTemplates::default();
        let pref_options =
            RationaleOptions { n_rationales: 4, temperature: 0.8, max_tokens: 1024 };
        let pref_request = build_rationale_request(&templates, QUERY, &pref_options);
        let mut pref_provider = ScriptedChatProvider::new();
        pref_provider.insert(&pref_request, rationale_response(&pref_candidates()));
        let (pairs, stats) = build_preference_pairs(
            &pref_provider,
            &templates,
            &embedder,
            &qa(),
            &corpus,
            &PrefConfig {
                samples_per_query: 4,
                temperature: 0.8,
                max_tokens: 1024,
                max_pairs_per_instance: 8,
            },
        )
        .expect("preference building succeeds");
        assert_eq!(pairs.len(), 4, "two hits x two misses must give four pairs");
        assert!(
            stats.no_positives.is_empty()
                && stats.no_negatives.is_empty()
                && stats.generation_failures.is_empty(),
            "no degenerate instances expected: {stats:?}"
        );

        // Scripts. The selection rationale request is identical in both
        // configs (same query, same options), so both scripts carry it.
        let select_options =
            RationaleOptions { n_rationales: 3, temperature: 0.0, max_tokens: 1024 };
        let rationale_request = build_rationale_request(&templates, QUERY, &select_options);
        let unflagged = |_key: &ChunkKey| (false, Vec::new());

        let mut script_off = Script::new();
        script_off.add(&rationale_request, rationale_response(&gold_texts()));
        script_verifier_chain(
            &mut script_off,
            &templates,
            QUERY,
            &rats,
            &corpus,
            &off.final_set,
            unflagged,
        );
        script_off.add(&pref_request, rationale_response(&pref_candidates()));
        script_off.save(&dir.join("script_off.jsonl"));

        let mut script_on = Script::new();
        script_on.add(&rationale_request, rationale_response(&gold_texts()));
        script_verifier_chain(
            &mut script_on,
            &templates,
            QUERY,
            &rats,
            &corpus,
            &on.final_set,
            unflagged,
        );
        script_on.save(&dir.join("script_on.jsonl"));

        fs::write(dir.join("config_off.toml"), CONFIG_OFF).expect("write config_off");
        fs::write(dir.join("config_on.toml"), CONFIG_ON).expect("write config_on");
    }

    pub const CONFIG_OFF: &str = "\
# Three-document corpus, one query, context expansion off.
# Exercises select + eval (with CSV) + build-prefs against scripted
# rationale, verifier, and preference-candidate responses.

[corpus]
documents = \"docs.jsonl\"
qa = \"qa.jsonl\"
chunk_size = 8

[embedder]
provider = \"mock\"
dim = 256
ngram = 3

[chat]
provider = \"scripted\"
script = \"script_off.jsonl\"

[selection]
tau = 1.0
expansion = false
n_rationales = 3

[verifier]
enabled = true
order = \"corpus\"

[prefs]
samples_per_query = 4
temperature = 0.8
max_tokens = 1024
max_pairs_per_instance = 8
split = false

[eval]
target_recall = 1.0
csv = true

[run]
seed = 0
workers = 1
";

    pub const CONFIG_ON: &str = "\
# Same corpus and query as config_off.toml, with context expansion on:
# the final set grows to the golds plus their index neighbors.

[corpus]
documents = \"docs.jsonl\"
qa = \"qa.jsonl\"
chunk_size = 8

[embedder]
provider = \"mock\"
dim = 256
ngram = 3

[chat]
provider = \"scripted\"
script = \"script_on.jsonl\"

[selection]
tau = 1.0
expansion = true
n_rationales = 3

[verifier]
enabled = true
order = \"corpus\"

[eval]
target_recall = 1.0
csv = false

[run]
seed = 0
workers = 1
";
}

// ---------------------------------------------------------------------------
// Scenario: poisoned corpus with ten queries ("poison")
// ---------------------------------------------------------------------------

/// A five-document, twenty-chunk corpus with ten queries, poisoned at
/// fraction 0.3 (exactly three injected chunks), then run defended
/// (verifier on) and undefended (verifier off).
///
/// The scripted verifier flags two of the three injected chunks (one
/// `Instruction`, one `Factual`), misses the third, and wrongly flags one
/// clean decoy chunk (`Contradiction`), freezing detection at
/// TP=2 FP=1 FN=1 — precision = recall = F1 = 2/3 exactly.
pub mod poison {
    use super::*;
    use ragsel_core::corpus::{
        chunk_corpus, save_qa, write_jsonl, ChunkOptions, Document, QaInstance,
        WhitespaceTokenizer,
    };
    use ragsel_core::embed::HashedNgramEmbedder;
    use ragsel_core::llm::prompts::{build_judge_request, build_rationale_request};
    use ragsel_core::llm::RationaleOptions;
    use ragsel_core::poison::{
        detection_metrics, poison_corpus, FilePoisonSource, PoisonConfig, PoisonTextEntry,
    };
    use ragsel_core::selection::{select_evidence, SelectionConfig};
    use ragsel_core::verify::{FlagType, VerifierDecision};

    /// `(doc_id, chunk texts)`; every chunk is exactly eight tokens.
    pub const DOCS: &[(&str, &[&str; 4])] = &[
        (
            "atlas",
            &[
                "the atlas granary stores twelve hundred barley sacks",
                "atlas well water flows from the eastern spring",
                "the atlas mill grinds flour on market days",
                "atlas road tolls fund the stone bridge repairs",
            ],
        ),
        (
            "briar",
            &[
                "briar orchard yields forty crates of red apples",
                "the briar beekeepers harvest honey twice each summer",
                "briar pond freezes solid by the first frost",
                "the briar chapel bell rings at dawn daily",
            ],
        ),
        (
            "cedar",
            &[
                "cedar sawmill cuts planks for the river barges",
                "the cedar archive keeps deeds from nine villages",
                "cedar charcoal burners camp beyond the north ridge",
                "the cedar market opens on every second thursday",
            ],
        ),
        (
            "delta",
            &[
                "delta ferry crossings pause during the spring floods",
                "the delta lighthouse burns whale oil each night",
                "delta salt pans dry under the july sun",
                "the delta shipwrights launch two hulls every year",
            ],
        ),
        (
            "ember",
            &[
                "ember forge smiths temper blades in oak charcoal",
                "the ember mine yields copper ore and silver",
                "ember kiln potters fire glazed jars for trade",
                "the ember watchtower signals riders with red flags",
            ],
        ),
    ];

    /// `(query_id, query_text, gold (doc, chunk), gold answer)`.
    pub const QUERIES: &[(&str, &str, (&str, usize), &str)] = &[
        (
            "qp01",
            "how many barley sacks does the atlas granary store",
            ("atlas", 0),
            "twelve hundred barley sacks",
        ),
        (
            "qp02",
            "when do the briar beekeepers harvest honey",
            ("briar", 1),
            "twice each summer",
        ),
        (
            "qp03",
            "how many villages keep deeds in the cedar archive",
            ("cedar", 1),
            "nine villages",
        ),
        (
            "qp04",
            "what fuel does the delta lighthouse burn",
            ("delta", 1),
            "whale oil",
        ),
        (
            "qp05",
            "which ores does the ember mine yield",
            ("ember", 1),
            "copper ore and silver",
        ),
        (
            "qp06",
            "what do the atlas road tolls fund",
            ("atlas", 3),
            "the stone bridge repairs",
        ),
        (
            "qp07",
            "how many crates of apples does briar orchard yield",
            ("briar", 0),
            "forty crates",
        ),
        (
            "qp08",
            "how often does the cedar market open",
            ("cedar", 3),
            "every second thursday",
        ),
        (
            "qp09",
            "how many hulls do the delta shipwrights launch",
            ("delta", 3),
            "two hulls every year",
        ),
        (
            "qp10",
            "what do the ember kiln potters fire",
            ("ember", 2),
            "glazed jars",
        ),
    ];

    /// Pre-written poison passages, one per query (the sampler picks which
    /// are used). Each inverts its query's gold fact in similar wording.
    pub const POISON_TEXTS: &[(&str, &str)] = &[
        ("qp01", "the atlas granary stores only ninety barley sacks"),
        ("qp02", "the briar beekeepers harvest honey once a decade"),
        ("qp03", "the cedar archive keeps deeds from one village"),
        ("qp04", "the delta lighthouse burns driftwood each night"),
        ("qp05", "the ember mine yields only worthless gravel"),
        ("qp06", "atlas road tolls fund nothing at all"),
        ("qp07", "briar orchard yields two crates of sour apples"),
        ("qp08", "the cedar market never opens any more"),
        ("qp09", "the delta shipwrights launch no hulls at all"),
        ("qp10", "ember kiln potters fire nothing but mud bricks"),
    ];

    /// Generated answers scored by the scripted judge: these three are
    /// wrong (judge answers "0"), the rest right — accuracy 0.7.
    pub const WRONG_ANSWER_IDS: &[&str] = &["qp03", "qp06", "qp09"];

    /// `(query_id, generated answer)` for `eval.answers`.
    pub const ANSWERS: &[(&str, &str)] = &[
        ("qp01", "the granary stores twelve hundred barley sacks"),
        ("qp02", "they harvest honey twice each summer"),
        ("qp03", "deeds come from a single village"),
        ("qp04", "it burns whale oil"),
        ("qp05", "copper ore and silver"),
        ("qp06", "the tolls fund nothing"),
        ("qp07", "forty crates of red apples"),
        ("qp08", "every second thursday"),
        ("qp09", "they launch no hulls"),
        ("qp10", "glazed jars for trade"),
    ];

    pub fn documents() -> Vec<Document> {
        DOCS.iter()
            .map(|(doc_id, texts)| Document {
                doc_id: (*doc_id).to_string(),
                text: texts.join(" "),
                metadata: None,
            })
            .collect()
    }

    pub fn clean_corpus() -> ChunkedCorpus {
        let options = ChunkOptions { chunk_size: 8, merge_short_tail: true };
        chunk_corpus(&documents(), &options, &WhitespaceTokenizer)
            .expect("chunkable corpus")
            .0
    }

    pub fn qa() -> Vec<QaInstance> {
        QUERIES
            .iter()
            .map(|(id, text, (doc, idx), answer)| QaInstance {
                query_id: (*id).to_string(),
                query_text: (*text).to_string(),
                gold_chunk_keys: vec![ChunkKey::new(*doc, *idx)],
                gold_answer: Some((*answer).to_string()),
            })
            .collect()
    }

    pub fn embedder() -> HashedNgramEmbedder {
        HashedNgramEmbedder::new(256, 3)
    }

    fn answer_for(query_id: &str) -> &'static str {
        ANSWERS
            .iter()
            .find(|(id, _)| *id == query_id)
            .map(|(_, answer)| *answer)
            .expect("answer for every query")
    }

    /// Writes every input of the poison scenario into `dir`, deriving the
    /// chat script from an in-process replay of the poison run and both
    /// selection passes, and asserting the detection arithmetic.
    pub fn write_inputs(dir: &Path) {
        fs::create_dir_all(dir).expect("create scenario dir");
        write_jsonl(&dir.join("docs.jsonl"), documents()).expect("write docs");
        save_qa(&dir.join("qa.jsonl"), &qa()).expect("write qa");
        write_jsonl(
            &dir.join("poison_texts.jsonl"),
            POISON_TEXTS.iter().map(|(id, text)| PoisonTextEntry {
                query_id: (*id).to_string(),
                poison_text: (*text).to_string(),
            }),
        )
        .expect("write poison texts");
        write_jsonl(
            &dir.join("answers.jsonl"),
            ANSWERS
                .iter()
                .map(|(id, answer)| serde_json::json!({ "query_id": id, "answer": answer })),
        )
        .expect("write answers");

        let clean = clean_corpus();
        assert_eq!(clean.len(), 20, "scenario expects exactly twenty chunks");
        let mut unique: BTreeSet<&str> = BTreeSet::new();
        for (doc_id, texts) in DOCS {
            for (idx, text) in texts.iter().enumerate() {
                let chunk = clean
                    .get(&ChunkKey::new(*doc_id, idx))
                    .unwrap_or_else(|| panic!("missing chunk {doc_id}#{idx}"));
                assert_eq!(&chunk.text, text, "chunking must reproduce {doc_id}#{idx} verbatim");
                assert_eq!(chunk.token_count, 8, "{doc_id}#{idx} must be eight tokens");
                assert!(unique.insert(text), "duplicate chunk text breaks argmax ties: {text}");
            }
        }
        for (_, text) in POISON_TEXTS {
            assert!(unique.insert(text), "poison text duplicates a chunk: {text}");
        }

        // Replay the poison run exactly as `ragsel poison` will execute it.
        let source =
            FilePoisonSource::from_file(&dir.join("poison_texts.jsonl")).expect("poison source");
        let config = PoisonConfig { fraction: 0.3, seed: 0, per_instance: 1 };
        let outcome = poison_corpus(&clean, &qa(), &config, &source, &WhitespaceTokenizer)
            .expect("poison run succeeds");
        assert_eq!(outcome.records.len(), 3, "fraction 0.3 of 10 must inject three chunks");

        let injected: BTreeMap<&str, ChunkKey> = outcome
            .records
            .iter()
            .map(|r| (r.query_id.as_str(), r.injected_chunk_key.clone()))
            .collect();
        assert_eq!(injected.len(), 3, "each sampled query is poisoned once");
        let poisoned_ids: Vec<&str> = injected.keys().copied().collect(); // sorted

        // Flag plan: first sampled query's injection -> Instruction, second
        // -> Factual, third stays unflagged (the miss). The false positive
        // is a clean never-gold chunk selected for the first clean query.
        let flag_instruction = poisoned_ids[0];
        let flag_factual = poisoned_ids[1];
        let fp_query = outcome
            .qa
            .iter()
            .map(|q| q.query_id.as_str())
            .find(|id| !injected.contains_key(id))
            .expect("some query is clean");
        let all_golds: BTreeSet<&ChunkKey> =
            outcome.qa.iter().flat_map(|q| q.gold_chunk_keys.iter()).collect();
        let decoy: ChunkKey = outcome
            .corpus
            .sorted_keys()
            .find(|key| {
                !all_golds.contains(*key)
                    && outcome.corpus.get(key).expect("key from corpus").poison_label
                        != Some(true)
            })
            .expect("a clean never-gold chunk exists")
            .clone();

        // Derive every query's rationales and final set the way the run
        // will compute them, asserting the selection invariants.
        let templates = PromptTemplates::default();
        let embedder = embedder();
        let options = RationaleOptions { n_rationales: 2, temperature: 0.0, max_tokens: 1024 };
        let selection_config = SelectionConfig { tau: 1.0, expansion: false };
        let mut script = Script::new();
        let mut planned: Vec<(String, String, Vec<Rationale>, Vec<ChunkKey>)> = Vec::new();

        for instance in &outcome.qa {
            let query_id = instance.query_id.as_str();
            let gold = &instance.gold_chunk_keys[0];
            let gold_text = outcome.corpus.get(gold).expect("gold in corpus").text.clone();
            let second = if let Some(key) = injected.get(query_id) {
                // Pairs the injected chunk into the selection, so the
                // verifier gets to judge it.
                outcome.corpus.get(key).expect("injected chunk").text.clone()
            } else if query_id == fp_query {
                // Pairs the decoy in, so the verifier can wrongly flag it.
                outcome.corpus.get(&decoy).expect("decoy chunk").text.clone()
            } else {
                // A near-paraphrase whose argmax stays on the gold chunk.
                format!("{gold_text} indeed")
            };
            let bodies = vec![gold_text.clone(), second];
            let rats = rationales(&bodies);
            let request = build_rationale_request(&templates, &instance.query_text, &options);
            script.add(&request, rationale_response(&bodies));

            let sel = select_evidence(
                query_id,
                &rats,
                &outcome.corpus,
                &embedder,
                &selection_config,
            )
            .expect("selection succeeds");
            assert!(
                sel.final_set.contains(gold),
                "{query_id}: gold {gold} must be selected\n{}",
                explain_selection(&sel)
            );
            if let Some(key) = injected.get(query_id) {
                assert!(
                    sel.final_set.contains(key),
                    "{query_id}: injected chunk {key} must be selected\n{}",
                    explain_selection(&sel)
                );
            }
            if query_id == fp_query {
                assert!(
                    sel.final_set.contains(&decoy),
                    "{query_id}: decoy {decoy} must be selected\n{}",
                    explain_selection(&sel)
                );
            }
            // No query may select another query's injected chunk: each
            // poisoned chunk must be decided exactly once, by its own query.
            for key in &sel.final_set {
                let label = outcome.corpus.get(key).expect("key from corpus").poison_label;
                if label == Some(true) {
                    assert_eq!(
                        injected.get(query_id),
                        Some(key),
                        "{query_id}: foreign injected chunk {key} selected\n{}",
                        explain_selection(&sel)
                    );
                }
            }
            planned.push((
                query_id.to_string(),
                instance.query_text.clone(),
                rats,
                sel.final_set.clone(),
            ));
        }

        // Script the defended verifier pass and collect its decisions to
        // verify the detection arithmetic before anything is committed.
        let mut decisions: Vec<VerifierDecision> = Vec::new();
        for (query_id, query_text, rats, final_set) in &planned {
            let decide = |key: &ChunkKey| -> (bool, Vec<&'static str>) {
                if injected.get(query_id.as_str()) == Some(key) {
                    if query_id == flag_instruction {
                        (true, vec!["Instruction"])
                    } else if query_id == flag_factual {
                        (true, vec!["Factual"])
                    } else {
                        (false, Vec::new()) // the missed injection
                    }
                } else if query_id == fp_query && key == &decoy {
                    (true, vec!["Contradiction"]) // the false positive
                } else {
                    (false, Vec::new())
                }
            };

            script_verifier_chain(
                &mut script,
                &templates,
                query_text,
                rats,
                &outcome.corpus,
                final_set,
                decide,
            );
            for key in final_set {
                let (flagged, types) = decide(key);
                decisions.push(VerifierDecision {
                    chunk_key: key.clone(),
                    flagged,
                    flag_types: types.iter().map(|t| FlagType::parse_lossy(t)).collect(),
                    chunk_summary: chunk_note(key),
                });
            }
        }
        let metrics = detection_metrics(&decisions, &outcome.corpus);
        assert_eq!(
            (metrics.true_positives, metrics.false_positives, metrics.false_negatives),
            (2, 1, 1),
            "flag plan must land at TP=2 FP=1 FN=1: {metrics:?}"
        );
        let two_thirds = 2.0 / 3.0;
        assert_eq!(metrics.precision, two_thirds);
        assert_eq!(metrics.recall, two_thirds);
        assert_eq!(metrics.f1, two_thirds);

        // Judge entries, shared by the defended and undefended evals.
        for instance in &outcome.qa {
            let request = build_judge_request(
                &templates,
                &instance.query_text,
                instance.gold_answer.as_deref().expect("gold answer"),
                answer_for(&instance.query_id),
            );
            let verdict = if WRONG_ANSWER_IDS.contains(&instance.query_id.as_str()) {
                "0"
            } else {
                "1"
            };
            script.add(&request, verdict);
        }

        script.save(&dir.join("script_runs.jsonl"));
        fs::write(dir.join("config_poison.toml"), CONFIG_POISON).expect("write config_poison");
        fs::write(dir.join("config_defended.toml"), CONFIG_DEFENDED)
            .expect("write config_defended");
        fs::write(dir.join("config_undefended.toml"), CONFIG_UNDEFENDED)
            .expect("write config_undefended");
    }

    pub const CONFIG_POISON: &str = "\
# Clean five-document corpus, ten queries; inject pre-written poison
# passages for a seeded 30% sample of the queries (exactly three).

[corpus]
documents = \"docs.jsonl\"
qa = \"qa.jsonl\"
chunk_size = 8

[poisoning]
fraction = 0.3
seed = 0
per_instance = 1
source = \"file\"
file = \"poison_texts.jsonl\"

[run]
seed = 0
workers = 1
";

    pub const CONFIG_DEFENDED: &str = "\
# Run the full pipeline over the poisoned corpus with the verifier on.
# The scripted verifier catches two of the three injected chunks and
# wrongly flags one clean chunk: detection precision = recall = 2/3.

[corpus]
chunks = \"expected_poison/poisoned_chunks.jsonl\"
qa = \"expected_poison/qa_poisoned.jsonl\"

[embedder]
provider = \"mock\"
dim = 256
ngram = 3

[chat]
provider = \"scripted\"
script = \"script_runs.jsonl\"

[selection]
tau = 1.0
expansion = false
n_rationales = 2

[verifier]
enabled = true
order = \"corpus\"

[eval]
target_recall = 1.0
csv = false
answers = \"answers.jsonl\"

[run]
seed = 0
workers = 1
";

    pub const CONFIG_UNDEFENDED: &str = "\
# Same poisoned corpus and selection as config_defended.toml but with the
# verifier disabled: nothing is flagged, so poison detection is all
# misses (F1 = 0) and injected chunks stay in every selected set.

[corpus]
chunks = \"expected_poison/poisoned_chunks.jsonl\"
qa = \"expected_poison/qa_poisoned.jsonl\"

[embedder]
provider = \"mock\"
dim = 256
ngram = 3

[chat]
provider = \"scripted\"
script = \"script_runs.jsonl\"

[selection]
tau = 1.0
expansion = false
n_rationales = 2

[verifier]
enabled = false

[eval]
target_recall = 1.0
csv = false
answers = \"answers.jsonl\"

[run]
seed = 0
workers = 1
";
}
