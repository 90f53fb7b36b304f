//! Selection-quality metrics, efficiency ratios, and report assembly.
//!
//! Chunk-level precision/recall/F1 score a selected set against gold keys
//! (set intersection — no partial credit). The F1 uses the count form
//! `2·|∩| / (|selected| + |gold|)`, which is the exact harmonic mean and
//! avoids compounding rounding.
//!
//! The efficiency sweep asks: how many chunks does a fixed-k baseline
//! need before its mean recall catches up with the rank-free selector's?
//! The answer, divided by the selector's mean evidence count, is the
//! efficiency ratio (> 1 means the baseline needs proportionally more
//! evidence). A baseline that never catches up within the corpus is
//! reported with ratio `"inf"` and a null k.

use std::collections::{BTreeMap, BTreeSet};

use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::baseline::RankedList;
use crate::corpus::ChunkKey;
use crate::error::{Error, Result};
use crate::poison::{DetectionMetrics, FlagTypeBreakdown};

// ---------------------------------------------------------------------------
// Per-query metrics
// ---------------------------------------------------------------------------

/// Precision/recall/F1 of one selected set against one gold set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CpMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Scores `selected` against `gold` at the chunk level.
///
/// Returns `None` when `gold` is empty (the instance cannot be scored and
/// is excluded-and-counted by the caller). An empty selection scores 0 —
/// a degenerate cut is a real failure and must be visible.
pub fn cp_metrics(selected: &BTreeSet<ChunkKey>, gold: &BTreeSet<ChunkKey>) -> Option<CpMetrics> {
    if gold.is_empty() {
        return None;
    }
    let inter = selected.intersection(gold).count() as f64;
    let precision = if selected.is_empty() { 0.0 } else { inter / selected.len() as f64 };
    let recall = inter / gold.len() as f64;
    let f1 = 2.0 * inter / (selected.len() + gold.len()) as f64;
    Some(CpMetrics { precision, recall, f1 })
}

/// One query's row in the evaluation report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryScore {
    pub query_id: String,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub n_selected: usize,
}

/// Arithmetic means over the scored queries.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub n_selected: f64,
}

/// Means of the per-query rows (errors on an empty list).
pub fn aggregate(per_query: &[QueryScore]) -> Result<Aggregate> {
    if per_query.is_empty() {
        return Err(Error::Evaluation("no scored queries to aggregate".into()));
    }
    let n = per_query.len() as f64;
    Ok(Aggregate {
        precision: per_query.iter().map(|q| q.precision).sum::<f64>() / n,
        recall: per_query.iter().map(|q| q.recall).sum::<f64>() / n,
        f1: per_query.iter().map(|q| q.f1).sum::<f64>() / n,
        n_selected: per_query.iter().map(|q| q.n_selected as f64).sum::<f64>() / n,
    })
}

// ---------------------------------------------------------------------------
// Efficiency sweep
// ---------------------------------------------------------------------------

/// A baseline-to-selector evidence-count ratio; `Unreachable` means the
/// baseline never hit the target recall within the corpus.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EfficiencyRatio {
    Finite(f64),
    Unreachable,
}

impl Serialize for EfficiencyRatio {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            EfficiencyRatio::Finite(v) => serializer.serialize_f64(*v),
            EfficiencyRatio::Unreachable => serializer.serialize_str("inf"),
        }
    }
}

impl<'de> Deserialize<'de> for EfficiencyRatio {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let value = serde_json::Value::deserialize(deserializer)?;
        match value {
            serde_json::Value::Number(n) => n
                .as_f64()
                .map(EfficiencyRatio::Finite)
                .ok_or_else(|| D::Error::custom("efficiency ratio out of f64 range")),
            serde_json::Value::String(s) if s == "inf" => Ok(EfficiencyRatio::Unreachable),
            other => Err(D::Error::custom(format!("invalid efficiency ratio: {other}"))),
        }
    }
}

/// One baseline's efficiency result.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EfficiencyEntry {
    pub baseline: String,
    /// Smallest k at which the baseline's mean recall reaches the target
    /// (`null` when it never does).
    pub k_needed: Option<usize>,
    pub ratio: EfficiencyRatio,
    pub target_recall: f64,
    pub selector_mean_count: f64,
}

/// Sweeps a baseline's k upward until its mean recall reaches
/// `target_recall`, then reports `k_needed / selector_mean_count`.
///
/// Every gold set must be non-empty and every gold query must have a
/// ranked list. The sweep runs to the longest ranked list; recall at each
/// k averages the per-query recalls of the k-prefixes (clipped per query).
pub fn efficiency_sweep(
    baseline_name: &str,
    rankings: &[RankedList],
    golds: &BTreeMap<String, BTreeSet<ChunkKey>>,
    target_recall: f64,
    selector_mean_count: f64,
) -> Result<EfficiencyEntry> {
    if golds.is_empty() {
        return Err(Error::Evaluation("efficiency sweep requires at least one gold set".into()));
    }
    if selector_mean_count.is_nan() || selector_mean_count <= 0.0 {
        return Err(Error::Evaluation(format!(
            "selector mean evidence count must be positive, got {selector_mean_count}"
        )));
    }
    let by_query: BTreeMap<&str, &RankedList> =
        rankings.iter().map(|r| (r.query_id.as_str(), r)).collect();
    for (query_id, gold) in golds {
        if gold.is_empty() {
            return Err(Error::Evaluation(format!("gold set for query {query_id:?} is empty")));
        }
        if !by_query.contains_key(query_id.as_str()) {
            return Err(Error::Evaluation(format!(
                "no baseline ranking for query {query_id:?}"
            )));
        }
    }

    let max_k = golds
        .keys()
        .map(|q| by_query[q.as_str()].ranked.len())
        .max()
        .unwrap_or(0);
    for k in 1..=max_k {
        let mut total = 0.0;
        for (query_id, gold) in golds {
            let prefix: BTreeSet<ChunkKey> =
                by_query[query_id.as_str()].top_k(k).into_iter().collect();
            total += prefix.intersection(gold).count() as f64 / gold.len() as f64;
        }
        let mean_recall = total / golds.len() as f64;
        if mean_recall >= target_recall - 1e-12 {
            return Ok(EfficiencyEntry {
                baseline: baseline_name.to_string(),
                k_needed: Some(k),
                ratio: EfficiencyRatio::Finite(k as f64 / selector_mean_count),
                target_recall,
                selector_mean_count,
            });
        }
    }
    Ok(EfficiencyEntry {
        baseline: baseline_name.to_string(),
        k_needed: None,
        ratio: EfficiencyRatio::Unreachable,
        target_recall,
        selector_mean_count,
    })
}

// ---------------------------------------------------------------------------
// Generation accuracy
// ---------------------------------------------------------------------------

/// Mean of binary answer judgments (errors when none were judged).
pub fn generation_accuracy(judgments: &[bool]) -> Result<f64> {
    if judgments.is_empty() {
        return Err(Error::Evaluation("no judged instances".into()));
    }
    Ok(judgments.iter().filter(|j| **j).count() as f64 / judgments.len() as f64)
}

/// Generation-accuracy section of the report.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GenerationAccuracy {
    pub accuracy: f64,
    pub judged: usize,
    pub unjudged: usize,
}

// ---------------------------------------------------------------------------
// Report assembly
// ---------------------------------------------------------------------------

/// Poisoning-defense section of the report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionReport {
    pub metrics: DetectionMetrics,
    pub flag_breakdown: FlagTypeBreakdown,
}

/// Scores for one baseline, evaluated at a fixed cutoff `k`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineSection {
    pub name: String,
    /// Cutoff applied to the baseline's ranked lists.
    pub k: usize,
    pub per_query: Vec<QueryScore>,
    pub aggregate: Aggregate,
}

/// The full evaluation report for one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// Digest of the resolved run configuration (set by the CLI).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config_digest: Option<String>,
    pub per_query: Vec<QueryScore>,
    pub aggregate: Aggregate,
    /// Queries excluded from scoring because their gold set was empty.
    pub excluded_queries: Vec<String>,
    /// Ranked-retrieval baselines scored at a matched cutoff.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub baselines: Vec<BaselineSection>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub efficiency: Vec<EfficiencyEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generation_accuracy: Option<GenerationAccuracy>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detection: Option<DetectionReport>,
}

/// Scores every query's selected set and assembles the CP section.
///
/// `selections` maps query id to the selected chunk keys; `golds` to the
/// gold keys. Queries with empty gold sets are excluded and listed.
pub fn build_cp_section(
    selections: &BTreeMap<String, BTreeSet<ChunkKey>>,
    golds: &BTreeMap<String, BTreeSet<ChunkKey>>,
) -> Result<(Vec<QueryScore>, Aggregate, Vec<String>)> {
    let mut per_query = Vec::new();
    let mut excluded = Vec::new();
    for (query_id, gold) in golds {
        let selected = selections.get(query_id).ok_or_else(|| {
            Error::Evaluation(format!("no selection result for query {query_id:?}"))
        })?;
        match cp_metrics(selected, gold) {
            Some(metrics) => per_query.push(QueryScore {
                query_id: query_id.clone(),
                precision: metrics.precision,
                recall: metrics.recall,
                f1: metrics.f1,
                n_selected: selected.len(),
            }),
            None => excluded.push(query_id.clone()),
        }
    }
    let aggregate = aggregate(&per_query)?;
    Ok((per_query, aggregate, excluded))
}
