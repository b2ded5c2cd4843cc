//! Retrieval accuracy, pivot-centric transferability, and grouped reports.
//!
//! Accuracy for a language is `100 * |R| / |D|` where `D` is the probed
//! query set and `R` its correctly answered subset. Transferability
//! against the pivot is `100 * |R ∩ R_pivot| / |R ∪ R_pivot|` over
//! uuid-parallel correct sets: the denominator counts knowledge stored in
//! either form, the numerator knowledge stored in both. When both correct
//! sets are empty the ratio is defined as 0 — mutual failure is not
//! transfer. All set arithmetic is exact; means are plain `f64`.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::probing::ProbeResult;

/// The probed and correct uuid sets entering the two metrics.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EvaluationSets {
    pub lang: String,
    /// Every probed query uuid (`D`).
    pub probed: BTreeSet<String>,
    /// Correctly answered subset (`R`).
    pub correct: BTreeSet<String>,
    /// The pivot language's correct set over the same uuid universe.
    pub pivot_correct: BTreeSet<String>,
}

impl EvaluationSets {
    pub fn new(
        lang: impl Into<String>,
        probed: BTreeSet<String>,
        correct: BTreeSet<String>,
        pivot_correct: BTreeSet<String>,
    ) -> Result<Self> {
        if !correct.is_subset(&probed) {
            return Err(Error::Input("correct set is not a subset of the probed set".into()));
        }
        Ok(EvaluationSets { lang: lang.into(), probed, correct, pivot_correct })
    }

    /// Assemble from probe results plus the pivot's results.
    pub fn from_results(lang: impl Into<String>, results: &[ProbeResult], pivot: &[ProbeResult]) -> Result<Self> {
        let probed: BTreeSet<String> = results.iter().map(|r| r.uuid.clone()).collect();
        let correct = results.iter().filter(|r| r.correct).map(|r| r.uuid.clone()).collect();
        let pivot_correct = pivot.iter().filter(|r| r.correct).map(|r| r.uuid.clone()).collect();
        Self::new(lang, probed, correct, pivot_correct)
    }
}

/// `100 * |R| / |D|`.
pub fn accuracy(sets: &EvaluationSets) -> Result<f64> {
    if sets.probed.is_empty() {
        return Err(Error::Input(format!("language {} has an empty probed set", sets.lang)));
    }
    Ok(100.0 * sets.correct.len() as f64 / sets.probed.len() as f64)
}

/// `100 * |R ∩ R_pivot| / |R ∪ R_pivot|`, 0 when both sets are empty.
pub fn transferability(sets: &EvaluationSets) -> f64 {
    let inter = sets.correct.intersection(&sets.pivot_correct).count();
    let union = sets.correct.union(&sets.pivot_correct).count();
    if union == 0 {
        return 0.0;
    }
    100.0 * inter as f64 / union as f64
}

/// Language family, following the two-way split used in grouped reports.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Family {
    #[serde(rename = "Indo-European")]
    IndoEuropean,
    #[serde(rename = "non-Indo-European")]
    NonIndoEuropean,
}

/// Resource tier by Wikipedia article count.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Resource {
    High,
    Medium,
    Low,
}

/// Tier thresholds on Wikipedia article counts. A language is high-resource
/// at or above `high`, low-resource strictly below `low`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResourceThresholds {
    pub high: u64,
    pub low: u64,
}

impl Default for ResourceThresholds {
    fn default() -> Self {
        ResourceThresholds { high: 1_000_000, low: 100_000 }
    }
}

impl ResourceThresholds {
    pub fn tier(&self, wiki_articles: u64) -> Resource {
        if wiki_articles >= self.high {
            Resource::High
        } else if wiki_articles < self.low {
            Resource::Low
        } else {
            Resource::Medium
        }
    }
}

/// Per-language grouping metadata.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LanguageMeta {
    pub lang: String,
    pub family: Family,
    pub resource: Resource,
    pub wiki_articles: u64,
}

/// One language's metric pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LanguageMetrics {
    pub lang: String,
    pub accuracy: f64,
    pub transferability: f64,
}

/// One aggregated row: a group label with unweighted mean metrics.
/// Empty groups report `None`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupRow {
    pub group: String,
    pub accuracy: Option<f64>,
    pub transferability: Option<f64>,
}

/// The grouped report: family and resource tiers, the overall non-pivot
/// average, and the pivot's own row.
///
/// By reporting convention the pivot's transferability column carries the
/// degenerate value 1 (its correct set compared against itself is not a
/// meaningful percentage; the unit mismatch with the percent-valued
/// non-pivot columns is intentional and mirrored from the table layout
/// this report reproduces).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupedReport {
    pub pivot: GroupRow,
    pub rows: Vec<GroupRow>,
}

const GROUP_ORDER: [&str; 6] =
    ["Indo-European", "non-Indo-European", "high", "medium", "low", "avg"];

/// Unweighted group means over the non-pivot languages.
pub fn aggregate(
    per_language: &[LanguageMetrics],
    meta: &[LanguageMeta],
    pivot: &str,
) -> Result<GroupedReport> {
    let meta_by_lang: BTreeMap<&str, &LanguageMeta> =
        meta.iter().map(|m| (m.lang.as_str(), m)).collect();
    let mut groups: BTreeMap<&str, Vec<&LanguageMetrics>> = BTreeMap::new();
    let mut pivot_row = None;
    for lm in per_language {
        if lm.lang == pivot {
            pivot_row = Some(GroupRow {
                group: format!("{pivot} (source)"),
                accuracy: Some(lm.accuracy),
                transferability: Some(1.0),
            });
            continue;
        }
        let m = meta_by_lang
            .get(lm.lang.as_str())
            .ok_or_else(|| Error::Report(format!("no language meta for {}", lm.lang)))?;
        let family_key = match m.family {
            Family::IndoEuropean => "Indo-European",
            Family::NonIndoEuropean => "non-Indo-European",
        };
        let resource_key = match m.resource {
            Resource::High => "high",
            Resource::Medium => "medium",
            Resource::Low => "low",
        };
        for key in [family_key, resource_key, "avg"] {
            groups.entry(key).or_default().push(lm);
        }
    }
    let pivot_row = pivot_row
        .ok_or_else(|| Error::Report(format!("pivot language {pivot} missing from metrics")))?;

    let mean = |items: &[&LanguageMetrics], f: fn(&LanguageMetrics) -> f64| -> Option<f64> {
        if items.is_empty() {
            None
        } else {
            Some(items.iter().map(|m| f(m)).sum::<f64>() / items.len() as f64)
        }
    };
    let rows = GROUP_ORDER
        .iter()
        .map(|&key| {
            let members = groups.get(key).map(Vec::as_slice).unwrap_or(&[]);
            GroupRow {
                group: key.to_string(),
                accuracy: mean(members, |m| m.accuracy),
                transferability: mean(members, |m| m.transferability),
            }
        })
        .collect();
    Ok(GroupedReport { pivot: pivot_row, rows })
}

/// Transferability of one relation for one language across a sweep:
/// the baseline value plus every evaluated configuration's value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelationSweep {
    pub relation: String,
    pub lang: String,
    pub baseline: f64,
    pub configs: Vec<f64>,
}

/// Per-relation transferable percentage across languages.
///
/// A relation transfers to a language iff some configuration strictly
/// improves its transferability over baseline; the output is, per
/// relation, the percentage of evaluated languages it transfers to.
pub fn relation_transferability(rows: &[RelationSweep]) -> Vec<(String, f64)> {
    let mut per_relation: BTreeMap<&str, (usize, usize)> = BTreeMap::new();
    for row in rows {
        let improved = row.configs.iter().any(|&v| v > row.baseline);
        let entry = per_relation.entry(row.relation.as_str()).or_insert((0, 0));
        entry.1 += 1;
        if improved {
            entry.0 += 1;
        }
    }
    per_relation
        .into_iter()
        .map(|(rel, (hits, total))| (rel.to_string(), 100.0 * hits as f64 / total as f64))
        .collect()
}
