//! Exhaustive evaluation of admissible layer pairs.
//!
//! The LIRP layer `i` and LSRP layer `j` are hyperparameters; languages
//! differ widely in which pair serves them best. A full sweep evaluates
//! every pair `1 <= i < j <= L` — `L(L-1)/2` grid points — with a
//! complete probing-plus-metrics pass per point, always alongside the
//! hookless baseline. Grid points are independent read-only jobs and run
//! in parallel; entries are reported in canonical `(i, j)` order.

use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::engine::Model;
use crate::error::{Error, Result};
use crate::geometry::ConfigTag;
use crate::intervention::{validate_spec, InterventionSpec, SpecCheck};
use crate::langvec::LanguageVectorSet;
use crate::metrics::{accuracy, transferability, EvaluationSets};
use crate::probing::{probe_language, ProbeQuery, ProbeResult};

/// One evaluated grid point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepEntry {
    pub i: usize,
    pub j: usize,
    pub accuracy: f64,
    pub transferability: f64,
}

/// A language's sweep: every evaluated pair plus the hookless baseline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub lang: String,
    pub entries: Vec<SweepEntry>,
    pub baseline_accuracy: f64,
    pub baseline_transferability: f64,
}

/// Selection criterion for "best" reporting.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Criterion {
    Accuracy,
    Transferability,
}

impl SweepEntry {
    pub fn value(&self, criterion: Criterion) -> f64 {
        match criterion {
            Criterion::Accuracy => self.accuracy,
            Criterion::Transferability => self.transferability,
        }
    }
}

impl SweepResult {
    pub fn baseline_value(&self, criterion: Criterion) -> f64 {
        match criterion {
            Criterion::Accuracy => self.baseline_accuracy,
            Criterion::Transferability => self.baseline_transferability,
        }
    }
}

/// Everything a sweep needs to evaluate one language.
pub struct SweepContext<'a> {
    pub model: &'a Model,
    pub target_queries: &'a [ProbeQuery],
    pub pivot_queries: &'a [ProbeQuery],
    pub lang_vectors: &'a LanguageVectorSet,
    pub pivot_vectors: &'a LanguageVectorSet,
    pub pool_cap: Option<usize>,
    pub seed: u64,
}

impl SweepContext<'_> {
    fn evaluate(&self, pair: Option<(usize, usize)>, pivot_results: &[ProbeResult]) -> Result<(f64, f64)> {
        let hooks = match pair {
            None => Vec::new(),
            Some((i, j)) => {
                let spec = InterventionSpec::new(
                    self.lang_vectors.clone(),
                    self.pivot_vectors.clone(),
                    i,
                    j,
                )?;
                spec.validate_against(&self.model.config)?;
                let (lirp, lsrp) = spec.hooks()?;
                vec![lirp, lsrp]
            }
        };
        let results = probe_language(self.model, self.target_queries, self.pool_cap, self.seed, &hooks)?;
        let lang = &self.lang_vectors.lang;
        let sets = EvaluationSets::from_results(lang.clone(), &results, pivot_results)?;
        Ok((accuracy(&sets)?, transferability(&sets)))
    }
}

/// All admissible pairs for an `L`-layer model, in canonical order.
pub fn full_grid(num_layers: usize) -> Vec<(usize, usize)> {
    let mut grid = Vec::with_capacity(num_layers * (num_layers.saturating_sub(1)) / 2);
    for i in 1..num_layers {
        for j in (i + 1)..=num_layers {
            grid.push((i, j));
        }
    }
    grid
}

#[derive(Serialize, Deserialize)]
struct CacheLine {
    lang: String,
    i: usize,
    j: usize,
    accuracy: f64,
    transferability: f64,
}

fn read_cache(path: &Path, lang: &str) -> Result<Vec<SweepEntry>> {
    if !path.exists() {
        return Ok(Vec::new());
    }
    let text = std::fs::read_to_string(path)?;
    let mut entries = Vec::new();
    for line in text.lines().filter(|l| !l.trim().is_empty()) {
        let cached: CacheLine = serde_json::from_str(line)
            .map_err(|e| Error::Integrity(format!("bad sweep cache line: {e}")))?;
        if cached.lang == lang {
            entries.push(SweepEntry {
                i: cached.i,
                j: cached.j,
                accuracy: cached.accuracy,
                transferability: cached.transferability,
            });
        }
    }
    Ok(entries)
}

fn append_cache(path: &Path, lang: &str, entry: &SweepEntry) -> Result<()> {
    let mut file = std::fs::OpenOptions::new().create(true).append(true).open(path)?;
    let line = serde_json::to_string(&CacheLine {
        lang: lang.to_string(),
        i: entry.i,
        j: entry.j,
        accuracy: entry.accuracy,
        transferability: entry.transferability,
    })?;
    writeln!(file, "{line}")?;
    Ok(())
}

/// Run the sweep over `grid` (or the full grid when `None`).
///
/// With a `cache` path, finished grid points are appended as they
/// complete and skipped on rerun, so interrupted sweeps resume.
pub fn run_sweep(
    ctx: &SweepContext<'_>,
    grid: Option<&[(usize, usize)]>,
    cache: Option<&Path>,
) -> Result<SweepResult> {
    let config = &ctx.model.config;
    let grid: Vec<(usize, usize)> = match grid {
        Some(pairs) => {
            for &(i, j) in pairs {
                if let SpecCheck::Violation(v) = validate_spec(i, j, config) {
                    return Err(Error::Config(format!("grid pair ({i}, {j}): {v}")));
                }
            }
            pairs.to_vec()
        }
        None => full_grid(config.num_layers),
    };

    let lang = &ctx.lang_vectors.lang;
    let mut done: Vec<SweepEntry> = match cache {
        Some(path) => read_cache(path, lang)?,
        None => Vec::new(),
    };
    let pending: Vec<(usize, usize)> = grid
        .iter()
        .copied()
        .filter(|&(i, j)| !done.iter().any(|e| e.i == i && e.j == j))
        .collect();

    // The pivot runs hookless, once.
    let pivot_results =
        probe_language(ctx.model, ctx.pivot_queries, ctx.pool_cap, ctx.seed, &[])?;
    let (baseline_accuracy, baseline_transferability) = ctx.evaluate(None, &pivot_results)?;

    let fresh: Result<Vec<SweepEntry>> = pending
        .par_iter()
        .map(|&(i, j)| {
            let (acc, trans) = ctx.evaluate(Some((i, j)), &pivot_results)?;
            Ok(SweepEntry { i, j, accuracy: acc, transferability: trans })
        })
        .collect();
    let fresh = fresh?;
    if let Some(path) = cache {
        for entry in &fresh {
            append_cache(path, lang, entry)?;
        }
    }
    done.extend(fresh);
    done.retain(|e| grid.contains(&(e.i, e.j)));
    done.sort_by_key(|e| (e.i, e.j));
    done.dedup_by_key(|e| (e.i, e.j));
    Ok(SweepResult {
        lang: lang.clone(),
        entries: done,
        baseline_accuracy,
        baseline_transferability,
    })
}

/// Best configuration under `criterion`.
///
/// The argmax runs over the baseline and every entry; ties prefer the
/// baseline (no intervention), then smaller `i`, then smaller `j`.
pub fn select_best(result: &SweepResult, criterion: Criterion) -> (ConfigTag, f64) {
    let mut best_tag = ConfigTag::Baseline;
    let mut best_value = result.baseline_value(criterion);
    for entry in &result.entries {
        let value = entry.value(criterion);
        if value > best_value {
            best_value = value;
            best_tag = ConfigTag::Pair { lirp: entry.i, lsrp: entry.j };
        }
    }
    (best_tag, best_value)
}

/// Best value per layer gap `g = j - i`.
///
/// Several pairs share one gap; the curve keeps the best of each gap's
/// entries under `criterion`.
pub fn gap_curve(result: &SweepResult, criterion: Criterion) -> std::collections::BTreeMap<usize, f64> {
    let mut curve = std::collections::BTreeMap::new();
    for entry in &result.entries {
        let gap = entry.j - entry.i;
        let value = entry.value(criterion);
        curve
            .entry(gap)
            .and_modify(|v: &mut f64| {
                if value > *v {
                    *v = value;
                }
            })
            .or_insert(value);
    }
    curve
}
