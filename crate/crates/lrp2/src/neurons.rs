//! Knowledge-neuron attribution and cross-lingual overlap.
//!
//! A knowledge neuron is an FFN-intermediate unit whose attribution for a
//! fact ranks in the per-layer top-k. Attribution follows the integrated
//! gradient along the 1-D activation-scaling path: with `F(a)` the gold
//! probability when the unit's post-GELU activation at the prediction
//! anchor is pinned to `a` (everything else, hooks included, unchanged),
//! the score is
//!
//! ```text
//! attr = w * (1/m) * sum_{t=1..m} F'(t/m * w)
//! ```
//!
//! where `w` is the unit's unscaled activation. `F'` comes from central
//! finite differences on the activation axis, which keeps the attribution
//! path independent of the trainer's backpropagation and cross-validates
//! it. As `m` grows the sum converges to `F(w) - F(0)`, the ablation
//! difference; for affine `F` any `m` is exact.
//!
//! Selection is ranked per layer at both stages: each prompt keeps its
//! top-k units per layer, and a relation keeps the per-layer top-k by
//! occurrence count across its prompts. Overlap between two languages'
//! sets is intersection-over-union on `(layer, index)` coordinates
//! (intersection-over-k is available for sensitivity checks); the
//! formula choice is recorded in every report header.

use std::collections::{BTreeMap, BTreeSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::engine::{self, FfnOverride, Hook, Mode, Model};
use crate::error::{Error, Result};
use crate::probing::{filled_tokens, masked_tokens, vocab_of, ProbeQuery};

/// One FFN-intermediate unit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct NeuronCoord {
    /// Block index in `[1, L]`.
    pub layer: usize,
    /// Intermediate coordinate in `[0, ffn_dim)`.
    pub index: usize,
}

/// Attribution hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AttributionConfig {
    /// Riemann steps `m` along the scaling path.
    pub riemann_steps: usize,
    /// Relative central-difference step on the activation axis.
    pub gradient_step: f64,
    /// Top-k size for per-layer selection.
    pub k: usize,
}

impl Default for AttributionConfig {
    fn default() -> Self {
        AttributionConfig { riemann_steps: 20, gradient_step: 1e-3, k: 20 }
    }
}

impl AttributionConfig {
    pub fn validate(&self) -> Result<()> {
        if self.riemann_steps == 0 {
            return Err(Error::Config("riemann_steps must be >= 1".into()));
        }
        if !(self.gradient_step > 0.0) {
            return Err(Error::Config("gradient_step must be positive".into()));
        }
        if self.k == 0 {
            return Err(Error::Config("top-k size must be >= 1".into()));
        }
        Ok(())
    }
}

/// Per-layer knowledge-neuron sets of one `(language, relation)`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KnowledgeNeuronSet {
    pub lang: String,
    pub relation: String,
    pub k: usize,
    /// Layer (1-based) to sorted FFN-intermediate indices, at most `k` each.
    pub per_layer: BTreeMap<usize, Vec<usize>>,
}

impl KnowledgeNeuronSet {
    /// All coordinates, flattened across layers.
    pub fn flatten(&self) -> BTreeSet<NeuronCoord> {
        self.per_layer
            .iter()
            .flat_map(|(&layer, indices)| indices.iter().map(move |&index| NeuronCoord { layer, index }))
            .collect()
    }

    fn layer_set(&self, layer: usize) -> BTreeSet<usize> {
        self.per_layer.get(&layer).map(|v| v.iter().copied().collect()).unwrap_or_default()
    }
}

/// The prediction target a prompt attributes against.
struct PromptTarget {
    tokens: Vec<u32>,
    /// Positions whose predictions define the gold probability.
    span: std::ops::Range<usize>,
    gold_ids: Vec<u32>,
    /// Position whose FFN activation is scaled: the first mask in masked
    /// mode, the position preceding the gold span in causal mode.
    anchor: usize,
}

fn prompt_target(model: &Model, query: &ProbeQuery) -> Result<PromptTarget> {
    let vocab = vocab_of(model)?;
    let gold_ids = vocab.tokenize(&query.object)?;
    if gold_ids.is_empty() {
        return Err(Error::Input(format!("gold object {:?} tokenizes to zero tokens", query.object)));
    }
    match model.config.mode {
        Mode::Masked => {
            let (tokens, span) = masked_tokens(vocab, query, gold_ids.len())?;
            let anchor = span.start;
            Ok(PromptTarget { tokens, span, gold_ids, anchor })
        }
        Mode::Causal => {
            let (tokens, span) = filled_tokens(vocab, query, &query.object)?;
            let anchor = span.start - 1; // prediction happens one position earlier
            Ok(PromptTarget { tokens, span, gold_ids, anchor })
        }
    }
}

/// Gold probability of a trace against a target.
///
/// Masked: the mean gold log-probability over the mask span, converted to
/// a probability. Causal: the gold span's chain-rule probability.
fn gold_probability(model: &Model, trace: &engine::LayerTrace, target: &PromptTarget) -> Result<f64> {
    let mut logprob = 0.0f64;
    match model.config.mode {
        Mode::Masked => {
            for (pos, &gold) in target.span.clone().zip(&target.gold_ids) {
                logprob += engine::token_logprobs(trace, pos)?[gold as usize];
            }
            logprob /= target.gold_ids.len() as f64;
        }
        Mode::Causal => {
            for (pos, &gold) in target.span.clone().zip(&target.gold_ids) {
                logprob += engine::token_logprobs(trace, pos - 1)?[gold as usize];
            }
        }
    }
    Ok(logprob.exp())
}

/// Integrated-gradient quadrature along the activation-scaling path.
///
/// `f(a)` must evaluate the target probability with the activation pinned
/// to `a`. The derivative at each Riemann node `t/m * wbar` is a central
/// difference with step `gradient_step * |wbar|`. Zero `wbar` means a
/// zero-length path: the attribution is exactly 0 and `f` is never called.
pub fn path_attribution(
    f: impl Fn(f64) -> Result<f64>,
    wbar: f64,
    cfg: &AttributionConfig,
) -> Result<f64> {
    cfg.validate()?;
    if wbar == 0.0 {
        return Ok(0.0);
    }
    let m = cfg.riemann_steps;
    let step = cfg.gradient_step * wbar.abs();
    let mut sum = 0.0f64;
    for t in 1..=m {
        let a = wbar * (t as f64 / m as f64);
        let hi = f(a + step)?;
        let lo = f(a - step)?;
        if !hi.is_finite() || !lo.is_finite() {
            return Err(Error::Numeric(format!("non-finite probability at activation {a}")));
        }
        sum += (hi - lo) / (2.0 * step);
    }
    Ok(wbar * sum / m as f64)
}

/// Attribution of one neuron for one prompt, hooks active throughout.
pub fn neuron_attribution(
    model: &Model,
    query: &ProbeQuery,
    coord: NeuronCoord,
    cfg: &AttributionConfig,
    hooks: &[Hook],
) -> Result<f64> {
    if coord.layer == 0 || coord.layer > model.config.num_layers || coord.index >= model.config.ffn_dim {
        return Err(Error::Input(format!(
            "neuron ({}, {}) out of bounds for {} layers x {} units",
            coord.layer, coord.index, model.config.num_layers, model.config.ffn_dim
        )));
    }
    let target = prompt_target(model, query)?;
    let (_, ffn) = engine::forward_with_ffn_capture(model, &target.tokens, hooks)?;
    let wbar = f64::from(ffn[coord.layer - 1].get(target.anchor, coord.index));
    let f = |a: f64| -> Result<f64> {
        let trace = engine::forward_with_ffn_override(
            model,
            &target.tokens,
            hooks,
            FfnOverride { layer: coord.layer, position: target.anchor, index: coord.index, value: a as f32 },
        )?;
        gold_probability(model, &trace, &target)
    };
    path_attribution(f, wbar, cfg)
}

/// Ablation difference `F(wbar) - F(0)` for one neuron — the value the
/// attribution converges to as `m` grows.
pub fn ablation_difference(
    model: &Model,
    query: &ProbeQuery,
    coord: NeuronCoord,
    hooks: &[Hook],
) -> Result<f64> {
    let target = prompt_target(model, query)?;
    let (trace, ffn) = engine::forward_with_ffn_capture(model, &target.tokens, hooks)?;
    let wbar = f64::from(ffn[coord.layer - 1].get(target.anchor, coord.index));
    let at_w = gold_probability(model, &trace, &target)?;
    let zeroed = engine::forward_with_ffn_override(
        model,
        &target.tokens,
        hooks,
        FfnOverride { layer: coord.layer, position: target.anchor, index: coord.index, value: 0.0 },
    )?;
    let at_zero = gold_probability(model, &zeroed, &target)?;
    let _ = wbar;
    Ok(at_w - at_zero)
}

/// Attribution of every neuron for one prompt: `num_layers` rows of
/// `ffn_dim` scores. Coordinates evaluate in parallel.
pub fn prompt_attributions(
    model: &Model,
    query: &ProbeQuery,
    cfg: &AttributionConfig,
    hooks: &[Hook],
) -> Result<Vec<Vec<f64>>> {
    cfg.validate()?;
    let target = prompt_target(model, query)?;
    let (_, ffn) = engine::forward_with_ffn_capture(model, &target.tokens, hooks)?;
    (1..=model.config.num_layers)
        .map(|layer| {
            (0..model.config.ffn_dim)
                .into_par_iter()
                .map(|index| {
                    let wbar = f64::from(ffn[layer - 1].get(target.anchor, index));
                    let f = |a: f64| -> Result<f64> {
                        let trace = engine::forward_with_ffn_override(
                            model,
                            &target.tokens,
                            hooks,
                            FfnOverride { layer, position: target.anchor, index, value: a as f32 },
                        )?;
                        gold_probability(model, &trace, &target)
                    };
                    path_attribution(f, wbar, cfg)
                })
                .collect::<Result<Vec<f64>>>()
        })
        .collect()
}

/// Per-layer top-k selection over one prompt's attribution scores.
/// Ties break toward the smaller index.
pub fn prompt_neurons(attributions: &[Vec<f64>], cfg: &AttributionConfig) -> BTreeMap<usize, Vec<usize>> {
    let mut per_layer = BTreeMap::new();
    for (layer_idx, scores) in attributions.iter().enumerate() {
        let mut order: Vec<usize> = (0..scores.len()).collect();
        order.sort_by(|&a, &b| {
            scores[b].partial_cmp(&scores[a]).unwrap_or(std::cmp::Ordering::Equal).then(a.cmp(&b))
        });
        let mut top: Vec<usize> = order.into_iter().take(cfg.k).collect();
        top.sort_unstable();
        per_layer.insert(layer_idx + 1, top);
    }
    per_layer
}

/// Per-layer top-k by occurrence count across a relation's prompt-level
/// sets. Ties break toward the smaller index.
pub fn relation_neurons(
    prompt_sets: &[BTreeMap<usize, Vec<usize>>],
    lang: &str,
    relation: &str,
    cfg: &AttributionConfig,
) -> Result<KnowledgeNeuronSet> {
    if prompt_sets.is_empty() {
        return Err(Error::Input(format!("no prompt-level sets for {lang}/{relation}")));
    }
    let mut counts: BTreeMap<usize, BTreeMap<usize, usize>> = BTreeMap::new();
    for set in prompt_sets {
        for (&layer, indices) in set {
            let layer_counts = counts.entry(layer).or_default();
            for &index in indices {
                *layer_counts.entry(index).or_insert(0) += 1;
            }
        }
    }
    let mut per_layer = BTreeMap::new();
    for (layer, layer_counts) in counts {
        let mut items: Vec<(usize, usize)> =
            layer_counts.into_iter().map(|(index, count)| (index, count)).collect();
        items.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
        let mut top: Vec<usize> = items.into_iter().take(cfg.k).map(|(index, _)| index).collect();
        top.sort_unstable();
        per_layer.insert(layer, top);
    }
    Ok(KnowledgeNeuronSet { lang: lang.into(), relation: relation.into(), k: cfg.k, per_layer })
}

/// Identify a relation's knowledge neurons end to end.
pub fn relation_neuron_sets(
    model: &Model,
    queries: &[&ProbeQuery],
    lang: &str,
    relation: &str,
    cfg: &AttributionConfig,
    hooks: &[Hook],
) -> Result<KnowledgeNeuronSet> {
    let prompt_sets: Result<Vec<_>> = queries
        .iter()
        .map(|q| Ok(prompt_neurons(&prompt_attributions(model, q, cfg, hooks)?, cfg)))
        .collect();
    relation_neurons(&prompt_sets?, lang, relation, cfg)
}

/// Overlap denominator choice.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OverlapFormula {
    /// `100 * |A ∩ B| / |A ∪ B|` — the default, recorded in every report.
    IntersectionOverUnion,
    /// `100 * |A ∩ B| / max(|A|, |B|)` — sensitivity check.
    IntersectionOverK,
}

impl std::fmt::Display for OverlapFormula {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            OverlapFormula::IntersectionOverUnion => write!(f, "intersection-over-union"),
            OverlapFormula::IntersectionOverK => write!(f, "intersection-over-k"),
        }
    }
}

/// Restrict overlap to one layer or pool across all layers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OverlapScope {
    Pooled,
    Layer(usize),
}

fn set_overlap(a: &BTreeSet<usize>, b: &BTreeSet<usize>, formula: OverlapFormula) -> f64 {
    let inter = a.intersection(b).count();
    let denom = match formula {
        OverlapFormula::IntersectionOverUnion => a.union(b).count(),
        OverlapFormula::IntersectionOverK => a.len().max(b.len()),
    };
    if denom == 0 {
        return 0.0; // two empty sets share nothing worth rewarding
    }
    100.0 * inter as f64 / denom as f64
}

/// Overlap rate of two neuron sets under `formula`.
pub fn overlap_rate_with(
    a: &KnowledgeNeuronSet,
    b: &KnowledgeNeuronSet,
    scope: OverlapScope,
    formula: OverlapFormula,
) -> f64 {
    match scope {
        OverlapScope::Pooled => {
            let fa: BTreeSet<usize> = a
                .flatten()
                .into_iter()
                .map(|c| c.layer * 1_000_000 + c.index)
                .collect();
            let fb: BTreeSet<usize> =
                b.flatten().into_iter().map(|c| c.layer * 1_000_000 + c.index).collect();
            set_overlap(&fa, &fb, formula)
        }
        OverlapScope::Layer(layer) => set_overlap(&a.layer_set(layer), &b.layer_set(layer), formula),
    }
}

/// Intersection-over-union overlap rate (the documented default).
pub fn overlap_rate(a: &KnowledgeNeuronSet, b: &KnowledgeNeuronSet, scope: OverlapScope) -> f64 {
    overlap_rate_with(a, b, scope, OverlapFormula::IntersectionOverUnion)
}

/// Cross-language overlap aggregated over relations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverlapReport {
    pub formula: OverlapFormula,
    /// Mean pooled overlap over matched relation pairs.
    pub same: Option<f64>,
    /// Mean pooled overlap over ordered unmatched relation pairs.
    pub different: Option<f64>,
    /// Mean pooled overlap over all ordered relation pairs.
    pub avg: f64,
    /// Per-layer mean overlap over matched relation pairs.
    pub per_layer: BTreeMap<usize, f64>,
}

/// Compare two languages' relation sets (matched by relation id).
pub fn overlap_report(
    sets_a: &[KnowledgeNeuronSet],
    sets_b: &[KnowledgeNeuronSet],
    num_layers: usize,
    formula: OverlapFormula,
) -> Result<OverlapReport> {
    if sets_a.is_empty() || sets_b.is_empty() {
        return Err(Error::Input("overlap report needs sets for both languages".into()));
    }
    let by_relation_b: BTreeMap<&str, &KnowledgeNeuronSet> =
        sets_b.iter().map(|s| (s.relation.as_str(), s)).collect();

    let mut same_vals = Vec::new();
    let mut diff_vals = Vec::new();
    let mut all_vals = Vec::new();
    for a in sets_a {
        for b in sets_b {
            let value = overlap_rate_with(a, b, OverlapScope::Pooled, formula);
            all_vals.push(value);
            if a.relation == b.relation {
                same_vals.push(value);
            } else {
                diff_vals.push(value);
            }
        }
    }
    let mean = |vals: &[f64]| -> Option<f64> {
        if vals.is_empty() {
            None
        } else {
            Some(vals.iter().sum::<f64>() / vals.len() as f64)
        }
    };

    let mut per_layer = BTreeMap::new();
    for layer in 1..=num_layers {
        let mut vals = Vec::new();
        for a in sets_a {
            if let Some(b) = by_relation_b.get(a.relation.as_str()) {
                vals.push(overlap_rate_with(a, b, OverlapScope::Layer(layer), formula));
            }
        }
        if let Some(v) = mean(&vals) {
            per_layer.insert(layer, v);
        }
    }

    Ok(OverlapReport {
        formula,
        same: mean(&same_vals),
        different: mean(&diff_vals),
        avg: mean(&all_vals).expect("at least one pair"),
        per_layer,
    })
}
