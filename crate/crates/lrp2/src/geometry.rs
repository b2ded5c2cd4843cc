//! Layer-wise representation-space distance between a language pair.
//!
//! For uuid-matched parallel sentences, this reports the mean cosine
//! similarity of the two sides' sentence vectors at every layer,
//! embedding output included. Higher means closer; no conversion to
//! `1 - cos` is applied. Hooks attach per side, so the non-pivot side can
//! run under an intervention while the pivot side stays untouched.

use serde::{Deserialize, Serialize};

use crate::engine::{self, Hook, Mode, Model};
use crate::error::{Error, Result};
use crate::langvec::{content_positions, sentence_vector};
use crate::tensor::cosine_f64;

/// Which intervention (if any) a curve was measured under.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ConfigTag {
    Baseline,
    Pair { lirp: usize, lsrp: usize },
}

impl std::fmt::Display for ConfigTag {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ConfigTag::Baseline => write!(f, "baseline"),
            ConfigTag::Pair { lirp, lsrp } => write!(f, "{lirp}/{lsrp}"),
        }
    }
}

impl std::str::FromStr for ConfigTag {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "baseline" {
            return Ok(ConfigTag::Baseline);
        }
        let (i, j) = s
            .split_once('/')
            .ok_or_else(|| Error::Validation(format!("bad config tag {s:?}")))?;
        let lirp = i.parse().map_err(|_| Error::Validation(format!("bad config tag {s:?}")))?;
        let lsrp = j.parse().map_err(|_| Error::Validation(format!("bad config tag {s:?}")))?;
        Ok(ConfigTag::Pair { lirp, lsrp })
    }
}

/// Mean per-layer cosine similarity between two languages' sentence
/// representations: `num_layers + 1` values, index 0 for the embedding
/// output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpaceDistanceCurve {
    pub lang_pair: (String, String),
    pub values: Vec<f64>,
    pub config: ConfigTag,
}

fn with_bos(model: &Model, sentence: &[u32]) -> Vec<u32> {
    match model.config.mode {
        Mode::Causal => {
            let mut t = Vec::with_capacity(sentence.len() + 1);
            t.push(model.config.bos_token_id);
            t.extend_from_slice(sentence);
            t
        }
        Mode::Masked => sentence.to_vec(),
    }
}

/// Uuid-matched parallel token pairs for a language pair, built from
/// probe queries with the object slot stripped. Pairs come back in uuid
/// order; the first side of each pair is the target language.
pub fn probe_parallel_pairs(
    model: &Model,
    target: &[crate::probing::ProbeQuery],
    pivot: &[crate::probing::ProbeQuery],
) -> Result<Vec<(Vec<u32>, Vec<u32>)>> {
    let vocab = model
        .vocab
        .as_ref()
        .ok_or_else(|| Error::Config("model carries no vocabulary; cannot render parallel pairs".into()))?;
    let mut pivot_by_uuid: std::collections::BTreeMap<&str, &crate::probing::ProbeQuery> =
        pivot.iter().map(|q| (q.uuid.as_str(), q)).collect();
    let mut ordered: Vec<&crate::probing::ProbeQuery> = target.iter().collect();
    ordered.sort_by(|a, b| a.uuid.cmp(&b.uuid));
    let mut pairs = Vec::new();
    for q in ordered {
        if let Some(p) = pivot_by_uuid.remove(q.uuid.as_str()) {
            pairs.push((
                vocab.tokenize(&crate::probing::render_stripped(q))?,
                vocab.tokenize(&crate::probing::render_stripped(p))?,
            ));
        }
    }
    if pairs.is_empty() {
        return Err(Error::Input("no uuid-matched parallel queries between the two languages".into()));
    }
    Ok(pairs)
}

/// Per-layer cosine curve over parallel sentence pairs.
///
/// `hooks_a` install on the first side of every pair, `hooks_b` on the
/// second; pass an empty slice to run a side hookless.
pub fn layerwise_cosine(
    model: &Model,
    pairs: &[(Vec<u32>, Vec<u32>)],
    hooks_a: &[Hook],
    hooks_b: &[Hook],
) -> Result<Vec<f64>> {
    if pairs.is_empty() {
        return Err(Error::Input("no parallel pairs supplied".into()));
    }
    let layers = model.config.num_layers + 1;
    let mut acc = vec![0.0f64; layers];
    for (pair_idx, (sent_a, sent_b)) in pairs.iter().enumerate() {
        let tokens_a = with_bos(model, sent_a);
        let tokens_b = with_bos(model, sent_b);
        let pooled_a = content_positions(&tokens_a, &model.config);
        let pooled_b = content_positions(&tokens_b, &model.config);
        if pooled_a.is_empty() || pooled_b.is_empty() {
            return Err(Error::Input(format!("pair {pair_idx} has a side with no content tokens")));
        }
        let trace_a = engine::forward(model, &tokens_a, hooks_a)?;
        let trace_b = engine::forward(model, &tokens_b, hooks_b)?;
        for layer in 0..layers {
            let va = sentence_vector(&trace_a, layer, &pooled_a)?;
            let vb = sentence_vector(&trace_b, layer, &pooled_b)?;
            let cos = cosine_f64(&va, &vb).ok_or_else(|| {
                Error::Numeric(format!("zero-norm sentence vector at layer {layer}, pair {pair_idx}"))
            })?;
            acc[layer] += cos;
        }
    }
    let inv = 1.0 / pairs.len() as f64;
    for v in acc.iter_mut() {
        *v *= inv;
    }
    Ok(acc)
}
