//! The LIRP/LSRP projection pair.
//!
//! Both modules are parameter-free residual shifts built from language
//! vectors. At layer `i` the language-independent projection (LIRP) maps
//! every position's hidden state `h` to `h - v_lang + v_pivot`, carrying
//! the input language into the pivot's representation space; at a later
//! layer `j` the language-specific projection (LSRP) applies the opposite
//! shift `h - v_pivot + v_lang`, restoring language-specific
//! representations so the model can answer in the input language.
//!
//! Each hook captures a single precomputed delta vector, so equal
//! language and pivot vectors make the transform an exact identity, and
//! the two shifts at the same layer cancel additively.

use serde::{Deserialize, Serialize};

use crate::engine::{Hook, ModelConfig};
use crate::error::{Error, Result};
use crate::langvec::LanguageVectorSet;
use crate::tensor::Matrix;

/// A placed intervention: which language is projected, through which
/// pivot, and at which layer pair.
#[derive(Debug, Clone)]
pub struct InterventionSpec {
    pub lang: String,
    pub pivot: String,
    /// LIRP layer `i`, `1 <= i < j`.
    pub lirp_layer: usize,
    /// LSRP layer `j`, `i < j <= L`.
    pub lsrp_layer: usize,
    pub lang_vectors: LanguageVectorSet,
    pub pivot_vectors: LanguageVectorSet,
}

/// Outcome of checking a layer pair against the admissible range.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum SpecCheck {
    Ok,
    Violation(String),
}

impl SpecCheck {
    pub fn is_ok(&self) -> bool {
        matches!(self, SpecCheck::Ok)
    }
}

/// Check `1 <= i < j <= L` for a model with `config.num_layers` layers,
/// reporting the first violated bound.
pub fn validate_spec(lirp_layer: usize, lsrp_layer: usize, config: &ModelConfig) -> SpecCheck {
    let l = config.num_layers;
    if lirp_layer < 1 {
        return SpecCheck::Violation("i >= 1 required".into());
    }
    if lirp_layer >= l {
        return SpecCheck::Violation(format!("i < L required (i = {lirp_layer}, L = {l})"));
    }
    if lirp_layer >= lsrp_layer {
        return SpecCheck::Violation(format!("i < j required (i = {lirp_layer}, j = {lsrp_layer})"));
    }
    if lsrp_layer > l {
        return SpecCheck::Violation(format!("j <= L required (j = {lsrp_layer}, L = {l})"));
    }
    SpecCheck::Ok
}

impl InterventionSpec {
    pub fn new(
        lang_vectors: LanguageVectorSet,
        pivot_vectors: LanguageVectorSet,
        lirp_layer: usize,
        lsrp_layer: usize,
    ) -> Result<Self> {
        if lang_vectors.num_layers() != pivot_vectors.num_layers()
            || lang_vectors.hidden_dim() != pivot_vectors.hidden_dim()
        {
            return Err(Error::Config(format!(
                "vector sets disagree on geometry: {}x{} vs {}x{}",
                lang_vectors.num_layers(),
                lang_vectors.hidden_dim(),
                pivot_vectors.num_layers(),
                pivot_vectors.hidden_dim()
            )));
        }
        let l = lang_vectors.num_layers();
        if !(1 <= lirp_layer && lirp_layer < lsrp_layer && lsrp_layer <= l) {
            return Err(Error::Config(format!(
                "layer pair ({lirp_layer}, {lsrp_layer}) violates 1 <= i < j <= L for L = {l}"
            )));
        }
        Ok(InterventionSpec {
            lang: lang_vectors.lang.clone(),
            pivot: pivot_vectors.lang.clone(),
            lirp_layer,
            lsrp_layer,
            lang_vectors,
            pivot_vectors,
        })
    }

    /// Check geometry against a concrete model.
    pub fn validate_against(&self, config: &ModelConfig) -> Result<()> {
        if self.lang_vectors.num_layers() != config.num_layers
            || self.lang_vectors.hidden_dim() != config.hidden_dim
        {
            return Err(Error::Config(format!(
                "vector sets are {}x{} but the model is {}x{}",
                self.lang_vectors.num_layers(),
                self.lang_vectors.hidden_dim(),
                config.num_layers,
                config.hidden_dim
            )));
        }
        match validate_spec(self.lirp_layer, self.lsrp_layer, config) {
            SpecCheck::Ok => Ok(()),
            SpecCheck::Violation(v) => Err(Error::Config(v)),
        }
    }

    /// Build both hooks.
    pub fn hooks(&self) -> Result<(Hook, Hook)> {
        Ok((make_lirp(self)?, make_lsrp(self)?))
    }
}

fn shift_hook(layer: usize, delta: Vec<f32>) -> Hook {
    Hook::new(layer, move |hidden: &Matrix<f32>| {
        let mut out = hidden.clone();
        for p in 0..out.rows() {
            for (v, d) in out.row_mut(p).iter_mut().zip(&delta) {
                *v += *d;
            }
        }
        out
    })
}

fn layer_delta(spec: &InterventionSpec, layer: usize, from_lang: bool) -> Result<Vec<f32>> {
    if spec.lang_vectors.hidden_dim() != spec.pivot_vectors.hidden_dim() {
        return Err(Error::Config("vector sets disagree on hidden dimension".into()));
    }
    let (sub, add) = if from_lang {
        (spec.lang_vectors.layer(layer), spec.pivot_vectors.layer(layer))
    } else {
        (spec.pivot_vectors.layer(layer), spec.lang_vectors.layer(layer))
    };
    Ok(sub.iter().zip(add).map(|(&s, &a)| a - s).collect())
}

/// The language-independent projection: at layer `i`, every hidden row
/// becomes `h - v_lang + v_pivot`.
pub fn make_lirp(spec: &InterventionSpec) -> Result<Hook> {
    let delta = layer_delta(spec, spec.lirp_layer, true)?;
    Ok(shift_hook(spec.lirp_layer, delta))
}

/// The language-specific projection: at layer `j`, every hidden row
/// becomes `h - v_pivot + v_lang`.
pub fn make_lsrp(spec: &InterventionSpec) -> Result<Hook> {
    let delta = layer_delta(spec, spec.lsrp_layer, false)?;
    Ok(shift_hook(spec.lsrp_layer, delta))
}
