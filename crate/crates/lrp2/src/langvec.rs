//! Per-language, per-layer mean representation vectors.
//!
//! A language's vector at layer `i` is the mean, over a sentence corpus,
//! of the mean-pooled layer-`i` token representations of each sentence.
//! Pooling covers content tokens only: padding, mask, and BOS positions
//! are excluded so position-count artifacts cannot leak into the means.
//! Extraction always runs hookless forwards; vectors describe the model
//! as it is, not as an intervention reshapes it.

use std::path::Path;

use crate::engine::{self, LayerTrace, LrpwFile, LrpwTensor, Model};
use crate::error::{Error, Result};
use crate::tensor::Matrix;

/// The stack of per-layer mean vectors for one language.
#[derive(Debug, Clone, PartialEq)]
pub struct LanguageVectorSet {
    pub lang: String,
    /// `num_layers x hidden_dim`; row `i - 1` holds the layer-`i` vector.
    pub vectors: Matrix<f32>,
    /// How many sentences the means were taken over.
    pub num_sentences: usize,
}

impl LanguageVectorSet {
    /// The layer-`i` vector (1-based).
    pub fn layer(&self, layer: usize) -> &[f32] {
        self.vectors.row(layer - 1)
    }

    pub fn num_layers(&self) -> usize {
        self.vectors.rows()
    }

    pub fn hidden_dim(&self) -> usize {
        self.vectors.cols()
    }
}

/// Mean of the hidden rows at `pooled_positions` in layer `layer` of the
/// trace, accumulated in `f64`.
///
/// `layer` indexes the trace's hidden states: `0` is the embedding
/// output, `1..=L` the block outputs.
pub fn sentence_vector(trace: &LayerTrace, layer: usize, pooled_positions: &[usize]) -> Result<Vec<f64>> {
    if pooled_positions.is_empty() {
        return Err(Error::Input("empty pooled position set".into()));
    }
    let hidden = trace
        .hidden
        .get(layer)
        .ok_or_else(|| Error::Input(format!("layer {layer} out of range (trace holds {})", trace.hidden.len())))?;
    let (seq, n) = hidden.shape();
    let mut acc = vec![0.0f64; n];
    for &p in pooled_positions {
        if p >= seq {
            return Err(Error::Input(format!("pooled position {p} out of range (seq_len {seq})")));
        }
        for (a, &v) in acc.iter_mut().zip(hidden.row(p)) {
            *a += f64::from(v);
        }
    }
    let inv = 1.0 / pooled_positions.len() as f64;
    for a in acc.iter_mut() {
        *a *= inv;
    }
    Ok(acc)
}

/// Positions of content tokens: everything except mask, pad, and BOS.
pub fn content_positions(token_ids: &[u32], config: &engine::ModelConfig) -> Vec<usize> {
    let specials = config.special_token_ids();
    token_ids
        .iter()
        .enumerate()
        .filter(|(_, id)| !specials.contains(id))
        .map(|(p, _)| p)
        .collect()
}

/// Compute the full vector stack for a language from raw sentences.
///
/// Causal models get a BOS prepended before the forward pass; BOS never
/// enters the pooling. Means are accumulated in `f64` in sentence order
/// and rounded to `f32` once at the end.
pub fn language_vectors(model: &Model, sentences: &[Vec<u32>], lang: &str) -> Result<LanguageVectorSet> {
    if sentences.is_empty() {
        return Err(Error::Input(format!("no sentences supplied for language {lang}")));
    }
    let num_layers = model.config.num_layers;
    let n = model.config.hidden_dim;
    let mut acc = vec![vec![0.0f64; n]; num_layers];
    for (idx, sentence) in sentences.iter().enumerate() {
        let tokens = match model.config.mode {
            engine::Mode::Causal => {
                let mut t = Vec::with_capacity(sentence.len() + 1);
                t.push(model.config.bos_token_id);
                t.extend_from_slice(sentence);
                t
            }
            engine::Mode::Masked => sentence.clone(),
        };
        let pooled = content_positions(&tokens, &model.config);
        if pooled.is_empty() {
            return Err(Error::Input(format!("sentence {idx} of language {lang} has no content tokens")));
        }
        let trace = engine::forward(model, &tokens, &[])?;
        for layer in 1..=num_layers {
            let sv = sentence_vector(&trace, layer, &pooled)?;
            for (a, v) in acc[layer - 1].iter_mut().zip(sv) {
                *a += v;
            }
        }
    }
    let inv = 1.0 / sentences.len() as f64;
    let mut data = Vec::with_capacity(num_layers * n);
    for layer_acc in &acc {
        for &v in layer_acc {
            data.push((v * inv) as f32);
        }
    }
    Ok(LanguageVectorSet {
        lang: lang.to_string(),
        vectors: Matrix::from_vec(num_layers, n, data),
        num_sentences: sentences.len(),
    })
}

#[derive(serde::Serialize, serde::Deserialize)]
struct Sidecar {
    lang: String,
    num_sentences: usize,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    provenance: Option<crate::provenance::RunMeta>,
}

/// Persist as an LRPW file (tensor `langvec/<lang>`, shape `[L, n]`) plus
/// a JSON sidecar recording the language and sentence count.
pub fn save_language_vectors(set: &LanguageVectorSet, path: &Path) -> Result<()> {
    save_language_vectors_with_meta(set, path, None)
}

/// As [`save_language_vectors`], with run provenance in the sidecar.
pub fn save_language_vectors_with_meta(
    set: &LanguageVectorSet,
    path: &Path,
    provenance: Option<&crate::provenance::RunMeta>,
) -> Result<()> {
    let file = LrpwFile {
        config: None,
        vocab: None,
        tensors: vec![LrpwTensor {
            name: format!("langvec/{}", set.lang),
            shape: vec![set.vectors.rows(), set.vectors.cols()],
            data: set.vectors.data().to_vec(),
        }],
    };
    engine::save_lrpw(&file, path)?;
    let sidecar = Sidecar {
        lang: set.lang.clone(),
        num_sentences: set.num_sentences,
        provenance: provenance.cloned(),
    };
    std::fs::write(sidecar_path(path), serde_json::to_string_pretty(&sidecar)?)?;
    Ok(())
}

/// Load a vector set saved by [`save_language_vectors`].
pub fn load_language_vectors(path: &Path) -> Result<LanguageVectorSet> {
    let file = engine::load_lrpw(path)?;
    let tensor = file
        .tensors
        .first()
        .ok_or_else(|| Error::Integrity(format!("{}: no tensors", path.display())))?;
    let lang = tensor
        .name
        .strip_prefix("langvec/")
        .ok_or_else(|| Error::Integrity(format!("{}: tensor {} is not a language-vector stack", path.display(), tensor.name)))?
        .to_string();
    if tensor.shape.len() != 2 {
        return Err(Error::Integrity(format!("{}: expected rank-2 tensor, got {:?}", path.display(), tensor.shape)));
    }
    if tensor.data.iter().any(|v| !v.is_finite()) {
        return Err(Error::Integrity(format!("{}: non-finite vector entries", path.display())));
    }
    let num_sentences = match std::fs::read(sidecar_path(path)) {
        Ok(bytes) => serde_json::from_slice::<Sidecar>(&bytes)?.num_sentences,
        Err(_) => 1, // sidecar is informative only
    };
    Ok(LanguageVectorSet {
        lang,
        vectors: Matrix::from_vec(tensor.shape[0], tensor.shape[1], tensor.data.clone()),
        num_sentences,
    })
}

fn sidecar_path(path: &Path) -> std::path::PathBuf {
    let mut s = path.as_os_str().to_os_string();
    s.push(".json");
    std::path::PathBuf::from(s)
}
