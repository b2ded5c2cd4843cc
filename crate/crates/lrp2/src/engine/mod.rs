//! Minimal deterministic transformer engine.
//!
//! The engine runs a pre-layer-norm transformer in either masked
//! (bidirectional) or causal mode, records every layer's residual-stream
//! output in a [`LayerTrace`], and lets callers install [`Hook`]s that
//! rewrite a layer's output before it feeds the next block. Models are
//! immutable after construction; `forward` is a pure function of
//! `(model, tokens, hooks)`, so concurrent forwards over a shared model
//! are safe.

mod lrpw;
mod math;
pub mod weights;

use std::sync::Arc;

use num_traits::Float;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Matrix;
use crate::tokenizer::Vocab;
use weights::Weights;

pub use lrpw::{load_lrpw, lrpw_from_bytes, lrpw_to_bytes, save_lrpw, LrpwFile, LrpwTensor, LRPW_VERSION};
pub use math::{FfnOverride, Trace};
pub(crate) use math::{forward_full, ForwardOpts};
pub(crate) use math::{gelu as math_gelu, gelu_grad as math_gelu_grad, linear as math_linear};

/// Attention visibility mode.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// Bidirectional attention; cloze queries are answered at mask positions.
    Masked,
    /// Strictly left-to-right attention (each position sees itself and
    /// everything before it); queries are scored as full-sentence
    /// generation probabilities.
    Causal,
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Mode::Masked => write!(f, "masked"),
            Mode::Causal => write!(f, "causal"),
        }
    }
}

/// Architecture and tokenization constants of a model.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub num_layers: usize,
    pub hidden_dim: usize,
    pub num_heads: usize,
    pub ffn_dim: usize,
    pub vocab_size: usize,
    pub max_seq_len: usize,
    pub mode: Mode,
    pub mask_token_id: u32,
    pub pad_token_id: u32,
    pub bos_token_id: u32,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_layers == 0 {
            return Err(Error::Config("num_layers must be >= 1".into()));
        }
        for (name, v) in [
            ("hidden_dim", self.hidden_dim),
            ("num_heads", self.num_heads),
            ("ffn_dim", self.ffn_dim),
            ("vocab_size", self.vocab_size),
            ("max_seq_len", self.max_seq_len),
        ] {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if self.hidden_dim % self.num_heads != 0 {
            return Err(Error::Config(format!(
                "hidden_dim {} not divisible by num_heads {}",
                self.hidden_dim, self.num_heads
            )));
        }
        for (name, id) in [
            ("mask_token_id", self.mask_token_id),
            ("pad_token_id", self.pad_token_id),
            ("bos_token_id", self.bos_token_id),
        ] {
            if id as usize >= self.vocab_size {
                return Err(Error::Config(format!(
                    "{name} {id} out of range (vocab_size {})",
                    self.vocab_size
                )));
            }
        }
        Ok(())
    }

    /// Ids treated as non-content when pooling token representations.
    pub fn special_token_ids(&self) -> [u32; 3] {
        [self.mask_token_id, self.pad_token_id, self.bos_token_id]
    }
}

/// An immutable transformer model: config, parameters, and (for toy
/// models) the surface-form vocabulary bundled in the weight file.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub weights: Weights<f32>,
    /// Surface forms for whitespace tokenization. `None` for imported
    /// models probed with externally produced token ids.
    pub vocab: Option<Vocab>,
}

/// A residual-stream rewrite installed after one block.
///
/// The transform must be pure, reentrant, and shape-preserving; at most
/// one hook may be installed per layer.
#[derive(Clone)]
pub struct Hook<T = f32> {
    layer: usize,
    transform: Arc<dyn Fn(&Matrix<T>) -> Matrix<T> + Send + Sync>,
}

impl<T> Hook<T> {
    /// Hook `transform` into the output of block `layer` (1-based).
    pub fn new(
        layer: usize,
        transform: impl Fn(&Matrix<T>) -> Matrix<T> + Send + Sync + 'static,
    ) -> Self {
        Hook { layer, transform: Arc::new(transform) }
    }

    pub fn layer(&self) -> usize {
        self.layer
    }

    pub fn apply(&self, hidden: &Matrix<T>) -> Matrix<T> {
        (self.transform)(hidden)
    }
}

impl<T> std::fmt::Debug for Hook<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Hook").field("layer", &self.layer).finish()
    }
}

/// Per-layer hidden states and logits of one forward pass.
pub type LayerTrace = Trace<f32>;

/// Run the model over `token_ids` with the given hooks installed.
pub fn forward(model: &Model, token_ids: &[u32], hooks: &[Hook]) -> Result<LayerTrace> {
    let opts = ForwardOpts { hooks, ..ForwardOpts::default() };
    Ok(forward_full(&model.config, &model.weights, token_ids, &opts)?.trace)
}

/// Forward pass that also returns each block's post-GELU FFN activations.
pub fn forward_with_ffn_capture(
    model: &Model,
    token_ids: &[u32],
    hooks: &[Hook],
) -> Result<(LayerTrace, Vec<Matrix<f32>>)> {
    let opts = ForwardOpts { hooks, ffn_override: None, capture_ffn: true };
    let out = forward_full(&model.config, &model.weights, token_ids, &opts)?;
    Ok((out.trace, out.ffn_activations.expect("capture requested")))
}

/// Forward pass with one FFN-intermediate activation pinned to a value.
pub fn forward_with_ffn_override(
    model: &Model,
    token_ids: &[u32],
    hooks: &[Hook],
    ffn_override: FfnOverride<f32>,
) -> Result<LayerTrace> {
    let opts = ForwardOpts { hooks, ffn_override: Some(ffn_override), capture_ffn: false };
    Ok(forward_full(&model.config, &model.weights, token_ids, &opts)?.trace)
}

/// Log-softmax of the logits at one position, accumulated in `f64`.
///
/// The returned vector has non-positive entries and log-sum-exp zero.
pub fn token_logprobs(trace: &LayerTrace, position: usize) -> Result<Vec<f64>> {
    if position >= trace.logits.rows() {
        return Err(Error::Input(format!(
            "position {position} out of range (seq_len {})",
            trace.logits.rows()
        )));
    }
    Ok(logprobs_row(trace.logits.row(position)))
}

/// Log-softmax of one logit row in `f64`.
pub fn logprobs_row(row: &[f32]) -> Vec<f64> {
    let mut max = f64::NEG_INFINITY;
    for &v in row {
        let v = f64::from(v);
        if v > max {
            max = v;
        }
    }
    let mut sum = 0.0;
    for &v in row {
        sum += (f64::from(v) - max).exp();
    }
    let log_z = max + sum.ln();
    row.iter().map(|&v| f64::from(v) - log_z).collect()
}

/// Deterministically initialize a model from `(config, seed)`.
///
/// Embeddings and projection matrices draw from scaled uniform
/// distributions; norms start at identity and biases at zero. The fill
/// order is the tensor manifest order, so equal seeds give bit-identical
/// models.
pub fn init_random(config: &ModelConfig, seed: u64) -> Result<Model> {
    config.validate()?;
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut weights = Weights::<f32>::zeros(config);
    let n = config.hidden_dim as f64;
    let ffn = config.ffn_dim as f64;
    weights.visit_mut(|name, data| {
        let fill_uniform = |data: &mut [f32], rng: &mut ChaCha20Rng, bound: f64| {
            for v in data.iter_mut() {
                let u: f64 = rand::Rng::random(rng);
                *v = ((u * 2.0 - 1.0) * bound) as f32;
            }
        };
        if name == "token_embedding" || name == "position_embedding" {
            fill_uniform(data, &mut rng, (3.0 / n).sqrt());
        } else if name.ends_with(".gamma") {
            data.fill(1.0);
        } else if name.ends_with(".beta") || name.contains(".attn.b") || name.contains(".ffn.b") {
            data.fill(0.0);
        } else if name.contains(".ffn.w1") {
            fill_uniform(data, &mut rng, (6.0 / (n + ffn)).sqrt());
        } else if name.contains(".ffn.w2") {
            fill_uniform(data, &mut rng, (6.0 / (ffn + n)).sqrt());
        } else {
            // Attention projections, n x n.
            fill_uniform(data, &mut rng, (6.0 / (n + n)).sqrt());
        }
    });
    Ok(Model { config: config.clone(), weights, vocab: None })
}

/// Write a model (config, optional vocab, tensors) to an LRPW file.
pub fn save_weights(model: &Model, path: &std::path::Path) -> Result<()> {
    let mut tensors = Vec::new();
    model.weights.visit(|name, shape, data| {
        tensors.push(LrpwTensor { name: name.to_string(), shape, data: data.to_vec() });
    });
    let file = LrpwFile {
        config: Some(model.config.clone()),
        vocab: model.vocab.as_ref().map(|v| v.surfaces().to_vec()),
        tensors,
    };
    save_lrpw(&file, path)
}

/// Load a model from an LRPW file, verifying header/payload consistency.
pub fn load_weights(path: &std::path::Path) -> Result<Model> {
    let file = load_lrpw(path)?;
    let config = file
        .config
        .clone()
        .ok_or_else(|| Error::Integrity(format!("{}: header carries no model config", path.display())))?;
    config.validate().map_err(|e| Error::Integrity(format!("{}: {e}", path.display())))?;

    let expected = weights::tensor_manifest(&config);
    if file.tensors.len() != expected.len() {
        return Err(Error::Integrity(format!(
            "{}: header declares {} tensors, config implies {}",
            path.display(),
            file.tensors.len(),
            expected.len()
        )));
    }
    for (tensor, (name, shape)) in file.tensors.iter().zip(expected.iter()) {
        if &tensor.name != name || &tensor.shape != shape {
            return Err(Error::Integrity(format!(
                "{}: tensor {} with shape {:?} does not match expected {} {:?}",
                path.display(),
                tensor.name,
                tensor.shape,
                name,
                shape
            )));
        }
    }

    let vocab = match &file.vocab {
        Some(surfaces) => Some(Vocab::from_surfaces(surfaces.clone(), &config)?),
        None => None,
    };

    let mut weights = Weights::<f32>::zeros(&config);
    let mut iter = file.tensors.into_iter();
    let mut bad: Option<String> = None;
    weights.visit_mut(|name, data| {
        let tensor = iter.next().expect("manifest length checked");
        debug_assert_eq!(tensor.name, name);
        if tensor.data.iter().any(|v| !v.is_finite()) && bad.is_none() {
            bad = Some(name.to_string());
        }
        data.copy_from_slice(&tensor.data);
    });
    if let Some(name) = bad {
        return Err(Error::Integrity(format!(
            "{}: tensor {name} contains non-finite values",
            path.display()
        )));
    }
    Ok(Model { config, weights, vocab })
}

/// Identity hook, useful for asserting hook plumbing is a no-op.
pub fn identity_hook<T: Float>(layer: usize) -> Hook<T> {
    Hook::new(layer, |h: &Matrix<T>| h.clone())
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn test_config(mode: Mode) -> ModelConfig {
        ModelConfig {
            num_layers: 2,
            hidden_dim: 8,
            num_heads: 2,
            ffn_dim: 16,
            vocab_size: 12,
            max_seq_len: 10,
            mode,
            mask_token_id: 0,
            pad_token_id: 1,
            bos_token_id: 2,
        }
    }

    #[test]
    fn init_is_deterministic() {
        let config = test_config(Mode::Masked);
        let a = init_random(&config, 7).unwrap();
        let b = init_random(&config, 7).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn different_seeds_differ() {
        let config = test_config(Mode::Masked);
        let a = init_random(&config, 7).unwrap();
        let b = init_random(&config, 8).unwrap();
        assert_ne!(a, b);
    }

    #[test]
    fn invalid_head_split_rejected() {
        let mut config = test_config(Mode::Masked);
        config.hidden_dim = 6;
        config.num_heads = 4;
        let err = init_random(&config, 0).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn identity_hook_is_noop() {
        let config = test_config(Mode::Masked);
        let model = init_random(&config, 3).unwrap();
        let tokens = [3u32, 4, 5];
        let plain = forward(&model, &tokens, &[]).unwrap();
        let hooked = forward(&model, &tokens, &[identity_hook(1)]).unwrap();
        assert_eq!(plain.logits, hooked.logits);
        for (a, b) in plain.hidden.iter().zip(hooked.hidden.iter()) {
            assert_eq!(a, b);
        }
    }

    #[test]
    fn hook_locality_preserves_earlier_layers() {
        let config = test_config(Mode::Masked);
        let model = init_random(&config, 3).unwrap();
        let tokens = [3u32, 4, 5];
        let plain = forward(&model, &tokens, &[]).unwrap();
        let hook = Hook::new(2, |h: &Matrix<f32>| {
            let mut out = h.clone();
            for v in out.data_mut() {
                *v += 1.0;
            }
            out
        });
        let hooked = forward(&model, &tokens, &[hook]).unwrap();
        assert_eq!(plain.hidden[0], hooked.hidden[0]);
        assert_eq!(plain.hidden[1], hooked.hidden[1]);
        assert_ne!(plain.hidden[2], hooked.hidden[2]);
    }

    #[test]
    fn duplicate_hooks_rejected() {
        let config = test_config(Mode::Masked);
        let model = init_random(&config, 3).unwrap();
        let err = forward(&model, &[3], &[identity_hook(1), identity_hook(1)]).unwrap_err();
        assert!(matches!(err, Error::Input(_)));
    }

    #[test]
    fn causal_prefix_stability() {
        let config = test_config(Mode::Causal);
        let model = init_random(&config, 11).unwrap();
        let short = forward(&model, &[2, 3, 4], &[]).unwrap();
        let long = forward(&model, &[2, 3, 4, 5], &[]).unwrap();
        for p in 0..3 {
            assert_eq!(short.logits.row(p), &long.logits.row(p)[..]);
        }
    }

    #[test]
    fn masked_mode_sees_suffix() {
        let config = test_config(Mode::Masked);
        let model = init_random(&config, 11).unwrap();
        let a = forward(&model, &[2, 3, 4], &[]).unwrap();
        let b = forward(&model, &[2, 3, 5], &[]).unwrap();
        assert_ne!(a.logits.row(0), b.logits.row(0));
    }

    #[test]
    fn logprobs_normalize() {
        let config = test_config(Mode::Masked);
        let model = init_random(&config, 5).unwrap();
        let trace = forward(&model, &[3, 4], &[]).unwrap();
        for p in 0..2 {
            let lp = token_logprobs(&trace, p).unwrap();
            assert!(lp.iter().all(|&v| v <= 0.0));
            let total: f64 = lp.iter().map(|v| v.exp()).sum();
            assert!((total - 1.0).abs() < 1e-6, "sum {total}");
        }
        assert!(matches!(token_logprobs(&trace, 2), Err(Error::Input(_))));
    }

    #[test]
    fn uniform_logits_give_uniform_logprobs() {
        let trace = Trace { hidden: vec![], logits: Matrix::filled(1, 8, 0.25f32) };
        let lp = token_logprobs(&trace, 0).unwrap();
        for v in lp {
            assert!((v - (1.0f64 / 8.0).ln()).abs() < 1e-9);
        }
    }

    #[test]
    fn logprob_shift_invariance() {
        let base = Trace { hidden: vec![], logits: Matrix::from_vec(1, 4, vec![0.3f32, -1.0, 2.0, 0.0]) };
        let shifted = Trace {
            hidden: vec![],
            logits: Matrix::from_vec(1, 4, vec![5.3f32, 4.0, 7.0, 5.0]),
        };
        let a = token_logprobs(&base, 0).unwrap();
        let b = token_logprobs(&shifted, 0).unwrap();
        for (x, y) in a.iter().zip(b.iter()) {
            assert!((x - y).abs() < 1e-6);
        }
    }

    #[test]
    fn out_of_range_inputs_rejected() {
        let config = test_config(Mode::Masked);
        let model = init_random(&config, 5).unwrap();
        assert!(matches!(forward(&model, &[99], &[]), Err(Error::Input(_))));
        let too_long = vec![3u32; config.max_seq_len + 1];
        assert!(matches!(forward(&model, &too_long, &[]), Err(Error::Input(_))));
    }

    #[test]
    fn save_load_round_trip_is_bit_exact() {
        let config = test_config(Mode::Causal);
        let mut model = init_random(&config, 21).unwrap();
        let surfaces: Vec<String> = (0..config.vocab_size).map(|i| format!("w{i}")).collect();
        model.vocab = Some(crate::tokenizer::Vocab::from_surfaces(surfaces, &config).unwrap());

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.lrpw");
        save_weights(&model, &path).unwrap();
        let back = load_weights(&path).unwrap();
        assert_eq!(model, back);

        // And the file itself is byte-stable under a second save.
        let first = std::fs::read(&path).unwrap();
        save_weights(&back, &path).unwrap();
        assert_eq!(first, std::fs::read(&path).unwrap());
    }

    #[test]
    fn layer_count_mismatch_is_an_integrity_error() {
        // Header declares L = 2 while the payload carries three layers'
        // tensors.
        let three = test_config(Mode::Masked);
        let mut three = three;
        three.num_layers = 3;
        let model = init_random(&three, 4).unwrap();
        let mut tensors = Vec::new();
        model.weights.visit(|name, shape, data| {
            tensors.push(LrpwTensor { name: name.to_string(), shape, data: data.to_vec() });
        });
        let mut two = three.clone();
        two.num_layers = 2;
        let file = LrpwFile { config: Some(two), vocab: None, tensors };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.lrpw");
        save_lrpw(&file, &path).unwrap();
        assert!(matches!(load_weights(&path), Err(Error::Integrity(_))));
    }

    #[test]
    fn non_finite_payload_is_an_integrity_error() {
        let config = test_config(Mode::Masked);
        let model = init_random(&config, 4).unwrap();
        let mut tensors = Vec::new();
        model.weights.visit(|name, shape, data| {
            tensors.push(LrpwTensor { name: name.to_string(), shape, data: data.to_vec() });
        });
        tensors[0].data[0] = f32::NAN;
        let file = LrpwFile { config: Some(config), vocab: None, tensors };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("nan.lrpw");
        save_lrpw(&file, &path).unwrap();
        assert!(matches!(load_weights(&path), Err(Error::Integrity(_))));
    }
}
