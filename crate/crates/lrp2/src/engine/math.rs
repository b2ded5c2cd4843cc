//! The transformer forward pass, generic over float width.
//!
//! One code path serves both the `f32` inference engine and the `f64`
//! evaluations used by gradient checking. Blocks are pre-layer-norm with a
//! GELU FFN; the residual stream after a block's final addition is the
//! "layer output" that hooks see. All loops are sequential with a fixed
//! order, so a forward pass is a pure function of its inputs.

use num_traits::Float;

use crate::engine::{Hook, Mode, ModelConfig};
use crate::engine::weights::{LayerWeights, Weights};
use crate::error::{Error, Result};
use crate::tensor::Matrix;

pub(crate) const LN_EPS: f64 = 1e-5;

fn c<T: Float>(x: f64) -> T {
    T::from(x).expect("constant representable in float type")
}

/// Tanh-approximation GELU.
pub(crate) fn gelu<T: Float>(x: T) -> T {
    let k: T = c(0.797_884_560_802_865_4); // sqrt(2/pi)
    let a: T = c(0.044715);
    let inner = k * (x + a * x * x * x);
    c::<T>(0.5) * x * (T::one() + inner.tanh())
}

/// Derivative of the tanh-approximation GELU.
pub(crate) fn gelu_grad<T: Float>(x: T) -> T {
    let k: T = c(0.797_884_560_802_865_4);
    let a: T = c(0.044715);
    let inner = k * (x + a * x * x * x);
    let t = inner.tanh();
    let sech2 = T::one() - t * t;
    let d_inner = k * (T::one() + c::<T>(3.0) * a * x * x);
    c::<T>(0.5) * (T::one() + t) + c::<T>(0.5) * x * sech2 * d_inner
}

/// Layer normalization over the last axis with learned scale and shift.
pub(crate) fn layer_norm<T: Float>(x: &Matrix<T>, gamma: &[T], beta: &[T]) -> Matrix<T> {
    let (rows, cols) = x.shape();
    let mut out = Matrix::zeros(rows, cols);
    let inv_n = T::one() / c::<T>(cols as f64);
    for r in 0..rows {
        let row = x.row(r);
        let mut mean = T::zero();
        for &v in row {
            mean = mean + v;
        }
        mean = mean * inv_n;
        let mut var = T::zero();
        for &v in row {
            let d = v - mean;
            var = var + d * d;
        }
        var = var * inv_n;
        let inv_std = T::one() / (var + c::<T>(LN_EPS)).sqrt();
        let out_row = out.row_mut(r);
        for cidx in 0..cols {
            out_row[cidx] = (row[cidx] - mean) * inv_std * gamma[cidx] + beta[cidx];
        }
    }
    out
}

/// `x @ w + b` where `x` is `rows x in`, `w` is `in x out`.
pub(crate) fn linear<T: Float>(x: &Matrix<T>, w: &Matrix<T>, b: &[T]) -> Matrix<T> {
    let (rows, inner) = x.shape();
    debug_assert_eq!(inner, w.rows());
    let out_dim = w.cols();
    let mut out = Matrix::zeros(rows, out_dim);
    for r in 0..rows {
        let x_row = x.row(r);
        let out_row = out.row_mut(r);
        out_row.copy_from_slice(b);
        for (i, &xv) in x_row.iter().enumerate() {
            let w_row = w.row(i);
            for (o, &wv) in w_row.iter().enumerate() {
                out_row[o] = out_row[o] + xv * wv;
            }
        }
    }
    out
}

/// In-place softmax of a slice with max subtraction.
pub(crate) fn softmax_in_place<T: Float>(row: &mut [T]) {
    let mut max = row[0];
    for &v in row.iter() {
        if v > max {
            max = v;
        }
    }
    let mut sum = T::zero();
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum = sum + *v;
    }
    for v in row.iter_mut() {
        *v = *v / sum;
    }
}

/// Multi-head self-attention over an already-normalized input.
pub(crate) fn attention<T: Float>(
    x_ln: &Matrix<T>,
    layer: &LayerWeights<T>,
    num_heads: usize,
    causal: bool,
) -> Matrix<T> {
    let (seq, n) = x_ln.shape();
    let head_dim = n / num_heads;
    let scale = T::one() / c::<T>((head_dim as f64).sqrt());

    let q = linear(x_ln, &layer.wq, &layer.bq);
    let k = linear(x_ln, &layer.wk, &layer.bk);
    let v = linear(x_ln, &layer.wv, &layer.bv);

    let mut ctx = Matrix::zeros(seq, n);
    let mut scores = vec![T::zero(); seq];
    for h in 0..num_heads {
        let off = h * head_dim;
        for p in 0..seq {
            let visible = if causal { p + 1 } else { seq };
            let q_row = &q.row(p)[off..off + head_dim];
            for t in 0..visible {
                let k_row = &k.row(t)[off..off + head_dim];
                let mut dot = T::zero();
                for d in 0..head_dim {
                    dot = dot + q_row[d] * k_row[d];
                }
                scores[t] = dot * scale;
            }
            softmax_in_place(&mut scores[..visible]);
            let ctx_row = &mut ctx.row_mut(p)[off..off + head_dim];
            for t in 0..visible {
                let w = scores[t];
                let v_row = &v.row(t)[off..off + head_dim];
                for d in 0..head_dim {
                    ctx_row[d] = ctx_row[d] + w * v_row[d];
                }
            }
        }
    }
    linear(&ctx, &layer.wo, &layer.bo)
}

/// Pin one post-GELU FFN activation to a fixed value during a forward pass.
/// This is the probe point used by knowledge-neuron attribution.
#[derive(Debug, Clone, Copy)]
pub struct FfnOverride<T> {
    /// Block index, 1-based like hook layers.
    pub layer: usize,
    /// Sequence position whose activation is pinned.
    pub position: usize,
    /// FFN-intermediate coordinate in `[0, ffn_dim)`.
    pub index: usize,
    pub value: T,
}

pub(crate) struct ForwardOpts<'a, T> {
    pub hooks: &'a [Hook<T>],
    pub ffn_override: Option<FfnOverride<T>>,
    /// When set, collect each block's post-GELU FFN activations.
    pub capture_ffn: bool,
}

impl<T> Default for ForwardOpts<'_, T> {
    fn default() -> Self {
        ForwardOpts { hooks: &[], ffn_override: None, capture_ffn: false }
    }
}

/// Per-layer hidden states plus output logits.
#[derive(Debug, Clone)]
pub struct Trace<T> {
    /// `num_layers + 1` matrices of shape `seq_len x hidden_dim`; index 0
    /// is the embedding output, index `i` the (post-hook) output of block `i`.
    pub hidden: Vec<Matrix<T>>,
    /// `seq_len x vocab_size`.
    pub logits: Matrix<T>,
}

pub(crate) struct ForwardOutput<T> {
    pub trace: Trace<T>,
    /// Post-GELU FFN activations per block, when requested.
    pub ffn_activations: Option<Vec<Matrix<T>>>,
}

pub(crate) fn forward_full<T: Float>(
    config: &ModelConfig,
    weights: &Weights<T>,
    token_ids: &[u32],
    opts: &ForwardOpts<'_, T>,
) -> Result<ForwardOutput<T>> {
    let seq = token_ids.len();
    if seq == 0 {
        return Err(Error::Input("empty token sequence".into()));
    }
    if seq > config.max_seq_len {
        return Err(Error::Input(format!(
            "sequence length {seq} exceeds max_seq_len {}",
            config.max_seq_len
        )));
    }
    for (pos, &id) in token_ids.iter().enumerate() {
        if id as usize >= config.vocab_size {
            return Err(Error::Input(format!(
                "token id {id} at position {pos} out of range (vocab_size {})",
                config.vocab_size
            )));
        }
    }
    let mut hook_at = vec![None; config.num_layers + 1];
    for hook in opts.hooks {
        let layer = hook.layer();
        if layer == 0 || layer > config.num_layers {
            return Err(Error::Input(format!(
                "hook layer {layer} out of range [1, {}]",
                config.num_layers
            )));
        }
        if hook_at[layer].is_some() {
            return Err(Error::Input(format!("multiple hooks at layer {layer}")));
        }
        hook_at[layer] = Some(hook);
    }
    if let Some(ov) = &opts.ffn_override {
        if ov.layer == 0 || ov.layer > config.num_layers {
            return Err(Error::Input(format!("ffn override layer {} out of range", ov.layer)));
        }
        if ov.index >= config.ffn_dim {
            return Err(Error::Input(format!("ffn override index {} out of range", ov.index)));
        }
        if ov.position >= seq {
            return Err(Error::Input(format!("ffn override position {} out of range", ov.position)));
        }
    }

    let n = config.hidden_dim;
    let causal = config.mode == Mode::Causal;

    // Embedding output: token + position rows.
    let mut h = Matrix::zeros(seq, n);
    for p in 0..seq {
        let tok_row = weights.token_embedding.row(token_ids[p] as usize);
        let pos_row = weights.position_embedding.row(p);
        let out_row = h.row_mut(p);
        for i in 0..n {
            out_row[i] = tok_row[i] + pos_row[i];
        }
    }

    let mut hidden = Vec::with_capacity(config.num_layers + 1);
    hidden.push(h.clone());
    let mut ffn_acts = if opts.capture_ffn { Some(Vec::with_capacity(config.num_layers)) } else { None };

    for (idx, layer) in weights.layers.iter().enumerate() {
        let layer_no = idx + 1;

        // Attention sublayer.
        let ln1 = layer_norm(&h, &layer.ln1_gamma, &layer.ln1_beta);
        let attn = attention(&ln1, layer, config.num_heads, causal);
        let mut res1 = h;
        for p in 0..seq {
            let row = res1.row_mut(p);
            let a_row = attn.row(p);
            for i in 0..n {
                row[i] = row[i] + a_row[i];
            }
        }

        // FFN sublayer.
        let ln2 = layer_norm(&res1, &layer.ln2_gamma, &layer.ln2_beta);
        let mut act = linear(&ln2, &layer.w1, &layer.b1);
        for v in act.data_mut() {
            *v = gelu(*v);
        }
        if let Some(ov) = &opts.ffn_override {
            if ov.layer == layer_no {
                act.set(ov.position, ov.index, ov.value);
            }
        }
        if let Some(acc) = ffn_acts.as_mut() {
            acc.push(act.clone());
        }
        let ffn = linear(&act, &layer.w2, &layer.b2);
        let mut out = res1;
        for p in 0..seq {
            let row = out.row_mut(p);
            let f_row = ffn.row(p);
            for i in 0..n {
                row[i] = row[i] + f_row[i];
            }
        }

        if let Some(hook) = hook_at[layer_no] {
            let transformed = hook.apply(&out);
            if transformed.shape() != out.shape() {
                return Err(Error::Input(format!(
                    "hook at layer {layer_no} changed shape {:?} -> {:?}",
                    out.shape(),
                    transformed.shape()
                )));
            }
            out = transformed;
        }
        hidden.push(out.clone());
        h = out;
    }

    let final_ln = layer_norm(&h, &weights.final_ln_gamma, &weights.final_ln_beta);
    // Weight-tied head: logits = final_ln @ token_embedding^T.
    let vocab = config.vocab_size;
    let mut logits = Matrix::zeros(seq, vocab);
    for p in 0..seq {
        let x_row = final_ln.row(p);
        let out_row = logits.row_mut(p);
        for t in 0..vocab {
            let emb_row = weights.token_embedding.row(t);
            let mut dot = T::zero();
            for i in 0..n {
                dot = dot + x_row[i] * emb_row[i];
            }
            out_row[t] = dot;
        }
    }

    Ok(ForwardOutput { trace: Trace { hidden, logits }, ffn_activations: ffn_acts })
}
