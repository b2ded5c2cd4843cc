//! Analytic backpropagation through the transformer, in `f64`.
//!
//! Training runs entirely on an `f64` mirror of the model so the loss
//! surface is smooth enough for central-finite-difference verification;
//! the trained weights are rounded to `f32` once at the end. The traced
//! forward here mirrors the engine's forward operation for operation —
//! [`batch_loss`] evaluates the same examples through the engine's
//! generic forward, which is what the gradient check differentiates, so a
//! drift between the two paths shows up as a failed check.

use num_traits::Float;

use crate::engine::weights::Weights;
use crate::engine::{forward_full, ForwardOpts, Mode, ModelConfig};
use crate::error::{Error, Result};
use crate::tensor::Matrix;

use super::Example;

const LN_EPS: f64 = 1e-5;

/// Cross-entropy loss of a batch via the engine's forward pass.
///
/// Returns `(total_ce, target_count)`; the mean loss is their ratio.
pub fn batch_loss(config: &ModelConfig, weights: &Weights<f64>, examples: &[Example]) -> Result<(f64, usize)> {
    let mut total = 0.0f64;
    let mut count = 0usize;
    for ex in examples {
        let out = forward_full::<f64>(config, weights, &ex.input, &ForwardOpts::default())?;
        let logits = &out.trace.logits;
        for (pos, target) in ex.targets.iter().enumerate() {
            let Some(gold) = target else { continue };
            total -= log_softmax_at(logits.row(pos), *gold as usize);
            count += 1;
        }
    }
    Ok((total, count))
}

fn log_softmax_at<T: Float>(row: &[T], index: usize) -> f64 {
    let mut max = f64::NEG_INFINITY;
    for &v in row {
        let v = v.to_f64().unwrap();
        if v > max {
            max = v;
        }
    }
    let mut sum = 0.0f64;
    for &v in row {
        sum += (v.to_f64().unwrap() - max).exp();
    }
    row[index].to_f64().unwrap() - max - sum.ln()
}

struct LayerCache {
    ln1: NormCache,
    q: Matrix<f64>,
    k: Matrix<f64>,
    v: Matrix<f64>,
    /// Per-head attention weights, each `seq x seq` (rows past the causal
    /// horizon stay zero).
    probs: Vec<Matrix<f64>>,
    ctx: Matrix<f64>,
    ln2: NormCache,
    ffn_pre: Matrix<f64>,
    ffn_act: Matrix<f64>,
}

struct NormCache {
    /// Normalized input (before scale/shift).
    xhat: Matrix<f64>,
    inv_std: Vec<f64>,
    out: Matrix<f64>,
}

fn layer_norm_cached(x: &Matrix<f64>, gamma: &[f64], beta: &[f64]) -> NormCache {
    let (rows, cols) = x.shape();
    let mut xhat = Matrix::zeros(rows, cols);
    let mut out = Matrix::zeros(rows, cols);
    let mut inv_std = vec![0.0f64; rows];
    for r in 0..rows {
        let row = x.row(r);
        let mean = row.iter().sum::<f64>() / cols as f64;
        let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<f64>() / cols as f64;
        let istd = 1.0 / (var + LN_EPS).sqrt();
        inv_std[r] = istd;
        for c in 0..cols {
            let xh = (row[c] - mean) * istd;
            xhat.set(r, c, xh);
            out.set(r, c, xh * gamma[c] + beta[c]);
        }
    }
    NormCache { xhat, inv_std, out }
}

/// Backward through layer norm. Accumulates gamma/beta grads and returns
/// the gradient w.r.t. the norm's input.
fn layer_norm_backward(
    cache: &NormCache,
    gamma: &[f64],
    d_out: &Matrix<f64>,
    d_gamma: &mut [f64],
    d_beta: &mut [f64],
) -> Matrix<f64> {
    let (rows, cols) = cache.xhat.shape();
    let mut d_x = Matrix::zeros(rows, cols);
    for r in 0..rows {
        let xhat = cache.xhat.row(r);
        let dy = d_out.row(r);
        let mut mean_g = 0.0f64;
        let mut mean_gx = 0.0f64;
        for c in 0..cols {
            let g = gamma[c] * dy[c];
            mean_g += g;
            mean_gx += g * xhat[c];
            d_gamma[c] += dy[c] * xhat[c];
            d_beta[c] += dy[c];
        }
        mean_g /= cols as f64;
        mean_gx /= cols as f64;
        let istd = cache.inv_std[r];
        let row_out = d_x.row_mut(r);
        for c in 0..cols {
            let g = gamma[c] * dy[c];
            row_out[c] = (g - mean_g - xhat[c] * mean_gx) * istd;
        }
    }
    d_x
}

fn linear64(x: &Matrix<f64>, w: &Matrix<f64>, b: &[f64]) -> Matrix<f64> {
    crate::engine::math_linear(x, w, b)
}

/// Backward through `out = x @ w + b`.
fn linear_backward(
    x: &Matrix<f64>,
    w: &Matrix<f64>,
    d_out: &Matrix<f64>,
    d_w: &mut Matrix<f64>,
    d_b: &mut [f64],
) -> Matrix<f64> {
    let (rows, in_dim) = x.shape();
    let out_dim = w.cols();
    let mut d_x = Matrix::zeros(rows, in_dim);
    for r in 0..rows {
        let d_row = d_out.row(r);
        for (o, &d) in d_row.iter().enumerate() {
            d_b[o] += d;
        }
        let x_row = x.row(r);
        let dx_row = d_x.row_mut(r);
        for i in 0..in_dim {
            let w_row = w.row(i);
            let mut acc = 0.0f64;
            for o in 0..out_dim {
                acc += d_row[o] * w_row[o];
            }
            dx_row[i] = acc;
            let dw_row = d_w.row_mut(i);
            let xv = x_row[i];
            for o in 0..out_dim {
                dw_row[o] += xv * d_row[o];
            }
        }
    }
    d_x
}

fn traced_forward(config: &ModelConfig, weights: &Weights<f64>, input: &[u32]) -> (Vec<LayerCache>, NormCache, Matrix<f64>) {
    let seq = input.len();
    let n = config.hidden_dim;
    let heads = config.num_heads;
    let head_dim = n / heads;
    let scale = 1.0 / (head_dim as f64).sqrt();
    let causal = config.mode == Mode::Causal;

    let mut h = Matrix::zeros(seq, n);
    for p in 0..seq {
        let tok = weights.token_embedding.row(input[p] as usize);
        let pos = weights.position_embedding.row(p);
        let row = h.row_mut(p);
        for i in 0..n {
            row[i] = tok[i] + pos[i];
        }
    }

    let mut caches = Vec::with_capacity(config.num_layers);
    for layer in &weights.layers {
        let x_in = h.clone();
        let ln1 = layer_norm_cached(&x_in, &layer.ln1_gamma, &layer.ln1_beta);
        let q = linear64(&ln1.out, &layer.wq, &layer.bq);
        let k = linear64(&ln1.out, &layer.wk, &layer.bk);
        let v = linear64(&ln1.out, &layer.wv, &layer.bv);

        let mut probs = Vec::with_capacity(heads);
        let mut ctx = Matrix::zeros(seq, n);
        for hd in 0..heads {
            let off = hd * head_dim;
            let mut p_mat = Matrix::zeros(seq, seq);
            for p in 0..seq {
                let visible = if causal { p + 1 } else { seq };
                let q_row = &q.row(p)[off..off + head_dim];
                let mut scores = vec![0.0f64; visible];
                for t in 0..visible {
                    let k_row = &k.row(t)[off..off + head_dim];
                    let mut dot = 0.0;
                    for d in 0..head_dim {
                        dot += q_row[d] * k_row[d];
                    }
                    scores[t] = dot * scale;
                }
                let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let mut sum = 0.0;
                for s in scores.iter_mut() {
                    *s = (*s - max).exp();
                    sum += *s;
                }
                let ctx_row = &mut ctx.row_mut(p)[off..off + head_dim];
                for t in 0..visible {
                    let w = scores[t] / sum;
                    p_mat.set(p, t, w);
                    let v_row = &v.row(t)[off..off + head_dim];
                    for d in 0..head_dim {
                        ctx_row[d] += w * v_row[d];
                    }
                }
            }
            probs.push(p_mat);
        }
        let attn_out = linear64(&ctx, &layer.wo, &layer.bo);
        let mut res1 = x_in.clone();
        for p in 0..seq {
            let row = res1.row_mut(p);
            let a = attn_out.row(p);
            for i in 0..n {
                row[i] += a[i];
            }
        }

        let ln2 = layer_norm_cached(&res1, &layer.ln2_gamma, &layer.ln2_beta);
        let ffn_pre = linear64(&ln2.out, &layer.w1, &layer.b1);
        let mut ffn_act = ffn_pre.clone();
        for vv in ffn_act.data_mut() {
            *vv = crate::engine::math_gelu(*vv);
        }
        let ffn_out = linear64(&ffn_act, &layer.w2, &layer.b2);
        let mut out = res1.clone();
        for p in 0..seq {
            let row = out.row_mut(p);
            let f = ffn_out.row(p);
            for i in 0..n {
                row[i] += f[i];
            }
        }

        caches.push(LayerCache { ln1, q, k, v, probs, ctx, ln2, ffn_pre, ffn_act });
        h = out;
    }

    let final_ln = layer_norm_cached(&h, &weights.final_ln_gamma, &weights.final_ln_beta);
    let vocab = config.vocab_size;
    let mut logits = Matrix::zeros(seq, vocab);
    for p in 0..seq {
        let x_row = final_ln.out.row(p);
        let out_row = logits.row_mut(p);
        for t in 0..vocab {
            let emb = weights.token_embedding.row(t);
            let mut dot = 0.0;
            for i in 0..n {
                dot += x_row[i] * emb[i];
            }
            out_row[t] = dot;
        }
    }
    (caches, final_ln, logits)
}

/// Traced forward + full backward over a batch.
///
/// Returns `(total_ce, target_count, gradients)`; gradients are summed
/// over the batch (no normalization), matching [`batch_loss`]'s total.
pub fn batch_gradients(
    config: &ModelConfig,
    weights: &Weights<f64>,
    examples: &[Example],
) -> Result<(f64, usize, Weights<f64>)> {
    let mut grads = Weights::<f64>::zeros(config);
    let mut total = 0.0f64;
    let mut count = 0usize;

    let n = config.hidden_dim;
    let heads = config.num_heads;
    let head_dim = n / heads;
    let scale = 1.0 / (head_dim as f64).sqrt();
    let causal = config.mode == Mode::Causal;

    for ex in examples {
        let seq = ex.input.len();
        if seq == 0 || seq > config.max_seq_len {
            return Err(Error::Input(format!("example length {seq} out of range")));
        }
        if ex.targets.len() != seq {
            return Err(Error::Input("targets length must match input length".into()));
        }
        let (caches, final_ln, logits) = traced_forward(config, weights, &ex.input);

        // Loss and d_logits.
        let mut d_logits = Matrix::zeros(seq, config.vocab_size);
        let mut any_target = false;
        for (pos, target) in ex.targets.iter().enumerate() {
            let Some(gold) = target else { continue };
            let gold = *gold as usize;
            any_target = true;
            count += 1;
            let row = logits.row(pos);
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for &v in row {
                sum += (v - max).exp();
            }
            total -= row[gold] - max - sum.ln();
            let d_row = d_logits.row_mut(pos);
            for (t, &v) in row.iter().enumerate() {
                let p = (v - max).exp() / sum;
                d_row[t] = p;
            }
            d_row[gold] -= 1.0;
        }
        if !any_target {
            continue;
        }

        // Head (weight-tied): logits = final_ln.out @ E^T.
        let mut d_final = Matrix::zeros(seq, n);
        for p in 0..seq {
            let d_row = d_logits.row(p);
            let x_row = final_ln.out.row(p);
            let df_row = d_final.row_mut(p);
            for (t, &d) in d_row.iter().enumerate() {
                if d == 0.0 {
                    continue;
                }
                let emb = weights.token_embedding.row(t);
                let demb = grads.token_embedding.row_mut(t);
                for i in 0..n {
                    df_row[i] += d * emb[i];
                    demb[i] += d * x_row[i];
                }
            }
        }

        let mut d_h = layer_norm_backward(
            &final_ln,
            &weights.final_ln_gamma,
            &d_final,
            &mut grads.final_ln_gamma,
            &mut grads.final_ln_beta,
        );

        for (layer_idx, layer) in weights.layers.iter().enumerate().rev() {
            let cache = &caches[layer_idx];
            let g = &mut grads.layers[layer_idx];

            // out = res1 + ffn_out.
            let d_ffn_out = d_h.clone();
            let mut d_res1 = d_h;

            // FFN: ffn_out = gelu(ln2 @ w1 + b1) @ w2 + b2.
            let mut d_act = linear_backward(&cache.ffn_act, &layer.w2, &d_ffn_out, &mut g.w2, &mut g.b2);
            for (d, &pre) in d_act.data_mut().iter_mut().zip(cache.ffn_pre.data()) {
                *d *= crate::engine::math_gelu_grad(pre);
            }
            let d_ln2_out = linear_backward(&cache.ln2.out, &layer.w1, &d_act, &mut g.w1, &mut g.b1);

            // ln2 reads res1.
            let d_res1_from_ln2 =
                layer_norm_backward(&cache.ln2, &layer.ln2_gamma, &d_ln2_out, &mut g.ln2_gamma, &mut g.ln2_beta);
            for (a, b) in d_res1.data_mut().iter_mut().zip(d_res1_from_ln2.data()) {
                *a += b;
            }

            // res1 = x_in + ctx @ wo + bo.
            let d_attn_out = d_res1.clone();
            let mut d_x = d_res1;
            let d_ctx = linear_backward(&cache.ctx, &layer.wo, &d_attn_out, &mut g.wo, &mut g.bo);

            // Attention per head.
            let mut d_q = Matrix::zeros(seq, n);
            let mut d_k = Matrix::zeros(seq, n);
            let mut d_v = Matrix::zeros(seq, n);
            for hd in 0..heads {
                let off = hd * head_dim;
                let probs = &cache.probs[hd];
                for p in 0..seq {
                    let visible = if causal { p + 1 } else { seq };
                    let d_ctx_row = &d_ctx.row(p)[off..off + head_dim];

                    // d_probs[t] = d_ctx_row . v[t]; d_v[t] += probs[t] * d_ctx_row.
                    let mut d_probs = vec![0.0f64; visible];
                    for t in 0..visible {
                        let v_row = &cache.v.row(t)[off..off + head_dim];
                        let w = probs.get(p, t);
                        let mut dot = 0.0;
                        for d in 0..head_dim {
                            dot += d_ctx_row[d] * v_row[d];
                        }
                        d_probs[t] = dot;
                        let dv_row = &mut d_v.row_mut(t)[off..off + head_dim];
                        for d in 0..head_dim {
                            dv_row[d] += w * d_ctx_row[d];
                        }
                    }

                    // Softmax backward.
                    let mut dot_pw = 0.0;
                    for t in 0..visible {
                        dot_pw += probs.get(p, t) * d_probs[t];
                    }
                    // scores[t] = (q[p] . k[t]) * scale.
                    let q_row = &cache.q.row(p)[off..off + head_dim];
                    let dq_row_acc: &mut [f64] = &mut d_q.row_mut(p)[off..off + head_dim];
                    for t in 0..visible {
                        let d_score = probs.get(p, t) * (d_probs[t] - dot_pw) * scale;
                        if d_score == 0.0 {
                            continue;
                        }
                        let k_row = &cache.k.row(t)[off..off + head_dim];
                        let dk_row = &mut d_k.row_mut(t)[off..off + head_dim];
                        for d in 0..head_dim {
                            dk_row[d] += d_score * q_row[d];
                        }
                        for d in 0..head_dim {
                            dq_row_acc[d] += d_score * k_row[d];
                        }
                    }
                }
            }

            // q/k/v projections read ln1.out.
            let mut d_ln1_out = linear_backward(&cache.ln1.out, &layer.wq, &d_q, &mut g.wq, &mut g.bq);
            let d_from_k = linear_backward(&cache.ln1.out, &layer.wk, &d_k, &mut g.wk, &mut g.bk);
            let d_from_v = linear_backward(&cache.ln1.out, &layer.wv, &d_v, &mut g.wv, &mut g.bv);
            for ((a, b), c) in d_ln1_out.data_mut().iter_mut().zip(d_from_k.data()).zip(d_from_v.data()) {
                *a += b + c;
            }

            let d_x_from_ln1 =
                layer_norm_backward(&cache.ln1, &layer.ln1_gamma, &d_ln1_out, &mut g.ln1_gamma, &mut g.ln1_beta);
            for (a, b) in d_x.data_mut().iter_mut().zip(d_x_from_ln1.data()) {
                *a += b;
            }
            d_h = d_x;
        }

        // Embeddings.
        for p in 0..seq {
            let d_row = d_h.row(p);
            let tok = grads.token_embedding.row_mut(ex.input[p] as usize);
            for i in 0..n {
                tok[i] += d_row[i];
            }
            let pos = grads.position_embedding.row_mut(p);
            for i in 0..n {
                pos[i] += d_row[i];
            }
        }
    }

    Ok((total, count, grads))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::{init_random, Mode};

    fn config(mode: Mode) -> ModelConfig {
        ModelConfig {
            num_layers: 2,
            hidden_dim: 8,
            num_heads: 2,
            ffn_dim: 12,
            vocab_size: 14,
            max_seq_len: 8,
            mode,
            mask_token_id: 0,
            pad_token_id: 1,
            bos_token_id: 2,
        }
    }

    fn examples() -> Vec<Example> {
        vec![
            Example { input: vec![3, 0, 5, 6], targets: vec![None, Some(4), None, Some(7)] },
            Example { input: vec![8, 9, 10], targets: vec![Some(9), Some(10), Some(11)] },
        ]
    }

    #[test]
    fn traced_loss_matches_engine_loss() {
        for mode in [Mode::Masked, Mode::Causal] {
            let cfg = config(mode);
            let weights = init_random(&cfg, 31).unwrap().weights.to_f64();
            let exs = examples();
            let (engine_total, engine_count) = batch_loss(&cfg, &weights, &exs).unwrap();
            let (traced_total, traced_count, _) = batch_gradients(&cfg, &weights, &exs).unwrap();
            assert_eq!(engine_count, traced_count);
            assert!(
                (engine_total - traced_total).abs() <= 1e-10 * engine_total.abs().max(1.0),
                "{engine_total} vs {traced_total}"
            );
        }
    }

    /// Central finite differences of the engine-side loss against the
    /// traced analytic gradients, on a handful of weights from every
    /// tensor family.
    #[test]
    fn gradients_match_finite_differences() {
        use rand::Rng;
        use rand::SeedableRng;

        for mode in [Mode::Masked, Mode::Causal] {
            let cfg = config(mode);
            let weights = init_random(&cfg, 47).unwrap().weights.to_f64();
            let exs = examples();
            let (_, _, grads) = batch_gradients(&cfg, &weights, &exs).unwrap();

            let mut flat_names = Vec::new();
            grads.visit(|name, _, data| flat_names.push((name.to_string(), data.len())));

            let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(7);
            for family in ["token_embedding", "position_embedding", "attn.wq", "ffn.w1", "ln2.gamma", "final_ln.gamma"] {
                let (name, len) = flat_names
                    .iter()
                    .find(|(n, _)| n.contains(family))
                    .cloned()
                    .unwrap();
                let mut checked = 0;
                let mut attempts = 0;
                while checked < 3 && attempts < 200 {
                    attempts += 1;
                    let idx = rng.random_range(0..len);
                    let analytic = read_entry(&grads, &name, idx);
                    if analytic.abs() < 1e-1 {
                        continue; // FD truncation noise dominates small gradients
                    }
                    let step = 1e-3;
                    let mut plus = weights.clone();
                    write_entry(&mut plus, &name, idx, read_entry(&weights, &name, idx) + step);
                    let mut minus = weights.clone();
                    write_entry(&mut minus, &name, idx, read_entry(&weights, &name, idx) - step);
                    let (lp, _) = batch_loss(&cfg, &plus, &exs).unwrap();
                    let (lm, _) = batch_loss(&cfg, &minus, &exs).unwrap();
                    let fd = (lp - lm) / (2.0 * step);
                    let rel = (analytic - fd).abs() / fd.abs().max(analytic.abs());
                    assert!(rel < 1e-4, "{mode:?} {name}[{idx}]: analytic {analytic} vs fd {fd} (rel {rel})");
                    checked += 1;
                }
                assert!(checked > 0, "no checkable weight found in {family}");
            }
        }
    }

    fn read_entry(w: &Weights<f64>, name: &str, idx: usize) -> f64 {
        let mut out = None;
        w.visit(|n, _, data| {
            if n == name {
                out = Some(data[idx]);
            }
        });
        out.unwrap()
    }

    fn write_entry(w: &mut Weights<f64>, name: &str, idx: usize, value: f64) {
        w.visit_mut(|n, data| {
            if n == name {
                data[idx] = value;
            }
        });
    }
}
