//! Independent oracles for the acceptance suite.
//!
//! Everything here recomputes results through deliberately plain code
//! paths — full attention matrices, explicit softmax loops, brute-force
//! set counting — and must stay independent of the implementation
//! modules it checks.

use lrp2::engine::{Mode, Model};

/// Naive dense-math forward pass in `f64`: per-layer hidden states and
/// logits, computed with explicit full matrices.
pub fn naive_forward(model: &Model, tokens: &[u32]) -> (Vec<Vec<Vec<f64>>>, Vec<Vec<f64>>) {
    let cfg = &model.config;
    let w = &model.weights;
    let seq = tokens.len();
    let n = cfg.hidden_dim;
    let heads = cfg.num_heads;
    let head_dim = n / heads;

    let mat = |m: &lrp2::tensor::Matrix<f32>, r: usize, c: usize| -> f64 { f64::from(m.get(r, c)) };

    // Embedding.
    let mut h: Vec<Vec<f64>> = (0..seq)
        .map(|p| {
            (0..n)
                .map(|i| {
                    mat(&w.token_embedding, tokens[p] as usize, i)
                        + mat(&w.position_embedding, p, i)
                })
                .collect()
        })
        .collect();
    let mut hidden = vec![h.clone()];

    let layer_norm = |x: &[Vec<f64>], gamma: &[f32], beta: &[f32]| -> Vec<Vec<f64>> {
        x.iter()
            .map(|row| {
                let mean: f64 = row.iter().sum::<f64>() / n as f64;
                let var: f64 = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
                let denom = (var + 1e-5).sqrt();
                row.iter()
                    .enumerate()
                    .map(|(i, v)| (v - mean) / denom * f64::from(gamma[i]) + f64::from(beta[i]))
                    .collect()
            })
            .collect()
    };
    let gelu = |x: f64| -> f64 {
        0.5 * x * (1.0 + ((2.0 / std::f64::consts::PI).sqrt() * (x + 0.044715 * x * x * x)).tanh())
    };

    for layer in &w.layers {
        // Attention sublayer.
        let ln1 = layer_norm(&h, &layer.ln1_gamma, &layer.ln1_beta);
        let project = |wm: &lrp2::tensor::Matrix<f32>, b: &[f32]| -> Vec<Vec<f64>> {
            ln1.iter()
                .map(|row| {
                    (0..n)
                        .map(|o| {
                            f64::from(b[o])
                                + row.iter().enumerate().map(|(i, v)| v * mat(wm, i, o)).sum::<f64>()
                        })
                        .collect()
                })
                .collect()
        };
        let q = project(&layer.wq, &layer.bq);
        let k = project(&layer.wk, &layer.bk);
        let v = project(&layer.wv, &layer.bv);

        let mut ctx = vec![vec![0.0f64; n]; seq];
        for head in 0..heads {
            let off = head * head_dim;
            for p in 0..seq {
                // Full score row with masked-out entries at -inf.
                let mut scores = vec![f64::NEG_INFINITY; seq];
                for t in 0..seq {
                    if cfg.mode == Mode::Causal && t > p {
                        continue;
                    }
                    let dot: f64 =
                        (0..head_dim).map(|d| q[p][off + d] * k[t][off + d]).sum();
                    scores[t] = dot / (head_dim as f64).sqrt();
                }
                let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let exps: Vec<f64> = scores
                    .iter()
                    .map(|&s| if s.is_finite() { (s - max).exp() } else { 0.0 })
                    .collect();
                let total: f64 = exps.iter().sum();
                for t in 0..seq {
                    let weight = exps[t] / total;
                    for d in 0..head_dim {
                        ctx[p][off + d] += weight * v[t][off + d];
                    }
                }
            }
        }
        let attn_out: Vec<Vec<f64>> = ctx
            .iter()
            .map(|row| {
                (0..n)
                    .map(|o| {
                        f64::from(layer.bo[o])
                            + row.iter().enumerate().map(|(i, v)| v * mat(&layer.wo, i, o)).sum::<f64>()
                    })
                    .collect()
            })
            .collect();
        let res1: Vec<Vec<f64>> = h
            .iter()
            .zip(&attn_out)
            .map(|(a, b)| a.iter().zip(b).map(|(x, y)| x + y).collect())
            .collect();

        // FFN sublayer.
        let ln2 = layer_norm(&res1, &layer.ln2_gamma, &layer.ln2_beta);
        let ffn: Vec<Vec<f64>> = ln2
            .iter()
            .map(|row| {
                let act: Vec<f64> = (0..cfg.ffn_dim)
                    .map(|o| {
                        gelu(
                            f64::from(layer.b1[o])
                                + row.iter().enumerate().map(|(i, v)| v * mat(&layer.w1, i, o)).sum::<f64>(),
                        )
                    })
                    .collect();
                (0..n)
                    .map(|o| {
                        f64::from(layer.b2[o])
                            + act.iter().enumerate().map(|(i, v)| v * mat(&layer.w2, i, o)).sum::<f64>()
                    })
                    .collect()
            })
            .collect();
        h = res1
            .iter()
            .zip(&ffn)
            .map(|(a, b)| a.iter().zip(b).map(|(x, y)| x + y).collect::<Vec<f64>>())
            .collect();
        hidden.push(h.clone());
    }

    let final_ln = layer_norm(&h, &w.final_ln_gamma, &w.final_ln_beta);
    let logits: Vec<Vec<f64>> = final_ln
        .iter()
        .map(|row| {
            (0..cfg.vocab_size)
                .map(|t| row.iter().enumerate().map(|(i, v)| v * mat(&w.token_embedding, t, i)).sum::<f64>())
                .collect()
        })
        .collect();
    (hidden, logits)
}

/// Explicit log-softmax of one logit row.
pub fn naive_logprobs(row: &[f64]) -> Vec<f64> {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let total: f64 = row.iter().map(|v| (v - max).exp()).sum();
    row.iter().map(|v| v - max - total.ln()).collect()
}

/// Brute-force rank: 1 plus the number of candidates that strictly beat
/// this one, or tie with a smaller index.
pub fn brute_force_rank(scores: &[f64], index: usize) -> usize {
    let mut rank = 1;
    for (other, &score) in scores.iter().enumerate() {
        if score > scores[index] || (score == scores[index] && other < index) {
            rank += 1;
        }
    }
    rank
}

/// Brute-force accuracy by counting membership over an explicit universe.
pub fn brute_force_accuracy(universe: &[u32], probed: &[bool], correct: &[bool]) -> f64 {
    let mut n_probed = 0usize;
    let mut n_correct = 0usize;
    for idx in 0..universe.len() {
        if probed[idx] {
            n_probed += 1;
            if correct[idx] {
                n_correct += 1;
            }
        }
    }
    100.0 * n_correct as f64 / n_probed as f64
}

/// Brute-force transferability by scanning the universe and counting the
/// intersection and union memberships directly.
pub fn brute_force_transferability(universe: &[u32], a: &[bool], b: &[bool]) -> f64 {
    let mut inter = 0usize;
    let mut union = 0usize;
    for idx in 0..universe.len() {
        if a[idx] && b[idx] {
            inter += 1;
        }
        if a[idx] || b[idx] {
            union += 1;
        }
    }
    if union == 0 {
        0.0
    } else {
        100.0 * inter as f64 / union as f64
    }
}
