//! Parameter containers and the canonical tensor manifest.
//!
//! Every tensor a model owns has a fixed name and a shape derived from the
//! configuration. The manifest order below is the single source of truth
//! for weight-file layout, random initialization order, and gradient
//! bookkeeping, so all four stay in sync by construction.

use num_traits::Float;

use crate::engine::ModelConfig;
use crate::tensor::Matrix;

/// Weights of one transformer block (pre-layer-norm, GELU FFN).
#[derive(Debug, Clone, PartialEq)]
pub struct LayerWeights<T> {
    pub ln1_gamma: Vec<T>,
    pub ln1_beta: Vec<T>,
    /// Attention projections, each `hidden_dim x hidden_dim`.
    pub wq: Matrix<T>,
    pub bq: Vec<T>,
    pub wk: Matrix<T>,
    pub bk: Vec<T>,
    pub wv: Matrix<T>,
    pub bv: Vec<T>,
    pub wo: Matrix<T>,
    pub bo: Vec<T>,
    pub ln2_gamma: Vec<T>,
    pub ln2_beta: Vec<T>,
    /// FFN up-projection `hidden_dim x ffn_dim`.
    pub w1: Matrix<T>,
    pub b1: Vec<T>,
    /// FFN down-projection `ffn_dim x hidden_dim`.
    pub w2: Matrix<T>,
    pub b2: Vec<T>,
}

/// Full parameter set. The output head is weight-tied to
/// `token_embedding`, so it has no tensor of its own.
#[derive(Debug, Clone, PartialEq)]
pub struct Weights<T> {
    /// `vocab_size x hidden_dim`.
    pub token_embedding: Matrix<T>,
    /// `max_seq_len x hidden_dim`.
    pub position_embedding: Matrix<T>,
    pub layers: Vec<LayerWeights<T>>,
    pub final_ln_gamma: Vec<T>,
    pub final_ln_beta: Vec<T>,
}

impl<T: Float> LayerWeights<T> {
    fn zeros(hidden: usize, ffn: usize) -> Self {
        LayerWeights {
            ln1_gamma: vec![T::zero(); hidden],
            ln1_beta: vec![T::zero(); hidden],
            wq: Matrix::zeros(hidden, hidden),
            bq: vec![T::zero(); hidden],
            wk: Matrix::zeros(hidden, hidden),
            bk: vec![T::zero(); hidden],
            wv: Matrix::zeros(hidden, hidden),
            bv: vec![T::zero(); hidden],
            wo: Matrix::zeros(hidden, hidden),
            bo: vec![T::zero(); hidden],
            ln2_gamma: vec![T::zero(); hidden],
            ln2_beta: vec![T::zero(); hidden],
            w1: Matrix::zeros(hidden, ffn),
            b1: vec![T::zero(); ffn],
            w2: Matrix::zeros(ffn, hidden),
            b2: vec![T::zero(); hidden],
        }
    }
}

impl<T: Float> Weights<T> {
    /// All-zero parameter set shaped for `config`.
    pub fn zeros(config: &ModelConfig) -> Self {
        let n = config.hidden_dim;
        Weights {
            token_embedding: Matrix::zeros(config.vocab_size, n),
            position_embedding: Matrix::zeros(config.max_seq_len, n),
            layers: (0..config.num_layers).map(|_| LayerWeights::zeros(n, config.ffn_dim)).collect(),
            final_ln_gamma: vec![T::zero(); n],
            final_ln_beta: vec![T::zero(); n],
        }
    }

    /// Visit every tensor as `(name, shape, flat data)` in manifest order.
    pub fn visit(&self, mut f: impl FnMut(&str, Vec<usize>, &[T])) {
        let emb = &self.token_embedding;
        f("token_embedding", vec![emb.rows(), emb.cols()], emb.data());
        let pos = &self.position_embedding;
        f("position_embedding", vec![pos.rows(), pos.cols()], pos.data());
        for (idx, layer) in self.layers.iter().enumerate() {
            let base = format!("layers.{idx}");
            f(&format!("{base}.ln1.gamma"), vec![layer.ln1_gamma.len()], &layer.ln1_gamma);
            f(&format!("{base}.ln1.beta"), vec![layer.ln1_beta.len()], &layer.ln1_beta);
            for (tag, w, b) in [
                ("q", &layer.wq, &layer.bq),
                ("k", &layer.wk, &layer.bk),
                ("v", &layer.wv, &layer.bv),
                ("o", &layer.wo, &layer.bo),
            ] {
                f(&format!("{base}.attn.w{tag}"), vec![w.rows(), w.cols()], w.data());
                f(&format!("{base}.attn.b{tag}"), vec![b.len()], b);
            }
            f(&format!("{base}.ln2.gamma"), vec![layer.ln2_gamma.len()], &layer.ln2_gamma);
            f(&format!("{base}.ln2.beta"), vec![layer.ln2_beta.len()], &layer.ln2_beta);
            f(&format!("{base}.ffn.w1"), vec![layer.w1.rows(), layer.w1.cols()], layer.w1.data());
            f(&format!("{base}.ffn.b1"), vec![layer.b1.len()], &layer.b1);
            f(&format!("{base}.ffn.w2"), vec![layer.w2.rows(), layer.w2.cols()], layer.w2.data());
            f(&format!("{base}.ffn.b2"), vec![layer.b2.len()], &layer.b2);
        }
        f("final_ln.gamma", vec![self.final_ln_gamma.len()], &self.final_ln_gamma);
        f("final_ln.beta", vec![self.final_ln_beta.len()], &self.final_ln_beta);
    }

    /// Visit every tensor mutably, in manifest order.
    pub fn visit_mut(&mut self, mut f: impl FnMut(&str, &mut [T])) {
        f("token_embedding", self.token_embedding.data_mut());
        f("position_embedding", self.position_embedding.data_mut());
        for idx in 0..self.layers.len() {
            let base = format!("layers.{idx}");
            let layer = &mut self.layers[idx];
            f(&format!("{base}.ln1.gamma"), &mut layer.ln1_gamma);
            f(&format!("{base}.ln1.beta"), &mut layer.ln1_beta);
            f(&format!("{base}.attn.wq"), layer.wq.data_mut());
            f(&format!("{base}.attn.bq"), &mut layer.bq);
            f(&format!("{base}.attn.wk"), layer.wk.data_mut());
            f(&format!("{base}.attn.bk"), &mut layer.bk);
            f(&format!("{base}.attn.wv"), layer.wv.data_mut());
            f(&format!("{base}.attn.bv"), &mut layer.bv);
            f(&format!("{base}.attn.wo"), layer.wo.data_mut());
            f(&format!("{base}.attn.bo"), &mut layer.bo);
            f(&format!("{base}.ln2.gamma"), &mut layer.ln2_gamma);
            f(&format!("{base}.ln2.beta"), &mut layer.ln2_beta);
            f(&format!("{base}.ffn.w1"), layer.w1.data_mut());
            f(&format!("{base}.ffn.b1"), &mut layer.b1);
            f(&format!("{base}.ffn.w2"), layer.w2.data_mut());
            f(&format!("{base}.ffn.b2"), &mut layer.b2);
        }
        f("final_ln.gamma", &mut self.final_ln_gamma);
        f("final_ln.beta", &mut self.final_ln_beta);
    }

    /// True iff every parameter is finite.
    pub fn all_finite(&self) -> bool {
        let mut ok = true;
        self.visit(|_, _, data| {
            if data.iter().any(|v| !v.is_finite()) {
                ok = false;
            }
        });
        ok
    }
}

impl Weights<f32> {
    pub fn to_f64(&self) -> Weights<f64> {
        convert(self, |v| f64::from(v))
    }
}

impl Weights<f64> {
    pub fn to_f32(&self) -> Weights<f32> {
        convert(self, |v| v as f32)
    }
}

fn convert<A: Float, B: Float>(w: &Weights<A>, f: impl Fn(A) -> B + Copy) -> Weights<B> {
    let conv_mat = |m: &Matrix<A>| {
        Matrix::from_vec(m.rows(), m.cols(), m.data().iter().map(|&v| f(v)).collect())
    };
    let conv_vec = |v: &[A]| v.iter().map(|&x| f(x)).collect::<Vec<B>>();
    Weights {
        token_embedding: conv_mat(&w.token_embedding),
        position_embedding: conv_mat(&w.position_embedding),
        layers: w
            .layers
            .iter()
            .map(|l| LayerWeights {
                ln1_gamma: conv_vec(&l.ln1_gamma),
                ln1_beta: conv_vec(&l.ln1_beta),
                wq: conv_mat(&l.wq),
                bq: conv_vec(&l.bq),
                wk: conv_mat(&l.wk),
                bk: conv_vec(&l.bk),
                wv: conv_mat(&l.wv),
                bv: conv_vec(&l.bv),
                wo: conv_mat(&l.wo),
                bo: conv_vec(&l.bo),
                ln2_gamma: conv_vec(&l.ln2_gamma),
                ln2_beta: conv_vec(&l.ln2_beta),
                w1: conv_mat(&l.w1),
                b1: conv_vec(&l.b1),
                w2: conv_mat(&l.w2),
                b2: conv_vec(&l.b2),
            })
            .collect(),
        final_ln_gamma: conv_vec(&w.final_ln_gamma),
        final_ln_beta: conv_vec(&w.final_ln_beta),
    }
}

/// The canonical `(name, shape)` manifest implied by a configuration.
pub fn tensor_manifest(config: &ModelConfig) -> Vec<(String, Vec<usize>)> {
    let weights = Weights::<f32>::zeros(config);
    let mut manifest = Vec::new();
    weights.visit(|name, shape, _| manifest.push((name.to_string(), shape)));
    manifest
}
