//! Deterministic toy training and synthetic fact worlds.
//!
//! The pipeline needs models that genuinely store facts in more than one
//! language, so this module provides a fact-world generator ([`world`])
//! and a plain-SGD trainer with analytic backpropagation ([`backprop`]).
//! Everything is seeded: identical `(model, corpus, config)` inputs give
//! a bit-identical trained model.

pub mod backprop;
pub mod world;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::engine::{Mode, Model};
use crate::error::{Error, Result};

pub use backprop::{batch_gradients, batch_loss};
pub use world::{generate_world, FactWorldSpec, TrainSentence, World};

/// Training objective.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Objective {
    MaskedLm,
    CausalLm,
}

/// Hyperparameters of one training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub objective: Objective,
    /// Fraction of positions masked per sentence (masked objective only).
    pub mask_fraction: f64,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        if self.objective == Objective::MaskedLm && !(self.mask_fraction > 0.0 && self.mask_fraction <= 1.0) {
            return Err(Error::Config(format!(
                "mask_fraction {} outside (0, 1]",
                self.mask_fraction
            )));
        }
        Ok(())
    }
}

/// One training example: input token ids plus, per position, the gold
/// token to predict there (`None` positions carry no loss).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Example {
    pub input: Vec<u32>,
    pub targets: Vec<Option<u32>>,
}

/// A trained model plus per-epoch mean losses.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: Model,
    pub epoch_losses: Vec<f64>,
}

/// Build the masked-LM example for one sentence.
///
/// The mask quota is `max(1, round(mask_fraction * len))`. Object
/// positions are considered first, each masked with probability
/// `mask_fraction`; random other positions fill the quota. This biases
/// training toward recalling objects from their contexts.
fn masked_example(sentence: &TrainSentence, mask_fraction: f64, mask_id: u32, rng: &mut ChaCha20Rng) -> Example {
    let len = sentence.token_ids.len();
    let quota = ((mask_fraction * len as f64).round() as usize).clamp(1, len);
    let mut chosen: Vec<usize> = Vec::with_capacity(quota);
    for &p in &sentence.object_positions {
        if chosen.len() >= quota {
            break;
        }
        if p < len && rng.random::<f64>() < mask_fraction {
            chosen.push(p);
        }
    }
    let mut rest: Vec<usize> = (0..len).filter(|p| !chosen.contains(p)).collect();
    while chosen.len() < quota && !rest.is_empty() {
        let pick = rng.random_range(0..rest.len());
        chosen.push(rest.swap_remove(pick));
    }
    let mut input = sentence.token_ids.clone();
    let mut targets = vec![None; len];
    for &p in &chosen {
        targets[p] = Some(sentence.token_ids[p]);
        input[p] = mask_id;
    }
    Example { input, targets }
}

/// Build the causal-LM example: BOS-prefixed input predicting every
/// following token.
fn causal_example(sentence: &TrainSentence, bos_id: u32) -> Example {
    let mut input = Vec::with_capacity(sentence.token_ids.len() + 1);
    input.push(bos_id);
    input.extend_from_slice(&sentence.token_ids);
    let mut targets: Vec<Option<u32>> = sentence.token_ids.iter().map(|&t| Some(t)).collect();
    targets.push(None); // nothing to predict after the last token
    Example { input, targets }
}

/// Train with plain mini-batch SGD.
///
/// All arithmetic runs on an `f64` mirror of the weights; the result is
/// rounded back to `f32`. `epochs == 0` returns the input model
/// unchanged.
pub fn train(model: &Model, corpus: &[TrainSentence], config: &TrainConfig) -> Result<TrainOutcome> {
    config.validate()?;
    match (config.objective, model.config.mode) {
        (Objective::MaskedLm, Mode::Masked) | (Objective::CausalLm, Mode::Causal) => {}
        (objective, mode) => {
            return Err(Error::Config(format!(
                "objective {objective:?} incompatible with model mode {mode}"
            )))
        }
    }
    if config.epochs == 0 {
        return Ok(TrainOutcome { model: model.clone(), epoch_losses: Vec::new() });
    }
    if corpus.is_empty() {
        return Err(Error::Input("empty training corpus".into()));
    }
    let max_len = model.config.max_seq_len
        - usize::from(config.objective == Objective::CausalLm);
    for (idx, sentence) in corpus.iter().enumerate() {
        if sentence.token_ids.is_empty() || sentence.token_ids.len() > max_len {
            return Err(Error::Input(format!("corpus sentence {idx} has unusable length")));
        }
        for &t in &sentence.token_ids {
            if t as usize >= model.config.vocab_size {
                return Err(Error::Input(format!("corpus sentence {idx} holds token {t} outside the vocab")));
            }
        }
    }

    let mut weights = model.weights.to_f64();
    let mut epoch_losses = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        let mut rng =
            ChaCha20Rng::seed_from_u64(config.seed ^ (epoch as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
        let mut order: Vec<usize> = (0..corpus.len()).collect();
        for i in (1..order.len()).rev() {
            let j = rng.random_range(0..=i);
            order.swap(i, j);
        }

        let mut epoch_ce = 0.0f64;
        let mut epoch_targets = 0usize;
        for (batch_no, batch) in order.chunks(config.batch_size).enumerate() {
            let examples: Vec<Example> = batch
                .iter()
                .map(|&idx| match config.objective {
                    Objective::MaskedLm => masked_example(
                        &corpus[idx],
                        config.mask_fraction,
                        model.config.mask_token_id,
                        &mut rng,
                    ),
                    Objective::CausalLm => causal_example(&corpus[idx], model.config.bos_token_id),
                })
                .collect();
            let (ce, targets, grads) = batch_gradients(&model.config, &weights, &examples)?;
            if !ce.is_finite() {
                return Err(Error::Divergence(format!(
                    "non-finite loss at epoch {epoch}, batch {batch_no}"
                )));
            }
            if targets == 0 {
                continue;
            }
            epoch_ce += ce;
            epoch_targets += targets;
            let step = config.learning_rate / targets as f64;
            let mut grad_tensors: Vec<Vec<f64>> = Vec::new();
            grads.visit(|_, _, data| grad_tensors.push(data.to_vec()));
            let mut iter = grad_tensors.into_iter();
            weights.visit_mut(|_, data| {
                let g = iter.next().expect("same manifest");
                for (w, gv) in data.iter_mut().zip(g) {
                    *w -= step * gv;
                }
            });
        }
        if epoch_targets == 0 {
            return Err(Error::Divergence(format!("epoch {epoch} produced no loss targets")));
        }
        epoch_losses.push(epoch_ce / epoch_targets as f64);
    }

    let trained = Model {
        config: model.config.clone(),
        weights: weights.to_f32(),
        vocab: model.vocab.clone(),
    };
    if !trained.weights.all_finite() {
        return Err(Error::Divergence("trained weights contain non-finite values".into()));
    }
    Ok(TrainOutcome { model: trained, epoch_losses })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::{init_random, ModelConfig};

    fn sentence(ids: &[u32], object_positions: &[usize]) -> TrainSentence {
        TrainSentence {
            lang: "xx".into(),
            text: String::new(),
            token_ids: ids.to_vec(),
            object_positions: object_positions.to_vec(),
        }
    }

    fn model(mode: Mode) -> Model {
        let config = ModelConfig {
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
        };
        init_random(&config, 3).unwrap()
    }

    fn train_config(objective: Objective) -> TrainConfig {
        TrainConfig {
            epochs: 4,
            batch_size: 2,
            learning_rate: 0.1,
            seed: 11,
            objective,
            mask_fraction: 0.5,
        }
    }

    fn corpus() -> Vec<TrainSentence> {
        vec![
            sentence(&[3, 4, 5, 6], &[3]),
            sentence(&[7, 8, 9], &[2]),
            sentence(&[10, 11, 12, 13], &[3]),
            sentence(&[5, 9, 13], &[2]),
        ]
    }

    #[test]
    fn zero_epochs_is_identity() {
        let m = model(Mode::Masked);
        let mut cfg = train_config(Objective::MaskedLm);
        cfg.epochs = 0;
        let out = train(&m, &corpus(), &cfg).unwrap();
        assert_eq!(out.model, m);
        assert!(out.epoch_losses.is_empty());
    }

    #[test]
    fn training_is_deterministic() {
        let m = model(Mode::Masked);
        let cfg = train_config(Objective::MaskedLm);
        let a = train(&m, &corpus(), &cfg).unwrap();
        let b = train(&m, &corpus(), &cfg).unwrap();
        assert_eq!(a.model, b.model);
        assert_eq!(a.epoch_losses, b.epoch_losses);
    }

    #[test]
    fn causal_training_reduces_loss() {
        let m = model(Mode::Causal);
        let mut cfg = train_config(Objective::CausalLm);
        cfg.epochs = 12;
        let out = train(&m, &corpus(), &cfg).unwrap();
        let first = out.epoch_losses.first().unwrap();
        let last = out.epoch_losses.last().unwrap();
        assert!(last < first, "loss {first} -> {last}");
    }

    #[test]
    fn masked_training_reduces_loss() {
        let m = model(Mode::Masked);
        let mut cfg = train_config(Objective::MaskedLm);
        cfg.epochs = 12;
        let out = train(&m, &corpus(), &cfg).unwrap();
        assert!(out.epoch_losses.last().unwrap() < out.epoch_losses.first().unwrap());
    }

    #[test]
    fn objective_must_match_mode() {
        let m = model(Mode::Masked);
        let cfg = train_config(Objective::CausalLm);
        assert!(matches!(train(&m, &corpus(), &cfg), Err(Error::Config(_))));
    }

    #[test]
    fn masked_examples_respect_quota_and_targets() {
        let mut rng = ChaCha20Rng::seed_from_u64(5);
        let s = sentence(&[3, 4, 5, 6, 7, 8], &[5]);
        let ex = masked_example(&s, 0.5, 0, &mut rng);
        let masked: Vec<usize> =
            ex.input.iter().enumerate().filter(|(_, &t)| t == 0).map(|(p, _)| p).collect();
        assert_eq!(masked.len(), 3); // round(0.5 * 6)
        for (p, target) in ex.targets.iter().enumerate() {
            match target {
                Some(gold) => {
                    assert_eq!(*gold, s.token_ids[p]);
                    assert_eq!(ex.input[p], 0);
                }
                None => assert_eq!(ex.input[p], s.token_ids[p]),
            }
        }
    }

    #[test]
    fn causal_examples_shift_targets() {
        let s = sentence(&[3, 4, 5], &[]);
        let ex = causal_example(&s, 2);
        assert_eq!(ex.input, vec![2, 3, 4, 5]);
        assert_eq!(ex.targets, vec![Some(3), Some(4), Some(5), None]);
    }

    #[test]
    fn out_of_vocab_corpus_rejected() {
        let m = model(Mode::Masked);
        let cfg = train_config(Objective::MaskedLm);
        let bad = vec![sentence(&[99], &[])];
        assert!(matches!(train(&m, &bad, &cfg), Err(Error::Input(_))));
    }
}
