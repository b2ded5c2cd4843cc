//! Typed cloze querying.
//!
//! A probe query is a template with `[X]` (subject) and `[Y]` (object)
//! placeholders. Instead of open-vocabulary prediction, each relation
//! ranks only its own known object surface forms — the candidate pool.
//!
//! Masked protocol: `[Y]` is replaced by as many mask tokens as the
//! candidate tokenizes to, one hooked forward is run, and the score is
//! the mean log-probability of the candidate's tokens at the mask
//! positions. Causal protocol: the candidate is substituted into the
//! template to form a complete sentence and the score is the full
//! sentence log-probability under the chain rule, with no length
//! normalization (a documented bias toward shorter candidates, kept for
//! fidelity to the protocol this reproduces).
//!
//! Ranking sorts scores descending with ties broken by candidate-list
//! index, so seeded pools stay reproducible end to end.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::engine::{self, Hook, Mode, Model};
use crate::error::{Error, Result};
use crate::tokenizer::Vocab;

/// One typed fill-in-the-blank query.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProbeQuery {
    pub lang: String,
    pub relation: String,
    /// Contains exactly one `[X]` and one `[Y]`.
    pub template: String,
    pub subject: String,
    /// Gold object surface form.
    pub object: String,
    /// Stable fact id, shared across languages for uuid-parallel scoring.
    pub uuid: String,
}

impl ProbeQuery {
    pub fn validate(&self) -> Result<()> {
        for (field, value) in [
            ("lang", &self.lang),
            ("relation", &self.relation),
            ("subject", &self.subject),
            ("object", &self.object),
            ("uuid", &self.uuid),
        ] {
            if value.is_empty() {
                return Err(Error::Validation(format!("empty {field}")));
            }
        }
        for placeholder in ["[X]", "[Y]"] {
            let count = self.template.matches(placeholder).count();
            if count != 1 {
                return Err(Error::Validation(format!(
                    "template must contain exactly one {placeholder}, found {count}"
                )));
            }
        }
        Ok(())
    }
}

/// The ranked object surface forms of one relation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CandidatePool {
    pub relation: String,
    /// Distinct gold objects in first-appearance order.
    pub candidates: Vec<String>,
    /// Per-query pool cap (causal protocol only).
    pub cap: Option<usize>,
}

/// Outcome of ranking one query's pool.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeResult {
    pub uuid: String,
    /// Score per ranked candidate, in candidate order.
    pub scores: Vec<f64>,
    /// 1-based rank of the gold object.
    pub gold_rank: usize,
    pub correct: bool,
}

/// Collect the relation's candidate pool from its queries.
///
/// Masked mode keeps the full pool. Causal mode records `cap`; the capped
/// per-query pools are materialized by [`query_candidates`].
pub fn build_pool(queries: &[&ProbeQuery], mode: Mode, cap: Option<usize>, _seed: u64) -> Result<CandidatePool> {
    let first = queries
        .first()
        .ok_or_else(|| Error::Input("cannot build a pool from zero queries".into()))?;
    if let Some(c) = cap {
        if c < 2 {
            return Err(Error::Config(format!("pool cap {c} must be at least 2")));
        }
    }
    let relation = first.relation.clone();
    let mut candidates = Vec::new();
    for q in queries {
        if q.relation != relation {
            return Err(Error::Input(format!(
                "pool mixes relations {relation} and {}",
                q.relation
            )));
        }
        if !candidates.contains(&q.object) {
            candidates.push(q.object.clone());
        }
    }
    let cap = match mode {
        Mode::Masked => None, // full pools in the masked protocol
        Mode::Causal => cap,
    };
    Ok(CandidatePool { relation, candidates, cap })
}

/// Derive a per-query RNG stream from the run seed and the query uuid, so
/// distractor samples are stable under any evaluation order.
fn query_rng(seed: u64, uuid: &str) -> ChaCha20Rng {
    let mut hasher = Sha256::new();
    hasher.update(seed.to_le_bytes());
    hasher.update(uuid.as_bytes());
    let digest = hasher.finalize();
    let mut key = [0u8; 32];
    key.copy_from_slice(&digest[..32]);
    ChaCha20Rng::from_seed(key)
}

/// Indices into `pool.candidates` ranked for this query.
///
/// Uncapped pools rank every candidate. A capped pool keeps the gold plus
/// a seeded sample of `cap - 1` distractors (sampled per query), preserving
/// candidate order.
pub fn query_candidates(pool: &CandidatePool, query: &ProbeQuery, seed: u64) -> Result<Vec<usize>> {
    let gold_idx = pool
        .candidates
        .iter()
        .position(|c| c == &query.object)
        .ok_or_else(|| Error::Input(format!("gold object {:?} not in pool {}", query.object, pool.relation)))?;
    let cap = match pool.cap {
        Some(c) if c < pool.candidates.len() => c,
        _ => return Ok((0..pool.candidates.len()).collect()),
    };
    let mut distractors: Vec<usize> =
        (0..pool.candidates.len()).filter(|&i| i != gold_idx).collect();
    let mut rng = query_rng(seed, &query.uuid);
    distractors.shuffle(&mut rng);
    let mut picked: Vec<usize> = distractors.into_iter().take(cap - 1).collect();
    picked.push(gold_idx);
    picked.sort_unstable();
    Ok(picked)
}

fn render(template: &str, subject: &str, object_text: &str) -> String {
    template.replacen("[X]", subject, 1).replacen("[Y]", object_text, 1)
}

/// Substitute subject and candidate into the template.
pub fn render_filled(query: &ProbeQuery, candidate: &str) -> String {
    render(&query.template, &query.subject, candidate)
}

/// Substitute the subject and drop `[Y]`, for parallel-query pooling.
pub fn render_stripped(query: &ProbeQuery) -> String {
    let rendered = render(&query.template, &query.subject, "");
    rendered.split_whitespace().collect::<Vec<_>>().join(" ")
}

pub(crate) fn vocab_of(model: &Model) -> Result<&Vocab> {
    model
        .vocab
        .as_ref()
        .ok_or_else(|| Error::Config("model carries no vocabulary; cannot tokenize queries".into()))
}

/// Masked rendering in token space: the query with `[Y]` replaced by
/// `candidate_len` masks. Returns the tokens and the mask span
/// `start..start + candidate_len`.
pub(crate) fn masked_tokens(
    vocab: &Vocab,
    query: &ProbeQuery,
    candidate_len: usize,
) -> Result<(Vec<u32>, std::ops::Range<usize>)> {
    let with_subject = query.template.replacen("[X]", &query.subject, 1);
    let (pre, post) = with_subject
        .split_once("[Y]")
        .ok_or_else(|| Error::Validation(format!("template {:?} lacks [Y]", query.template)))?;
    let pre_ids = vocab.tokenize(pre)?;
    let post_ids = vocab.tokenize(post)?;
    let mask_id = vocab.mask_token_id();
    let mut tokens = Vec::with_capacity(pre_ids.len() + candidate_len + post_ids.len());
    tokens.extend_from_slice(&pre_ids);
    let start = tokens.len();
    tokens.extend(std::iter::repeat_n(mask_id, candidate_len));
    tokens.extend_from_slice(&post_ids);
    Ok((tokens, start..start + candidate_len))
}

/// Causal rendering in token space: BOS plus the filled sentence.
/// Returns the tokens and the candidate's span within them.
pub(crate) fn filled_tokens(
    vocab: &Vocab,
    query: &ProbeQuery,
    candidate: &str,
) -> Result<(Vec<u32>, std::ops::Range<usize>)> {
    let with_subject = query.template.replacen("[X]", &query.subject, 1);
    let (pre, post) = with_subject
        .split_once("[Y]")
        .ok_or_else(|| Error::Validation(format!("template {:?} lacks [Y]", query.template)))?;
    let pre_ids = vocab.tokenize(pre)?;
    let cand_ids = vocab.tokenize(candidate)?;
    let post_ids = vocab.tokenize(post)?;
    let mut tokens = Vec::with_capacity(1 + pre_ids.len() + cand_ids.len() + post_ids.len());
    tokens.push(vocab.bos_token_id());
    tokens.extend_from_slice(&pre_ids);
    let start = tokens.len();
    tokens.extend_from_slice(&cand_ids);
    let end = tokens.len();
    tokens.extend_from_slice(&post_ids);
    Ok((tokens, start..end))
}

/// Masked protocol score: mean log-probability of the candidate's tokens
/// at the mask positions of a single hooked forward.
pub fn score_masked(model: &Model, query: &ProbeQuery, candidate: &str, hooks: &[Hook]) -> Result<f64> {
    if model.config.mode != Mode::Masked {
        return Err(Error::Config("score_masked requires a masked-mode model".into()));
    }
    let vocab = vocab_of(model)?;
    let candidate_ids = vocab.tokenize(candidate)?;
    if candidate_ids.is_empty() {
        return Err(Error::Input(format!("candidate {candidate:?} tokenizes to zero tokens")));
    }
    let (tokens, span) = masked_tokens(vocab, query, candidate_ids.len())?;
    let trace = engine::forward(model, &tokens, hooks)?;
    let mut total = 0.0f64;
    for (pos, &token) in span.zip(&candidate_ids) {
        let logprobs = engine::token_logprobs(&trace, pos)?;
        total += logprobs[token as usize];
    }
    Ok(total / candidate_ids.len() as f64)
}

/// Causal protocol score: the filled sentence's total log-probability
/// under the chain rule, starting from BOS.
pub fn score_causal(model: &Model, query: &ProbeQuery, candidate: &str, hooks: &[Hook]) -> Result<f64> {
    if model.config.mode != Mode::Causal {
        return Err(Error::Config("score_causal requires a causal-mode model".into()));
    }
    let vocab = vocab_of(model)?;
    if vocab.tokenize(candidate)?.is_empty() {
        return Err(Error::Input(format!("candidate {candidate:?} tokenizes to zero tokens")));
    }
    let (tokens, _) = filled_tokens(vocab, query, candidate)?;
    if tokens.len() > model.config.max_seq_len {
        return Err(Error::Input(format!(
            "sentence length {} exceeds max_seq_len {}",
            tokens.len(),
            model.config.max_seq_len
        )));
    }
    let trace = engine::forward(model, &tokens, hooks)?;
    let mut total = 0.0f64;
    for p in 1..tokens.len() {
        let logprobs = engine::token_logprobs(&trace, p - 1)?;
        total += logprobs[tokens[p] as usize];
    }
    Ok(total)
}

/// Rank scored candidates and judge the gold object.
///
/// Sorts by score descending, ties broken by ascending candidate index;
/// `gold_rank` is the gold's 1-based position and `correct` means rank 1.
pub fn rank_candidates(
    uuid: &str,
    candidates: &[&str],
    scores: &[f64],
    gold: &str,
) -> Result<ProbeResult> {
    assert_eq!(candidates.len(), scores.len(), "one score per candidate");
    for (candidate, &score) in candidates.iter().zip(scores) {
        if score.is_nan() {
            return Err(Error::Scoring(format!("candidate {candidate:?} scored NaN")));
        }
    }
    let gold_idx = candidates
        .iter()
        .position(|c| *c == gold)
        .ok_or_else(|| Error::Input(format!("gold object {gold:?} not among the scored candidates")))?;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| {
        scores[b].partial_cmp(&scores[a]).expect("NaN rejected above").then(a.cmp(&b))
    });
    let gold_rank = order.iter().position(|&i| i == gold_idx).expect("gold index present") + 1;
    Ok(ProbeResult {
        uuid: uuid.to_string(),
        scores: scores.to_vec(),
        gold_rank,
        correct: gold_rank == 1,
    })
}

/// Score one query against its (possibly capped) pool.
pub fn probe_query(
    model: &Model,
    query: &ProbeQuery,
    pool: &CandidatePool,
    seed: u64,
    hooks: &[Hook],
) -> Result<ProbeResult> {
    let indices = query_candidates(pool, query, seed)?;
    let candidates: Vec<&str> = indices.iter().map(|&i| pool.candidates[i].as_str()).collect();
    let mut scores = Vec::with_capacity(candidates.len());
    for candidate in &candidates {
        let score = match model.config.mode {
            Mode::Masked => score_masked(model, query, candidate, hooks)?,
            Mode::Causal => score_causal(model, query, candidate, hooks)?,
        };
        scores.push(score);
    }
    rank_candidates(&query.uuid, &candidates, &scores, &query.object)
}

/// Group queries by relation, preserving first-appearance order within
/// each relation. Relations are keyed in sorted order.
pub fn group_by_relation<'a>(queries: &'a [ProbeQuery]) -> BTreeMap<&'a str, Vec<&'a ProbeQuery>> {
    let mut groups: BTreeMap<&str, Vec<&ProbeQuery>> = BTreeMap::new();
    for q in queries {
        groups.entry(q.relation.as_str()).or_default().push(q);
    }
    groups
}

/// Probe every query of one language: per-relation pools, per-query
/// ranking. Queries score in parallel; results come back in input order.
pub fn probe_language(
    model: &Model,
    queries: &[ProbeQuery],
    pool_cap: Option<usize>,
    seed: u64,
    hooks: &[Hook],
) -> Result<Vec<ProbeResult>> {
    if queries.is_empty() {
        return Err(Error::Input("no queries to probe".into()));
    }
    let mut pools: BTreeMap<&str, CandidatePool> = BTreeMap::new();
    for (relation, group) in group_by_relation(queries) {
        pools.insert(relation, build_pool(&group, model.config.mode, pool_cap, seed)?);
    }
    queries
        .par_iter()
        .map(|q| probe_query(model, q, &pools[q.relation.as_str()], seed, hooks))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::{init_random, ModelConfig};
    use crate::tokenizer::{BOS_SURFACE, MASK_SURFACE, PAD_SURFACE};

    fn query(relation: &str, subject: &str, object: &str, uuid: &str) -> ProbeQuery {
        ProbeQuery {
            lang: "xx".into(),
            relation: relation.into(),
            template: "the capital of [X] is [Y] .".into(),
            subject: subject.into(),
            object: object.into(),
            uuid: uuid.into(),
        }
    }

    fn toy_model(mode: Mode) -> Model {
        let words = [
            "the", "capital", "of", "is", ".", "aa", "bb", "cc", "dd", "ee", "ff", "gg", "hh",
        ];
        let mut surfaces = vec![MASK_SURFACE.to_string(), PAD_SURFACE.to_string(), BOS_SURFACE.to_string()];
        surfaces.extend(words.iter().map(|w| w.to_string()));
        let config = ModelConfig {
            num_layers: 2,
            hidden_dim: 8,
            num_heads: 2,
            ffn_dim: 16,
            vocab_size: surfaces.len(),
            max_seq_len: 12,
            mode,
            mask_token_id: 0,
            pad_token_id: 1,
            bos_token_id: 2,
        };
        let mut model = init_random(&config, 42).unwrap();
        model.vocab = Some(Vocab::from_surfaces(surfaces, &config).unwrap());
        model
    }

    #[test]
    fn pool_collects_distinct_objects() {
        let queries = vec![query("P1", "aa", "bb", "u1"), query("P1", "cc", "dd", "u2"), query("P1", "ee", "bb", "u3")];
        let refs: Vec<&ProbeQuery> = queries.iter().collect();
        let pool = build_pool(&refs, Mode::Masked, None, 0).unwrap();
        assert_eq!(pool.candidates, vec!["bb", "dd"]);
        assert_eq!(pool.cap, None);
    }

    #[test]
    fn capped_pool_keeps_gold_and_cap_size() {
        let queries: Vec<ProbeQuery> = (0..50)
            .map(|i| query("P1", "aa", &format!("o{i}"), &format!("u{i}")))
            .collect();
        let refs: Vec<&ProbeQuery> = queries.iter().collect();
        let pool = build_pool(&refs, Mode::Causal, Some(10), 7).unwrap();
        for q in &queries {
            let picked = query_candidates(&pool, q, 7).unwrap();
            assert_eq!(picked.len(), 10);
            let gold_idx = pool.candidates.iter().position(|c| c == &q.object).unwrap();
            assert!(picked.contains(&gold_idx), "gold missing for {}", q.uuid);
        }
    }

    #[test]
    fn capped_sampling_is_seed_deterministic() {
        let queries: Vec<ProbeQuery> =
            (0..30).map(|i| query("P1", "aa", &format!("o{i}"), &format!("u{i}"))).collect();
        let refs: Vec<&ProbeQuery> = queries.iter().collect();
        let pool = build_pool(&refs, Mode::Causal, Some(5), 7).unwrap();
        let a = query_candidates(&pool, &queries[3], 7).unwrap();
        let b = query_candidates(&pool, &queries[3], 7).unwrap();
        assert_eq!(a, b);
        let c = query_candidates(&pool, &queries[3], 8).unwrap();
        assert_ne!(a, c); // overwhelmingly likely for 30 choose 4
    }

    #[test]
    fn tiny_cap_rejected() {
        let q = query("P1", "aa", "bb", "u1");
        assert!(matches!(build_pool(&[&q], Mode::Causal, Some(1), 0), Err(Error::Config(_))));
    }

    #[test]
    fn masked_score_is_single_token_logprob() {
        let model = toy_model(Mode::Masked);
        let vocab = model.vocab.as_ref().unwrap();
        let q = query("P1", "aa", "bb", "u1");
        let score = score_masked(&model, &q, "bb", &[]).unwrap();

        // Independent recompute: render, forward, read the mask position.
        let rendered = "the capital of aa is [MASK] .";
        let tokens = vocab.tokenize(rendered).unwrap();
        let mask_pos = tokens.iter().position(|&t| t == 0).unwrap();
        let trace = engine::forward(&model, &tokens, &[]).unwrap();
        let lp = engine::token_logprobs(&trace, mask_pos).unwrap();
        let expected = lp[vocab.id_of("bb").unwrap() as usize];
        assert!((score - expected).abs() < 1e-12);
    }

    #[test]
    fn masked_two_token_candidate_averages() {
        let model = toy_model(Mode::Masked);
        let q = query("P1", "aa", "bb cc", "u1");
        let score = score_masked(&model, &q, "bb cc", &[]).unwrap();
        let vocab = model.vocab.as_ref().unwrap();
        let tokens = vocab.tokenize("the capital of aa is [MASK] [MASK] .").unwrap();
        let trace = engine::forward(&model, &tokens, &[]).unwrap();
        let positions: Vec<usize> =
            tokens.iter().enumerate().filter(|(_, &t)| t == 0).map(|(p, _)| p).collect();
        let lp0 = engine::token_logprobs(&trace, positions[0]).unwrap();
        let lp1 = engine::token_logprobs(&trace, positions[1]).unwrap();
        let expected = (lp0[vocab.id_of("bb").unwrap() as usize]
            + lp1[vocab.id_of("cc").unwrap() as usize])
            / 2.0;
        assert!((score - expected).abs() < 1e-12);
    }

    #[test]
    fn uniform_logits_score_log_inverse_vocab() {
        // Zeroed token embeddings give identical (zero) logits for every
        // candidate token, so a t-token masked score is ln(1/vocab).
        let words = ["the", "capital", "of", "is", ".", "aa"];
        let mut surfaces =
            vec![MASK_SURFACE.to_string(), PAD_SURFACE.to_string()];
        surfaces.extend(words.iter().map(|w| w.to_string()));
        let config = ModelConfig {
            num_layers: 1,
            hidden_dim: 8,
            num_heads: 2,
            ffn_dim: 8,
            vocab_size: 8,
            max_seq_len: 12,
            mode: Mode::Masked,
            mask_token_id: 0,
            pad_token_id: 1,
            bos_token_id: 1,
        };
        let mut model = init_random(&config, 1).unwrap();
        model.weights.token_embedding = crate::tensor::Matrix::zeros(8, 8);
        model.vocab = Some(Vocab::from_surfaces(surfaces, &config).unwrap());
        let q = query("P1", "aa", "capital is", "u1");
        let score = score_masked(&model, &q, "capital is", &[]).unwrap();
        assert!((score - (1.0f64 / 8.0).ln()).abs() < 1e-9, "{score}");
    }

    #[test]
    fn causal_score_matches_chain_rule() {
        let model = toy_model(Mode::Causal);
        let q = query("P1", "aa", "bb", "u1");
        let score = score_causal(&model, &q, "bb", &[]).unwrap();
        let vocab = model.vocab.as_ref().unwrap();
        let sentence = vocab.tokenize("the capital of aa is bb .").unwrap();
        let mut tokens = vec![2u32];
        tokens.extend(&sentence);
        let trace = engine::forward(&model, &tokens, &[]).unwrap();
        let mut expected = 0.0;
        for p in 1..tokens.len() {
            expected += engine::token_logprobs(&trace, p - 1).unwrap()[tokens[p] as usize];
        }
        assert!((score - expected).abs() < 1e-12);
        assert!(score <= 0.0);
    }

    #[test]
    fn protocol_separation_enforced() {
        let masked = toy_model(Mode::Masked);
        let causal = toy_model(Mode::Causal);
        let q = query("P1", "aa", "bb", "u1");
        assert!(matches!(score_causal(&masked, &q, "bb", &[]), Err(Error::Config(_))));
        assert!(matches!(score_masked(&causal, &q, "bb", &[]), Err(Error::Config(_))));
    }

    #[test]
    fn ranking_orders_and_breaks_ties_by_index() {
        let r = rank_candidates("u", &["gold", "d1", "d2"], &[-1.0, -2.0, -0.5], "gold").unwrap();
        assert_eq!(r.gold_rank, 2);
        assert!(!r.correct);

        let tie = rank_candidates("u", &["gold", "a", "b", "c"], &[-1.0, -2.0, -3.0, -1.0], "gold").unwrap();
        assert_eq!(tie.gold_rank, 1);
        assert!(tie.correct);

        let singleton = rank_candidates("u", &["gold"], &[-5.0], "gold").unwrap();
        assert_eq!(singleton.gold_rank, 1);
        assert!(singleton.correct);
    }

    #[test]
    fn nan_scores_are_rejected_with_the_candidate_name() {
        let err = rank_candidates("u", &["gold", "bad"], &[-1.0, f64::NAN], "gold").unwrap_err();
        assert!(err.to_string().contains("bad"), "{err}");
    }

    #[test]
    fn ranks_are_a_permutation() {
        let queries = vec![
            query("P1", "aa", "bb", "u1"),
            query("P1", "cc", "dd", "u2"),
            query("P1", "ee", "ff", "u3"),
        ];
        let model = toy_model(Mode::Masked);
        let results = probe_language(&model, &queries, None, 7, &[]).unwrap();
        for r in &results {
            assert!(r.gold_rank >= 1 && r.gold_rank <= 3);
        }
    }

    #[test]
    fn template_validation() {
        let mut q = query("P1", "aa", "bb", "u1");
        q.template = "no placeholders".into();
        assert!(q.validate().is_err());
        q.template = "[X] and [Y] and [Y]".into();
        assert!(q.validate().is_err());
        q.template = "[X] maps to [Y]".into();
        assert!(q.validate().is_ok());
    }

    #[test]
    fn stripped_rendering_drops_the_object_slot() {
        let q = query("P1", "aa", "bb", "u1");
        assert_eq!(render_stripped(&q), "the capital of aa is .");
    }
}
