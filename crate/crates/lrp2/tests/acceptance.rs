//! Acceptance suite: one test per criterion, each printing a pass line
//! with its runtime and asserting its stated budget.

mod common;

use std::collections::BTreeSet;
use std::time::Instant;

use lrp2::engine::{self, init_random, Hook, Mode, Model, ModelConfig};
use lrp2::geometry::{layerwise_cosine, probe_parallel_pairs, ConfigTag};
use lrp2::intervention::{make_lirp, InterventionSpec};
use lrp2::langvec::{language_vectors, LanguageVectorSet};
use lrp2::metrics::{accuracy, transferability, EvaluationSets};
use lrp2::neurons::{
    ablation_difference, neuron_attribution, overlap_report, path_attribution,
    relation_neuron_sets, AttributionConfig, NeuronCoord, OverlapFormula,
};
use lrp2::probing::{
    group_by_relation, probe_language, rank_candidates, score_causal, score_masked, ProbeQuery,
};
use lrp2::sweep::{full_grid, gap_curve, run_sweep, select_best, Criterion, SweepContext, SweepEntry, SweepResult};
use lrp2::tensor::Matrix;
use lrp2::tokenizer::{Vocab, BOS_SURFACE, MASK_SURFACE, PAD_SURFACE};
use lrp2::trainer::world::{generate_world, reference_world_spec, ReferenceWorldOptions};
use lrp2::trainer::{batch_gradients, batch_loss, train, Example, Objective, TrainConfig};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

fn finish(criterion: &str, started: Instant, budget_s: f64) {
    let elapsed = started.elapsed().as_secs_f64();
    println!("acceptance {criterion}: PASS in {elapsed:.2}s (budget {budget_s:.0}s)");
    assert!(elapsed < budget_s, "{criterion} exceeded its {budget_s}s budget: {elapsed:.2}s");
}

/// A small masked- or causal-mode model with a usable vocabulary.
fn scorable_model(mode: Mode, seed: u64) -> Model {
    let words = ["the", "cap", "of", "is", ".", "aa", "bb", "cc", "dd", "ee", "ff", "gg"];
    let mut surfaces =
        vec![MASK_SURFACE.to_string(), PAD_SURFACE.to_string(), BOS_SURFACE.to_string()];
    surfaces.extend(words.iter().map(|w| w.to_string()));
    let config = ModelConfig {
        num_layers: 2,
        hidden_dim: 8,
        num_heads: 2,
        ffn_dim: 12,
        vocab_size: surfaces.len(),
        max_seq_len: 12,
        mode,
        mask_token_id: 0,
        pad_token_id: 1,
        bos_token_id: 2,
    };
    let mut model = init_random(&config, seed).unwrap();
    model.vocab = Some(Vocab::from_surfaces(surfaces, &config).unwrap());
    model
}

fn query(subject: &str, object: &str, uuid: &str) -> ProbeQuery {
    ProbeQuery {
        lang: "xx".into(),
        relation: "P01".into(),
        template: "the cap of [X] is [Y] .".into(),
        subject: subject.into(),
        object: object.into(),
        uuid: uuid.into(),
    }
}

// ---------------------------------------------------------------------------
// Criterion 1 — engine vs naive dense-math oracle
// ---------------------------------------------------------------------------

#[test]
fn criterion_1_engine_oracle() {
    let started = Instant::now();
    let mut rng = ChaCha20Rng::seed_from_u64(0xC1);
    for case in 0..20 {
        let hidden = *[4usize, 6, 8].iter().nth(rng.random_range(0..3)).unwrap();
        let heads = *[1usize, 2].iter().nth(rng.random_range(0..2)).unwrap();
        let config = ModelConfig {
            num_layers: rng.random_range(1..=2),
            hidden_dim: hidden,
            num_heads: heads,
            ffn_dim: rng.random_range(4..=16),
            vocab_size: rng.random_range(8..=16),
            max_seq_len: 8,
            mode: if case % 2 == 0 { Mode::Masked } else { Mode::Causal },
            mask_token_id: 0,
            pad_token_id: 1,
            bos_token_id: 2,
        };
        let model = init_random(&config, 1000 + case).unwrap();
        let len = rng.random_range(1..=config.max_seq_len);
        let tokens: Vec<u32> =
            (0..len).map(|_| rng.random_range(0..config.vocab_size as u32)).collect();

        let trace = engine::forward(&model, &tokens, &[]).unwrap();
        let (oracle_hidden, oracle_logits) = common::naive_forward(&model, &tokens);

        for (layer, oracle_layer) in oracle_hidden.iter().enumerate() {
            for (p, oracle_row) in oracle_layer.iter().enumerate() {
                for (i, &expect) in oracle_row.iter().enumerate() {
                    let got = f64::from(trace.hidden[layer].get(p, i));
                    assert!(
                        (got - expect).abs() < 1e-5,
                        "case {case} layer {layer} pos {p} dim {i}: {got} vs {expect}"
                    );
                }
            }
        }
        for (p, oracle_row) in oracle_logits.iter().enumerate() {
            for (t, &expect) in oracle_row.iter().enumerate() {
                let got = f64::from(trace.logits.get(p, t));
                assert!((got - expect).abs() < 1e-5, "case {case} logits pos {p} tok {t}: {got} vs {expect}");
            }
        }
    }
    finish("1 (engine oracle, 20 models)", started, 30.0);
}

// ---------------------------------------------------------------------------
// Criterion 2 — projection algebra
// ---------------------------------------------------------------------------

fn random_vector_set(rng: &mut ChaCha20Rng, lang: &str, layers: usize, dim: usize) -> LanguageVectorSet {
    let data: Vec<f32> = (0..layers * dim).map(|_| rng.random_range(-2.0..2.0)).collect();
    LanguageVectorSet {
        lang: lang.into(),
        vectors: Matrix::from_vec(layers, dim, data),
        num_sentences: 1,
    }
}

#[test]
fn criterion_2_projection_algebra() {
    let started = Instant::now();
    let mut rng = ChaCha20Rng::seed_from_u64(0xC2);
    let dim = 8;

    for _ in 0..1000 {
        let lang = random_vector_set(&mut rng, "xx", 2, dim);
        let pivot = random_vector_set(&mut rng, "en", 2, dim);
        let spec = InterventionSpec::new(lang.clone(), pivot.clone(), 1, 2).unwrap();
        let lirp = make_lirp(&spec).unwrap();

        let rows = rng.random_range(1..4);
        let data: Vec<f32> = (0..rows * dim).map(|_| rng.random_range(-3.0..3.0)).collect();
        let h = Matrix::from_vec(rows, dim, data);

        // Shift uniformity: every row lands on exactly h + delta for the
        // one shared delta vector.
        let delta: Vec<f32> =
            pivot.layer(1).iter().zip(lang.layer(1)).map(|(p, l)| p - l).collect();
        let out = lirp.apply(&h);
        for p in 0..rows {
            let expect: Vec<f32> = h.row(p).iter().zip(&delta).map(|(v, d)| v + d).collect();
            assert_eq!(out.row(p), expect.as_slice(), "row {p} deviates from the uniform shift");
        }

        // Same-layer LIRP∘LSRP cancellation within 1e-6.
        let spec_same = InterventionSpec::new(lang.clone(), pivot.clone(), 1, 2).unwrap();
        let lsrp_same_layer = {
            // LSRP built from layer 1's vectors so both shifts share a layer.
            let mut swapped = spec_same;
            swapped.lsrp_layer = 2;
            let inverse: Vec<f32> =
                swapped.lang_vectors.layer(1).iter().zip(swapped.pivot_vectors.layer(1)).map(|(l, p)| l - p).collect();
            Hook::new(1, move |m: &Matrix<f32>| {
                let mut out = m.clone();
                for r in 0..out.rows() {
                    for (v, d) in out.row_mut(r).iter_mut().zip(&inverse) {
                        *v += *d;
                    }
                }
                out
            })
        };
        let round = lsrp_same_layer.apply(&out);
        for (a, b) in round.data().iter().zip(h.data()) {
            assert!((a - b).abs() < 1e-6, "cancellation residue {}", (a - b).abs());
        }
    }

    // Null intervention: equal language and pivot vectors reproduce the
    // baseline probing scores bit for bit.
    let model = scorable_model(Mode::Masked, 77);
    let queries = vec![query("aa", "bb", "u1"), query("cc", "dd", "u2"), query("ee", "ff", "u3")];
    let vectors = language_vectors(&model, &[vec![3, 4, 5], vec![6, 7]], "xx").unwrap();
    let mut pivot = vectors.clone();
    pivot.lang = "en".into();
    let spec = InterventionSpec::new(vectors, pivot, 1, 2).unwrap();
    let (lirp, lsrp) = spec.hooks().unwrap();
    let baseline = probe_language(&model, &queries, None, 0, &[]).unwrap();
    let nulled = probe_language(&model, &queries, None, 0, &[lirp, lsrp]).unwrap();
    assert_eq!(baseline.len(), nulled.len());
    for (a, b) in baseline.iter().zip(&nulled) {
        assert_eq!(a.gold_rank, b.gold_rank);
        assert_eq!(a.correct, b.correct);
        for (x, y) in a.scores.iter().zip(&b.scores) {
            assert_eq!(x.to_bits(), y.to_bits(), "null intervention shifted a score");
        }
    }

    finish("2 (projection algebra, 1000 vectors + null intervention)", started, 10.0);
}

// ---------------------------------------------------------------------------
// Criterion 3 — scoring oracles
// ---------------------------------------------------------------------------

#[test]
fn criterion_3_scoring_oracles() {
    let started = Instant::now();
    let mut rng = ChaCha20Rng::seed_from_u64(0xC3);
    let candidates = ["aa", "bb", "cc", "dd", "ee", "ff", "gg", "bb cc", "dd ee ff"];

    for case in 0..100 {
        let masked = scorable_model(Mode::Masked, 3000 + case);
        let causal = scorable_model(Mode::Causal, 3000 + case);
        let vocab = masked.vocab.clone().unwrap();
        let candidate = candidates[rng.random_range(0..candidates.len())];
        let q = query("gg", candidate, "u");

        // Masked oracle: explicit per-position log-softmax, averaged.
        let got = score_masked(&masked, &q, candidate, &[]).unwrap();
        let cand_ids = vocab.tokenize(candidate).unwrap();
        let prefix = vocab.tokenize("the cap of gg is").unwrap();
        let mut tokens = prefix.clone();
        tokens.extend(std::iter::repeat_n(0u32, cand_ids.len()));
        tokens.extend(vocab.tokenize(".").unwrap());
        let trace = engine::forward(&masked, &tokens, &[]).unwrap();
        let mut expect = 0.0f64;
        for (offset, &token) in cand_ids.iter().enumerate() {
            let row: Vec<f64> =
                trace.logits.row(prefix.len() + offset).iter().map(|&v| f64::from(v)).collect();
            expect += common::naive_logprobs(&row)[token as usize];
        }
        expect /= cand_ids.len() as f64;
        assert!((got - expect).abs() < 1e-6, "case {case} masked: {got} vs {expect}");

        // Causal oracle: explicit chain rule over the filled sentence.
        let got = score_causal(&causal, &q, candidate, &[]).unwrap();
        let mut tokens = vec![2u32];
        tokens.extend(vocab.tokenize(&format!("the cap of gg is {candidate} .")).unwrap());
        let trace = engine::forward(&causal, &tokens, &[]).unwrap();
        let mut expect = 0.0f64;
        for p in 1..tokens.len() {
            let row: Vec<f64> = trace.logits.row(p - 1).iter().map(|&v| f64::from(v)).collect();
            expect += common::naive_logprobs(&row)[tokens[p] as usize];
        }
        assert!((got - expect).abs() < 1e-6, "case {case} causal: {got} vs {expect}");
    }

    // Ranking and tie-breaks against the brute-force count.
    for _ in 0..100 {
        let pool = rng.random_range(1..=8);
        // Coarse scores force frequent exact ties.
        let scores: Vec<f64> =
            (0..pool).map(|_| f64::from(rng.random_range(-3i32..0)) / 2.0).collect();
        let names: Vec<String> = (0..pool).map(|i| format!("c{i}")).collect();
        let name_refs: Vec<&str> = names.iter().map(String::as_str).collect();
        let gold = rng.random_range(0..pool);
        let result = rank_candidates("u", &name_refs, &scores, &names[gold]).unwrap();
        assert_eq!(result.gold_rank, common::brute_force_rank(&scores, gold));
        assert_eq!(result.correct, result.gold_rank == 1);
        // Rank sanity: the implied ranks are a permutation of 1..=pool.
        let all_ranks: BTreeSet<usize> =
            (0..pool).map(|i| common::brute_force_rank(&scores, i)).collect();
        assert!(all_ranks.iter().all(|r| (1..=pool).contains(r)));
    }

    finish("3 (scoring oracles, 100 cases each)", started, 30.0);
}

// ---------------------------------------------------------------------------
// Criterion 4 — metric oracles
// ---------------------------------------------------------------------------

#[test]
fn criterion_4_metric_oracles() {
    let started = Instant::now();
    let mut rng = ChaCha20Rng::seed_from_u64(0xC4);
    let universe: Vec<u32> = (0..32).collect();

    for case in 0..1000 {
        let probed: Vec<bool> = (0..32).map(|_| rng.random::<f64>() < 0.7).collect();
        let correct: Vec<bool> =
            (0..32).map(|i| probed[i] && rng.random::<f64>() < 0.5).collect();
        let pivot: Vec<bool> = (0..32).map(|_| rng.random::<f64>() < 0.4).collect();
        if !probed.iter().any(|&p| p) {
            continue;
        }
        let to_set = |flags: &[bool]| -> BTreeSet<String> {
            flags
                .iter()
                .enumerate()
                .filter(|(_, &f)| f)
                .map(|(i, _)| format!("u{i}"))
                .collect()
        };
        let sets = EvaluationSets::new("xx", to_set(&probed), to_set(&correct), to_set(&pivot)).unwrap();
        let acc = accuracy(&sets).unwrap();
        let trans = transferability(&sets);
        let acc_oracle = common::brute_force_accuracy(&universe, &probed, &correct);
        let trans_oracle = common::brute_force_transferability(&universe, &correct, &pivot);
        assert_eq!(acc, acc_oracle, "case {case} accuracy");
        assert_eq!(trans, trans_oracle, "case {case} transferability");
    }

    // Degenerate cases return the documented values.
    let empty_correct = EvaluationSets::new(
        "xx",
        ["u1".to_string()].into(),
        BTreeSet::new(),
        BTreeSet::new(),
    )
    .unwrap();
    assert_eq!(accuracy(&empty_correct).unwrap(), 0.0);
    assert_eq!(transferability(&empty_correct), 0.0);
    let no_probes =
        EvaluationSets::new("xx", BTreeSet::new(), BTreeSet::new(), BTreeSet::new()).unwrap();
    assert!(accuracy(&no_probes).is_err());

    finish("4 (metric oracles, 1000 set pairs)", started, 5.0);
}

// ---------------------------------------------------------------------------
// Criterion 5 — attribution convergence
// ---------------------------------------------------------------------------

#[test]
fn criterion_5_attribution_convergence() {
    let started = Instant::now();
    let model = scorable_model(Mode::Masked, 5050);
    let q = query("aa", "bb", "u");
    let mut rng = ChaCha20Rng::seed_from_u64(0xC5);

    // Riemann sum at m = 200 against the ablation difference F(w) - F(0).
    let cfg = AttributionConfig { riemann_steps: 200, ..Default::default() };
    for pick in 0..20 {
        let coord = NeuronCoord {
            layer: rng.random_range(1..=model.config.num_layers),
            index: rng.random_range(0..model.config.ffn_dim),
        };
        let attr = neuron_attribution(&model, &q, coord, &cfg, &[]).unwrap();
        let delta = ablation_difference(&model, &q, coord, &[]).unwrap();
        let tol = 1e-3 * delta.abs().max(1.0);
        assert!(
            (attr - delta).abs() <= tol,
            "pick {pick} coord {coord:?}: attribution {attr} vs ablation {delta}"
        );
    }

    // Affine network: zero the W2 row feeding out of one unit, making the
    // gold probability constant in that activation. Exact to 1e-8.
    let mut affine = scorable_model(Mode::Masked, 5051);
    let coord = NeuronCoord { layer: 1, index: 3 };
    for out in 0..affine.config.hidden_dim {
        affine.weights.layers[0].w2.set(coord.index, out, 0.0);
    }
    let cfg_small = AttributionConfig { riemann_steps: 5, ..Default::default() };
    let attr = neuron_attribution(&affine, &q, coord, &cfg_small, &[]).unwrap();
    let delta = ablation_difference(&affine, &q, coord, &[]).unwrap();
    assert!(attr.abs() <= 1e-8 && delta.abs() <= 1e-8, "affine network: {attr} vs {delta}");

    // Affine path function with nonzero slope: exact for any m.
    for m in [1usize, 2, 7, 50] {
        let cfg = AttributionConfig { riemann_steps: m, ..Default::default() };
        let attr = path_attribution(|a| Ok(0.4 - 0.3 * a), 1.25, &cfg).unwrap();
        assert!((attr - (-0.3 * 1.25)).abs() <= 1e-8, "m={m}: {attr}");
    }

    // Zero activation means a zero-length path.
    let zero = path_attribution(|_| unreachable!("zero path never evaluates"), 0.0, &cfg).unwrap();
    assert_eq!(zero, 0.0);

    finish("5 (attribution convergence, 20 coords at m=200)", started, 120.0);
}

// ---------------------------------------------------------------------------
// Criterion 6 — trainer gradient check
// ---------------------------------------------------------------------------

#[test]
fn criterion_6_trainer_gradients() {
    let started = Instant::now();

    fn read_entry(w: &lrp2::engine::weights::Weights<f64>, name: &str, idx: usize) -> f64 {
        let mut out = None;
        w.visit(|n, _, data| {
            if n == name {
                out = Some(data[idx]);
            }
        });
        out.unwrap()
    }
    fn write_entry(w: &mut lrp2::engine::weights::Weights<f64>, name: &str, idx: usize, value: f64) {
        w.visit_mut(|n, data| {
            if n == name {
                data[idx] = value;
            }
        });
    }

    // One tensor family per architectural layer type. The output head is
    // weight-tied, so token_embedding carries the head's gradient too.
    let families = [
        ("embedding", "token_embedding"),
        ("positions", "position_embedding"),
        ("attention", ".attn.w"),
        ("attention-bias", ".attn.b"),
        ("ffn", ".ffn.w"),
        ("ffn-bias", ".ffn.b"),
        ("layer-norm", ".ln"),
        ("final-norm", "final_ln."),
    ];

    for mode in [Mode::Masked, Mode::Causal] {
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
        let weights = init_random(&config, 0x60D).unwrap().weights.to_f64();
        let examples = vec![
            Example { input: vec![3, 0, 5, 6], targets: vec![None, Some(4), None, Some(7)] },
            Example { input: vec![8, 9, 10, 11], targets: vec![Some(9), Some(10), Some(11), Some(3)] },
        ];
        let (_, _, grads) = batch_gradients(&config, &weights, &examples).unwrap();

        let mut tensor_names: Vec<(String, usize)> = Vec::new();
        grads.visit(|name, _, data| tensor_names.push((name.to_string(), data.len())));

        let mut rng = ChaCha20Rng::seed_from_u64(0xC6);
        for (family, pattern) in families {
            let members: Vec<&(String, usize)> =
                tensor_names.iter().filter(|(n, _)| n.contains(pattern)).collect();
            assert!(!members.is_empty(), "no tensors match {family}");
            let mut checked = 0;
            let mut attempts = 0;
            while checked < 10 && attempts < 500 {
                attempts += 1;
                let (name, len) = members[rng.random_range(0..members.len())];
                let idx = rng.random_range(0..*len);
                let analytic = read_entry(&grads, name, idx);
                if analytic.abs() < 1e-1 {
                    // The O(step^2) truncation error of the central
                    // difference swamps the 1e-4 relative tolerance on
                    // small-magnitude gradients; sample among the rest.
                    continue;
                }
                let step = 1e-3;
                let base = read_entry(&weights, name, idx);
                let mut plus = weights.clone();
                write_entry(&mut plus, name, idx, base + step);
                let mut minus = weights.clone();
                write_entry(&mut minus, name, idx, base - step);
                let (loss_plus, _) = batch_loss(&config, &plus, &examples).unwrap();
                let (loss_minus, _) = batch_loss(&config, &minus, &examples).unwrap();
                let fd = (loss_plus - loss_minus) / (2.0 * step);
                let rel = (analytic - fd).abs() / fd.abs().max(analytic.abs());
                assert!(
                    rel < 1e-4,
                    "{mode:?} {family} {name}[{idx}]: analytic {analytic} vs fd {fd} (rel {rel:.2e})"
                );
                checked += 1;
            }
            assert_eq!(checked, 10, "could not find 10 checkable weights in {family}");
        }
    }

    finish("6 (trainer gradients, 10 weights x 8 families x 2 modes)", started, 60.0);
}

// ---------------------------------------------------------------------------
// Criterion 7 — end-to-end toy replication
// ---------------------------------------------------------------------------

/// The pinned reference run: world seed 9, model/train seed 9, 400
/// epochs. All thresholds below were frozen against this seed.
#[test]
fn criterion_7_end_to_end_toy_replication() {
    let started = Instant::now();
    const SEED: u64 = 9;

    let spec = reference_world_spec(&ReferenceWorldOptions { seed: SEED, ..Default::default() });
    let world = generate_world(&spec, SEED).unwrap();
    let config = world.model_config(Mode::Masked, 4, 32, 4, 64);
    let vocab = world.vocab(&config).unwrap();
    let mut model = init_random(&config, SEED).unwrap();
    model.vocab = Some(vocab);

    let train_config = TrainConfig {
        epochs: 400,
        batch_size: 8,
        learning_rate: 0.05,
        seed: SEED,
        objective: Objective::MaskedLm,
        mask_fraction: 0.5,
    };
    let outcome = train(&model, &world.train_corpus(), &train_config).unwrap();
    let model = outcome.model;
    assert!(
        outcome.epoch_losses.last().unwrap() < outcome.epoch_losses.first().unwrap(),
        "training failed to reduce the loss"
    );

    // Language vectors from the training corpora.
    let sentences = |lang: &str| -> Vec<Vec<u32>> {
        world.corpora[lang].iter().map(|s| s.token_ids.clone()).collect()
    };
    let en_vectors = language_vectors(&model, &sentences("en"), "en").unwrap();
    let zz_vectors = language_vectors(&model, &sentences("zz"), "zz").unwrap();

    let zz_queries = world.probes_for("zz");
    let en_queries = world.probes_for("en");

    // The knowledge gap the projections are meant to bridge.
    let en_results = probe_language(&model, &en_queries, None, SEED, &[]).unwrap();
    let zz_results = probe_language(&model, &zz_queries, None, SEED, &[]).unwrap();
    let en_sets = EvaluationSets::from_results("en", &en_results, &en_results).unwrap();
    let zz_sets = EvaluationSets::from_results("zz", &zz_results, &en_results).unwrap();
    let en_acc = accuracy(&en_sets).unwrap();
    let zz_acc = accuracy(&zz_sets).unwrap();
    assert!(
        en_acc > zz_acc,
        "expected a knowledge gap between pivot ({en_acc}) and target ({zz_acc})"
    );

    // (a) The sweep's transferability-best pair strictly exceeds baseline.
    let ctx = SweepContext {
        model: &model,
        target_queries: &zz_queries,
        pivot_queries: &en_queries,
        lang_vectors: &zz_vectors,
        pivot_vectors: &en_vectors,
        pool_cap: None,
        seed: SEED,
    };
    let sweep_result = run_sweep(&ctx, None, None).unwrap();
    assert_eq!(sweep_result.entries.len(), 6, "full grid for L=4");
    let (best_tag, best_value) = select_best(&sweep_result, Criterion::Transferability);
    let baseline_value = sweep_result.baseline_transferability;
    let ConfigTag::Pair { lirp, lsrp } = best_tag else {
        panic!("no layer pair improved on the baseline");
    };
    assert!(
        best_value > baseline_value,
        "(a) best transferability {best_value} does not exceed baseline {baseline_value}"
    );
    assert!(
        best_value - baseline_value >= 5.0,
        "(a) pinned margin: expected >= 5.0 points, got {}",
        best_value - baseline_value
    );

    // (b) Geometry: higher target-pivot cosine than baseline at every
    // layer the stream spends in the pivot-like space.
    let spec_best =
        InterventionSpec::new(zz_vectors.clone(), en_vectors.clone(), lirp, lsrp).unwrap();
    let (lirp_hook, lsrp_hook) = spec_best.hooks().unwrap();
    let pairs = probe_parallel_pairs(&model, &zz_queries, &en_queries).unwrap();
    let curve_base = layerwise_cosine(&model, &pairs, &[], &[]).unwrap();
    let curve_proj =
        layerwise_cosine(&model, &pairs, &[lirp_hook.clone(), lsrp_hook.clone()], &[]).unwrap();
    assert_eq!(curve_base.len(), 5);
    for layer in 0..lirp {
        assert_eq!(
            curve_base[layer], curve_proj[layer],
            "(b) hook locality: curves must agree before layer {lirp}"
        );
    }
    for layer in lirp..lsrp {
        assert!(
            curve_proj[layer] - curve_base[layer] >= 0.1,
            "(b) pinned margin at layer {layer}: baseline {} vs projected {}",
            curve_base[layer],
            curve_proj[layer]
        );
    }

    // (c) Per-layer knowledge-neuron overlap, averaged over the window.
    let cfg = AttributionConfig::default();
    let zz_groups = group_by_relation(&zz_queries);
    let en_groups = group_by_relation(&en_queries);
    let mut en_sets_kn = Vec::new();
    let mut zz_base_kn = Vec::new();
    let mut zz_proj_kn = Vec::new();
    for (relation, group) in &zz_groups {
        let en_group = &en_groups[relation];
        en_sets_kn.push(relation_neuron_sets(&model, en_group, "en", relation, &cfg, &[]).unwrap());
        zz_base_kn.push(relation_neuron_sets(&model, group, "zz", relation, &cfg, &[]).unwrap());
        zz_proj_kn.push(
            relation_neuron_sets(
                &model,
                group,
                "zz",
                relation,
                &cfg,
                &[lirp_hook.clone(), lsrp_hook.clone()],
            )
            .unwrap(),
        );
    }
    let report_base =
        overlap_report(&zz_base_kn, &en_sets_kn, 4, OverlapFormula::IntersectionOverUnion).unwrap();
    let report_proj =
        overlap_report(&zz_proj_kn, &en_sets_kn, 4, OverlapFormula::IntersectionOverUnion).unwrap();
    let window: Vec<usize> = (lirp..lsrp).collect();
    let mean = |report: &lrp2::neurons::OverlapReport| -> f64 {
        window.iter().map(|l| report.per_layer[l]).sum::<f64>() / window.len() as f64
    };
    let base_mean = mean(&report_base);
    let proj_mean = mean(&report_proj);
    assert!(
        proj_mean >= base_mean,
        "(c) window overlap mean dropped: baseline {base_mean} vs projected {proj_mean}"
    );
    assert!(
        proj_mean - base_mean >= 1.0,
        "(c) pinned margin: expected >= 1.0 points, got {}",
        proj_mean - base_mean
    );

    println!(
        "  toy replication: gap {en_acc:.1}->{zz_acc:.1}, best ({lirp},{lsrp}) trans {baseline_value:.1}->{best_value:.1}, \
         geometry window ok, neuron window {base_mean:.2}->{proj_mean:.2}"
    );
    finish("7 (end-to-end toy replication, seed 9)", started, 600.0);
}

// ---------------------------------------------------------------------------
// Criterion 8 — sweep bookkeeping
// ---------------------------------------------------------------------------

#[test]
fn criterion_8_sweep_bookkeeping() {
    let started = Instant::now();

    // Full-grid counts.
    for layers in 1..=16 {
        assert_eq!(full_grid(layers).len(), layers * (layers - 1) / 2);
    }

    let mut rng = ChaCha20Rng::seed_from_u64(0xC8);
    for _ in 0..100 {
        let layers = rng.random_range(2..=8);
        let entries: Vec<SweepEntry> = full_grid(layers)
            .into_iter()
            .map(|(i, j)| SweepEntry {
                i,
                j,
                accuracy: (rng.random_range(0.0..100.0f64) * 4.0).round() / 4.0,
                transferability: (rng.random_range(0.0..100.0f64) * 4.0).round() / 4.0,
            })
            .collect();
        let result = SweepResult {
            lang: "xx".into(),
            entries,
            baseline_accuracy: (rng.random_range(0.0..100.0f64) * 4.0).round() / 4.0,
            baseline_transferability: (rng.random_range(0.0..100.0f64) * 4.0).round() / 4.0,
        };

        for criterion in [Criterion::Accuracy, Criterion::Transferability] {
            // Brute-force argmax with the documented tie-breaks.
            let mut expect_tag = ConfigTag::Baseline;
            let mut expect_value = result.baseline_value(criterion);
            for entry in &result.entries {
                if entry.value(criterion) > expect_value {
                    expect_value = entry.value(criterion);
                    expect_tag = ConfigTag::Pair { lirp: entry.i, lsrp: entry.j };
                }
            }
            let (tag, value) = select_best(&result, criterion);
            assert_eq!(tag, expect_tag);
            assert_eq!(value, expect_value);
            assert!(result.entries.iter().all(|e| e.value(criterion) <= value));

            // Gap curve: one value per realized gap, the max of its pairs.
            let curve = gap_curve(&result, criterion);
            for (&gap, &value) in &curve {
                let pairs: Vec<&SweepEntry> =
                    result.entries.iter().filter(|e| e.j - e.i == gap).collect();
                assert!(!pairs.is_empty());
                let max =
                    pairs.iter().map(|e| e.value(criterion)).fold(f64::NEG_INFINITY, f64::max);
                assert_eq!(value, max, "gap {gap}");
            }
            let gaps: BTreeSet<usize> = result.entries.iter().map(|e| e.j - e.i).collect();
            assert_eq!(curve.len(), gaps.len());
        }
    }

    finish("8 (sweep bookkeeping, 100 random sweeps)", started, 60.0);
}
