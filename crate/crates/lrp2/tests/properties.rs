//! Property tests over the invariants that hold for arbitrary inputs.

use std::collections::BTreeSet;

use proptest::prelude::*;

use lrp2::engine::{lrpw_from_bytes, lrpw_to_bytes, token_logprobs, LrpwFile, LrpwTensor, Trace};
use lrp2::metrics::{accuracy, transferability, EvaluationSets};
use lrp2::probing::rank_candidates;
use lrp2::tensor::Matrix;

fn tensor_strategy() -> impl Strategy<Value = LrpwTensor> {
    ("[a-z]{1,8}", 1usize..4, 1usize..4).prop_flat_map(|(name, rows, cols)| {
        proptest::collection::vec(-1e6f32..1e6, rows * cols).prop_map(move |data| LrpwTensor {
            name: name.clone(),
            shape: vec![rows, cols],
            data,
        })
    })
}

fn sets_strategy() -> impl Strategy<Value = (BTreeSet<String>, BTreeSet<String>, BTreeSet<String>)> {
    (
        proptest::collection::vec(proptest::bool::ANY, 16),
        proptest::collection::vec(proptest::bool::ANY, 16),
        proptest::collection::vec(proptest::bool::ANY, 16),
    )
        .prop_map(|(probed, correct, pivot)| {
            let name = |i: usize| format!("u{i}");
            let probed_set: BTreeSet<String> = (0..16).filter(|&i| probed[i]).map(name).collect();
            let correct_set: BTreeSet<String> =
                (0..16).filter(|&i| probed[i] && correct[i]).map(name).collect();
            let pivot_set: BTreeSet<String> = (0..16).filter(|&i| pivot[i]).map(name).collect();
            (probed_set, correct_set, pivot_set)
        })
}

proptest! {
    /// Weight-file serialization is a bit-exact round trip.
    #[test]
    fn lrpw_round_trip(tensors in proptest::collection::vec(tensor_strategy(), 1..4)) {
        let file = LrpwFile { config: None, vocab: None, tensors };
        let bytes = lrpw_to_bytes(&file).unwrap();
        let back = lrpw_from_bytes(&bytes).unwrap();
        prop_assert_eq!(lrpw_to_bytes(&back).unwrap(), bytes);
    }

    /// Both metrics stay in [0, 100]; transferability is symmetric and
    /// never decreases when a shared uuid is added.
    #[test]
    fn metric_invariants((probed, correct, pivot) in sets_strategy()) {
        let sets = EvaluationSets::new("xx", probed.clone(), correct.clone(), pivot.clone()).unwrap();
        if !probed.is_empty() {
            let acc = accuracy(&sets).unwrap();
            prop_assert!((0.0..=100.0).contains(&acc));
        }
        let trans = transferability(&sets);
        prop_assert!((0.0..=100.0).contains(&trans));

        // Symmetry.
        let mut universe = probed.clone();
        universe.extend(pivot.iter().cloned());
        universe.extend(correct.iter().cloned());
        let swapped = EvaluationSets::new("en", universe.clone(), pivot.clone(), correct.clone()).unwrap();
        prop_assert_eq!(trans, transferability(&swapped));

        // Adding a uuid to both correct sets never lowers transferability.
        let mut correct2 = correct.clone();
        let mut pivot2 = pivot.clone();
        let mut probed2 = probed.clone();
        probed2.insert("extra".into());
        correct2.insert("extra".into());
        pivot2.insert("extra".into());
        let grown = EvaluationSets::new("xx", probed2, correct2, pivot2).unwrap();
        prop_assert!(transferability(&grown) >= trans - 1e-12);
    }

    /// Ranks are a permutation of 1..=n, the gold flag matches rank 1,
    /// and ties resolve to the smaller candidate index.
    #[test]
    fn ranking_invariants(raw in proptest::collection::vec(-50i32..0, 1..10), gold in 0usize..10) {
        let scores: Vec<f64> = raw.iter().map(|&v| f64::from(v) / 4.0).collect();
        let gold = gold % scores.len();
        let names: Vec<String> = (0..scores.len()).map(|i| format!("c{i}")).collect();
        let refs: Vec<&str> = names.iter().map(String::as_str).collect();

        let mut ranks = BTreeSet::new();
        for idx in 0..scores.len() {
            let result = rank_candidates("u", &refs, &scores, &names[idx]).unwrap();
            prop_assert!(result.gold_rank >= 1 && result.gold_rank <= scores.len());
            prop_assert_eq!(result.correct, result.gold_rank == 1);
            ranks.insert(result.gold_rank);
        }
        // Every candidate gets a distinct rank: a permutation.
        prop_assert_eq!(ranks.len(), scores.len());

        let gold_result = rank_candidates("u", &refs, &scores, &names[gold]).unwrap();
        for earlier in 0..gold {
            if scores[earlier] == scores[gold] {
                let other = rank_candidates("u", &refs, &scores, &names[earlier]).unwrap();
                prop_assert!(other.gold_rank < gold_result.gold_rank);
            }
        }
    }

    /// Log-probabilities are non-positive, normalize to 1, and are
    /// invariant under constant logit shifts.
    #[test]
    fn logprob_invariants(raw in proptest::collection::vec(-8.0f32..8.0, 2..12), shift in -5.0f32..5.0) {
        let trace = Trace { hidden: vec![], logits: Matrix::from_vec(1, raw.len(), raw.clone()) };
        let lp = token_logprobs(&trace, 0).unwrap();
        prop_assert!(lp.iter().all(|&v| v <= 1e-12));
        let total: f64 = lp.iter().map(|v| v.exp()).sum();
        prop_assert!((total - 1.0).abs() < 1e-6);

        let shifted: Vec<f32> = raw.iter().map(|v| v + shift).collect();
        let strace = Trace { hidden: vec![], logits: Matrix::from_vec(1, shifted.len(), shifted) };
        let slp = token_logprobs(&strace, 0).unwrap();
        for (a, b) in lp.iter().zip(&slp) {
            prop_assert!((a - b).abs() < 1e-5);
        }
    }
}
