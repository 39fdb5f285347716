//! Randomized property checks for the library-wide invariants.

use emoclass_core::autodiff::{Tape, Tensor};
use emoclass_core::eval::{
    binarize, default_threshold_grid, hamming_loss, micro_macro, per_label_prf, subset_accuracy,
    tune_thresholds, PredictionMatrix, Thresholds,
};
use emoclass_core::features::SparseVector;
use emoclass_core::imbalance::{focal_loss, weighted_bce};
use emoclass_core::textprep::{normalize, tokenize};
use proptest::prelude::*;

fn bool_matrix(n: usize, k: usize) -> impl Strategy<Value = Vec<Vec<bool>>> {
    proptest::collection::vec(proptest::collection::vec(any::<bool>(), k), n)
}

fn prob_matrix(n: usize, k: usize) -> impl Strategy<Value = Vec<Vec<f64>>> {
    proptest::collection::vec(proptest::collection::vec(0.001f64..0.999, k), n)
}

proptest! {
    #[test]
    fn tokens_never_empty(s in ".{0,80}") {
        let toks = tokenize(&normalize(&s));
        prop_assert!(toks.tokens.iter().all(|t| !t.is_empty()));
    }

    #[test]
    fn normalize_idempotent(s in ".{0,80}") {
        let once = normalize(&s);
        prop_assert_eq!(normalize(&once), once);
    }

    #[test]
    fn metrics_bounded(pred in bool_matrix(6, 4), gold in bool_matrix(6, 4)) {
        let sa = subset_accuracy(&pred, &gold).unwrap();
        let hl = hamming_loss(&pred, &gold).unwrap();
        let (micro, macro_f1) = micro_macro(&pred, &gold).unwrap();
        for v in [sa, hl, micro, macro_f1] {
            prop_assert!((0.0..=1.0).contains(&v));
        }
        for m in per_label_prf(&pred, &gold).unwrap() {
            prop_assert!((0.0..=1.0).contains(&m.precision));
            prop_assert!((0.0..=1.0).contains(&m.recall));
            prop_assert!((0.0..=1.0).contains(&m.f1));
        }
    }

    #[test]
    fn hamming_complement(pred in bool_matrix(5, 3), gold in bool_matrix(5, 3)) {
        let comp: Vec<Vec<bool>> = pred
            .iter()
            .map(|r| r.iter().map(|v| !v).collect())
            .collect();
        let a = hamming_loss(&pred, &gold).unwrap();
        let b = hamming_loss(&comp, &gold).unwrap();
        prop_assert!((a + b - 1.0).abs() < 1e-12);
    }

    #[test]
    fn losses_nonnegative_and_focal_monotone_in_gamma(
        probs in prob_matrix(4, 3),
        gold in bool_matrix(4, 3),
    ) {
        let p = Tensor::from_vec(4, 3, probs.concat()).unwrap();
        let t = Tensor::from_vec(
            4,
            3,
            gold.concat().iter().map(|&b| if b { 1.0 } else { 0.0 }).collect(),
        )
        .unwrap();
        let bce = weighted_bce(&p, &t, None).unwrap();
        prop_assert!(bce >= 0.0);
        let mut prev = f64::INFINITY;
        for gamma in [0.0, 0.5, 1.0, 2.0, 5.0] {
            let f = focal_loss(&p, &t, None, gamma).unwrap();
            prop_assert!(f >= 0.0);
            prop_assert!(f <= prev + 1e-12, "focal not monotone in gamma");
            prev = f;
        }
    }

    #[test]
    fn tuned_thresholds_drawn_from_grid(
        probs in prob_matrix(12, 3),
        gold in bool_matrix(12, 3),
    ) {
        let p = Tensor::from_vec(12, 3, probs.concat()).unwrap();
        let pm = PredictionMatrix::new((0..12).map(|i| format!("p{i}")).collect(), p).unwrap();
        let grid = default_threshold_grid();
        let tuned = tune_thresholds(&pm, &gold, &grid).unwrap();
        for k in 0..3 {
            let tau = tuned.get(k);
            prop_assert!(grid.iter().any(|g| (g - tau).abs() < 1e-12));
        }
    }

    #[test]
    fn raising_thresholds_never_adds_positives(
        probs in prob_matrix(8, 3),
        lo in 0.1f64..0.5,
        delta in 0.0f64..0.4,
    ) {
        let p = Tensor::from_vec(8, 3, probs.concat()).unwrap();
        let pm = PredictionMatrix::new((0..8).map(|i| format!("p{i}")).collect(), p).unwrap();
        let low = binarize(&pm, &Thresholds::uniform(3, lo));
        let high = binarize(&pm, &Thresholds::uniform(3, lo + delta));
        for (lr, hr) in low.iter().zip(&high) {
            for (l, h) in lr.iter().zip(hr) {
                prop_assert!(!(*h && !*l), "raised threshold added a positive");
            }
        }
    }

    #[test]
    fn sparse_dot_matches_naive(
        entries in proptest::collection::btree_map(0usize..20, -5.0f64..5.0, 0..10),
        dense in proptest::collection::vec(-5.0f64..5.0, 20),
    ) {
        let sv = SparseVector::new(20, entries.iter().map(|(&i, &v)| (i, v)).collect()).unwrap();
        let expected: f64 = entries.iter().map(|(&i, &v)| v * dense[i]).sum();
        prop_assert!((sv.dot_dense(&dense) - expected).abs() < 1e-9);
    }

    #[test]
    fn matmul_matches_naive(
        a in proptest::collection::vec(-3.0f64..3.0, 6),
        b in proptest::collection::vec(-3.0f64..3.0, 12),
    ) {
        let ta = Tensor::from_vec(2, 3, a.clone()).unwrap();
        let tb = Tensor::from_vec(3, 4, b.clone()).unwrap();
        let c = ta.matmul(&tb).unwrap();
        for i in 0..2 {
            for j in 0..4 {
                let want: f64 = (0..3).map(|l| a[i * 3 + l] * b[l * 4 + j]).sum();
                prop_assert!((c.get(i, j) - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn softmax_rows_sum_to_one(vals in proptest::collection::vec(-30.0f64..30.0, 8)) {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::from_vec(2, 4, vals).unwrap());
        let s = tape.softmax(x);
        let out = tape.value(s);
        for r in 0..2 {
            let sum: f64 = (0..4).map(|c| out.get(r, c)).sum();
            prop_assert!((sum - 1.0).abs() < 1e-12);
        }
    }
}
