use ecg_delineation::dataset::SampleClass;
use ecg_delineation::eval::{
    averaged_metrics, binary_roc, class_metrics, f_score, match_events, ConfusionMatrix, FScoreMode,
};
use proptest::prelude::*;

fn confusion() -> impl Strategy<Value = ConfusionMatrix> {
    prop::array::uniform4(prop::array::uniform4(0u64..500)).prop_map(|counts| ConfusionMatrix { counts })
}

/// Largest matching by exhaustive search over injective assignments.
fn brute_force_cardinality(r: &[usize], p: &[usize], tol: usize) -> usize {
    fn go(r: &[usize], p: &[usize], used: &mut Vec<bool>, tol: usize) -> usize {
        let Some((&first, rest)) = r.split_first() else {
            return 0;
        };
        let mut best = go(rest, p, used, tol);
        for j in 0..p.len() {
            if !used[j] && first.abs_diff(p[j]) <= tol {
                used[j] = true;
                best = best.max(1 + go(rest, p, used, tol));
                used[j] = false;
            }
        }
        best
    }
    go(r, p, &mut vec![false; p.len()], tol)
}

fn sorted_events(max: usize) -> impl Strategy<Value = Vec<usize>> {
    prop::collection::btree_set(0usize..400, 0..max).prop_map(|s| s.into_iter().collect())
}

proptest! {
    #[test]
    fn micro_averages_equal_accuracy(cm in confusion()) {
        let avg = averaged_metrics(&cm);
        let acc = class_metrics(&cm, 1.0, FScoreMode::Standard).accuracy;
        prop_assert_eq!(avg.micro_precision, acc);
        prop_assert_eq!(avg.micro_sensitivity, acc);
    }

    #[test]
    fn confusion_counts_partition_samples(
        pairs in prop::collection::vec((0usize..4, 0usize..4), 0..300),
    ) {
        let truth: Vec<SampleClass> = pairs.iter().map(|p| SampleClass::from_code(p.0).unwrap()).collect();
        let pred: Vec<SampleClass> = pairs.iter().map(|p| SampleClass::from_code(p.1).unwrap()).collect();
        let cm = ConfusionMatrix::from_labels(&truth, &pred).unwrap();
        prop_assert_eq!(cm.total(), pairs.len() as u64);
        for s in class_metrics(&cm, 1.0, FScoreMode::Standard).classes {
            prop_assert_eq!(s.tp + s.fp + s.fn_ + s.tn, pairs.len() as u64);
        }
    }

    #[test]
    fn f1_is_harmonic_mean(p in 0.001f64..1.0, s in 0.001f64..1.0) {
        let h = 2.0 * p * s / (p + s);
        for mode in [FScoreMode::AsWritten, FScoreMode::Standard] {
            prop_assert!((f_score(p, s, 1.0, mode).unwrap() - h).abs() < 1e-12);
        }
    }

    #[test]
    fn auc_is_pairwise_ranking_statistic(
        data in prop::collection::vec((0u8..6, any::<bool>()), 2..40),
    ) {
        let mut pairs: Vec<(f64, bool)> = data.iter().map(|&(s, l)| (s as f64 / 5.0, l)).collect();
        let pos: Vec<f64> = pairs.iter().filter(|p| p.1).map(|p| p.0).collect();
        let neg: Vec<f64> = pairs.iter().filter(|p| !p.1).map(|p| p.0).collect();
        let roc = binary_roc(&mut pairs);
        if pos.is_empty() || neg.is_empty() {
            prop_assert!(roc.is_none());
        } else {
            let mut wins = 0.0;
            for &a in &pos {
                for &b in &neg {
                    wins += if a > b { 1.0 } else if a == b { 0.5 } else { 0.0 };
                }
            }
            let u = wins / (pos.len() * neg.len()) as f64;
            prop_assert!((roc.unwrap().auc - u).abs() < 1e-9);
        }
    }

    #[test]
    fn matching_is_maximal_and_symmetric(r in sorted_events(9), p in sorted_events(9), tol in 0usize..40) {
        let m = match_events(&r, &p, tol);
        prop_assert_eq!(m.tp + m.fn_, r.len());
        prop_assert_eq!(m.tp + m.fp, p.len());
        prop_assert_eq!(m.tp, brute_force_cardinality(&r, &p, tol));
        let swapped = match_events(&p, &r, tol);
        prop_assert_eq!(swapped.tp, m.tp);
        prop_assert_eq!((swapped.fp, swapped.fn_), (m.fn_, m.fp));
        for &(i, j) in &m.pairs {
            prop_assert!(r[i].abs_diff(p[j]) <= tol);
        }
    }
}
