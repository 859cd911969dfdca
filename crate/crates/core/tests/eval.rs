use phaseforge::dataio::PhaseLabelSet;
use phaseforge::eval::{f1_per_class, format_accuracy_percent, macro_f1, subset_accuracy};
use proptest::prelude::*;

const K: usize = 9;

fn masks(n: usize) -> impl Strategy<Value = Vec<PhaseLabelSet>> {
    prop::collection::vec((0u32..(1 << K)).prop_map(PhaseLabelSet), n)
}

/// F1 from bit loops over each class, with absent classes scored 1.
fn naive_macro_f1(pred: &[PhaseLabelSet], truth: &[PhaseLabelSet]) -> f64 {
    let mut total = 0.0;
    for c in 0..K {
        let (mut tp, mut fp, mut fn_) = (0u32, 0u32, 0u32);
        for (p, t) in pred.iter().zip(truth) {
            let (a, b) = ((p.0 >> c) & 1, (t.0 >> c) & 1);
            tp += a & b;
            fp += a & (1 - b);
            fn_ += (1 - a) & b;
        }
        total += if tp + fp + fn_ == 0 { 1.0 } else { 2.0 * tp as f64 / (2 * tp + fp + fn_) as f64 };
    }
    total / K as f64
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn metrics_match_bit_loops((pred, truth) in (1usize..80).prop_flat_map(|n| (masks(n), masks(n)))) {
        let stats = f1_per_class(&pred, &truth, K).unwrap();
        prop_assert!((macro_f1(&stats) - naive_macro_f1(&pred, &truth)).abs() < 1e-12);
        let (acc, m) = subset_accuracy(&pred, &truth).unwrap();
        let naive = pred.iter().zip(&truth).filter(|(p, t)| p.0 != t.0).count();
        prop_assert_eq!(m, naive);
        prop_assert!((acc - (1.0 - naive as f64 / pred.len() as f64)).abs() < 1e-12);
        let (same, zero) = subset_accuracy(&truth, &truth).unwrap();
        prop_assert_eq!((same, zero), (1.0, 0));
        prop_assert_eq!(macro_f1(&f1_per_class(&truth, &truth, K).unwrap()), 1.0);
    }
}

#[test]
fn accuracy_prints_four_decimals() {
    assert_eq!(format_accuracy_percent(0, 147), "100.0000");
    assert_eq!(format_accuracy_percent(1, 3), "66.6667");
    assert_eq!(format_accuracy_percent(0, 0), "100.0000");
}

#[test]
fn mismatched_lengths_are_rejected() {
    let a = vec![PhaseLabelSet(1); 3];
    assert!(subset_accuracy(&a, &a[..2]).is_err());
    assert!(f1_per_class(&a, &a[..2], K).is_err());
}
