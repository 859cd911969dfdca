use phaseforge::dataio::{ElementSet, PhaseLabelSet, PhaseVocabulary, StatePoint, TRange};
use phaseforge::decode::{decode, feasibility_violations, labels_as_probs, threshold, DecodeConfig};
use proptest::prelude::*;

const K: usize = 9;
const STEPS: u32 = 20;

fn vocab() -> PhaseVocabulary {
    PhaseVocabulary::default_nine(&ElementSet::ag_bi_cu_sn())
}

fn range() -> TRange {
    TRange { min: 900.0, max: 1100.0 }
}

/// Lattice point with weights on the masked elements; an all-zero draw
/// becomes the corner of the lowest masked element.
fn state() -> impl Strategy<Value = StatePoint> {
    (1u32..16, prop::collection::vec(0u32..=STEPS, 4), 850.0f64..1150.0).prop_map(|(mask, w, t)| {
        let mut w: Vec<u32> = w.iter().enumerate().map(|(i, &v)| if mask & (1 << i) != 0 { v } else { 0 }).collect();
        let total: u32 = w.iter().sum();
        if total == 0 {
            w[mask.trailing_zeros() as usize] = 1;
        }
        let total: u32 = w.iter().sum();
        let x = w.iter().map(|&v| v as f64 / total as f64).collect();
        StatePoint::new(x, t)
    })
}

fn corner() -> impl Strategy<Value = StatePoint> {
    (0usize..4, 850.0f64..1150.0).prop_map(|(e, t)| {
        let mut x = vec![0.0; 4];
        x[e] = 1.0;
        StatePoint::new(x, t)
    })
}

fn case() -> impl Strategy<Value = (Vec<StatePoint>, Vec<f64>, Vec<f64>)> {
    prop::collection::vec(prop_oneof![3 => state(), 1 => corner()], 1..60).prop_flat_map(|states| {
        let n = states.len();
        (
            Just(states),
            prop::collection::vec(0.0f64..1.0, n * K),
            prop::collection::vec(0.0f64..1.0, K),
        )
    })
}

fn configs() -> Vec<DecodeConfig> {
    let mut out = Vec::new();
    for smooth in [false, true] {
        for generalize_support in [false, true] {
            out.push(DecodeConfig {
                smooth,
                generalize_support,
                ..DecodeConfig::new(range())
            });
        }
    }
    out
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn decoded_labels_are_feasible((states, p, th) in case()) {
        let v = vocab();
        for cfg in configs() {
            let out = decode(&p, &states, &th, &v, &cfg).unwrap();
            prop_assert_eq!(feasibility_violations(&out.labels, &states), 0);
            for (n, (l, s)) in out.labels.iter().zip(&states).enumerate() {
                prop_assert!(!l.is_empty());
                let present = s.present();
                prop_assert!(l.len() <= present.count_ones() as usize);
                if present.count_ones() == 1 || cfg.generalize_support {
                    prop_assert!(l.iter().all(|c| v.admissible(c, present)), "row {}", n);
                }
                if present.count_ones() == 1 {
                    prop_assert_eq!(l.len(), 1);
                }
                if !out.fallback[n] {
                    let raw = threshold(&out.probs[n * K..(n + 1) * K], &th).unwrap()[0];
                    prop_assert_eq!(l.0 & !raw.0, 0, "row {} gained labels", n);
                } else {
                    prop_assert_eq!(l.len(), 1);
                }
            }
        }
    }

    #[test]
    fn decoding_is_idempotent_without_smoothing((states, p, th) in case()) {
        let v = vocab();
        let cfg = DecodeConfig { smooth: false, ..DecodeConfig::new(range()) };
        let first = decode(&p, &states, &th, &v, &cfg).unwrap();
        let again = decode(&labels_as_probs(&first.labels, K), &states, &[0.5; K], &v, &cfg).unwrap();
        prop_assert_eq!(&again.labels, &first.labels);
        prop_assert!(again.fallback.iter().all(|&f| !f));
    }

    #[test]
    fn zero_probabilities_fall_back_to_an_admissible_phase(states in prop::collection::vec(state(), 1..30)) {
        let v = vocab();
        let p = vec![0.0; states.len() * K];
        let out = decode(&p, &states, &[0.5; K], &v, &DecodeConfig::new(range())).unwrap();
        prop_assert!(out.fallback.iter().all(|&f| f));
        for (l, s) in out.labels.iter().zip(&states) {
            prop_assert_eq!(l.len(), 1);
            prop_assert!(v.admissible(l.iter().next().unwrap(), s.present()));
        }
    }
}

#[test]
fn corner_keeps_the_most_probable_admissible_phase() {
    let v = vocab();
    let cu = v.index_of("EPSILON").unwrap();
    let states = vec![StatePoint::new(vec![0.0, 0.0, 1.0, 0.0], 1000.0)];
    let mut p = vec![0.0; K];
    p[cu] = 0.99;
    p[0] = 0.7;
    p[1] = 0.6;
    let cfg = DecodeConfig { smooth: false, ..DecodeConfig::new(range()) };
    let out = decode(&p, &states, &[0.5; K], &v, &cfg).unwrap();
    assert_eq!(out.labels, vec![PhaseLabelSet::from_indices([0])]);
    assert!(!out.fallback[0]);
}
