use phaseforge::dataio::{make_splits, DataError, Dataset, ElementSet, PhaseLabelSet, PhaseVocabulary, Sample, SplitTag, StatePoint};
use proptest::prelude::*;

const K: usize = 9;

fn tag() -> impl Strategy<Value = SplitTag> {
    prop_oneof![Just(SplitTag::Train), Just(SplitTag::Val), Just(SplitTag::Test), Just(SplitTag::Unassigned)]
}

/// Compositions on a 5 at.% lattice from three cut points, temperatures on a 0.01 K grid.
fn sample() -> impl Strategy<Value = Sample> {
    (
        prop::collection::vec(0u32..=20, 3),
        90_000u32..110_000,
        prop::option::of(prop::collection::vec(0u32..=8, K)),
        0u32..(1 << K),
        tag(),
    )
        .prop_map(|(mut cuts, t, fr, mask, split)| {
            cuts.sort_unstable();
            let bounds = [0, cuts[0], cuts[1], cuts[2], 20];
            let x = bounds.windows(2).map(|b| (b[1] - b[0]) as f64 / 20.0).collect();
            let state = StatePoint::new(x, t as f64 / 100.0);
            let mut s = match fr {
                Some(f) if f.iter().any(|&v| v > 0) => {
                    let sum: u32 = f.iter().sum();
                    let f: Vec<f64> = f.iter().map(|&v| v as f64 / sum as f64).collect();
                    Sample::from_fractions(state, &f)
                }
                _ => Sample::with_labels(state, PhaseLabelSet(mask)),
            };
            s.split = split;
            s
        })
}

fn dataset(samples: Vec<Sample>) -> Dataset {
    let elements = ElementSet::ag_bi_cu_sn();
    Dataset {
        vocab: PhaseVocabulary::default_nine(&elements),
        elements,
        t_min: 900.0,
        t_max: 1100.0,
        samples,
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(96))]

    #[test]
    fn canonical_text_round_trips(samples in prop::collection::vec(sample(), 0..40)) {
        let ds = dataset(samples);
        ds.validate().unwrap();
        let text = ds.to_canonical_string();
        let back = Dataset::parse(&text, None).unwrap();
        prop_assert_eq!(&back, &ds);
        prop_assert_eq!(back.to_canonical_string(), text);
    }

    #[test]
    fn splits_partition_and_repeat(samples in prop::collection::vec(sample(), 10..120), seed in 0u64..1000, min_pos in 0usize..4) {
        let ds = dataset(samples);
        let (a, ra) = make_splits(&ds, seed, min_pos).unwrap();
        let (b, rb) = make_splits(&ds, seed, min_pos).unwrap();
        prop_assert_eq!(&a, &b);
        prop_assert_eq!(&ra, &rb);
        let n = ds.samples.len();
        prop_assert_eq!(ra.sizes.iter().sum::<usize>(), n);
        let counts = [SplitTag::Train, SplitTag::Val, SplitTag::Test].map(|t| a.indices(t).len());
        prop_assert_eq!(counts, ra.sizes);
        prop_assert!(a.indices(SplitTag::Unassigned).is_empty());
        let tenth = (n as f64 * 0.1).round() as usize;
        prop_assert_eq!(ra.sizes[1], tenth);
        prop_assert_eq!(ra.sizes[2], tenth);
        for (x, y) in a.samples.iter().zip(&ds.samples) {
            prop_assert_eq!(&x.state, &y.state);
            prop_assert_eq!(x.labels, y.labels);
            prop_assert_eq!(&x.fractions, &y.fractions);
        }
        for p in 0..K {
            let ok = ra.positives_val[p] >= min_pos && ra.positives_test[p] >= min_pos;
            if ra.positives_total[p] > 0 && !ok {
                prop_assert!(ra.under_represented.contains(&p));
            }
        }
    }
}

#[test]
fn parse_errors_name_the_line() {
    let ds = dataset(vec![Sample::with_labels(StatePoint::new(vec![0.5, 0.5, 0.0, 0.0], 950.0), PhaseLabelSet(1))]);
    let mut text = ds.to_canonical_string();
    text.push_str("# comment\n0.5 0.5 0 0 950 zz ?\n");
    match Dataset::parse(&text, None) {
        Err(DataError::Parse { line, .. }) => assert_eq!(line, 4),
        other => panic!("expected a parse error, got {other:?}"),
    }
    let short = text.replace("zz ?", "?");
    assert!(matches!(Dataset::parse(&short, None), Err(DataError::Parse { line: 4, .. })));
    let bad_header = text.replacen("#phaseforge-v1", "#other", 1);
    assert!(matches!(Dataset::parse(&bad_header, None), Err(DataError::Parse { line: 1, .. })));
}

#[test]
fn invariant_violations_are_rejected() {
    let ds = dataset(vec![Sample::with_labels(StatePoint::new(vec![0.5, 0.6, 0.0, 0.0], 950.0), PhaseLabelSet(1))]);
    assert!(matches!(ds.validate(), Err(DataError::Invariant { index: 0, .. })));
    let hot = dataset(vec![Sample::with_labels(StatePoint::new(vec![1.0, 0.0, 0.0, 0.0], 1200.0), PhaseLabelSet(1))]);
    assert!(hot.validate().is_err());
    assert!(matches!(make_splits(&dataset(Vec::new()), 1, 3), Err(DataError::TooFewSamples(0))));
}
