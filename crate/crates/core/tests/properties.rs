mod common;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use taxopolicy::data::{parse_examples, write_examples, Example, Split};
use taxopolicy::encoder::ObjectFeatures;
use taxopolicy::env::{returns, EpisodeState};
use taxopolicy::hierarchy::{LabelId, LabelSet};
use taxopolicy::metrics::{ebf, macro_f1, mean_ebf, micro_f1, supported_labels, PredictionRecord};
use taxopolicy::policy::Action;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn random_walks_stay_consistent(seed in any::<u64>(), dag in any::<bool>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let h = common::random_hierarchy(&mut rng, dag);
        let gold = common::random_gold(&mut rng, &h);
        let max_steps = rng.random_range(1..=h.len() + 2);
        let mut state = EpisodeState::reset(&h, max_steps);
        let mut total = 0.0;
        while !state.is_done() {
            let placed = state.placed_set();
            let mut expected: Vec<LabelId> = h.children(h.root()).unwrap().to_vec();
            for l in placed.iter() {
                expected.extend_from_slice(h.children(l).unwrap());
            }
            expected.retain(|&c| !placed.contains(c));
            expected.sort();
            expected.dedup();
            prop_assert_eq!(state.candidate_labels(), &expected[..]);
            let actions = state.actions();
            prop_assert_eq!(actions.last(), Some(&Action::Stop));
            let a = actions[rng.random_range(0..actions.len())];
            total += state.step(&h, a, &gold).unwrap();
            prop_assert!(h.is_consistent(&state.placed_set()));
        }
        prop_assert_eq!(state.absorb().unwrap(), 0.0);
        prop_assert!((total - ebf(&state.placed_set(), &gold)).abs() < 1e-12);
        prop_assert!(state.step_count() <= max_steps);
    }

    #[test]
    fn illegal_actions_are_rejected(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let h = common::random_hierarchy(&mut rng, true);
        let mut state = EpisodeState::reset(&h, 100);
        let illegal: Vec<LabelId> = h.labels().filter(|l| !state.candidate_labels().contains(l)).collect();
        if let Some(&l) = illegal.first() {
            prop_assert!(state.step(&h, Action::Label(l), &LabelSet::new()).is_err());
            prop_assert!(state.placed().is_empty());
        }
    }

    #[test]
    fn returns_match_direct_sums(rewards in prop::collection::vec(-1.0f64..1.0, 0..12), gamma in 0.0f64..=1.0) {
        let v = returns(&rewards, gamma);
        prop_assert_eq!(v.len(), rewards.len());
        for j in 0..rewards.len() {
            let direct: f64 = rewards[j..].iter().enumerate().map(|(k, r)| gamma.powi(k as i32) * r).sum();
            prop_assert!((v[j] - direct).abs() < 1e-12);
        }
    }

    #[test]
    fn metrics_lie_in_unit_interval(seed in any::<u64>(), n in 1usize..20) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let h = common::random_hierarchy(&mut rng, false);
        let records: Vec<PredictionRecord> = (0..n)
            .map(|i| PredictionRecord {
                id: i.to_string(),
                predicted: common::random_subset(&mut rng, &h, 0.3),
                gold: common::random_gold(&mut rng, &h),
            })
            .collect();
        let unit = |x: f64| (0.0..=1.0).contains(&x);
        prop_assert!(unit(micro_f1(&records).unwrap()));
        prop_assert!(unit(mean_ebf(&records).unwrap()));
        let eligible = supported_labels(&records);
        if !eligible.is_empty() {
            prop_assert!(unit(macro_f1(&records, &eligible).unwrap()));
        }
        let perfect: Vec<PredictionRecord> =
            records.iter().map(|r| PredictionRecord { predicted: r.gold.clone(), ..r.clone() }).collect();
        prop_assert_eq!(mean_ebf(&perfect).unwrap(), 1.0);
    }

    #[test]
    fn example_files_round_trip(seed in any::<u64>(), n in 0usize..10, dim in 1usize..8) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let h = common::random_hierarchy(&mut rng, true);
        let examples: Vec<Example> = (0..n)
            .map(|i| Example {
                features: ObjectFeatures::dense(format!("x{i}"), (0..dim).map(|_| rng.random_range(-3.0..3.0)).collect()),
                gold: common::random_gold(&mut rng, &h),
                split: Split::Train,
            })
            .collect();
        let text = write_examples(&examples, &h, dim).unwrap();
        let parsed = parse_examples(&text, &h, Split::Train).unwrap();
        prop_assert_eq!(parsed.dim, dim);
        prop_assert_eq!(parsed.examples.len(), n);
        for (a, b) in examples.iter().zip(&parsed.examples) {
            prop_assert_eq!(&a.features.id, &b.features.id);
            prop_assert_eq!(&a.gold, &b.gold);
            prop_assert_eq!(a.features.input.to_dense(), b.features.input.to_dense());
        }
    }
}
