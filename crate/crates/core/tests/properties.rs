//! Sampler, metric and interpretation invariants over randomized inputs.

use muvitanet::data::{generate_synthetic_bundle, synthetic_vocabulary, SyntheticSpec};
use muvitanet::interpret::{explain_patient, rank_features};
use muvitanet::trainer::{auroc, compute_sampling_rates, TaskSampler};
use muvitanet::{EncoderConfig, LabeledDataset, ModelConfig, MuViTaNet, Variant};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn all_pairs_auroc(scores: &[f64], labels: &[u8]) -> f64 {
    let mut wins = 0.0;
    let mut pairs = 0.0;
    for (i, &yi) in labels.iter().enumerate() {
        for (j, &yj) in labels.iter().enumerate() {
            if yi == 1 && yj == 0 {
                pairs += 1.0;
                if scores[i] > scores[j] {
                    wins += 1.0;
                } else if scores[i] == scores[j] {
                    wins += 0.5;
                }
            }
        }
    }
    wins / pairs
}

fn labeled_scores() -> impl Strategy<Value = (Vec<f64>, Vec<u8>)> {
    (2usize..50)
        .prop_flat_map(|n| {
            (
                // Few distinct values so that ties are common.
                prop::collection::vec((0u8..8).prop_map(|v| f64::from(v) / 4.0), n),
                prop::collection::vec(0u8..2, n),
                0usize..n,
                0usize..n,
            )
        })
        .prop_filter_map("needs both classes", |(s, mut y, a, b)| {
            if a == b {
                return None;
            }
            y[a] = 1;
            y[b] = 0;
            Some((s, y))
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn auroc_matches_all_pairs((scores, labels) in labeled_scores()) {
        let fast = auroc(&scores, &labels).unwrap();
        let slow = all_pairs_auroc(&scores, &labels);
        prop_assert!((fast - slow).abs() < 1e-12, "{} vs {}", fast, slow);
    }

    #[test]
    fn auroc_ignores_order((scores, labels) in labeled_scores(), seed in any::<u64>()) {
        let mut idx: Vec<usize> = (0..scores.len()).collect();
        idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let s2: Vec<f64> = idx.iter().map(|&i| scores[i]).collect();
        let y2: Vec<u8> = idx.iter().map(|&i| labels[i]).collect();
        prop_assert_eq!(auroc(&scores, &labels).unwrap(), auroc(&s2, &y2).unwrap());
    }

    #[test]
    fn sampling_rates_form_a_distribution(
        sizes in prop::collection::vec(1usize..5000, 1..6),
        batch in 1usize..300,
    ) {
        let batches = vec![batch; sizes.len()];
        let rates = compute_sampling_rates(&sizes, &batches).unwrap();
        prop_assert!((rates.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        prop_assert!(rates.iter().all(|&r| r > 0.0));
    }

    #[test]
    fn sampler_visits_every_example_once(
        sizes in prop::collection::vec(0usize..200, 1..5),
        batches in prop::collection::vec(1usize..40, 5),
        seed in any::<u64>(),
    ) {
        prop_assume!(sizes.iter().any(|&n| n > 0));
        let batches = &batches[..sizes.len()];
        let mut sampler = TaskSampler::new(&sizes, batches).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut seen = vec![0usize; sizes.len()];
        let mut steps = vec![0usize; sizes.len()];
        while let Some(k) = sampler.next(&mut rng) {
            let p = sampler.current_probabilities();
            prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            let take = batches[k].min(sampler.remaining()[k]);
            prop_assert!(take > 0);
            seen[k] += take;
            steps[k] += 1;
            sampler.consume(k, take);
        }
        prop_assert!(sampler.is_exhausted());
        prop_assert_eq!(&seen, &sizes);
        for k in 0..sizes.len() {
            prop_assert_eq!(steps[k], sizes[k].div_ceil(batches[k]));
        }
    }
}

fn small_model(variant: Variant, seed: u64) -> (MuViTaNet, LabeledDataset) {
    let mut spec = SyntheticSpec::new(16, 30, vec![vec![0], vec![1]], seed);
    spec.visit_count_range = [2, 4];
    let bundle = generate_synthetic_bundle(&spec).unwrap();
    let model = MuViTaNet::new(
        variant,
        ModelConfig::new(EncoderConfig::new(4, 16)),
        bundle.task_names(),
        seed,
    )
    .unwrap();
    (model, bundle.tasks[0].clone())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn feature_ranking_ignores_record_order(seed in any::<u64>()) {
        let (model, data) = small_model(Variant::Full, seed);
        let vocab = synthetic_vocabulary(16).unwrap();
        let mut idx: Vec<usize> = (0..data.len()).collect();
        idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let shuffled = data.subset(&idx);
        let a = rank_features(&model, &data, &data.task, false, None, &vocab).unwrap();
        let b = rank_features(&model, &shuffled, &data.task, false, None, &vocab).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn explanation_leaves_model_untouched(seed in any::<u64>()) {
        let (model, data) = small_model(Variant::Full, seed);
        let vocab = synthetic_vocabulary(16).unwrap();
        let before = model.clone();
        let report = explain_patient(&model, &data.records[0], &data.task, 5, &vocab).unwrap();
        prop_assert_eq!(&model, &before);
        let again = explain_patient(&model, &data.records[0], &data.task, 5, &vocab).unwrap();
        prop_assert_eq!(report, again);
    }
}
