use std::collections::BTreeSet;

use proptest::prelude::*;
use reptile_core::data::{
    generate_dataset, generate_with_prototypes, holdout_speakers, kfold_by_speaker, read_dataset,
    size_sweep, split_by_speaker, warp_prototype, write_dataset, Dataset, GeneratorConfig,
    SplitSpec,
};
use reptile_core::{SpeakerId, Tensor, Utterance};

/// Dataset with the given utterance count per speaker.
fn skewed(sizes: &[usize]) -> Dataset {
    let mut utterances = Vec::new();
    for (s, &n) in sizes.iter().enumerate() {
        for i in 0..n {
            let features = Tensor::matrix(1, 2, vec![s as f64, i as f64]).unwrap();
            utterances.push(Utterance::new(features, i % 2, SpeakerId(s as u32)).unwrap());
        }
    }
    Dataset::new(utterances, 2, 2).unwrap()
}

/// Asserts that `parts` split `whole` into speaker-disjoint pieces that
/// together hold every utterance exactly once.
fn assert_partition(whole: &Dataset, parts: &[&Dataset]) {
    let mut seen = BTreeSet::new();
    let mut total = 0;
    for part in parts {
        for s in part.speakers() {
            assert!(seen.insert(*s), "speaker {s:?} appears in two parts");
        }
        let counts = whole.speaker_counts();
        for (s, n) in part.speaker_counts() {
            assert_eq!(counts[&s], n, "speaker {s:?} was split");
        }
        assert!(part
            .utterances()
            .iter()
            .all(|u| part.speakers().contains(&u.speaker())));
        total += part.len();
    }
    assert_eq!(total, whole.len());
    assert_eq!(seen.into_iter().collect::<Vec<_>>(), whole.speakers());
}

proptest! {
    #[test]
    fn splits_partition_by_speaker(
        sizes in prop::collection::vec(1usize..8, 3..20),
        seed in 0u64..1000,
    ) {
        let ds = skewed(&sizes);
        let spec = SplitSpec { seed, ..SplitSpec::default() };
        let (train, val, test) = split_by_speaker(&ds, &spec).unwrap();
        assert_partition(&ds, &[&train, &val, &test]);
        prop_assert!(!train.is_empty() && !val.is_empty() && !test.is_empty());

        let (rest, held) = holdout_speakers(&ds, 0.2, seed).unwrap();
        assert_partition(&ds, &[&rest, &held]);
    }

    #[test]
    fn folds_partition_and_balance(
        sizes in prop::collection::vec(1usize..12, 2..20),
        folds in 2usize..6,
    ) {
        prop_assume!(folds <= sizes.len());
        let ds = skewed(&sizes);
        let out = kfold_by_speaker(&ds, folds).unwrap();
        prop_assert_eq!(out.len(), folds);
        let held: Vec<&Dataset> = out.iter().map(|(_, h)| h).collect();
        assert_partition(&ds, &held);
        for (train, h) in &out {
            assert_partition(&ds, &[train, h]);
        }
        let lens: Vec<usize> = held.iter().map(|h| h.len()).collect();
        let spread = lens.iter().max().unwrap() - lens.iter().min().unwrap();
        prop_assert!(spread <= *sizes.iter().max().unwrap());
    }

    #[test]
    fn sweeps_are_nested(sizes in prop::collection::vec(1usize..5, 10..30), seed in 0u64..100) {
        let ds = skewed(&sizes);
        let fractions = [1.0, 0.5, 0.25, 0.1];
        let subsets = size_sweep(&ds, &fractions, seed).unwrap();
        prop_assert_eq!(&subsets[0], &ds);
        for w in subsets.windows(2) {
            let small: BTreeSet<_> = w[1].speakers().iter().collect();
            let large: BTreeSet<_> = w[0].speakers().iter().collect();
            prop_assert!(small.is_subset(&large));
        }
        for (f, sub) in fractions.iter().zip(&subsets) {
            let expected = (f * sizes.len() as f64).ceil() as usize;
            prop_assert_eq!(sub.speakers().len(), expected);
        }
    }
}

#[test]
fn fifteen_fold_runs_from_five_folds_three_repeats() {
    let ds = generate_dataset(&GeneratorConfig::default()).unwrap();
    let runs: Vec<(usize, usize)> = (0..3)
        .flat_map(|repeat| {
            kfold_by_speaker(&ds, 5)
                .unwrap()
                .into_iter()
                .enumerate()
                .map(move |(fold, _)| (repeat, fold))
        })
        .collect();
    assert_eq!(runs.len(), 15);
}

#[test]
fn leave_one_speaker_out() {
    let ds = skewed(&[3, 1, 4, 1, 5]);
    for (_, held) in kfold_by_speaker(&ds, 5).unwrap() {
        assert_eq!(held.speakers().len(), 1);
    }
}

#[test]
fn generated_dataset_roundtrips_through_text() {
    let ds = generate_dataset(&GeneratorConfig::default()).unwrap();
    let mut buf = Vec::new();
    write_dataset(&mut buf, &ds).unwrap();
    assert_eq!(read_dataset(buf.as_slice()).unwrap(), ds);
}

fn sq_dist(a: &Tensor, b: &Tensor) -> f64 {
    a.data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y).powi(2))
        .sum()
}

/// Accuracy of labelling each utterance with its nearest warped prototype.
fn nearest_prototype_accuracy(config: &GeneratorConfig) -> f64 {
    let (ds, prototypes) = generate_with_prototypes(config).unwrap();
    let hits = ds
        .utterances()
        .iter()
        .filter(|u| {
            let dists: Vec<f64> = prototypes
                .iter()
                .map(|p| sq_dist(u.features(), &warp_prototype(p, u.len()).unwrap()))
                .collect();
            let best = (0..dists.len())
                .min_by(|&i, &j| dists[i].total_cmp(&dists[j]))
                .unwrap();
            best == u.label()
        })
        .count();
    hits as f64 / ds.len() as f64
}

#[test]
fn separation_never_hurts_the_prototype_oracle() {
    for seed in 0..5 {
        for noise in [0.5, 1.5] {
            let accs: Vec<f64> = [0.25, 0.5, 1.0, 2.0, 3.0, 5.0, 8.0]
                .iter()
                .map(|&sep| {
                    nearest_prototype_accuracy(&GeneratorConfig {
                        intent_separation: sep,
                        noise_scale: noise,
                        seed,
                        ..GeneratorConfig::default()
                    })
                })
                .collect();
            assert!(
                accs.windows(2).all(|w| w[1] >= w[0]),
                "seed {seed}: {accs:?}"
            );
            assert!(accs[accs.len() - 1] > accs[0], "seed {seed}: {accs:?}");
        }
    }
}
