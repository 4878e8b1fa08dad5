use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::Dataset;
use crate::error::{Error, Result};
use crate::model::SpeakerId;

/// Speaker-count fractions for a train/validation/test partition.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitSpec {
    pub train: f64,
    pub val: f64,
    pub test: f64,
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec {
            train: 0.6,
            val: 0.2,
            test: 0.2,
            seed: 0,
        }
    }
}

impl SplitSpec {
    pub fn validate(&self) -> Result<()> {
        for (name, f) in [
            ("train", self.train),
            ("val", self.val),
            ("test", self.test),
        ] {
            if !(f > 0.0 && f < 1.0) {
                return Err(Error::Validation(format!(
                    "split.{name} fraction {f} must lie in (0, 1)"
                )));
            }
        }
        let sum = self.train + self.val + self.test;
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::Validation(format!(
                "split fractions sum to {sum}, not 1"
            )));
        }
        Ok(())
    }

    /// Speaker counts per split for `n` speakers: nearest rounding, at least
    /// one speaker each, test takes the remainder.
    pub fn counts(&self, n: usize) -> Result<(usize, usize, usize)> {
        self.validate()?;
        if n < 3 {
            return Err(Error::Validation(format!(
                "a three-way speaker split needs ≥ 3 speakers, got {n}"
            )));
        }
        let mut train = ((self.train * n as f64).round() as usize).max(1);
        let mut val = ((self.val * n as f64).round() as usize).max(1);
        while train + val > n - 1 {
            if train >= val && train > 1 {
                train -= 1;
            } else {
                val -= 1;
            }
        }
        Ok((train, val, n - train - val))
    }
}

fn shuffled_speakers(ds: &Dataset, seed: u64) -> Vec<SpeakerId> {
    let mut speakers = ds.speakers().to_vec();
    speakers.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    speakers
}

fn subset(ds: &Dataset, speakers: &[SpeakerId]) -> Dataset {
    ds.with_speakers(&speakers.iter().copied().collect())
}

/// Partitions speakers into train/validation/test; every utterance follows its speaker.
pub fn split_by_speaker(ds: &Dataset, spec: &SplitSpec) -> Result<(Dataset, Dataset, Dataset)> {
    let (n_train, n_val, _) = spec.counts(ds.speakers().len())?;
    let speakers = shuffled_speakers(ds, spec.seed);
    let (train, rest) = speakers.split_at(n_train);
    let (val, test) = rest.split_at(n_val);
    Ok((subset(ds, train), subset(ds, val), subset(ds, test)))
}

/// Two-way speaker split used to carve a validation set out of a training pool.
pub fn holdout_speakers(ds: &Dataset, val_fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    let n = ds.speakers().len();
    if n < 2 {
        return Err(Error::Validation(format!(
            "holding out speakers needs ≥ 2 speakers, got {n}"
        )));
    }
    if !(val_fraction > 0.0 && val_fraction < 1.0) {
        return Err(Error::Validation(format!(
            "validation fraction {val_fraction} must lie in (0, 1)"
        )));
    }
    let n_val = ((val_fraction * n as f64).round() as usize).clamp(1, n - 1);
    let speakers = shuffled_speakers(ds, seed);
    let (val, train) = speakers.split_at(n_val);
    Ok((subset(ds, train), subset(ds, val)))
}

/// Speaker-grouped k-fold cross-validation.
///
/// Speakers are taken largest first (ties by id) and each goes to the fold
/// with the fewest utterances so far (ties to the lowest fold index). Returns
/// one `(train, held_out)` pair per fold.
pub fn kfold_by_speaker(ds: &Dataset, folds: usize) -> Result<Vec<(Dataset, Dataset)>> {
    let n = ds.speakers().len();
    if folds < 2 {
        return Err(Error::Validation(format!(
            "need at least 2 folds, got {folds}"
        )));
    }
    if folds > n {
        return Err(Error::Validation(format!(
            "{folds} folds but only {n} speakers"
        )));
    }
    let mut by_size: Vec<(SpeakerId, usize)> = ds.speaker_counts().into_iter().collect();
    by_size.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));

    let mut members: Vec<BTreeSet<SpeakerId>> = vec![BTreeSet::new(); folds];
    let mut load = vec![0usize; folds];
    for (speaker, count) in by_size {
        let target = (0..folds).min_by_key(|&f| (load[f], f)).expect("folds ≥ 2");
        members[target].insert(speaker);
        load[target] += count;
    }

    Ok(members
        .iter()
        .map(|held_out| {
            let rest: BTreeSet<SpeakerId> = ds
                .speakers()
                .iter()
                .copied()
                .filter(|s| !held_out.contains(s))
                .collect();
            (ds.with_speakers(&rest), ds.with_speakers(held_out))
        })
        .collect())
}

/// Nested training subsets made by dropping whole speakers.
///
/// Speakers are put in one seeded order; fraction `f` keeps the first
/// `ceil(f · S)` of them, so smaller fractions keep subsets of larger ones.
pub fn size_sweep(train: &Dataset, fractions: &[f64], seed: u64) -> Result<Vec<Dataset>> {
    if fractions.is_empty() {
        return Err(Error::Validation(
            "size sweep needs at least one fraction".into(),
        ));
    }
    for w in fractions.windows(2) {
        if w[1] >= w[0] {
            return Err(Error::Validation(format!(
                "sweep fractions must be strictly descending, got {fractions:?}"
            )));
        }
    }
    let n = train.speakers().len();
    let order = shuffled_speakers(train, seed);
    fractions
        .iter()
        .map(|&f| {
            if !(f > 0.0 && f <= 1.0) {
                return Err(Error::Validation(format!(
                    "sweep fraction {f} must lie in (0, 1]"
                )));
            }
            // Guard against products such as 0.3 · 10 = 3.0000000000000004.
            let keep = (f * n as f64 - 1e-9).ceil().max(0.0) as usize;
            if keep == 0 {
                return Err(Error::Validation(format!(
                    "sweep fraction {f} keeps no speakers out of {n}"
                )));
            }
            Ok(subset(train, &order[..keep]))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_dataset, GeneratorConfig};
    use crate::model::Utterance;
    use crate::tensor::Tensor;

    fn bench(speakers: usize) -> Dataset {
        generate_dataset(&GeneratorConfig {
            num_speakers: speakers,
            utterances_per_speaker_per_intent: 1,
            num_intents: 3,
            ..GeneratorConfig::default()
        })
        .unwrap()
    }

    fn speakers(ds: &Dataset) -> BTreeSet<SpeakerId> {
        ds.speakers().iter().copied().collect()
    }

    #[test]
    fn ten_speakers_split_six_two_two() {
        let ds = bench(10);
        let (tr, va, te) = split_by_speaker(&ds, &SplitSpec::default()).unwrap();
        assert_eq!(
            (
                tr.speakers().len(),
                va.speakers().len(),
                te.speakers().len()
            ),
            (6, 2, 2)
        );
        assert!(speakers(&tr).is_disjoint(&speakers(&va)));
        assert!(speakers(&tr).is_disjoint(&speakers(&te)));
        assert!(speakers(&va).is_disjoint(&speakers(&te)));
        assert_eq!(tr.len() + va.len() + te.len(), ds.len());
    }

    #[test]
    fn every_split_gets_a_speaker() {
        let spec = SplitSpec {
            train: 0.9,
            val: 0.05,
            test: 0.05,
            seed: 3,
        };
        assert_eq!(spec.counts(3).unwrap(), (1, 1, 1));
        assert_eq!(spec.counts(4).unwrap(), (2, 1, 1));
        assert!(matches!(spec.counts(2), Err(Error::Validation(_))));
        let bad = SplitSpec { test: 0.1, ..spec };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn equal_speakers_fold_evenly() {
        let ds = bench(10);
        let folds = kfold_by_speaker(&ds, 5).unwrap();
        assert_eq!(folds.len(), 5);
        let mut seen = BTreeSet::new();
        for (train, held) in &folds {
            assert_eq!(held.speakers().len(), 2);
            assert!(speakers(train).is_disjoint(&speakers(held)));
            assert_eq!(train.len() + held.len(), ds.len());
            for s in held.speakers() {
                assert!(seen.insert(*s), "speaker {s} in two folds");
            }
        }
        assert_eq!(seen.len(), 10);
    }

    #[test]
    fn kfold_errors() {
        let ds = bench(4);
        assert!(kfold_by_speaker(&ds, 5).is_err());
        assert!(kfold_by_speaker(&ds, 1).is_err());
        let loo = kfold_by_speaker(&ds, 4).unwrap();
        assert!(loo.iter().all(|(_, h)| h.speakers().len() == 1));
    }

    #[test]
    fn sweep_is_nested_prefix() {
        let ds = bench(10);
        let sweep = size_sweep(&ds, &[1.0, 0.5, 0.3, 0.1], 11).unwrap();
        assert_eq!(sweep[0], ds);
        let counts: Vec<usize> = sweep.iter().map(|d| d.speakers().len()).collect();
        assert_eq!(counts, vec![10, 5, 3, 1]);
        for w in sweep.windows(2) {
            assert!(speakers(&w[1]).is_subset(&speakers(&w[0])));
        }
        assert!(size_sweep(&ds, &[0.5, 1.0], 0).is_err());
        assert!(size_sweep(&ds, &[0.0], 0).is_err());
        assert_eq!(size_sweep(&ds, &[0.01], 0).unwrap()[0].speakers().len(), 1);
    }

    fn skewed(sizes: &[usize]) -> Dataset {
        let mut utts = Vec::new();
        for (s, &n) in sizes.iter().enumerate() {
            for i in 0..n {
                let f = Tensor::matrix(1, 1, vec![i as f64]).unwrap();
                utts.push(Utterance::new(f, i % 2, SpeakerId(s as u32)).unwrap());
            }
        }
        Dataset::new(utts, 2, 1).unwrap()
    }

    /// Smallest achievable (max − min) fold load over every assignment.
    fn best_spread(sizes: &[usize], folds: usize) -> usize {
        let mut best = usize::MAX;
        let total = folds.pow(sizes.len() as u32);
        for code in 0..total {
            let mut load = vec![0; folds];
            let mut c = code;
            for &s in sizes {
                load[c % folds] += s;
                c /= folds;
            }
            best = best.min(load.iter().max().unwrap() - load.iter().min().unwrap());
        }
        best
    }

    #[test]
    fn greedy_fold_balance_bound() {
        let cases: [&[usize]; 5] = [
            &[9, 1, 1, 1, 1, 1],
            &[5, 4, 3, 3, 2, 1, 1],
            &[7, 7, 2, 2, 2],
            &[1, 2, 3, 4, 5, 6, 7],
            &[10, 3, 3, 3, 3, 3, 3],
        ];
        for sizes in cases {
            for folds in 2..=3 {
                let ds = skewed(sizes);
                let result = kfold_by_speaker(&ds, folds).unwrap();
                let loads: Vec<usize> = result.iter().map(|(_, h)| h.len()).collect();
                let spread = loads.iter().max().unwrap() - loads.iter().min().unwrap();
                let biggest = *sizes.iter().max().unwrap();
                assert!(spread <= biggest, "{sizes:?} folds={folds} loads={loads:?}");
                assert!(spread >= best_spread(sizes, folds));
            }
        }
    }
}
