use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::record::LabeledDataset;
use crate::error::{Error, Result};

/// Record indices of one cross-validation fold.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldSplit {
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
    pub test: Vec<usize>,
}

impl FoldSplit {
    /// Returns the (train, validation, test) datasets.
    pub fn materialize(&self, dataset: &LabeledDataset) -> (LabeledDataset, LabeledDataset, LabeledDataset) {
        (
            dataset.subset(&self.train),
            dataset.subset(&self.validation),
            dataset.subset(&self.test),
        )
    }
}

/// Stratified `folds`-way split. Each class is shuffled and dealt round-robin
/// (positives first, negatives continuing the rotation), so fold sizes differ
/// by at most one. The validation set is a stratified `validation_fraction`
/// of each training portion, with at least one record of each class when the
/// fraction is positive.
pub fn kfold_split(dataset: &LabeledDataset, folds: usize, validation_fraction: f64, seed: u64) -> Result<Vec<FoldSplit>> {
    if folds < 2 {
        return Err(Error::Config(format!("need at least 2 folds, got {folds}")));
    }
    if !(0.0..1.0).contains(&validation_fraction) {
        return Err(Error::Config(format!(
            "validation fraction {validation_fraction} must lie in [0, 1)"
        )));
    }
    if dataset.len() < folds {
        return Err(Error::Stratification(format!(
            "task `{}` has {} records for {folds} folds",
            dataset.task,
            dataset.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pos: Vec<usize> = (0..dataset.len()).filter(|&i| dataset.labels[i] == 1).collect();
    let mut neg: Vec<usize> = (0..dataset.len()).filter(|&i| dataset.labels[i] == 0).collect();
    // The largest test fold of a class takes ceil(len / folds) of it; the
    // remaining training portion needs one record for validation and one to fit.
    let min_train = if validation_fraction > 0.0 { 2 } else { 1 };
    for (name, class) in [("positive", &pos), ("negative", &neg)] {
        if class.len() < folds || class.len() - class.len().div_ceil(folds) < min_train {
            return Err(Error::Stratification(format!(
                "task `{}` has {} {name} records, too few for {folds} folds",
                dataset.task,
                class.len()
            )));
        }
    }
    pos.shuffle(&mut rng);
    neg.shuffle(&mut rng);

    let mut assigned: Vec<Vec<usize>> = vec![Vec::new(); folds];
    for (i, &r) in pos.iter().chain(neg.iter()).enumerate() {
        assigned[i % folds].push(r);
    }

    let mut out = Vec::with_capacity(folds);
    for f in 0..folds {
        let mut test = assigned[f].clone();
        test.sort_unstable();
        let mut train_pos = Vec::new();
        let mut train_neg = Vec::new();
        for (g, members) in assigned.iter().enumerate() {
            if g == f {
                continue;
            }
            for &r in members {
                if dataset.labels[r] == 1 {
                    train_pos.push(r);
                } else {
                    train_neg.push(r);
                }
            }
        }
        train_pos.sort_unstable();
        train_neg.sort_unstable();
        let mut validation = Vec::new();
        for class in [&mut train_pos, &mut train_neg] {
            class.shuffle(&mut rng);
            let take = if validation_fraction > 0.0 {
                ((class.len() as f64 * validation_fraction).round() as usize).clamp(1, class.len() - 1)
            } else {
                0
            };
            validation.extend(class.drain(..take));
        }
        let mut train: Vec<usize> = train_pos.into_iter().chain(train_neg).collect();
        train.sort_unstable();
        validation.sort_unstable();
        out.push(FoldSplit { train, validation, test });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::record::{Demographics, PatientRecord, Visit};
    use proptest::prelude::*;

    fn dataset(n: usize, n_pos: usize) -> LabeledDataset {
        let records = (0..n)
            .map(|i| PatientRecord::new(format!("p{i}"), Demographics::new(0, 0).unwrap(), vec![Visit::new(0, [0]).unwrap()]))
            .collect();
        let labels = (0..n).map(|i| u8::from(i < n_pos)).collect();
        LabeledDataset::new("t", records, labels).unwrap()
    }

    #[test]
    fn five_folds_of_twenty() {
        let d = dataset(100, 25);
        let splits = kfold_split(&d, 5, 0.1, 3).unwrap();
        assert_eq!(splits.len(), 5);
        let mut seen = vec![0; 100];
        for s in &splits {
            assert_eq!(s.test.len(), 20);
            for &i in &s.test {
                seen[i] += 1;
            }
        }
        assert!(seen.iter().all(|&c| c == 1));
        assert_eq!(splits, kfold_split(&d, 5, 0.1, 3).unwrap());
    }

    #[test]
    fn too_few_positives() {
        let d = dataset(100, 3);
        assert!(matches!(kfold_split(&d, 5, 0.1, 0), Err(Error::Stratification(_))));
        assert!(matches!(kfold_split(&d, 1, 0.1, 0), Err(Error::Config(_))));
    }

    proptest! {
        #[test]
        fn partition_and_stratification(n in 20usize..120, pos_frac in 0.15f64..0.6, folds in 2usize..6, seed in any::<u64>()) {
            let n_pos = ((n as f64) * pos_frac).round() as usize;
            let d = dataset(n, n_pos);
            let splits = match kfold_split(&d, folds, 0.1, seed) {
                Err(Error::Stratification(_)) => {
                    let smallest = n_pos.min(n - n_pos);
                    prop_assert!(smallest < folds || smallest - smallest.div_ceil(folds) < 2);
                    return Ok(());
                }
                other => other.unwrap(),
            };
            let global = n_pos as f64 / n as f64;
            let mut cover = vec![0usize; n];
            for s in &splits {
                let mut all: Vec<usize> = s.train.iter().chain(&s.validation).chain(&s.test).copied().collect();
                all.sort_unstable();
                prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
                for &i in &s.test { cover[i] += 1; }
                let test_pos = s.test.iter().filter(|&&i| d.labels[i] == 1).count() as f64;
                prop_assert!((test_pos - global * s.test.len() as f64).abs() <= 1.0 + 1e-9);
                prop_assert!(s.validation.iter().any(|&i| d.labels[i] == 1));
                prop_assert!(s.validation.iter().any(|&i| d.labels[i] == 0));
                prop_assert!(s.train.iter().any(|&i| d.labels[i] == 1));
            }
            prop_assert!(cover.iter().all(|&c| c == 1));
        }
    }
}
