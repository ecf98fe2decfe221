use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::rng::stream_rng;

/// Row indices of a train/test partition, each sorted ascending.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Split {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

fn strata(labels: &[f64]) -> [Vec<usize>; 2] {
    let mut zeros = Vec::new();
    let mut positives = Vec::new();
    for (i, y) in labels.iter().enumerate() {
        if *y == 0.0 {
            zeros.push(i);
        } else {
            positives.push(i);
        }
    }
    [zeros, positives]
}

/// Random train/test split of `round(frac * n)` training rows that keeps
/// the share of zero labels in the training part equal to the full set
/// (within one observation).
pub fn stratified_split(labels: &[f64], frac: f64, seed: u64) -> Result<Split> {
    if !(frac > 0.0 && frac < 1.0) {
        return Err(Error::domain(format!("split fraction must lie in (0, 1), got {frac}")));
    }
    let n = labels.len();
    let mut strata = strata(labels);
    for (name, s) in ["zero", "non-zero"].iter().zip(&strata) {
        if s.len() == 1 {
            return Err(Error::DegenerateStratum(format!(
                "the {name} stratum has a single observation"
            )));
        }
    }
    let n_train = (frac * n as f64).round() as usize;
    let n_zero = strata[0].len();
    let zero_train = if n == 0 {
        0
    } else {
        ((n_train as f64 * n_zero as f64 / n as f64).round() as usize).min(n_zero)
    };
    let pos_train = (n_train - zero_train).min(strata[1].len());

    let mut rng = stream_rng(seed, 0);
    let mut split = Split {
        train: Vec::with_capacity(n_train),
        test: Vec::with_capacity(n - n_train),
    };
    for (stratum, take) in strata.iter_mut().zip([zero_train, pos_train]) {
        stratum.shuffle(&mut rng);
        split.train.extend_from_slice(&stratum[..take]);
        split.test.extend_from_slice(&stratum[take..]);
    }
    split.train.sort_unstable();
    split.test.sort_unstable();
    Ok(split)
}

/// Fold id in `0..folds` for every row, balancing zero and non-zero labels
/// across folds.
pub fn stratified_folds(labels: &[f64], folds: usize, seed: u64) -> Result<Vec<usize>> {
    if folds < 2 {
        return Err(Error::domain(format!("need at least 2 folds, got {folds}")));
    }
    if labels.len() < folds {
        return Err(Error::domain(format!(
            "{} observations cannot fill {folds} folds",
            labels.len()
        )));
    }
    let mut rng = stream_rng(seed, 1);
    let mut assignment = vec![0; labels.len()];
    let mut next = 0;
    for mut stratum in strata(labels) {
        stratum.shuffle(&mut rng);
        for i in stratum {
            assignment[i] = next % folds;
            next += 1;
        }
    }
    Ok(assignment)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn proportional_allocation() {
        let labels: Vec<f64> = (0..100).map(|i| if i < 80 { 0.0 } else { 1.0 + i as f64 }).collect();
        let split = stratified_split(&labels, 0.75, 7).unwrap();
        assert_eq!(split.train.len(), 75);
        let zeros = split.train.iter().filter(|&&i| labels[i] == 0.0).count();
        assert_eq!(zeros, 60);
        assert_eq!(split.train.len() - zeros, 15);
    }

    #[test]
    fn same_seed_same_split() {
        let labels: Vec<f64> = (0..40).map(|i| (i % 3) as f64).collect();
        assert_eq!(
            stratified_split(&labels, 0.75, 11).unwrap(),
            stratified_split(&labels, 0.75, 11).unwrap()
        );
        assert_ne!(
            stratified_split(&labels, 0.75, 11).unwrap(),
            stratified_split(&labels, 0.75, 12).unwrap()
        );
    }

    #[test]
    fn single_stratum_plain_split() {
        let labels = vec![0.0; 20];
        let split = stratified_split(&labels, 0.75, 1).unwrap();
        assert_eq!(split.train.len(), 15);
        assert_eq!(split.test.len(), 5);
    }

    #[test]
    fn singleton_stratum_is_degenerate() {
        let mut labels = vec![0.0; 20];
        labels[3] = 5.0;
        assert!(matches!(
            stratified_split(&labels, 0.75, 1),
            Err(Error::DegenerateStratum(_))
        ));
    }

    #[test]
    fn bad_fraction() {
        assert!(stratified_split(&[0.0, 0.0], 1.0, 1).is_err());
        assert!(stratified_split(&[0.0, 0.0], 0.0, 1).is_err());
    }

    #[test]
    fn folds_balance_strata() {
        let labels: Vec<f64> = (0..103).map(|i| if i % 4 == 0 { 2.0 } else { 0.0 }).collect();
        let folds = stratified_folds(&labels, 5, 3).unwrap();
        for f in 0..5 {
            let size = folds.iter().filter(|&&x| x == f).count();
            assert!((20..=21).contains(&size));
            let pos = (0..labels.len())
                .filter(|&i| folds[i] == f && labels[i] > 0.0)
                .count();
            assert!((5..=6).contains(&pos));
        }
    }

    proptest! {
        #[test]
        fn split_partitions_input(
            labels in prop::collection::vec(prop_oneof![Just(0.0), 1.0..100.0f64], 4..200),
            frac in 0.05..0.95f64,
            seed in any::<u64>(),
        ) {
            match stratified_split(&labels, frac, seed) {
                Ok(split) => {
                    let mut all: Vec<usize> = split.train.iter().chain(&split.test).copied().collect();
                    all.sort_unstable();
                    prop_assert_eq!(all, (0..labels.len()).collect::<Vec<_>>());
                    prop_assert_eq!(split.train.len(), (frac * labels.len() as f64).round() as usize);
                    let zero_all = labels.iter().filter(|&&y| y == 0.0).count() as f64;
                    let zero_train = split.train.iter().filter(|&&i| labels[i] == 0.0).count() as f64;
                    let target = split.train.len() as f64 * zero_all / labels.len() as f64;
                    prop_assert!((zero_train - target).abs() <= 1.0);
                }
                Err(Error::DegenerateStratum(_)) => {}
                Err(e) => return Err(TestCaseError::fail(e.to_string())),
            }
        }
    }
}
