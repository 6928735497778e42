use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::init::{derive_seed, rng_from_seed};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fold {
    pub repeat: usize,
    pub fold: usize,
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

/// Repeated k-fold cross-validation plan.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitPlan {
    pub repeats: usize,
    pub folds: usize,
    pub seed: u64,
    pub stratified: bool,
    /// Set when stratification was requested but a class had fewer samples
    /// than folds.
    pub warning: Option<String>,
    pub cells: Vec<Fold>,
}

/// Builds `repeats × folds` train/test splits of `0..m`. With labels the
/// folds are stratified: indices are grouped by class, shuffled within each
/// class, and dealt round-robin so fold sizes differ by at most one.
pub fn kfold_splits(m: usize, folds: usize, repeats: usize, seed: u64, labels: Option<&[usize]>) -> Result<SplitPlan> {
    if folds < 2 || m < folds {
        return Err(Error::contract(format!("{folds}-fold split of {m} samples")));
    }
    if repeats == 0 {
        return Err(Error::contract("at least one repeat is needed"));
    }
    if let Some(l) = labels {
        if l.len() != m {
            return Err(Error::Dimension {
                op: "kfold_splits",
                left: (m, 1),
                right: (l.len(), 1),
            });
        }
    }

    let mut warning = None;
    let classes = labels.and_then(|l| {
        let c = l.iter().max().map_or(0, |&x| x + 1);
        let mut groups = vec![Vec::new(); c];
        for (i, &y) in l.iter().enumerate() {
            groups[y].push(i);
        }
        groups.retain(|g| !g.is_empty());
        if let Some(small) = groups.iter().map(Vec::len).min().filter(|&n| n < folds) {
            warning = Some(format!(
                "smallest class has {small} samples (< {folds} folds); folds are not stratified"
            ));
            None
        } else {
            Some(groups)
        }
    });

    let mut cells = Vec::with_capacity(repeats * folds);
    for r in 0..repeats {
        let mut rng = rng_from_seed(derive_seed(seed, r as u64));
        let order: Vec<usize> = match &classes {
            Some(groups) => groups
                .iter()
                .flat_map(|g| {
                    let mut g = g.clone();
                    g.shuffle(&mut rng);
                    g
                })
                .collect(),
            None => {
                let mut all: Vec<usize> = (0..m).collect();
                all.shuffle(&mut rng);
                all
            }
        };
        let mut assignment = vec![0usize; m];
        for (pos, &i) in order.iter().enumerate() {
            assignment[i] = pos % folds;
        }
        for f in 0..folds {
            let (test, train): (Vec<usize>, Vec<usize>) = (0..m).partition(|&i| assignment[i] == f);
            cells.push(Fold {
                repeat: r,
                fold: f,
                train,
                test,
            });
        }
    }
    Ok(SplitPlan {
        repeats,
        folds,
        seed,
        stratified: classes.is_some(),
        warning,
        cells,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn assert_partitions(plan: &SplitPlan, m: usize) {
        for r in 0..plan.repeats {
            let mut seen = vec![0; m];
            let cells: Vec<_> = plan.cells.iter().filter(|c| c.repeat == r).collect();
            assert_eq!(cells.len(), plan.folds);
            let sizes: Vec<usize> = cells.iter().map(|c| c.test.len()).collect();
            assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
            for c in cells {
                assert_eq!(c.train.len() + c.test.len(), m);
                assert!(c.test.iter().all(|i| !c.train.contains(i)));
                for &i in &c.test {
                    seen[i] += 1;
                }
            }
            assert!(seen.iter().all(|&n| n == 1));
        }
    }

    #[test]
    fn nine_samples_three_folds() {
        let plan = kfold_splits(9, 3, 1, 4, None).unwrap();
        assert_partitions(&plan, 9);
        assert!(plan.cells.iter().all(|c| c.test.len() == 3));
        assert_eq!(plan, kfold_splits(9, 3, 1, 4, None).unwrap());
    }

    #[test]
    fn stratified_folds_keep_class_balance() {
        let labels: Vec<usize> = (0..30).map(|i| i % 3).collect();
        let plan = kfold_splits(30, 3, 2, 1, Some(&labels)).unwrap();
        assert!(plan.stratified && plan.warning.is_none());
        for c in &plan.cells {
            for class in 0..3 {
                // 10 per class over 3 folds
                let n = c.test.iter().filter(|&&i| labels[i] == class).count();
                assert!(n == 3 || n == 4, "class {class}: {n}");
            }
        }
        assert_ne!(plan.cells[0].test, plan.cells[3].test, "repeats reshuffle");
    }

    #[test]
    fn tiny_class_falls_back_to_unstratified() {
        let labels = vec![0, 0, 0, 0, 1];
        let plan = kfold_splits(5, 2, 1, 0, Some(&labels)).unwrap();
        assert!(!plan.stratified);
        assert!(plan.warning.is_some());
        assert_partitions(&plan, 5);
    }

    #[test]
    fn rejects_degenerate_requests() {
        assert!(kfold_splits(2, 3, 1, 0, None).is_err());
        assert!(kfold_splits(10, 1, 1, 0, None).is_err());
    }

    proptest! {
        #[test]
        fn folds_partition_every_repeat(m in 2usize..60, folds in 2usize..6, repeats in 1usize..4, seed: u64, classes in 1usize..4) {
            prop_assume!(m >= folds);
            let labels: Vec<usize> = (0..m).map(|i| (i * 7 + 3) % classes).collect();
            let plan = kfold_splits(m, folds, repeats, seed, Some(&labels)).unwrap();
            assert_partitions(&plan, m);
        }
    }
}
