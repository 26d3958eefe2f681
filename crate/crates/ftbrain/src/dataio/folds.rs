//! Subject-wise, class-stratified fold planning.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

use super::volume::Label;

/// Pairwise-disjoint subject sets; fold i serves as the test side of
/// cross-validation round i, the rest as training.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FoldPlan {
    pub k: usize,
    pub folds: Vec<BTreeSet<String>>,
}

impl FoldPlan {
    /// Train/test subject split for one cross-validation round.
    pub fn split(&self, fold: usize) -> (BTreeSet<String>, &BTreeSet<String>) {
        let train = self
            .folds
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != fold)
            .flat_map(|(_, f)| f.iter().cloned())
            .collect();
        (train, &self.folds[fold])
    }

    /// Hard disjointness check, also run on every pipeline execution.
    pub fn verify_disjoint(&self) -> Result<()> {
        let mut seen = BTreeSet::new();
        for (i, fold) in self.folds.iter().enumerate() {
            for id in fold {
                if !seen.insert(id.clone()) {
                    return Err(Error::Data(format!("subject {id} appears in more than one fold (fold {i})")));
                }
            }
        }
        Ok(())
    }
}

/// Stratified k-fold assignment: per class, a seeded shuffle dealt
/// round-robin, so per-class fold sizes differ by at most one.
pub fn kfold_subject_split(subjects: &[(String, Label)], k: usize, seed: u64) -> Result<FoldPlan> {
    if k < 2 {
        return Err(Error::Config(format!("fold count {k} must be at least 2")));
    }
    let mut by_class: BTreeMap<Label, Vec<String>> = BTreeMap::new();
    for (id, label) in subjects {
        by_class.entry(*label).or_default().push(id.clone());
    }
    for (label, ids) in &by_class {
        let unique: BTreeSet<_> = ids.iter().collect();
        if unique.len() != ids.len() {
            return Err(Error::Data(format!("duplicate subject ids in class {label}")));
        }
        if ids.len() < k {
            return Err(Error::Config(format!(
                "class {label} has {} subjects, fewer than {k} folds",
                ids.len()
            )));
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut folds = vec![BTreeSet::new(); k];
    for (_, ids) in by_class.iter_mut() {
        // Sort before shuffling: the outcome depends only on (subjects, seed),
        // not on caller ordering.
        ids.sort();
        ids.shuffle(&mut rng);
        for (i, id) in ids.drain(..).enumerate() {
            folds[i % k].insert(id);
        }
    }
    let plan = FoldPlan { k, folds };
    plan.verify_disjoint()?;
    Ok(plan)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn subjects(per_class: usize) -> Vec<(String, Label)> {
        let mut out = Vec::new();
        for label in Label::ALL {
            for i in 0..per_class {
                out.push((format!("{}{:03}", label.as_str().to_lowercase(), i), label));
            }
        }
        out
    }

    #[test]
    fn five_folds_of_fifty_give_ten_test_forty_train_per_class() {
        let subs: Vec<_> = subjects(50).into_iter().filter(|(_, l)| *l != Label::Mci).collect();
        let plan = kfold_subject_split(&subs, 5, 99).unwrap();
        for fold in 0..5 {
            let (train, test) = plan.split(fold);
            for label in [Label::Ad, Label::Nc] {
                let prefix = label.as_str().to_lowercase();
                assert_eq!(test.iter().filter(|s| s.starts_with(&prefix)).count(), 10);
                assert_eq!(train.iter().filter(|s| s.starts_with(&prefix)).count(), 40);
            }
            assert!(train.is_disjoint(test));
        }
    }

    #[test]
    fn leave_one_subject_per_class_out() {
        let subs = subjects(4);
        let plan = kfold_subject_split(&subs, 4, 1).unwrap();
        for fold in &plan.folds {
            assert_eq!(fold.len(), 3); // one subject from each of 3 classes
        }
    }

    #[test]
    fn union_is_everything_and_folds_are_disjoint() {
        let subs = subjects(7);
        let plan = kfold_subject_split(&subs, 3, 5).unwrap();
        let union: BTreeSet<_> = plan.folds.iter().flatten().cloned().collect();
        assert_eq!(union.len(), 21);
        plan.verify_disjoint().unwrap();
        // Sizes differ by at most 1 per class.
        for label in Label::ALL {
            let prefix = label.as_str().to_lowercase();
            let sizes: Vec<usize> = plan
                .folds
                .iter()
                .map(|f| f.iter().filter(|s| s.starts_with(&prefix)).count())
                .collect();
            let (lo, hi) = (sizes.iter().min().unwrap(), sizes.iter().max().unwrap());
            assert!(hi - lo <= 1);
        }
    }

    #[test]
    fn seed_changes_assignment_caller_order_does_not() {
        let subs = subjects(10);
        let mut reversed = subs.clone();
        reversed.reverse();
        assert_eq!(
            kfold_subject_split(&subs, 5, 3).unwrap(),
            kfold_subject_split(&reversed, 5, 3).unwrap()
        );
        assert_ne!(
            kfold_subject_split(&subs, 5, 3).unwrap(),
            kfold_subject_split(&subs, 5, 4).unwrap()
        );
    }

    #[test]
    fn bad_parameters_are_rejected() {
        let subs = subjects(3);
        assert!(kfold_subject_split(&subs, 1, 0).is_err());
        assert!(kfold_subject_split(&subs, 4, 0).is_err()); // class smaller than k
        let mut dup = subs.clone();
        dup.push(dup[0].clone());
        assert!(kfold_subject_split(&dup, 2, 0).is_err());
    }
}
