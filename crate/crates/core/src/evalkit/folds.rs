use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::labels::{LesionClass, NUM_CLASSES};
use crate::rng::stream_rng;

/// Patient-level label used for stratification: the more severe side.
pub fn max_label(left: LesionClass, right: LesionClass) -> LesionClass {
    left.max(right)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub k: usize,
    pub seed: u64,
    /// patient id → validation fold
    pub folds: BTreeMap<String, usize>,
    /// patient id → stratification label
    pub strat_labels: BTreeMap<String, LesionClass>,
}

impl FoldPlan {
    pub fn fold_of(&self, patient: &str) -> Option<usize> {
        self.folds.get(patient).copied()
    }

    pub fn validation(&self, fold: usize) -> Vec<&str> {
        self.folds.iter().filter(|(_, &f)| f == fold).map(|(p, _)| p.as_str()).collect()
    }

    pub fn training(&self, fold: usize) -> Vec<&str> {
        self.folds.iter().filter(|(_, &f)| f != fold).map(|(p, _)| p.as_str()).collect()
    }

    /// Per-fold count of each stratification class.
    pub fn class_counts(&self) -> Vec<[usize; NUM_CLASSES]> {
        let mut counts = vec![[0usize; NUM_CLASSES]; self.k];
        for (p, &f) in &self.folds {
            counts[f][self.strat_labels[p].index()] += 1;
        }
        counts
    }

    /// Partition and balance checks: every patient in one fold in `[0, k)`,
    /// and per-class fold counts within one of each other.
    pub fn validate(&self) -> Result<()> {
        if self.k < 2 {
            return Err(Error::Config(format!("k = {}", self.k)));
        }
        let a: BTreeSet<&String> = self.folds.keys().collect();
        let b: BTreeSet<&String> = self.strat_labels.keys().collect();
        if a != b {
            return Err(Error::SchemaMismatch("fold map and label map disagree".into()));
        }
        if let Some((p, f)) = self.folds.iter().find(|(_, &f)| f >= self.k) {
            return Err(Error::SchemaMismatch(format!("patient {p} in fold {f} >= k")));
        }
        let counts = self.class_counts();
        for c in 0..NUM_CLASSES {
            let per_fold: Vec<usize> = counts.iter().map(|row| row[c]).collect();
            let (lo, hi) = (per_fold.iter().min().unwrap(), per_fold.iter().max().unwrap());
            if hi - lo > 1 {
                return Err(Error::SchemaMismatch(format!(
                    "class {c} fold counts {per_fold:?} differ by more than one"
                )));
            }
        }
        Ok(())
    }
}

/// Within each class (in class order) patients are sorted, shuffled from
/// ChaCha8 stream `class` of `seed`, and dealt round-robin to folds. The
/// deal continues where the previous class stopped so overall fold sizes
/// also stay within one.
pub fn stratified_kfold(patients: &[(String, LesionClass)], k: usize, seed: u64) -> Result<FoldPlan> {
    if k < 2 {
        return Err(Error::Config(format!("k must be >= 2, got {k}")));
    }
    if patients.len() < k {
        return Err(Error::TooFewPatients { patients: patients.len(), k });
    }
    let mut strat_labels = BTreeMap::new();
    for (p, l) in patients {
        if strat_labels.insert(p.clone(), *l).is_some() {
            return Err(Error::ManifestParse(format!("duplicate patient id {p:?}")));
        }
    }
    let mut folds = BTreeMap::new();
    let mut next = 0usize;
    for class in LesionClass::ALL {
        let mut members: Vec<&String> = strat_labels.iter().filter(|(_, &l)| l == class).map(|(p, _)| p).collect();
        members.shuffle(&mut stream_rng(seed, class.index() as u64));
        for p in members {
            folds.insert(p.clone(), next);
            next = (next + 1) % k;
        }
    }
    let plan = FoldPlan { k, seed, folds, strat_labels };
    plan.validate()?;
    Ok(plan)
}
