//! Repeated cross-validation split plans.
//!
//! Each repeat shuffles the rows into `folds` folds; split `i` uses fold
//! `i` for testing, fold `(i+1) mod folds` for validation (grid selection
//! and convergence checks), and the remaining folds for training. With the
//! default 10 folds × 5 repeats this yields exactly 50 splits.
//!
//! Shuffling is stratified by label so skewed classes reach every fold
//! where possible; a class with fewer members than folds triggers a
//! warning and is simply dealt as far as it goes.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One train/validation/test partition of the row indices.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
    pub test: Vec<usize>,
}

/// The full plan: `folds × repeats` splits plus provenance.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitPlan {
    pub folds: usize,
    pub repeats: usize,
    pub seed: u64,
    pub stratified: bool,
    pub warnings: Vec<String>,
    pub splits: Vec<Split>,
}

/// Deal shuffled per-class index lists into folds. The cursor persists
/// across classes so no fold systematically collects the remainders.
fn assign_folds(
    n: usize,
    labels: &[usize],
    folds: usize,
    stratified: bool,
    rng: &mut ChaCha8Rng,
    warnings: &mut Vec<String>,
) -> Vec<Vec<usize>> {
    let mut fold_members: Vec<Vec<usize>> = vec![Vec::new(); folds];
    let mut cursor = 0usize;
    let groups: Vec<Vec<usize>> = if stratified {
        let n_classes = labels.iter().copied().max().unwrap_or(0) + 1;
        (0..n_classes)
            .map(|c| (0..n).filter(|&i| labels[i] == c).collect())
            .collect()
    } else {
        vec![(0..n).collect()]
    };
    for (c, mut members) in groups.into_iter().enumerate() {
        if members.is_empty() {
            continue;
        }
        if stratified && members.len() < folds {
            warnings.push(format!(
                "class {c} has {} members for {folds} folds; stratification relaxed",
                members.len()
            ));
        }
        members.shuffle(rng);
        for i in members {
            fold_members[cursor % folds].push(i);
            cursor += 1;
        }
    }
    fold_members
}

/// Build the repeated cross-validation plan.
pub fn make_splits(
    labels: &[usize],
    folds: usize,
    repeats: usize,
    seed: u64,
    stratified: bool,
) -> Result<SplitPlan> {
    let n = labels.len();
    if folds < 3 {
        return Err(Error::Config(
            "cross-validation needs at least 3 folds so every split has a training portion".into(),
        ));
    }
    if repeats == 0 {
        return Err(Error::Config("repeats must be ≥ 1".into()));
    }
    if n < folds {
        return Err(Error::InvalidInput(format!(
            "{n} rows cannot fill {folds} folds"
        )));
    }

    let mut warnings = Vec::new();
    let mut splits = Vec::with_capacity(folds * repeats);
    for repeat in 0..repeats {
        // One independent, reproducible stream per repeat.
        let mut rng = ChaCha8Rng::seed_from_u64(
            seed ^ (repeat as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15),
        );
        let mut repeat_warnings = Vec::new();
        let fold_members = assign_folds(n, labels, folds, stratified, &mut rng, &mut repeat_warnings);
        if repeat == 0 {
            warnings = repeat_warnings;
        }
        for i in 0..folds {
            let test = fold_members[i].clone();
            let validation = fold_members[(i + 1) % folds].clone();
            let mut train: Vec<usize> = (0..folds)
                .filter(|&f| f != i && f != (i + 1) % folds)
                .flat_map(|f| fold_members[f].iter().copied())
                .collect();
            train.sort_unstable();
            let mut test = test;
            let mut validation = validation;
            test.sort_unstable();
            validation.sort_unstable();
            splits.push(Split {
                train,
                validation,
                test,
            });
        }
    }

    Ok(SplitPlan {
        folds,
        repeats,
        seed,
        stratified,
        warnings,
        splits,
    })
}
