//! Trivial reference predictors the learned model must beat.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::learn::N_CLASSES;

/// Most frequent class in the training labels; ties go to the lower class
/// index (the fixed F < C < R < A order).
pub fn majority_class(train_labels: &[usize]) -> Result<usize> {
    if train_labels.is_empty() {
        return Err(Error::InvalidInput(
            "majority baseline needs at least one training label".into(),
        ));
    }
    let mut counts = [0usize; N_CLASSES];
    for &y in train_labels {
        if y >= N_CLASSES {
            return Err(Error::InvalidInput(format!(
                "class index {y} out of range for {N_CLASSES} classes"
            )));
        }
        counts[y] += 1;
    }
    let best = counts.iter().copied().max().unwrap_or(0);
    Ok(counts.iter().position(|&c| c == best).unwrap_or(0))
}

/// Predict the training majority class for every test row.
pub fn predict_majority(train_labels: &[usize], n: usize) -> Result<Vec<usize>> {
    let class = majority_class(train_labels)?;
    Ok(vec![class; n])
}

/// Predict a uniformly random class for every row, reproducibly.
pub fn predict_random(n: usize, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| rng.random_range(0..N_CLASSES)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn majority_picks_the_most_frequent_class() {
        assert_eq!(majority_class(&[2, 2, 1, 2, 0]).unwrap(), 2);
        assert_eq!(predict_majority(&[3, 3, 0], 4).unwrap(), vec![3; 4]);
    }

    #[test]
    fn majority_ties_break_toward_the_lower_class_index() {
        // Two each of classes 1 and 3 → class 1 wins.
        assert_eq!(majority_class(&[3, 1, 3, 1]).unwrap(), 1);
        // Four-way tie → class 0.
        assert_eq!(majority_class(&[0, 1, 2, 3]).unwrap(), 0);
    }

    #[test]
    fn majority_rejects_empty_or_out_of_range_labels() {
        assert!(majority_class(&[]).is_err());
        assert!(majority_class(&[0, 7]).is_err());
    }

    #[test]
    fn random_predictions_are_reproducible_and_roughly_uniform() {
        let a = predict_random(10_000, 99);
        let b = predict_random(10_000, 99);
        assert_eq!(a, b);
        assert_ne!(a, predict_random(10_000, 100));
        let mut counts = [0usize; N_CLASSES];
        for &y in &a {
            counts[y] += 1;
        }
        for &c in &counts {
            let frac = c as f64 / 10_000.0;
            assert!((frac - 0.25).abs() < 0.02, "class fraction {frac}");
        }
    }
}
