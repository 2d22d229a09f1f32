//! Classification scores: accuracy, per-class precision/recall/F1, and
//! unweighted macro-F1 over the four engagement classes.
//!
//! Conventions: a precision or recall with a zero denominator is 0, an F1
//! with precision + recall = 0 is 0, and a class absent from both the truth
//! and the predictions therefore contributes an F1 of 0 to the macro
//! average. Macro-F1 always divides by all four classes.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::learn::N_CLASSES;

/// Precision/recall/F1 for one class, with its support in the truth.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassScores {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: usize,
}

/// Scores of one prediction set against the truth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub accuracy: f64,
    pub macro_f1: f64,
    pub per_class: [ClassScores; N_CLASSES],
    /// `confusion[t][p]` counts rows with true class `t` predicted as `p`.
    pub confusion: [[usize; N_CLASSES]; N_CLASSES],
}

fn check_inputs(y_true: &[usize], y_pred: &[usize]) -> Result<()> {
    if y_true.is_empty() {
        return Err(Error::InvalidInput("cannot score an empty prediction set".into()));
    }
    if y_true.len() != y_pred.len() {
        return Err(Error::Dimension(format!(
            "{} truth labels vs {} predictions",
            y_true.len(),
            y_pred.len()
        )));
    }
    for &y in y_true.iter().chain(y_pred) {
        if y >= N_CLASSES {
            return Err(Error::InvalidInput(format!(
                "class index {y} out of range for {N_CLASSES} classes"
            )));
        }
    }
    Ok(())
}

/// Count the confusion matrix `confusion[true][pred]`.
pub fn confusion_matrix(
    y_true: &[usize],
    y_pred: &[usize],
) -> Result<[[usize; N_CLASSES]; N_CLASSES]> {
    check_inputs(y_true, y_pred)?;
    let mut confusion = [[0usize; N_CLASSES]; N_CLASSES];
    for (&t, &p) in y_true.iter().zip(y_pred) {
        confusion[t][p] += 1;
    }
    Ok(confusion)
}

/// Per-class scores derived from a confusion matrix.
pub fn class_scores_from_confusion(
    confusion: &[[usize; N_CLASSES]; N_CLASSES],
) -> [ClassScores; N_CLASSES] {
    std::array::from_fn(|c| {
        let tp = confusion[c][c];
        let support: usize = confusion[c].iter().sum();
        let predicted: usize = (0..N_CLASSES).map(|t| confusion[t][c]).sum();
        let precision = if predicted == 0 {
            0.0
        } else {
            tp as f64 / predicted as f64
        };
        let recall = if support == 0 {
            0.0
        } else {
            tp as f64 / support as f64
        };
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        ClassScores {
            precision,
            recall,
            f1,
            support,
        }
    })
}

/// Fraction of predictions matching the truth.
pub fn accuracy(y_true: &[usize], y_pred: &[usize]) -> Result<f64> {
    check_inputs(y_true, y_pred)?;
    let hits = y_true.iter().zip(y_pred).filter(|(t, p)| t == p).count();
    Ok(hits as f64 / y_true.len() as f64)
}

/// Unweighted mean of the four per-class F1 scores.
pub fn macro_f1(y_true: &[usize], y_pred: &[usize]) -> Result<f64> {
    Ok(evaluate(y_true, y_pred)?.macro_f1)
}

/// Full evaluation: accuracy, per-class scores, macro-F1, confusion matrix.
pub fn evaluate(y_true: &[usize], y_pred: &[usize]) -> Result<Evaluation> {
    let confusion = confusion_matrix(y_true, y_pred)?;
    let per_class = class_scores_from_confusion(&confusion);
    let macro_f1 = per_class.iter().map(|c| c.f1).sum::<f64>() / N_CLASSES as f64;
    let hits: usize = (0..N_CLASSES).map(|c| confusion[c][c]).sum();
    Ok(Evaluation {
        accuracy: hits as f64 / y_true.len() as f64,
        macro_f1,
        per_class,
        confusion,
    })
}
