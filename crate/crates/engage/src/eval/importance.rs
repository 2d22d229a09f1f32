//! Model introspection: ranked feature importance and failure sampling.

use std::collections::BTreeMap;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dialogue::EngagementLabel;
use crate::error::{Error, Result};
use crate::features::{FeatureGroup, FeatureRegistry, Row};
use crate::learn::{LogRegModel, N_CLASSES};

/// One ranked feature: the column's strongest class weight and where the
/// feature came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImportanceEntry {
    /// 1-based rank.
    pub rank: usize,
    /// Window slot the feature was extracted from (registry slot name).
    pub slot: String,
    pub group: FeatureGroup,
    pub name: String,
    /// Signed weight of the class where |weight| peaks.
    pub weight: f64,
    /// Class attaining that peak.
    pub class: EngagementLabel,
}

/// Ranked features plus the share of the ranking each slot accounts for.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImportanceReport {
    pub entries: Vec<ImportanceEntry>,
    /// Percentage of ranked entries per slot name; sums to 100 when any
    /// entries exist.
    pub slot_shares: BTreeMap<String, f64>,
}

/// Rank features by the largest absolute weight any class assigns them.
///
/// Columns the model zeroed out entirely are omitted — an all-zero column
/// carries no signal and would only pad the ranking — so a model with a
/// single surviving weight yields exactly one entry holding 100% of the
/// slot share. Ties in score break toward the lower column index.
pub fn feature_importance(
    model: &LogRegModel,
    registry: &FeatureRegistry,
    top_k: usize,
) -> Result<ImportanceReport> {
    if model.n_features() != registry.len() {
        return Err(Error::Dimension(format!(
            "model has {} features but the registry describes {}",
            model.n_features(),
            registry.len()
        )));
    }
    if top_k == 0 {
        return Err(Error::Config("importance ranking needs top_k ≥ 1".into()));
    }

    let mut scored: Vec<(usize, f64, usize)> = Vec::new(); // (column, |w|max, argmax class)
    for j in 0..registry.len() {
        let (mut best, mut best_class) = (0.0f64, 0usize);
        for c in 0..N_CLASSES {
            let w = model.weights[[c, j]].abs();
            if w > best {
                best = w;
                best_class = c;
            }
        }
        if best > 0.0 {
            scored.push((j, best, best_class));
        }
    }
    scored.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
    scored.truncate(top_k);

    let mut entries = Vec::with_capacity(scored.len());
    let mut slot_counts: BTreeMap<String, usize> = BTreeMap::new();
    for (rank0, (j, _, class)) in scored.iter().enumerate() {
        let key = registry.key(*j);
        let slot = key.slot.name().to_string();
        *slot_counts.entry(slot.clone()).or_insert(0) += 1;
        entries.push(ImportanceEntry {
            rank: rank0 + 1,
            slot,
            group: key.group,
            name: key.name.clone(),
            weight: model.weights[[*class, *j]],
            class: EngagementLabel::from_class_index(*class)
                .ok_or_else(|| Error::Internal(format!("class index {class}")))?,
        });
    }

    let total = entries.len() as f64;
    let slot_shares = slot_counts
        .into_iter()
        .map(|(slot, count)| (slot, 100.0 * count as f64 / total))
        .collect();

    Ok(ImportanceReport {
        entries,
        slot_shares,
    })
}

/// One misclassified row with everything needed to inspect it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailureCase {
    pub row_index: usize,
    pub session_id: String,
    pub user_turn: usize,
    pub true_label: char,
    pub predicted_label: char,
    pub probabilities: [f64; N_CLASSES],
    /// Rendered context window, one line per slot.
    pub window: String,
}

/// A reproducible sample of misclassified rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailureExport {
    pub requested: usize,
    /// Total misclassified rows available; when smaller than `requested`
    /// the export simply contains all of them.
    pub n_misclassified: usize,
    pub cases: Vec<FailureCase>,
}

/// Sample up to `k` misclassified rows uniformly, seeded for reproducibility.
///
/// `indices[i]` maps position `i` of the prediction arrays back to its row,
/// so exports can be drawn from any train/test subset.
pub fn failure_export(
    rows: &[Row],
    indices: &[usize],
    y_true: &[usize],
    y_pred: &[usize],
    probabilities: &Array2<f64>,
    k: usize,
    seed: u64,
) -> Result<FailureExport> {
    if indices.len() != y_true.len()
        || y_true.len() != y_pred.len()
        || probabilities.nrows() != y_true.len()
        || probabilities.ncols() != N_CLASSES
    {
        return Err(Error::Dimension(format!(
            "failure export over {} indices, {} truths, {} predictions, {}×{} probabilities",
            indices.len(),
            y_true.len(),
            y_pred.len(),
            probabilities.nrows(),
            probabilities.ncols()
        )));
    }
    for &i in indices {
        if i >= rows.len() {
            return Err(Error::InvalidInput(format!(
                "row index {i} out of range for {} rows",
                rows.len()
            )));
        }
    }

    let mut failures: Vec<usize> = (0..y_true.len())
        .filter(|&p| y_true[p] != y_pred[p])
        .collect();
    let n_misclassified = failures.len();
    if failures.len() > k {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        failures.shuffle(&mut rng);
        failures.truncate(k);
        failures.sort_unstable();
    }

    let mut cases = Vec::with_capacity(failures.len());
    for p in failures {
        let row = &rows[indices[p]];
        let truth = EngagementLabel::from_class_index(y_true[p])
            .ok_or_else(|| Error::InvalidInput(format!("class index {}", y_true[p])))?;
        let pred = EngagementLabel::from_class_index(y_pred[p])
            .ok_or_else(|| Error::InvalidInput(format!("class index {}", y_pred[p])))?;
        let mut probs = [0.0; N_CLASSES];
        for c in 0..N_CLASSES {
            probs[c] = probabilities[[p, c]];
        }
        cases.push(FailureCase {
            row_index: indices[p],
            session_id: row.session_id.clone(),
            user_turn: row.user_turn,
            true_label: truth.code(),
            predicted_label: pred.code(),
            probabilities: probs,
            window: row.window.render(),
        });
    }

    Ok(FailureExport {
        requested: k,
        n_misclassified,
        cases,
    })
}
