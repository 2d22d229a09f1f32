//! The classifier: multinomial logistic regression with an L1 penalty,
//! trained by proximal gradient descent (ISTA) with backtracking line
//! search.
//!
//! The objective is `mean cross-entropy + λ·Σ|w|` with an unpenalized bias;
//! both choices (mean vs. summed loss, penalized bias) are exposed in
//! [`TrainConfig`] since conventions differ between implementations. The
//! soft-threshold step drives exact zeros into the weight matrix, which the
//! importance report and the sparse model file rely on.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::dialogue::EngagementLabel;
use crate::error::{Error, Result};
use crate::features::registry::{SparseFeatures, SparseMatrix};

/// Number of engagement classes; class order is fixed as F, C, R, A.
pub const N_CLASSES: usize = 4;

/// Optimizer settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    /// L1 penalty strength.
    pub lambda: f64,
    pub max_iterations: usize,
    /// Stop when the objective decreases by less than this between
    /// iterations.
    pub tolerance: f64,
    /// First step size tried each iteration.
    pub initial_step: f64,
    /// Multiplier applied to the step size while backtracking (in (0,1)).
    pub backtrack: f64,
    /// Divide the data term by n (mean loss) instead of summing it.
    pub mean_loss: bool,
    /// Apply the L1 penalty to the bias as well.
    pub penalize_bias: bool,
    /// Recorded in the model; the optimizer itself is deterministic.
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lambda: 1.0,
            max_iterations: 1000,
            tolerance: 1e-6,
            initial_step: 1.0,
            backtrack: 0.5,
            mean_loss: true,
            penalize_bias: false,
            seed: 0,
        }
    }
}

impl TrainConfig {
    fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::Config("lambda must be finite and ≥ 0".into()));
        }
        if self.max_iterations == 0 {
            return Err(Error::Config("max_iterations must be ≥ 1".into()));
        }
        if self.tolerance.is_nan() || self.tolerance <= 0.0 {
            return Err(Error::Config("tolerance must be > 0".into()));
        }
        if self.initial_step.is_nan() || self.initial_step <= 0.0 {
            return Err(Error::Config("initial_step must be > 0".into()));
        }
        if !(self.backtrack > 0.0 && self.backtrack < 1.0) {
            return Err(Error::Config("backtrack must lie in (0,1)".into()));
        }
        Ok(())
    }
}

/// Trained classifier.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ModelFile", into = "ModelFile")]
pub struct LogRegModel {
    /// `N_CLASSES × D` weight matrix.
    pub weights: Array2<f64>,
    pub bias: [f64; N_CLASSES],
    pub lambda: f64,
    pub iterations: usize,
    pub final_objective: f64,
    pub seed: u64,
    /// Checksum of the feature registry the columns refer to, when known.
    pub registry_checksum: Option<String>,
}

/// Wire form of the model: sparse (class, feature, value) weight triples.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct ModelFile {
    class_order: Vec<char>,
    n_features: usize,
    lambda: f64,
    bias: Vec<f64>,
    weights: Vec<(usize, usize, f64)>,
    iterations: usize,
    final_objective: f64,
    seed: u64,
    registry_checksum: Option<String>,
}

fn class_order() -> Vec<char> {
    EngagementLabel::ALL.iter().map(|l| l.code()).collect()
}

impl From<LogRegModel> for ModelFile {
    fn from(m: LogRegModel) -> Self {
        let mut weights = Vec::new();
        for ((k, j), &v) in m.weights.indexed_iter() {
            if v != 0.0 {
                weights.push((k, j, v));
            }
        }
        ModelFile {
            class_order: class_order(),
            n_features: m.weights.ncols(),
            lambda: m.lambda,
            bias: m.bias.to_vec(),
            weights,
            iterations: m.iterations,
            final_objective: m.final_objective,
            seed: m.seed,
            registry_checksum: m.registry_checksum,
        }
    }
}

impl TryFrom<ModelFile> for LogRegModel {
    type Error = Error;

    fn try_from(f: ModelFile) -> Result<Self> {
        if f.class_order != class_order() {
            return Err(Error::InvalidInput(format!(
                "model file class order {:?} does not match {:?}",
                f.class_order,
                class_order()
            )));
        }
        if f.bias.len() != N_CLASSES {
            return Err(Error::InvalidInput(format!(
                "model file has {} bias terms, expected {N_CLASSES}",
                f.bias.len()
            )));
        }
        let mut weights = Array2::zeros((N_CLASSES, f.n_features));
        for (k, j, v) in f.weights {
            if k >= N_CLASSES || j >= f.n_features {
                return Err(Error::InvalidInput(format!(
                    "model file weight ({k},{j}) out of range"
                )));
            }
            if !v.is_finite() {
                return Err(Error::InvalidInput(format!(
                    "model file weight ({k},{j}) is not finite"
                )));
            }
            weights[(k, j)] = v;
        }
        let mut bias = [0.0; N_CLASSES];
        bias.copy_from_slice(&f.bias);
        Ok(LogRegModel {
            weights,
            bias,
            lambda: f.lambda,
            iterations: f.iterations,
            final_objective: f.final_objective,
            seed: f.seed,
            registry_checksum: f.registry_checksum,
        })
    }
}

/// Affine class scores `Wx + b` for one sparse row.
fn affine_scores(
    weights: &Array2<f64>,
    bias: &[f64; N_CLASSES],
    row: &SparseFeatures,
) -> [f64; N_CLASSES] {
    let mut scores = *bias;
    for (j, v) in row.iter() {
        for (k, score) in scores.iter_mut().enumerate() {
            *score += weights[(k, j)] * v;
        }
    }
    scores
}

/// Numerically stable softmax.
fn softmax(scores: &[f64; N_CLASSES]) -> [f64; N_CLASSES] {
    let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut out = [0.0; N_CLASSES];
    let mut total = 0.0;
    for (o, &s) in out.iter_mut().zip(scores) {
        *o = (s - max).exp();
        total += *o;
    }
    for o in &mut out {
        *o /= total;
    }
    out
}

/// Smooth part of the objective (cross-entropy), without the L1 term.
fn smooth_loss(
    weights: &Array2<f64>,
    bias: &[f64; N_CLASSES],
    x: &SparseMatrix,
    y: &[usize],
    mean_loss: bool,
) -> f64 {
    let mut total = 0.0;
    for (row, &label) in x.rows.iter().zip(y) {
        let p = softmax(&affine_scores(weights, bias, row));
        total -= p[label].max(f64::MIN_POSITIVE).ln();
    }
    if mean_loss {
        total / x.n_rows() as f64
    } else {
        total
    }
}

fn l1_norm(weights: &Array2<f64>) -> f64 {
    weights.iter().map(|w| w.abs()).sum()
}

/// Objective, smooth data term, and the smooth term's gradient.
#[derive(Debug, Clone)]
pub struct LossGrad {
    /// Full objective: smooth loss + λ·Σ|w| (bias included if configured).
    pub objective: f64,
    /// Cross-entropy part only — differentiable everywhere, so it is what
    /// finite-difference checks compare against.
    pub smooth_loss: f64,
    pub grad_weights: Array2<f64>,
    pub grad_bias: [f64; N_CLASSES],
}

/// Smooth loss plus its exact gradient at `(weights, bias)`.
pub fn loss_and_grad(
    weights: &Array2<f64>,
    bias: &[f64; N_CLASSES],
    x: &SparseMatrix,
    y: &[usize],
    cfg: &TrainConfig,
) -> Result<LossGrad> {
    if x.n_rows() != y.len() {
        return Err(Error::Dimension(format!(
            "{} rows but {} labels",
            x.n_rows(),
            y.len()
        )));
    }
    if x.n_rows() == 0 {
        return Err(Error::InvalidInput("empty training data".into()));
    }
    if weights.dim() != (N_CLASSES, x.n_cols) {
        return Err(Error::Dimension(format!(
            "weights are {:?}, expected ({N_CLASSES}, {})",
            weights.dim(),
            x.n_cols
        )));
    }
    if let Some(&bad) = y.iter().find(|&&c| c >= N_CLASSES) {
        return Err(Error::InvalidInput(format!(
            "class index {bad} out of range"
        )));
    }

    let mut grad_weights = Array2::zeros((N_CLASSES, x.n_cols));
    let mut grad_bias = [0.0; N_CLASSES];
    let mut total = 0.0;
    for (row, &label) in x.rows.iter().zip(y) {
        let p = softmax(&affine_scores(weights, bias, row));
        total -= p[label].max(f64::MIN_POSITIVE).ln();
        for k in 0..N_CLASSES {
            let delta = p[k] - if k == label { 1.0 } else { 0.0 };
            grad_bias[k] += delta;
            for (j, v) in row.iter() {
                grad_weights[(k, j)] += delta * v;
            }
        }
    }
    if cfg.mean_loss {
        let n = x.n_rows() as f64;
        total /= n;
        grad_weights.mapv_inplace(|g| g / n);
        for g in &mut grad_bias {
            *g /= n;
        }
    }
    let mut objective = total + cfg.lambda * l1_norm(weights);
    if cfg.penalize_bias {
        objective += cfg.lambda * bias.iter().map(|b| b.abs()).sum::<f64>();
    }
    Ok(LossGrad {
        objective,
        smooth_loss: total,
        grad_weights,
        grad_bias,
    })
}

fn soft_threshold(v: f64, t: f64) -> f64 {
    if v > t {
        v - t
    } else if v < -t {
        v + t
    } else {
        0.0
    }
}

/// Train by ISTA: gradient step on the smooth loss, soft-threshold for the
/// L1 term, backtracking so the objective never increases.
pub fn train(x: &SparseMatrix, y: &[usize], cfg: &TrainConfig) -> Result<LogRegModel> {
    train_traced(x, y, cfg).map(|(model, _)| model)
}

/// [`train`], also returning the objective value at initialization and after
/// every accepted iteration. The sequence is non-increasing by construction;
/// returning it lets callers verify that instead of trusting it.
pub fn train_traced(
    x: &SparseMatrix,
    y: &[usize],
    cfg: &TrainConfig,
) -> Result<(LogRegModel, Vec<f64>)> {
    cfg.validate()?;
    let distinct: std::collections::BTreeSet<usize> = y.iter().copied().collect();
    if distinct.len() < 2 {
        return Err(Error::InvalidInput(
            "training data contains fewer than two classes".into(),
        ));
    }

    let d = x.n_cols;
    let mut weights: Array2<f64> = Array2::zeros((N_CLASSES, d));
    let mut bias = [0.0f64; N_CLASSES];
    let LossGrad {
        mut objective,
        smooth_loss: mut smooth,
        mut grad_weights,
        mut grad_bias,
    } = loss_and_grad(&weights, &bias, x, y, cfg)?;

    let mut trace = vec![objective];
    let mut iterations = 0;
    let mut step = cfg.initial_step;
    for _ in 0..cfg.max_iterations {
        // Try a slightly larger step each iteration so the size can recover
        // after conservative backtracks.
        step = (step / cfg.backtrack).min(cfg.initial_step);

        let (next_w, next_b, next_smooth) = loop {
            let mut cand_w = Array2::zeros((N_CLASSES, d));
            for ((k, j), &w) in weights.indexed_iter() {
                cand_w[(k, j)] = soft_threshold(w - step * grad_weights[(k, j)], step * cfg.lambda);
            }
            let mut cand_b = [0.0f64; N_CLASSES];
            for k in 0..N_CLASSES {
                let moved = bias[k] - step * grad_bias[k];
                cand_b[k] = if cfg.penalize_bias {
                    soft_threshold(moved, step * cfg.lambda)
                } else {
                    moved
                };
            }

            // Majorization check: the smooth loss must be dominated by its
            // quadratic model at this step size, which guarantees the full
            // objective does not increase.
            let cand_smooth = smooth_loss(&cand_w, &cand_b, x, y, cfg.mean_loss);
            let mut linear = 0.0;
            let mut quadratic = 0.0;
            for ((k, j), &w) in cand_w.indexed_iter() {
                let dw = w - weights[(k, j)];
                linear += grad_weights[(k, j)] * dw;
                quadratic += dw * dw;
            }
            for k in 0..N_CLASSES {
                let db = cand_b[k] - bias[k];
                linear += grad_bias[k] * db;
                quadratic += db * db;
            }
            if cand_smooth <= smooth + linear + quadratic / (2.0 * step) + 1e-12 {
                break (cand_w, cand_b, cand_smooth);
            }
            step *= cfg.backtrack;
            if step < 1e-20 {
                // Numerically stuck; accept the candidate as converged.
                break (cand_w, cand_b, cand_smooth);
            }
        };

        weights = next_w;
        bias = next_b;
        iterations += 1;

        let mut next_objective = next_smooth + cfg.lambda * l1_norm(&weights);
        if cfg.penalize_bias {
            next_objective += cfg.lambda * bias.iter().map(|b| b.abs()).sum::<f64>();
        }
        let improvement = objective - next_objective;
        objective = next_objective;
        trace.push(objective);
        if improvement < cfg.tolerance {
            break;
        }
        let lg = loss_and_grad(&weights, &bias, x, y, cfg)?;
        smooth = lg.smooth_loss;
        grad_weights = lg.grad_weights;
        grad_bias = lg.grad_bias;
    }

    let model = LogRegModel {
        weights,
        bias,
        lambda: cfg.lambda,
        iterations,
        final_objective: objective,
        seed: cfg.seed,
        registry_checksum: None,
    };
    Ok((model, trace))
}

impl LogRegModel {
    pub fn n_features(&self) -> usize {
        self.weights.ncols()
    }

    /// Count of exactly-zero weight entries (bias excluded).
    pub fn n_zero_weights(&self) -> usize {
        self.weights.iter().filter(|&&w| w == 0.0).count()
    }

    /// Row-stochastic class probabilities, one row per input row.
    pub fn predict_proba(&self, x: &SparseMatrix) -> Result<Array2<f64>> {
        if x.n_cols != self.n_features() {
            return Err(Error::Dimension(format!(
                "{} feature columns, model has {}",
                x.n_cols,
                self.n_features()
            )));
        }
        let mut out = Array2::zeros((x.n_rows(), N_CLASSES));
        for (i, row) in x.rows.iter().enumerate() {
            let p = softmax(&affine_scores(&self.weights, &self.bias, row));
            for (k, &pk) in p.iter().enumerate() {
                out[(i, k)] = pk;
            }
        }
        Ok(out)
    }

    /// Argmax class per row; exact ties go to the earlier class in the
    /// fixed (F, C, R, A) order.
    pub fn predict(&self, x: &SparseMatrix) -> Result<Vec<usize>> {
        let proba = self.predict_proba(x)?;
        Ok(proba
            .rows()
            .into_iter()
            .map(|row| {
                let mut best = 0;
                for k in 1..N_CLASSES {
                    if row[k] > row[best] {
                        best = k;
                    }
                }
                best
            })
            .collect())
    }

    pub fn predict_labels(&self, x: &SparseMatrix) -> Result<Vec<EngagementLabel>> {
        Ok(self
            .predict(x)?
            .into_iter()
            .map(|k| EngagementLabel::from_class_index(k).expect("class index < 4"))
            .collect())
    }
}
