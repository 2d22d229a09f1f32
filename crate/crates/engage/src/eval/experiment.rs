//! The full evaluation protocol: repeated cross-validation with per-split
//! feature fitting, grid-searched selection, baselines, and paired
//! significance tests.
//!
//! Every split fits its own feature pipeline on the training fold alone —
//! the provenance guard aborts the run if a pipeline fitted elsewhere slips
//! in. Grid points (chi-square k for the discrete feature blocks, PCA k for
//! the topic block) are ranked on the validation fold; only the winning
//! configuration ever touches the test fold. Splits run in parallel but are
//! collected by index, so reports are byte-identical across reruns.

use std::collections::BTreeSet;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::select::{chi_square_select, pca_fit, PcaModel};
use crate::features::syntactic::Sidecar;
use crate::features::{
    FeatureConfig, FeatureGroup, FittedPipeline, Row, SparseFeatures, SparseMatrix,
    TransformOutput,
};
use crate::learn::{train, LogRegModel, TrainConfig, N_CLASSES};

use super::baselines::{predict_majority, predict_random};
use super::importance::{failure_export, FailureExport};
use super::scores::{class_scores_from_confusion, evaluate, ClassScores, Evaluation};
use super::splits::{make_splits, Split};
use super::stats::{bonferroni, paired_ttest};

/// Selection strengths tried on each split's validation fold. An empty axis
/// means "leave that block untouched".
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SelectionGrid {
    /// Numbers of discrete columns to keep by chi-square score.
    pub chi_k: Vec<usize>,
    /// Numbers of principal components to project the topic block onto.
    pub pca_k: Vec<usize>,
}

impl SelectionGrid {
    /// Cross product of the two axes, `None` standing for "untouched".
    pub fn points(&self) -> Vec<GridPoint> {
        let chis: Vec<Option<usize>> = if self.chi_k.is_empty() {
            vec![None]
        } else {
            self.chi_k.iter().map(|&k| Some(k)).collect()
        };
        let pcas: Vec<Option<usize>> = if self.pca_k.is_empty() {
            vec![None]
        } else {
            self.pca_k.iter().map(|&k| Some(k)).collect()
        };
        let mut points = Vec::with_capacity(chis.len() * pcas.len());
        for &chi in &chis {
            for &pca in &pcas {
                points.push(GridPoint { chi_k: chi, pca_k: pca });
            }
        }
        points
    }

    fn validate(&self) -> Result<()> {
        if self.chi_k.iter().chain(&self.pca_k).any(|&k| k == 0) {
            return Err(Error::Config("selection grid values must be ≥ 1".into()));
        }
        Ok(())
    }
}

/// One grid cell: how much of each block to keep.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GridPoint {
    pub chi_k: Option<usize>,
    pub pca_k: Option<usize>,
}

/// Everything one evaluation run needs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub features: FeatureConfig,
    pub train: TrainConfig,
    pub folds: usize,
    pub repeats: usize,
    pub seed: u64,
    pub stratified: bool,
    pub grid: SelectionGrid,
    /// Number of simultaneous tests for the Bonferroni adjustment; defaults
    /// to the number of significance entries the report emits.
    pub bonferroni_m: Option<usize>,
    /// When > 0, sample this many misclassified test rows from the first
    /// split into the report.
    pub failure_sample: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            features: FeatureConfig::default(),
            train: TrainConfig::default(),
            folds: 10,
            repeats: 5,
            seed: 0,
            stratified: true,
            grid: SelectionGrid::default(),
            bonferroni_m: None,
            failure_sample: 0,
        }
    }
}

/// Test-fold scores of one predictor on one split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitScores {
    pub accuracy: f64,
    pub macro_f1: f64,
    pub per_class_f1: [f64; N_CLASSES],
    pub confusion: [[usize; N_CLASSES]; N_CLASSES],
}

impl From<&Evaluation> for SplitScores {
    fn from(eval: &Evaluation) -> Self {
        SplitScores {
            accuracy: eval.accuracy,
            macro_f1: eval.macro_f1,
            per_class_f1: std::array::from_fn(|c| eval.per_class[c].f1),
            confusion: eval.confusion,
        }
    }
}

/// The model's result on one split, including what the grid chose.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitOutcome {
    pub split_index: usize,
    pub chosen: GridPoint,
    /// Validation macro-F1 of the chosen grid point.
    pub validation_macro_f1: f64,
    pub scores: SplitScores,
    /// Columns in the fitted registry before selection.
    pub n_features_total: usize,
    /// Columns the model was actually trained on.
    pub n_features_used: usize,
    pub nonzero_weights: usize,
    /// Windows whose syntactic features were skipped across the three folds.
    pub syntactic_skips: usize,
}

/// Validation score of one grid point on one split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridRow {
    pub split_index: usize,
    pub point: GridPoint,
    pub validation_macro_f1: f64,
}

/// Aggregate of one predictor over all splits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub name: String,
    pub per_split_accuracy: Vec<f64>,
    pub per_split_macro_f1: Vec<f64>,
    pub per_split_class_f1: Vec<[f64; N_CLASSES]>,
    pub mean_accuracy: f64,
    pub std_accuracy: f64,
    pub mean_macro_f1: f64,
    pub std_macro_f1: f64,
    /// Precision/recall/F1 per class over the pooled confusion counts.
    pub per_class: [ClassScores; N_CLASSES],
    /// Elementwise sum of the per-split confusion matrices.
    pub confusion: [[usize; N_CLASSES]; N_CLASSES],
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn sample_std(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64).sqrt()
}

impl MethodSummary {
    fn from_scores(name: &str, scores: &[SplitScores]) -> Self {
        let per_split_accuracy: Vec<f64> = scores.iter().map(|s| s.accuracy).collect();
        let per_split_macro_f1: Vec<f64> = scores.iter().map(|s| s.macro_f1).collect();
        let per_split_class_f1: Vec<[f64; N_CLASSES]> =
            scores.iter().map(|s| s.per_class_f1).collect();
        let mut confusion = [[0usize; N_CLASSES]; N_CLASSES];
        for s in scores {
            for (pooled_row, row) in confusion.iter_mut().zip(&s.confusion) {
                for (cell, v) in pooled_row.iter_mut().zip(row) {
                    *cell += v;
                }
            }
        }
        MethodSummary {
            name: name.to_string(),
            mean_accuracy: mean(&per_split_accuracy),
            std_accuracy: sample_std(&per_split_accuracy),
            mean_macro_f1: mean(&per_split_macro_f1),
            std_macro_f1: sample_std(&per_split_macro_f1),
            per_split_accuracy,
            per_split_macro_f1,
            per_split_class_f1,
            per_class: class_scores_from_confusion(&confusion),
            confusion,
        }
    }
}

/// One paired significance test between two predictors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignificanceEntry {
    pub comparison: String,
    pub metric: String,
    pub mean_diff: f64,
    pub t: f64,
    pub p: f64,
    pub p_adjusted: f64,
    pub m: usize,
    pub degenerate: bool,
}

/// The complete evaluation output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// Checksum of the serialized configuration the run used.
    pub config_fingerprint: String,
    pub n_rows: usize,
    pub folds: usize,
    pub repeats: usize,
    pub seed: u64,
    pub class_order: Vec<char>,
    pub warnings: Vec<String>,
    pub splits: Vec<SplitOutcome>,
    /// Every (split, grid point) validation score.
    pub grid_rows: Vec<GridRow>,
    pub model: MethodSummary,
    pub majority: MethodSummary,
    pub random: MethodSummary,
    pub significance: Vec<SignificanceEntry>,
    pub failures: Option<FailureExport>,
}

/// Column selection fitted on one training fold for one grid point.
struct FoldSelection {
    /// Global registry columns kept from the discrete blocks.
    kept_discrete: Vec<usize>,
    /// Global registry columns of the topic block.
    topic_cols: Vec<usize>,
    pca: Option<PcaModel>,
}

impl FoldSelection {
    fn fit(
        train: &TransformOutput,
        point: GridPoint,
        discrete_cols: &[usize],
        topic_cols: &[usize],
    ) -> Result<Self> {
        let kept_discrete = match point.chi_k {
            Some(k) if !discrete_cols.is_empty() => {
                let sub = train.matrix.select_columns(discrete_cols);
                let k_eff = k.min(discrete_cols.len());
                let kept_local = chi_square_select(&sub, &train.labels, N_CLASSES, k_eff)?;
                kept_local.into_iter().map(|j| discrete_cols[j]).collect()
            }
            _ => discrete_cols.to_vec(),
        };
        let n_train = train.matrix.rows.len();
        let pca = match point.pca_k {
            Some(k) if !topic_cols.is_empty() && n_train >= 2 => {
                let dense = train.matrix.select_columns(topic_cols).to_dense();
                let k_eff = k.min(topic_cols.len()).min(n_train);
                Some(pca_fit(&dense, k_eff)?)
            }
            _ => None,
        };
        Ok(FoldSelection {
            kept_discrete,
            topic_cols: topic_cols.to_vec(),
            pca,
        })
    }

    fn n_output_columns(&self) -> usize {
        let topic_out = match &self.pca {
            Some(p) => p.n_components(),
            None => self.topic_cols.len(),
        };
        self.kept_discrete.len() + topic_out
    }

    /// Assemble the design matrix: kept discrete columns followed by the
    /// (possibly projected) topic block.
    fn apply(&self, x: &SparseMatrix) -> Result<SparseMatrix> {
        let n_disc = self.kept_discrete.len();
        let disc = x.select_columns(&self.kept_discrete);
        let mut out = SparseMatrix::new(self.n_output_columns());
        match &self.pca {
            None => {
                let topic = x.select_columns(&self.topic_cols);
                for r in 0..x.rows.len() {
                    let mut feats = SparseFeatures::new();
                    for (j, v) in disc.rows[r].iter() {
                        feats.push(j, v);
                    }
                    for (j, v) in topic.rows[r].iter() {
                        feats.push(n_disc + j, v);
                    }
                    out.push_row(feats)?;
                }
            }
            Some(pca) => {
                let dense = x.select_columns(&self.topic_cols).to_dense();
                let projected = pca.transform(&dense)?;
                for r in 0..x.rows.len() {
                    let mut feats = SparseFeatures::new();
                    for (j, v) in disc.rows[r].iter() {
                        feats.push(j, v);
                    }
                    for c in 0..projected.ncols() {
                        let v = projected[[r, c]];
                        if v != 0.0 {
                            feats.push(n_disc + c, v);
                        }
                    }
                    out.push_row(feats)?;
                }
            }
        }
        Ok(out)
    }
}

/// Deterministic per-split stream for the random baseline.
fn mix_seed(seed: u64, index: u64) -> u64 {
    let mut z = seed ^ index.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// What one split contributes to the report.
#[derive(Debug)]
pub struct SplitEvaluation {
    pub outcome: SplitOutcome,
    pub majority: SplitScores,
    pub random: SplitScores,
    pub grid_rows: Vec<GridRow>,
    pub failures: Option<FailureExport>,
}

/// Fit the pipeline on this split's training fold and score it.
fn evaluate_split(
    rows: &[Row],
    split: &Split,
    split_index: usize,
    cfg: &ExperimentConfig,
    sidecar: Option<&Sidecar>,
) -> Result<SplitEvaluation> {
    let pipeline = FittedPipeline::fit(rows, &split.train, &cfg.features, sidecar)?;
    score_split(&pipeline, rows, split, split_index, cfg, sidecar)
}

/// Score an already-fitted pipeline on one split.
///
/// Public so the provenance guard is exercised end to end: passing a
/// pipeline fitted on anything other than `split.train` returns
/// [`Error::Leakage`] before any fold is touched.
pub fn score_split(
    pipeline: &FittedPipeline,
    rows: &[Row],
    split: &Split,
    split_index: usize,
    cfg: &ExperimentConfig,
    sidecar: Option<&Sidecar>,
) -> Result<SplitEvaluation> {
    pipeline.assert_fitted_on(&split.train)?;

    let registry = pipeline.registry();
    let topic_cols = registry.group_columns(FeatureGroup::Topic);
    let topic_set: BTreeSet<usize> = topic_cols.iter().copied().collect();
    let discrete_cols: Vec<usize> =
        (0..registry.len()).filter(|c| !topic_set.contains(c)).collect();

    let train_out = pipeline.transform(rows, &split.train, sidecar)?;
    let val_out = pipeline.transform(rows, &split.validation, sidecar)?;

    let mut grid_rows = Vec::new();
    let mut best: Option<(f64, FoldSelection, LogRegModel, GridPoint)> = None;
    for point in cfg.grid.points() {
        let selection = FoldSelection::fit(&train_out, point, &discrete_cols, &topic_cols)?;
        let x_train = selection.apply(&train_out.matrix)?;
        let model = train(&x_train, &train_out.labels, &cfg.train)?;
        let x_val = selection.apply(&val_out.matrix)?;
        let val_pred = model.predict(&x_val)?;
        let val_f1 = evaluate(&val_out.labels, &val_pred)?.macro_f1;
        grid_rows.push(GridRow {
            split_index,
            point,
            validation_macro_f1: val_f1,
        });
        // Strict comparison keeps the earliest grid point on ties.
        if best.as_ref().is_none_or(|(f, ..)| val_f1 > *f) {
            best = Some((val_f1, selection, model, point));
        }
    }
    let (validation_macro_f1, selection, model, chosen) =
        best.ok_or_else(|| Error::Internal("empty selection grid".into()))?;

    // The test fold is touched exactly once, with the chosen configuration.
    let test_out = pipeline.transform(rows, &split.test, sidecar)?;
    let x_test = selection.apply(&test_out.matrix)?;
    let probabilities = model.predict_proba(&x_test)?;
    let pred = model.predict(&x_test)?;
    let eval = evaluate(&test_out.labels, &pred)?;

    let majority_pred = predict_majority(&train_out.labels, test_out.labels.len())?;
    let majority = SplitScores::from(&evaluate(&test_out.labels, &majority_pred)?);
    let random_pred = predict_random(
        test_out.labels.len(),
        mix_seed(cfg.seed, split_index as u64 + 1),
    );
    let random = SplitScores::from(&evaluate(&test_out.labels, &random_pred)?);

    let failures = if cfg.failure_sample > 0 && split_index == 0 {
        Some(failure_export(
            rows,
            &split.test,
            &test_out.labels,
            &pred,
            &probabilities,
            cfg.failure_sample,
            cfg.seed,
        )?)
    } else {
        None
    };

    Ok(SplitEvaluation {
        outcome: SplitOutcome {
            split_index,
            chosen,
            validation_macro_f1,
            scores: SplitScores::from(&eval),
            n_features_total: registry.len(),
            n_features_used: selection.n_output_columns(),
            nonzero_weights: model.n_features() * N_CLASSES - model.n_zero_weights(),
            syntactic_skips: train_out.syntactic_skips
                + val_out.syntactic_skips
                + test_out.syntactic_skips,
        },
        majority,
        random,
        grid_rows,
        failures,
    })
}

/// Run the whole protocol over the labeled rows.
pub fn run_experiment(
    rows: &[Row],
    cfg: &ExperimentConfig,
    sidecar: Option<&Sidecar>,
) -> Result<EvalReport> {
    cfg.grid.validate()?;
    let labels: Vec<usize> = rows.iter().map(|r| r.label.class_index()).collect();
    let plan = make_splits(&labels, cfg.folds, cfg.repeats, cfg.seed, cfg.stratified)?;

    let evaluations: Vec<SplitEvaluation> = plan
        .splits
        .par_iter()
        .enumerate()
        .map(|(i, split)| evaluate_split(rows, split, i, cfg, sidecar))
        .collect::<Result<Vec<_>>>()?;

    let model_scores: Vec<SplitScores> =
        evaluations.iter().map(|e| e.outcome.scores.clone()).collect();
    let majority_scores: Vec<SplitScores> =
        evaluations.iter().map(|e| e.majority.clone()).collect();
    let random_scores: Vec<SplitScores> =
        evaluations.iter().map(|e| e.random.clone()).collect();

    let model = MethodSummary::from_scores("model", &model_scores);
    let majority = MethodSummary::from_scores("majority", &majority_scores);
    let random = MethodSummary::from_scores("random", &random_scores);

    // Paired macro-F1 tests of the model against each baseline; m defaults
    // to the number of tests this report performs.
    let comparisons = [("majority", &majority), ("random", &random)];
    let m = cfg.bonferroni_m.unwrap_or(comparisons.len());
    let mut significance = Vec::new();
    for (name, baseline) in comparisons {
        let test = paired_ttest(&model.per_split_macro_f1, &baseline.per_split_macro_f1)?;
        significance.push(SignificanceEntry {
            comparison: format!("model vs {name}"),
            metric: "macro_f1".to_string(),
            mean_diff: test.mean_diff,
            t: test.t,
            p: test.p,
            p_adjusted: bonferroni(test.p, m),
            m,
            degenerate: test.degenerate,
        });
    }

    let config_fingerprint = crate::checksum::sha256_hex_of(
        serde_json::to_string(cfg)
            .map_err(|e| Error::Internal(format!("config serialization: {e}")))?
            .as_bytes(),
    );

    let mut splits = Vec::with_capacity(evaluations.len());
    let mut grid_rows = Vec::new();
    let mut failures = None;
    for e in evaluations {
        splits.push(e.outcome);
        grid_rows.extend(e.grid_rows);
        if e.failures.is_some() {
            failures = e.failures;
        }
    }

    Ok(EvalReport {
        config_fingerprint,
        n_rows: rows.len(),
        folds: cfg.folds,
        repeats: cfg.repeats,
        seed: cfg.seed,
        class_order: crate::dialogue::EngagementLabel::ALL
            .iter()
            .map(|l| l.code())
            .collect(),
        warnings: plan.warnings,
        splits,
        grid_rows,
        model,
        majority,
        random,
        significance,
        failures,
    })
}

/// Result of the baselines-only protocol: the two reference methods and
/// nothing else, shaped for a two-row summary table.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BaselineReport {
    pub config_fingerprint: String,
    pub n_rows: usize,
    pub folds: usize,
    pub repeats: usize,
    pub seed: u64,
    pub class_order: Vec<char>,
    pub warnings: Vec<String>,
    pub majority: MethodSummary,
    pub random: MethodSummary,
}

/// Run only the majority and random baselines over the protocol's splits —
/// no feature pipeline, no model. Splits and baseline seeds match
/// [`run_experiment`] exactly, so the baseline summaries of both runs agree.
pub fn run_baselines(rows: &[Row], cfg: &ExperimentConfig) -> Result<BaselineReport> {
    let labels: Vec<usize> = rows.iter().map(|r| r.label.class_index()).collect();
    let plan = make_splits(&labels, cfg.folds, cfg.repeats, cfg.seed, cfg.stratified)?;

    let mut majority_scores = Vec::with_capacity(plan.splits.len());
    let mut random_scores = Vec::with_capacity(plan.splits.len());
    for (i, split) in plan.splits.iter().enumerate() {
        let train_labels: Vec<usize> = split.train.iter().map(|&r| labels[r]).collect();
        let test_labels: Vec<usize> = split.test.iter().map(|&r| labels[r]).collect();
        let majority_pred = predict_majority(&train_labels, test_labels.len())?;
        majority_scores.push(SplitScores::from(&evaluate(&test_labels, &majority_pred)?));
        let random_pred = predict_random(test_labels.len(), mix_seed(cfg.seed, i as u64 + 1));
        random_scores.push(SplitScores::from(&evaluate(&test_labels, &random_pred)?));
    }

    let config_fingerprint = crate::checksum::sha256_hex_of(
        serde_json::to_string(cfg)
            .map_err(|e| Error::Internal(format!("config serialization: {e}")))?
            .as_bytes(),
    );

    Ok(BaselineReport {
        config_fingerprint,
        n_rows: rows.len(),
        folds: cfg.folds,
        repeats: cfg.repeats,
        seed: cfg.seed,
        class_order: crate::dialogue::EngagementLabel::ALL
            .iter()
            .map(|l| l.code())
            .collect(),
        warnings: plan.warnings,
        majority: MethodSummary::from_scores("majority", &majority_scores),
        random: MethodSummary::from_scores("random", &random_scores),
    })
}

/// Which per-split score sequence a comparison pairs on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SplitMetric {
    Accuracy,
    MacroF1,
    /// F1 of one class (0 = F, 1 = C, 2 = R, 3 = A).
    ClassF1(usize),
}

impl SplitMetric {
    pub fn name(self) -> String {
        match self {
            SplitMetric::Accuracy => "accuracy".to_string(),
            SplitMetric::MacroF1 => "macro_f1".to_string(),
            SplitMetric::ClassF1(c) => format!("class_{c}_f1"),
        }
    }

    fn extract(self, summary: &MethodSummary) -> Result<Vec<f64>> {
        match self {
            SplitMetric::Accuracy => Ok(summary.per_split_accuracy.clone()),
            SplitMetric::MacroF1 => Ok(summary.per_split_macro_f1.clone()),
            SplitMetric::ClassF1(c) => {
                if c >= N_CLASSES {
                    return Err(Error::InvalidInput(format!(
                        "class index {c} out of range for {N_CLASSES} classes"
                    )));
                }
                Ok(summary.per_split_class_f1.iter().map(|f| f[c]).collect())
            }
        }
    }
}

/// Paired comparison of two runs' models on the chosen per-split metric.
///
/// Valid only when both reports came from the identical split plan (same
/// seed, fold counts, and corpus size); anything else is rejected because
/// the pairing would be meaningless.
pub fn compare_reports(
    label_a: &str,
    a: &EvalReport,
    label_b: &str,
    b: &EvalReport,
    metric: SplitMetric,
    m: Option<usize>,
) -> Result<SignificanceEntry> {
    if a.folds != b.folds || a.repeats != b.repeats || a.seed != b.seed || a.n_rows != b.n_rows {
        return Err(Error::InvalidInput(format!(
            "paired comparison needs identical split plans: \
             ({} folds × {} repeats, seed {}, {} rows) vs ({} folds × {} repeats, seed {}, {} rows)",
            a.folds, a.repeats, a.seed, a.n_rows, b.folds, b.repeats, b.seed, b.n_rows
        )));
    }
    let scores_a = metric.extract(&a.model)?;
    let scores_b = metric.extract(&b.model)?;
    let test = paired_ttest(&scores_a, &scores_b)?;
    let m = m.unwrap_or(1);
    Ok(SignificanceEntry {
        comparison: format!("{label_a} vs {label_b}"),
        metric: metric.name(),
        mean_diff: test.mean_diff,
        t: test.t,
        p: test.p,
        p_adjusted: bonferroni(test.p, m),
        m,
        degenerate: test.degenerate,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dialogue::{EngagementLabel, Session, Speaker, Utterance};
    use crate::features::{build_rows, ContextSetting};

    /// A synthetic corpus whose user utterances give away their own label:
    /// every engagement class speaks in its own fixed vocabulary.
    fn signal_corpus(n_sessions: usize) -> Vec<Session> {
        let phrases = [
            ("thanks that is perfect", EngagementLabel::Fulfillment),
            ("show me more options please", EngagementLabel::Continuation),
            ("no i said cheap thai food", EngagementLabel::Reformulation),
            ("forget it never mind", EngagementLabel::Abandonment),
        ];
        (0..n_sessions)
            .map(|s| {
                let mut utterances = Vec::new();
                for (i, (text, label)) in phrases.iter().enumerate() {
                    utterances.push(Utterance {
                        index: utterances.len(),
                        speaker: Speaker::User,
                        text: format!("{text} {s}"),
                        timestamp: Some((i as f64) * 20.0),
                        label: Some(*label),
                    });
                    utterances.push(Utterance {
                        index: utterances.len(),
                        speaker: Speaker::System,
                        text: "here are the results".to_string(),
                        timestamp: Some((i as f64) * 20.0 + 10.0),
                        label: None,
                    });
                }
                Session {
                    id: format!("synthetic-{s}"),
                    dataset_id: "synthetic".to_string(),
                    utterances,
                }
            })
            .collect()
    }

    fn fast_config() -> ExperimentConfig {
        let mut features = FeatureConfig::default();
        features.setting = ContextSetting::CurUtt;
        features.groups = [FeatureGroup::Basic, FeatureGroup::Ngram].into_iter().collect();
        let mut train = TrainConfig::default();
        train.lambda = 0.01;
        train.max_iterations = 300;
        train.tolerance = 1e-7;
        ExperimentConfig {
            features,
            train,
            folds: 5,
            repeats: 2,
            seed: 11,
            ..ExperimentConfig::default()
        }
    }

    fn corpus_rows() -> Vec<Row> {
        build_rows(&signal_corpus(15), ContextSetting::CurUtt).unwrap()
    }

    #[test]
    fn separable_corpus_beats_both_baselines() {
        let rows = corpus_rows();
        let report = run_experiment(&rows, &fast_config(), None).unwrap();
        assert_eq!(report.splits.len(), 10);
        assert!(
            report.model.mean_macro_f1 > 0.95,
            "model mean macro-F1 {}",
            report.model.mean_macro_f1
        );
        assert!(report.model.mean_macro_f1 > report.majority.mean_macro_f1);
        assert!(report.model.mean_macro_f1 > report.random.mean_macro_f1);
        // Balanced classes: the majority baseline nails one class per split.
        assert!(report.majority.mean_macro_f1 < 0.2);
        assert_eq!(report.significance.len(), 2);
        for entry in &report.significance {
            assert!(entry.p_adjusted <= 1.0);
            assert!(entry.mean_diff > 0.0);
        }
    }

    #[test]
    fn reports_are_identical_across_reruns() {
        let rows = corpus_rows();
        let a = run_experiment(&rows, &fast_config(), None).unwrap();
        let b = run_experiment(&rows, &fast_config(), None).unwrap();
        let json_a = serde_json::to_string(&a).unwrap();
        let json_b = serde_json::to_string(&b).unwrap();
        assert_eq!(json_a, json_b);
    }

    #[test]
    fn baselines_only_run_agrees_with_the_full_protocol() {
        let rows = corpus_rows();
        let cfg = fast_config();
        let full = run_experiment(&rows, &cfg, None).unwrap();
        let lean = run_baselines(&rows, &cfg).unwrap();
        assert_eq!(lean.n_rows, full.n_rows);
        assert_eq!(
            serde_json::to_string(&lean.majority).unwrap(),
            serde_json::to_string(&full.majority).unwrap()
        );
        assert_eq!(
            serde_json::to_string(&lean.random).unwrap(),
            serde_json::to_string(&full.random).unwrap()
        );
    }

    #[test]
    fn report_means_are_the_arithmetic_mean_of_split_scores() {
        let rows = corpus_rows();
        let report = run_experiment(&rows, &fast_config(), None).unwrap();
        for summary in [&report.model, &report.majority, &report.random] {
            let n = summary.per_split_macro_f1.len() as f64;
            let mean_f1 = summary.per_split_macro_f1.iter().sum::<f64>() / n;
            let mean_acc = summary.per_split_accuracy.iter().sum::<f64>() / n;
            assert!((summary.mean_macro_f1 - mean_f1).abs() < 1e-12);
            assert!((summary.mean_accuracy - mean_acc).abs() < 1e-12);
        }
        // Pooled confusion matches the split count times rows per test fold.
        let total: usize = report.model.confusion.iter().flatten().sum();
        let expected: usize = report.splits.iter().map(|s| {
            s.scores.confusion.iter().flatten().sum::<usize>()
        }).sum();
        assert_eq!(total, expected);
    }

    #[test]
    fn grid_rows_cover_every_point_and_the_choice_wins_validation() {
        let rows = corpus_rows();
        let mut cfg = fast_config();
        cfg.grid.chi_k = vec![2, 64];
        let report = run_experiment(&rows, &cfg, None).unwrap();
        assert_eq!(report.grid_rows.len(), report.splits.len() * 2);
        for outcome in &report.splits {
            let rows_of_split: Vec<&GridRow> = report
                .grid_rows
                .iter()
                .filter(|g| g.split_index == outcome.split_index)
                .collect();
            assert_eq!(rows_of_split.len(), 2);
            let best = rows_of_split
                .iter()
                .map(|g| g.validation_macro_f1)
                .fold(f64::NEG_INFINITY, f64::max);
            assert_eq!(outcome.validation_macro_f1, best);
            let winner = rows_of_split
                .iter()
                .find(|g| g.validation_macro_f1 == best)
                .unwrap();
            // Ties keep the earliest grid point.
            assert_eq!(outcome.chosen, winner.point);
            assert!(outcome.n_features_used <= outcome.n_features_total);
        }
    }

    #[test]
    fn chi_selection_caps_the_design_width() {
        let rows = corpus_rows();
        let mut cfg = fast_config();
        cfg.grid.chi_k = vec![3];
        let report = run_experiment(&rows, &cfg, None).unwrap();
        for outcome in &report.splits {
            assert_eq!(outcome.n_features_used, 3);
        }
    }

    #[test]
    fn leakage_guard_rejects_a_pipeline_fitted_on_everything() {
        let rows = corpus_rows();
        let cfg = fast_config();
        let labels: Vec<usize> = rows.iter().map(|r| r.label.class_index()).collect();
        let plan = make_splits(&labels, cfg.folds, cfg.repeats, cfg.seed, cfg.stratified).unwrap();
        let all: Vec<usize> = (0..rows.len()).collect();
        let tainted = FittedPipeline::fit(&rows, &all, &cfg.features, None).unwrap();
        let err = score_split(&tainted, &rows, &plan.splits[0], 0, &cfg, None).unwrap_err();
        assert!(matches!(err, Error::Leakage(_)), "got {err:?}");
    }

    #[test]
    fn failure_sampling_lands_in_the_report() {
        let rows = corpus_rows();
        let mut cfg = fast_config();
        // Undertrained on purpose so split 0 misclassifies something.
        cfg.train.lambda = 1e6;
        cfg.failure_sample = 2;
        let report = run_experiment(&rows, &cfg, None).unwrap();
        let failures = report.failures.expect("failure export requested");
        assert_eq!(failures.requested, 2);
        assert!(!failures.cases.is_empty());
        assert!(failures.cases.len() <= 2);
    }

    #[test]
    fn compare_reports_pairs_identical_plans_only() {
        let rows = corpus_rows();
        let cfg_a = fast_config();
        let mut cfg_b = fast_config();
        cfg_b.features.groups = [FeatureGroup::Basic].into_iter().collect();
        let a = run_experiment(&rows, &cfg_a, None).unwrap();
        let b = run_experiment(&rows, &cfg_b, None).unwrap();
        let entry =
            compare_reports("full", &a, "basic-only", &b, SplitMetric::MacroF1, None).unwrap();
        assert_eq!(entry.comparison, "full vs basic-only");
        assert_eq!(entry.m, 1);
        assert!((0.0..=1.0).contains(&entry.p));

        let class_entry =
            compare_reports("full", &a, "basic-only", &b, SplitMetric::ClassF1(2), Some(4))
                .unwrap();
        assert_eq!(class_entry.metric, "class_2_f1");
        assert!((class_entry.p_adjusted - bonferroni(class_entry.p, 4)).abs() < 1e-15);

        let mut cfg_c = fast_config();
        cfg_c.seed = 999;
        let c = run_experiment(&rows, &cfg_c, None).unwrap();
        assert!(compare_reports("a", &a, "c", &c, SplitMetric::MacroF1, None).is_err());
    }

    #[test]
    fn selection_grid_enumerates_the_cross_product() {
        let grid = SelectionGrid {
            chi_k: vec![10, 20],
            pca_k: vec![3],
        };
        let points = grid.points();
        assert_eq!(points.len(), 2);
        assert_eq!(points[0], GridPoint { chi_k: Some(10), pca_k: Some(3) });
        assert_eq!(SelectionGrid::default().points(), vec![GridPoint { chi_k: None, pca_k: None }]);
        let bad = SelectionGrid { chi_k: vec![0], pca_k: vec![] };
        assert!(bad.validate().is_err());
    }
}
