//! Evaluation protocol: cross-validation splits, scoring, baselines,
//! significance testing, model introspection, and the experiment runner
//! that ties them together.

pub mod baselines;
pub mod experiment;
pub mod importance;
pub mod scores;
pub mod splits;
pub mod stats;

pub use baselines::{majority_class, predict_majority, predict_random};
pub use experiment::{
    compare_reports, run_baselines, run_experiment, score_split, BaselineReport, EvalReport,
    ExperimentConfig, GridPoint, GridRow, MethodSummary, SelectionGrid, SignificanceEntry,
    SplitMetric, SplitOutcome, SplitScores,
};
pub use importance::{
    failure_export, feature_importance, FailureCase, FailureExport, ImportanceEntry,
    ImportanceReport,
};
pub use scores::{accuracy, evaluate, macro_f1, ClassScores, Evaluation};
pub use splits::{make_splits, Split, SplitPlan};
pub use stats::{bonferroni, paired_ttest, PairedTTest};
