//! Feature extraction for engagement-status prediction.
//!
//! An utterance is featurized from a *context window* around it (the target
//! user utterance plus up to four neighbouring utterances, chosen by a
//! [`ContextSetting`]). Five feature groups are implemented — basic, phrasal,
//! syntactic, n-gram, and topic — each contributing per-slot columns and,
//! where the setting includes an adjacent user utterance, similarity
//! features between it and the target. Columns are addressed through a
//! [`FeatureRegistry`] frozen at fit time.

pub mod basic;
pub mod ngrams;
pub mod phrasal;
pub mod pipeline;
pub mod registry;
pub mod select;
pub mod similarity;
pub mod syntactic;
pub mod tokenize;
pub mod topics;
pub mod window;

pub use pipeline::{build_rows, FeatureConfig, FittedPipeline, Row, TransformOutput};
pub use registry::{FeatureGroup, FeatureKey, FeatureRegistry, SparseFeatures, SparseMatrix};
pub use tokenize::tokenize;
pub use window::{build_context, ContextSetting, ContextWindow, Slot, SlotText};
