//! Utterance-level user-engagement analysis for intelligent-assistant
//! dialogue logs.
//!
//! The crate has three layers:
//!
//! * **Metrics** — segment labeled sessions into tasks ([`dialogue`]) and
//!   score them ([`metrics`]): success rate, reformulation rate, fatigue,
//!   efficiency, and an overall engagement score per session or corpus.
//! * **Prediction** — featurize each labeled user utterance from its
//!   dialogue context ([`features`]) and train an L1-regularized multinomial
//!   logistic regression ([`learn`]) to predict its engagement status.
//! * **Evaluation** — repeated stratified cross-validation with baselines,
//!   paired significance tests, feature-importance and failure reports
//!   ([`eval`]), plus run manifests for reproducibility ([`manifest`]).
//!
//! The `engage` binary exposes all of it as a CLI; see the crate README.

pub mod checksum;
pub mod cli;
pub mod dialogue;
pub mod error;
pub mod eval;
pub mod features;
pub mod ingest;
pub mod learn;
pub mod manifest;
pub mod metrics;

#[cfg(test)]
pub(crate) mod testutil;

pub use error::{Error, Result};
