//! End-to-end feature pipeline: builds labeled context-window rows from
//! sessions, fits the selected feature groups on a training fold, and
//! transforms any row subset into a sparse design matrix.
//!
//! Fitting records a fingerprint of the training indices; evaluation code
//! asserts against it before reusing a pipeline, so a model fitted outside
//! the current fold is caught as a leakage error instead of silently
//! inflating scores.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::dialogue::{EngagementLabel, Session};
use crate::error::{Error, Result};
use crate::features::basic::{default_stopwords, BasicExtractor, CommandVocab};
use crate::features::ngrams::NgramExtractor;
use crate::features::phrasal::PhrasalExtractor;
use crate::features::registry::{
    FeatureGroup, FeatureRegistry, RegistryBuilder, SparseFeatures, SparseMatrix,
};
use crate::features::syntactic::{Sidecar, SyntacticExtractor};
use crate::features::topics::{LdaConfig, TopicExtractor};
use crate::features::window::{build_context, ContextSetting, ContextWindow};

/// One classifiable example: a labeled user turn with its context window.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Row {
    pub session_id: String,
    /// 0-based position among the session's user utterances.
    pub user_turn: usize,
    pub label: EngagementLabel,
    pub window: ContextWindow,
}

/// All labeled user turns of the given sessions, in session order.
pub fn build_rows(sessions: &[Session], setting: ContextSetting) -> Result<Vec<Row>> {
    let mut rows = Vec::new();
    for session in sessions {
        for (user_turn, utt) in session.user_utterances().enumerate() {
            let Some(label) = utt.label else { continue };
            let window = build_context(session, user_turn, setting)?;
            rows.push(Row {
                session_id: session.id.clone(),
                user_turn,
                label,
                window,
            });
        }
    }
    Ok(rows)
}

/// Which features to extract and how the fold-fitted models are configured.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FeatureConfig {
    pub setting: ContextSetting,
    pub groups: BTreeSet<FeatureGroup>,
    pub with_similarity: bool,
    /// Pool one n-gram vocabulary across slots instead of one per slot.
    pub shared_ngram_vocab: bool,
    pub lda: LdaConfig,
    /// Externally supplied command vocabulary; when absent, the most common
    /// non-stopword tokens of the training fold stand in.
    pub command_vocab: Option<CommandVocab>,
    /// Size of the derived command vocabulary when none is supplied.
    pub auto_command_words: usize,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        FeatureConfig {
            setting: ContextSetting::Next,
            groups: FeatureGroup::ALL.into_iter().collect(),
            with_similarity: true,
            shared_ngram_vocab: false,
            lda: LdaConfig::default(),
            command_vocab: None,
            auto_command_words: 20,
        }
    }
}

/// Record of which training rows a pipeline was fitted on.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FitProvenance {
    pub train_fingerprint: String,
    pub n_train_rows: usize,
}

/// Order-insensitive fingerprint of a row-index set.
pub fn fingerprint_indices(indices: &[usize]) -> String {
    let mut sorted: Vec<usize> = indices.to_vec();
    sorted.sort_unstable();
    sorted.dedup();
    crate::checksum::sha256_hex(|hasher| {
        use sha2::Digest;
        for i in sorted {
            hasher.update(i.to_le_bytes());
        }
    })
}

/// Design matrix plus aligned labels for one row subset.
#[derive(Debug, Clone)]
pub struct TransformOutput {
    pub matrix: SparseMatrix,
    /// Class indices aligned with the matrix rows.
    pub labels: Vec<usize>,
    /// Windows whose syntactic features were skipped for missing sidecar
    /// entries.
    pub syntactic_skips: usize,
}

/// Feature extractors fitted on one training fold, with a frozen registry.
#[derive(Debug, Clone)]
pub struct FittedPipeline {
    config: FeatureConfig,
    registry: FeatureRegistry,
    basic: Option<BasicExtractor>,
    phrasal: Option<PhrasalExtractor>,
    syntactic: Option<SyntacticExtractor>,
    ngrams: Option<NgramExtractor>,
    topics: Option<TopicExtractor>,
    provenance: FitProvenance,
}

/// Most common non-stopword tokens over the training windows' user slots.
fn derive_command_vocab(train_windows: &[&ContextWindow], n: usize) -> CommandVocab {
    let stopwords = default_stopwords();
    let mut counts: BTreeMap<String, usize> = BTreeMap::new();
    for w in train_windows {
        for (slot, slot_text) in w.in_scope_slots() {
            let Some(st) = slot_text else { continue };
            if !slot.is_user() {
                continue;
            }
            for token in crate::features::tokenize(&st.text) {
                if !stopwords.contains(&token) {
                    *counts.entry(token).or_insert(0) += 1;
                }
            }
        }
    }
    let mut ranked: Vec<(String, usize)> = counts.into_iter().collect();
    ranked.sort_by_key(|&(_, count)| std::cmp::Reverse(count));
    CommandVocab::new("derived", ranked.into_iter().take(n).map(|(w, _)| w))
}

impl FittedPipeline {
    /// Fit every configured feature group on the training rows only.
    pub fn fit(
        rows: &[Row],
        train: &[usize],
        config: &FeatureConfig,
        sidecar: Option<&Sidecar>,
    ) -> Result<Self> {
        if train.is_empty() {
            return Err(Error::InvalidInput("empty training fold".into()));
        }
        if let Some(&bad) = train.iter().find(|&&i| i >= rows.len()) {
            return Err(Error::InvalidInput(format!(
                "train index {bad} out of range for {} rows",
                rows.len()
            )));
        }
        for row in rows {
            if row.window.setting != config.setting {
                return Err(Error::Config(format!(
                    "rows built with setting {} but config wants {}",
                    row.window.setting.name(),
                    config.setting.name()
                )));
            }
        }
        let train_windows: Vec<&ContextWindow> =
            train.iter().map(|&i| &rows[i].window).collect();
        let setting = config.setting;
        let sim = config.with_similarity;

        let basic = config.groups.contains(&FeatureGroup::Basic).then(|| {
            let vocab = config
                .command_vocab
                .clone()
                .unwrap_or_else(|| derive_command_vocab(&train_windows, config.auto_command_words));
            BasicExtractor::new(setting, vocab, sim)
        });
        let phrasal = config
            .groups
            .contains(&FeatureGroup::Phrasal)
            .then(|| {
                PhrasalExtractor::fit(&train_windows, default_stopwords(), sidecar, setting, sim)
            });
        // The syntactic group needs external annotations; without a sidecar
        // it stays disabled rather than failing the run.
        let syntactic = match (config.groups.contains(&FeatureGroup::Syntactic), sidecar) {
            (true, Some(sc)) => Some(SyntacticExtractor::fit(&train_windows, sc, setting, sim)),
            _ => None,
        };
        let ngrams = config
            .groups
            .contains(&FeatureGroup::Ngram)
            .then(|| NgramExtractor::fit(&train_windows, setting, sim, config.shared_ngram_vocab));
        let topics = config
            .groups
            .contains(&FeatureGroup::Topic)
            .then(|| TopicExtractor::fit(&train_windows, setting, sim, &config.lda))
            .transpose()?;

        let mut b = RegistryBuilder::new();
        if let Some(e) = &basic {
            e.register(&mut b)?;
        }
        if let Some(e) = &phrasal {
            e.register(&mut b)?;
        }
        if let Some(e) = &syntactic {
            e.register(&mut b)?;
        }
        if let Some(e) = &ngrams {
            e.register(&mut b)?;
        }
        if let Some(e) = &topics {
            e.register(&mut b)?;
        }
        let registry = b.freeze();

        Ok(FittedPipeline {
            config: config.clone(),
            registry,
            basic,
            phrasal,
            syntactic,
            ngrams,
            topics,
            provenance: FitProvenance {
                train_fingerprint: fingerprint_indices(train),
                n_train_rows: train.len(),
            },
        })
    }

    pub fn config(&self) -> &FeatureConfig {
        &self.config
    }

    pub fn registry(&self) -> &FeatureRegistry {
        &self.registry
    }

    pub fn provenance(&self) -> &FitProvenance {
        &self.provenance
    }

    /// Leakage guard: error unless this pipeline was fitted on exactly the
    /// given training rows.
    pub fn assert_fitted_on(&self, train: &[usize]) -> Result<()> {
        let fingerprint = fingerprint_indices(train);
        if fingerprint != self.provenance.train_fingerprint {
            return Err(Error::Leakage(format!(
                "pipeline fitted on fold {} but used with fold {}",
                &self.provenance.train_fingerprint[..8],
                &fingerprint[..8]
            )));
        }
        Ok(())
    }

    /// Featurize the given rows against the frozen registry.
    pub fn transform(
        &self,
        rows: &[Row],
        indices: &[usize],
        sidecar: Option<&Sidecar>,
    ) -> Result<TransformOutput> {
        let mut matrix = SparseMatrix::new(self.registry.len());
        let mut labels = Vec::with_capacity(indices.len());
        let mut syntactic_skips = 0usize;
        for &i in indices {
            let row = rows.get(i).ok_or_else(|| {
                Error::InvalidInput(format!("row index {i} out of range for {} rows", rows.len()))
            })?;
            let mut out = SparseFeatures::new();
            if let Some(e) = &self.basic {
                e.emit(&row.window, &self.registry, &mut out)?;
            }
            if let Some(e) = &self.phrasal {
                e.emit(&row.window, sidecar, &self.registry, &mut out)?;
            }
            if let Some(e) = &self.syntactic {
                e.emit(&row.window, sidecar, &self.registry, &mut out, &mut syntactic_skips)?;
            }
            if let Some(e) = &self.ngrams {
                e.emit(&row.window, &self.registry, &mut out)?;
            }
            if let Some(e) = &self.topics {
                e.emit(&row.window, &self.registry, &mut out)?;
            }
            matrix.push_row(out)?;
            labels.push(row.label.class_index());
        }
        Ok(TransformOutput {
            matrix,
            labels,
            syntactic_skips,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::window::Slot;
    use crate::testutil::restaurant_session;

    fn discrete_config(groups: &[FeatureGroup]) -> FeatureConfig {
        FeatureConfig {
            setting: ContextSetting::Next,
            groups: groups.iter().copied().collect(),
            with_similarity: true,
            shared_ngram_vocab: false,
            lda: LdaConfig {
                n_topics: 3,
                alpha: Some(0.5),
                beta: 0.01,
                burn_in: 50,
                infer_sweeps: 20,
                seed: 5,
            },
            command_vocab: None,
            auto_command_words: 5,
        }
    }

    #[test]
    fn build_rows_collects_labeled_turns_in_order() {
        let rows = build_rows(&[restaurant_session()], ContextSetting::Next).unwrap();
        assert_eq!(rows.len(), 7);
        let labels: String = rows.iter().map(|r| r.label.code()).collect();
        assert_eq!(labels, "RCFFFRA");
        assert_eq!(rows[0].user_turn, 0);
        assert_eq!(rows[6].user_turn, 6);
        assert!(rows.iter().all(|r| r.session_id == "restaurant-1"));
    }

    #[test]
    fn transform_shape_and_label_alignment() {
        let rows = build_rows(&[restaurant_session()], ContextSetting::Next).unwrap();
        let train: Vec<usize> = (0..rows.len()).collect();
        let p = FittedPipeline::fit(&rows, &train, &discrete_config(&[FeatureGroup::Basic]), None)
            .unwrap();
        let out = p.transform(&rows, &train, None).unwrap();
        assert_eq!(out.matrix.n_rows(), 7);
        assert_eq!(out.matrix.n_cols, p.registry().len());
        assert_eq!(out.labels.len(), 7);
        assert_eq!(out.labels[0], EngagementLabel::Reformulation.class_index());
        assert_eq!(out.syntactic_skips, 0);
    }

    #[test]
    fn group_blocks_concatenate() {
        // A pipeline fitted with {Basic} must produce exactly the Basic
        // block of a {Basic, Ngram} pipeline fitted on the same fold.
        let rows = build_rows(&[restaurant_session()], ContextSetting::Next).unwrap();
        let train: Vec<usize> = (0..rows.len()).collect();
        let basic_only =
            FittedPipeline::fit(&rows, &train, &discrete_config(&[FeatureGroup::Basic]), None)
                .unwrap();
        let combined = FittedPipeline::fit(
            &rows,
            &train,
            &discrete_config(&[FeatureGroup::Basic, FeatureGroup::Ngram]),
            None,
        )
        .unwrap();
        let basic_cols = combined.registry().group_columns(FeatureGroup::Basic);
        let ngram_cols = combined.registry().group_columns(FeatureGroup::Ngram);
        assert_eq!(basic_cols.len() + ngram_cols.len(), combined.registry().len());
        assert_eq!(basic_cols.len(), basic_only.registry().len());

        let a = basic_only.transform(&rows, &train, None).unwrap();
        let b = combined.transform(&rows, &train, None).unwrap();
        assert_eq!(b.matrix.select_columns(&basic_cols), a.matrix);
    }

    #[test]
    fn extraction_ignores_labels() {
        let rows = build_rows(&[restaurant_session()], ContextSetting::Next).unwrap();
        let mut permuted = rows.clone();
        let n = permuted.len();
        for i in 0..n {
            permuted[i].label = rows[(i + 3) % n].label;
        }
        let train: Vec<usize> = (0..n).collect();
        let cfg = discrete_config(&[FeatureGroup::Basic, FeatureGroup::Phrasal, FeatureGroup::Ngram]);
        let p1 = FittedPipeline::fit(&rows, &train, &cfg, None).unwrap();
        let p2 = FittedPipeline::fit(&permuted, &train, &cfg, None).unwrap();
        assert_eq!(
            p1.transform(&rows, &train, None).unwrap().matrix,
            p2.transform(&permuted, &train, None).unwrap().matrix
        );
    }

    #[test]
    fn leakage_guard_fingerprints_the_training_fold() {
        let rows = build_rows(&[restaurant_session()], ContextSetting::Next).unwrap();
        let cfg = discrete_config(&[FeatureGroup::Basic]);
        let p = FittedPipeline::fit(&rows, &[0, 1, 2, 3], &cfg, None).unwrap();
        p.assert_fitted_on(&[0, 1, 2, 3]).unwrap();
        // Order must not matter.
        p.assert_fitted_on(&[3, 1, 0, 2]).unwrap();
        let err = p.assert_fitted_on(&[0, 1, 2, 3, 4]).unwrap_err();
        assert!(matches!(err, Error::Leakage(_)));
    }

    #[test]
    fn unseen_vocabulary_stays_out_of_train_columns() {
        // Fit on the first four rows only; a gram unique to later rows gets
        // no column, so transforming those rows still type-checks against
        // the frozen registry.
        let rows = build_rows(&[restaurant_session()], ContextSetting::Next).unwrap();
        let cfg = discrete_config(&[FeatureGroup::Ngram]);
        let p = FittedPipeline::fit(&rows, &[0, 1, 2, 3], &cfg, None).unwrap();
        let held_out = p.transform(&rows, &[4, 5, 6], None).unwrap();
        assert_eq!(held_out.matrix.n_rows(), 3);
        assert_eq!(held_out.matrix.n_cols, p.registry().len());
    }

    #[test]
    fn similarity_flag_strips_similarity_columns() {
        let rows = build_rows(&[restaurant_session()], ContextSetting::Next).unwrap();
        let train: Vec<usize> = (0..rows.len()).collect();
        let mut cfg =
            discrete_config(&[FeatureGroup::Basic, FeatureGroup::Phrasal, FeatureGroup::Ngram]);
        cfg.with_similarity = false;
        let p = FittedPipeline::fit(&rows, &train, &cfg, None).unwrap();
        assert!(p.registry().keys().iter().all(|k| !k.similarity));
    }

    #[test]
    fn derived_command_vocab_comes_from_user_slots() {
        let rows = build_rows(&[restaurant_session()], ContextSetting::Next).unwrap();
        let train: Vec<usize> = (0..rows.len()).collect();
        let p = FittedPipeline::fit(&rows, &train, &discrete_config(&[FeatureGroup::Basic]), None)
            .unwrap();
        // "postcode" is said twice by the user; "wok" only by the system.
        assert!(p
            .registry()
            .index_of(FeatureGroup::Basic, Slot::UserCur, "command_word=postcode")
            .is_some());
        assert!(p
            .registry()
            .index_of(FeatureGroup::Basic, Slot::UserCur, "command_word=wok")
            .is_none());
    }

    #[test]
    fn topic_group_round_trips_through_the_pipeline() {
        let rows = build_rows(&[restaurant_session()], ContextSetting::Next).unwrap();
        let train: Vec<usize> = (0..rows.len()).collect();
        let p = FittedPipeline::fit(&rows, &train, &discrete_config(&[FeatureGroup::Topic]), None)
            .unwrap();
        let out = p.transform(&rows, &train, None).unwrap();
        // Each present slot contributes a dense 3-topic distribution.
        let cur_topics: Vec<usize> = (1..=3)
            .map(|t| {
                p.registry()
                    .index_of(FeatureGroup::Topic, Slot::UserCur, &format!("topic_{t}"))
                    .unwrap()
            })
            .collect();
        for row in &out.matrix.rows {
            let total: f64 = cur_topics.iter().map(|&c| row.get(c)).sum();
            assert!((total - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn fit_rejects_mismatched_settings_and_bad_indices() {
        let rows = build_rows(&[restaurant_session()], ContextSetting::Next).unwrap();
        let cfg = FeatureConfig {
            setting: ContextSetting::Prev,
            ..discrete_config(&[FeatureGroup::Basic])
        };
        assert!(FittedPipeline::fit(&rows, &[0], &cfg, None).is_err());
        let cfg = discrete_config(&[FeatureGroup::Basic]);
        assert!(FittedPipeline::fit(&rows, &[], &cfg, None).is_err());
        assert!(FittedPipeline::fit(&rows, &[99], &cfg, None).is_err());
    }
}
