//! N-gram features: 1-, 2-, and 3-gram columns weighted by TF-IDF, plus
//! string-similarity features between adjacent user utterances.
//!
//! TF-IDF uses the smoothed inverse document frequency
//! `idf = ln((N+1)/(df+1)) + 1` over the training fold's slot texts, raw
//! term counts, and no vector normalization. Grams seen in fewer than two
//! training documents are dropped. Vocabularies are per slot by default; a
//! flag pools one shared vocabulary across slots.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::features::registry::{FeatureGroup, FeatureRegistry, RegistryBuilder, SparseFeatures};
use crate::features::similarity::{jaccard_of_slices, normalized_edit_distance};
use crate::features::tokenize::{ngrams, tokenize};
use crate::features::window::{ContextSetting, ContextWindow, Slot};

/// Smallest document frequency a gram needs to earn a column.
pub const MIN_DOCUMENT_FREQUENCY: usize = 2;

fn grams_of(text: &str) -> Vec<String> {
    let tokens = tokenize(text);
    let mut all = Vec::new();
    for n in 1..=3 {
        all.extend(ngrams(&tokens, n));
    }
    all
}

fn idf(n_docs: usize, df: usize) -> f64 {
    ((n_docs as f64 + 1.0) / (df as f64 + 1.0)).ln() + 1.0
}

/// Fitted TF-IDF n-gram extractor.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NgramExtractor {
    setting: ContextSetting,
    with_similarity: bool,
    shared_vocab: bool,
    /// Per-slot gram → idf weight.
    weights: BTreeMap<Slot, BTreeMap<String, f64>>,
}

impl NgramExtractor {
    pub fn fit(
        windows: &[&ContextWindow],
        setting: ContextSetting,
        with_similarity: bool,
        shared_vocab: bool,
    ) -> Self {
        // Document frequency per slot: each (window, slot) text is one doc.
        let mut df_by_slot: BTreeMap<Slot, BTreeMap<String, usize>> = BTreeMap::new();
        let mut docs_by_slot: BTreeMap<Slot, usize> = BTreeMap::new();
        for w in windows {
            for (slot, slot_text) in w.in_scope_slots() {
                let Some(st) = slot_text else { continue };
                *docs_by_slot.entry(slot).or_insert(0) += 1;
                let distinct: BTreeSet<String> = grams_of(&st.text).into_iter().collect();
                let df = df_by_slot.entry(slot).or_default();
                for gram in distinct {
                    *df.entry(gram).or_insert(0) += 1;
                }
            }
        }

        let weights = if shared_vocab {
            // Pool document counts across slots, then give every in-scope
            // slot the same vocabulary.
            let n_docs: usize = docs_by_slot.values().sum();
            let mut pooled: BTreeMap<String, usize> = BTreeMap::new();
            for df in df_by_slot.values() {
                for (gram, count) in df {
                    *pooled.entry(gram.clone()).or_insert(0) += count;
                }
            }
            let shared: BTreeMap<String, f64> = pooled
                .into_iter()
                .filter(|&(_, df)| df >= MIN_DOCUMENT_FREQUENCY)
                .map(|(gram, df)| (gram, idf(n_docs, df)))
                .collect();
            setting
                .slots()
                .iter()
                .map(|&slot| (slot, shared.clone()))
                .collect()
        } else {
            df_by_slot
                .into_iter()
                .map(|(slot, df)| {
                    let n_docs = docs_by_slot[&slot];
                    let weights: BTreeMap<String, f64> = df
                        .into_iter()
                        .filter(|&(_, df)| df >= MIN_DOCUMENT_FREQUENCY)
                        .map(|(gram, df)| (gram, idf(n_docs, df)))
                        .collect();
                    (slot, weights)
                })
                .collect()
        };

        NgramExtractor {
            setting,
            with_similarity,
            shared_vocab,
            weights,
        }
    }

    pub fn register(&self, b: &mut RegistryBuilder) -> Result<()> {
        const G: FeatureGroup = FeatureGroup::Ngram;
        for (slot, weights) in &self.weights {
            for gram in weights.keys() {
                b.add(G, *slot, gram.clone(), false)?;
            }
        }
        if self.with_similarity {
            for &slot in self.setting.similarity_slots() {
                b.add(G, slot, "edit_distance", true)?;
                b.add(G, slot, "jaccard_similarity", true)?;
            }
        }
        Ok(())
    }

    pub fn emit(
        &self,
        w: &ContextWindow,
        reg: &FeatureRegistry,
        out: &mut SparseFeatures,
    ) -> Result<()> {
        const G: FeatureGroup = FeatureGroup::Ngram;
        for (slot, slot_text) in w.in_scope_slots() {
            let Some(st) = slot_text else { continue };
            let Some(weights) = self.weights.get(&slot) else { continue };
            let mut counts: HashMap<String, usize> = HashMap::new();
            for gram in grams_of(&st.text) {
                *counts.entry(gram).or_insert(0) += 1;
            }
            for (gram, count) in counts {
                let Some(&idf) = weights.get(&gram) else { continue };
                if let Some(idx) = reg.index_of(G, slot, &gram) {
                    out.push(idx, count as f64 * idf);
                }
            }
        }
        if self.with_similarity {
            let cur_tokens = tokenize(&w.user_cur.text);
            for &slot in self.setting.similarity_slots() {
                let Some(adjacent) = w.slot(slot) else { continue };
                if let Some(idx) = reg.index_of(G, slot, "edit_distance") {
                    out.push(idx, normalized_edit_distance(&w.user_cur.text, &adjacent.text));
                }
                if let Some(idx) = reg.index_of(G, slot, "jaccard_similarity") {
                    out.push(idx, jaccard_of_slices(&cur_tokens, &tokenize(&adjacent.text)));
                }
            }
        }
        Ok(())
    }
}
