//! Phrasal features: noun-phrase and entity one-hots plus repetition-based
//! similarity features.
//!
//! Without a parser, phrases and entities come from a heuristic chunker:
//! noun phrases are maximal runs of non-stopword tokens; entities are runs
//! of capitalized-in-raw-text or digit/time chunks. When a sidecar entry
//! supplies `noun_phrases`/`entities` arrays for an utterance those are used
//! verbatim instead, which allows importing externally parsed annotations.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::features::registry::{FeatureGroup, FeatureRegistry, RegistryBuilder, SparseFeatures};
use crate::features::similarity::jaccard;
use crate::features::syntactic::Sidecar;
use crate::features::tokenize::tokenize;
use crate::features::window::{ContextSetting, ContextWindow, Slot};

/// Noun phrases of a text: maximal contiguous runs of non-stopword tokens.
pub fn noun_phrases(text: &str, stopwords: &BTreeSet<String>) -> BTreeSet<String> {
    let mut phrases = BTreeSet::new();
    let mut run: Vec<String> = Vec::new();
    for token in tokenize(text) {
        if stopwords.contains(&token) {
            if !run.is_empty() {
                phrases.insert(run.join(" "));
                run.clear();
            }
        } else {
            run.push(token);
        }
    }
    if !run.is_empty() {
        phrases.insert(run.join(" "));
    }
    phrases
}

/// True for whitespace chunks that look like numbers or clock times
/// ("191", "8pm", "10:30", "3.5").
fn is_digit_time_chunk(chunk: &str) -> bool {
    let mut chars = chunk.chars().peekable();
    let mut saw_digit = false;
    while let Some(&c) = chars.peek() {
        if c.is_ascii_digit() {
            saw_digit = true;
            chars.next();
        } else if matches!(c, ':' | '.' | '/') && saw_digit {
            chars.next();
            if !chars.peek().is_some_and(|n| n.is_ascii_digit()) {
                return false;
            }
        } else {
            break;
        }
    }
    if !saw_digit {
        return false;
    }
    let rest: String = chars.collect();
    rest.is_empty() || matches!(rest.to_lowercase().as_str(), "am" | "pm")
}

/// Entities of a raw text: maximal runs of whitespace chunks that are either
/// capitalized or digit/time patterns, normalized through the tokenizer.
pub fn entities(text: &str) -> BTreeSet<String> {
    let mut out = BTreeSet::new();
    let mut run: Vec<&str> = Vec::new();
    let flush = |run: &mut Vec<&str>, out: &mut BTreeSet<String>| {
        if !run.is_empty() {
            let normalized = tokenize(&run.join(" ")).join(" ");
            if !normalized.is_empty() {
                out.insert(normalized);
            }
            run.clear();
        }
    };
    for chunk in text.split_whitespace() {
        let trimmed = chunk.trim_matches(|c: char| !c.is_alphanumeric());
        let capitalized = trimmed
            .chars()
            .find(|c| c.is_alphabetic())
            .is_some_and(|c| c.is_uppercase());
        if !trimmed.is_empty() && (capitalized || is_digit_time_chunk(trimmed)) {
            run.push(trimmed);
        } else {
            flush(&mut run, &mut out);
        }
    }
    flush(&mut run, &mut out);
    out
}

/// Phrases and entities of one utterance, preferring sidecar annotations.
pub fn chunk(
    text: &str,
    stopwords: &BTreeSet<String>,
    sidecar_entry: Option<&crate::features::syntactic::SidecarEntry>,
) -> (BTreeSet<String>, BTreeSet<String>) {
    let normalize = |items: &[String]| -> BTreeSet<String> {
        items
            .iter()
            .map(|p| tokenize(p).join(" "))
            .filter(|p| !p.is_empty())
            .collect()
    };
    let phrases = match sidecar_entry.and_then(|e| e.noun_phrases.as_deref()) {
        Some(given) => normalize(given),
        None => noun_phrases(text, stopwords),
    };
    let ents = match sidecar_entry.and_then(|e| e.entities.as_deref()) {
        Some(given) => normalize(given),
        None => entities(text),
    };
    (phrases, ents)
}

/// Fitted phrasal extractor: per-slot phrase and entity vocabularies from
/// the training fold.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PhrasalExtractor {
    setting: ContextSetting,
    with_similarity: bool,
    stopwords: BTreeSet<String>,
    phrase_vocab: BTreeMap<Slot, Vec<String>>,
    entity_vocab: BTreeMap<Slot, Vec<String>>,
}

impl PhrasalExtractor {
    pub fn fit(
        windows: &[&ContextWindow],
        stopwords: &BTreeSet<String>,
        sidecar: Option<&Sidecar>,
        setting: ContextSetting,
        with_similarity: bool,
    ) -> Self {
        let mut phrase_sets: BTreeMap<Slot, BTreeSet<String>> = BTreeMap::new();
        let mut entity_sets: BTreeMap<Slot, BTreeSet<String>> = BTreeMap::new();
        for w in windows {
            for (slot, slot_text) in w.in_scope_slots() {
                let Some(st) = slot_text else { continue };
                let entry = sidecar.and_then(|s| s.get(&st.utterance_id));
                let (phrases, ents) = chunk(&st.text, stopwords, entry);
                phrase_sets.entry(slot).or_default().extend(phrases);
                entity_sets.entry(slot).or_default().extend(ents);
            }
        }
        let to_vecs = |sets: BTreeMap<Slot, BTreeSet<String>>| {
            sets.into_iter()
                .map(|(k, v)| (k, v.into_iter().collect()))
                .collect()
        };
        PhrasalExtractor {
            setting,
            with_similarity,
            stopwords: stopwords.clone(),
            phrase_vocab: to_vecs(phrase_sets),
            entity_vocab: to_vecs(entity_sets),
        }
    }

    pub fn register(&self, b: &mut RegistryBuilder) -> Result<()> {
        const G: FeatureGroup = FeatureGroup::Phrasal;
        for (slot, phrases) in &self.phrase_vocab {
            for p in phrases {
                b.add(G, *slot, format!("noun_phrase={p}"), false)?;
            }
        }
        for (slot, ents) in &self.entity_vocab {
            for e in ents {
                b.add(G, *slot, format!("entity={e}"), false)?;
            }
        }
        if self.with_similarity {
            for &slot in self.setting.similarity_slots() {
                b.add(G, slot, "repetition", true)?;
                b.add(G, slot, "#repetition", true)?;
                b.add(G, slot, "ngram_jaccard_similarity", true)?;
            }
        }
        Ok(())
    }

    pub fn emit(
        &self,
        w: &ContextWindow,
        sidecar: Option<&Sidecar>,
        reg: &FeatureRegistry,
        out: &mut SparseFeatures,
    ) -> Result<()> {
        const G: FeatureGroup = FeatureGroup::Phrasal;
        let chunk_slot = |st: &crate::features::window::SlotText| {
            let entry = sidecar.and_then(|s| s.get(&st.utterance_id));
            chunk(&st.text, &self.stopwords, entry)
        };
        for (slot, slot_text) in w.in_scope_slots() {
            let Some(st) = slot_text else { continue };
            let (phrases, ents) = chunk_slot(st);
            for p in &phrases {
                if let Some(idx) = reg.index_of(G, slot, &format!("noun_phrase={p}")) {
                    out.push(idx, 1.0);
                }
            }
            for e in &ents {
                if let Some(idx) = reg.index_of(G, slot, &format!("entity={e}")) {
                    out.push(idx, 1.0);
                }
            }
        }
        if self.with_similarity {
            let (cur_phrases, cur_ents) = chunk_slot(&w.user_cur);
            let cur_all: BTreeSet<&String> = cur_phrases.iter().chain(&cur_ents).collect();
            for &slot in self.setting.similarity_slots() {
                let Some(adjacent) = w.slot(slot) else { continue };
                let (adj_phrases, adj_ents) = chunk_slot(adjacent);
                let adj_all: BTreeSet<&String> = adj_phrases.iter().chain(&adj_ents).collect();
                let shared = cur_all.intersection(&adj_all).count();
                if shared > 0 {
                    if let Some(idx) = reg.index_of(G, slot, "repetition") {
                        out.push(idx, 1.0);
                    }
                    if let Some(idx) = reg.index_of(G, slot, "#repetition") {
                        out.push(idx, shared as f64);
                    }
                }
                if let Some(idx) = reg.index_of(G, slot, "ngram_jaccard_similarity") {
                    out.push(idx, jaccard(&cur_all, &adj_all));
                }
            }
        }
        Ok(())
    }
}
