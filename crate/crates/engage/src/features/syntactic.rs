//! Syntactic features from sidecar annotations: root/subject/object words of
//! each utterance and repeat flags between adjacent user utterances.
//!
//! The crate ships no dependency parser. Instead, externally produced
//! annotations (e.g. from a CoreNLP run) are imported from a JSONL sidecar,
//! one object per utterance: `{"utterance_id", "root_word"?, "subject_word"?,
//! "object_word"?, "noun_phrases"?: [str], "entities"?: [str]}`. The optional
//! phrase/entity arrays feed the phrasal group; this module consumes the
//! three word roles. Windows whose utterances are missing from the sidecar
//! skip the group with a counted warning.

use std::collections::BTreeMap;
use std::io::BufRead;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::registry::{FeatureGroup, FeatureRegistry, RegistryBuilder, SparseFeatures};
use crate::features::tokenize::tokenize;
use crate::features::window::{ContextSetting, ContextWindow, Slot};

/// Annotation for one utterance.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct SidecarEntry {
    pub utterance_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub root_word: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub subject_word: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub object_word: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noun_phrases: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub entities: Option<Vec<String>>,
}

/// Sidecar annotations keyed by utterance id (`<session_id>:<index>`).
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Sidecar {
    entries: BTreeMap<String, SidecarEntry>,
}

impl Sidecar {
    pub fn new(entries: impl IntoIterator<Item = SidecarEntry>) -> Self {
        Sidecar {
            entries: entries
                .into_iter()
                .map(|e| (e.utterance_id.clone(), e))
                .collect(),
        }
    }

    /// Parse JSONL, one entry per line; problems carry line numbers.
    pub fn from_jsonl_reader(reader: impl BufRead) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (idx, line) in reader.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let entry: SidecarEntry = serde_json::from_str(&line).map_err(|e| Error::Parse {
                line: idx + 1,
                message: e.to_string(),
            })?;
            entries.insert(entry.utterance_id.clone(), entry);
        }
        Ok(Sidecar { entries })
    }

    pub fn get(&self, utterance_id: &str) -> Option<&SidecarEntry> {
        self.entries.get(utterance_id)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// The three word roles the group featurizes.
type RoleAccessor = fn(&SidecarEntry) -> Option<&String>;
const ROLES: [(&str, RoleAccessor); 3] = [
    ("root_word", |e| e.root_word.as_ref()),
    ("subject_word", |e| e.subject_word.as_ref()),
    ("object_word", |e| e.object_word.as_ref()),
];

fn normalize_word(word: &str) -> Option<String> {
    let tokens = tokenize(word);
    if tokens.is_empty() {
        None
    } else {
        Some(tokens.join(" "))
    }
}

/// Fitted syntactic extractor: per-slot vocabularies of root/subject/object
/// words observed in the training fold.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SyntacticExtractor {
    setting: ContextSetting,
    with_similarity: bool,
    /// (slot, role) → sorted word vocabulary.
    vocab: BTreeMap<(Slot, String), Vec<String>>,
}

impl SyntacticExtractor {
    /// Collect per-slot role vocabularies from the training windows'
    /// sidecar entries. Windows or slots without entries contribute nothing.
    pub fn fit(
        windows: &[&ContextWindow],
        sidecar: &Sidecar,
        setting: ContextSetting,
        with_similarity: bool,
    ) -> Self {
        let mut sets: BTreeMap<(Slot, String), std::collections::BTreeSet<String>> = BTreeMap::new();
        for w in windows {
            for (slot, slot_text) in w.in_scope_slots() {
                let Some(st) = slot_text else { continue };
                let Some(entry) = sidecar.get(&st.utterance_id) else { continue };
                for (role, getter) in ROLES {
                    if let Some(word) = getter(entry).and_then(|w| normalize_word(w)) {
                        sets.entry((slot, role.to_string())).or_default().insert(word);
                    }
                }
            }
        }
        SyntacticExtractor {
            setting,
            with_similarity,
            vocab: sets
                .into_iter()
                .map(|(k, v)| (k, v.into_iter().collect()))
                .collect(),
        }
    }

    /// An extractor that registers no columns (sidecar absent).
    pub fn disabled(setting: ContextSetting, with_similarity: bool) -> Self {
        SyntacticExtractor {
            setting,
            with_similarity,
            vocab: BTreeMap::new(),
        }
    }

    pub fn register(&self, b: &mut RegistryBuilder) -> Result<()> {
        const G: FeatureGroup = FeatureGroup::Syntactic;
        if self.vocab.is_empty() {
            return Ok(());
        }
        for ((slot, role), words) in &self.vocab {
            for word in words {
                b.add(G, *slot, format!("{role}={word}"), false)?;
            }
        }
        if self.with_similarity {
            for &slot in self.setting.similarity_slots() {
                for (role, _) in ROLES {
                    b.add(G, slot, format!("repeat_{role}"), true)?;
                }
            }
        }
        Ok(())
    }

    /// Emit syntactic columns for one window. When any present in-scope slot
    /// lacks a sidecar entry the whole group is skipped for this window and
    /// the skip counter is incremented.
    pub fn emit(
        &self,
        w: &ContextWindow,
        sidecar: Option<&Sidecar>,
        reg: &FeatureRegistry,
        out: &mut SparseFeatures,
        skipped: &mut usize,
    ) -> Result<()> {
        const G: FeatureGroup = FeatureGroup::Syntactic;
        if self.vocab.is_empty() {
            return Ok(());
        }
        let Some(sidecar) = sidecar else {
            return Ok(());
        };
        let present: Vec<(Slot, &crate::features::window::SlotText)> = w
            .in_scope_slots()
            .filter_map(|(slot, st)| st.map(|s| (slot, s)))
            .collect();
        if present
            .iter()
            .any(|(_, st)| sidecar.get(&st.utterance_id).is_none())
        {
            *skipped += 1;
            return Ok(());
        }
        for (slot, st) in &present {
            let entry = sidecar.get(&st.utterance_id).expect("checked above");
            for (role, getter) in ROLES {
                if let Some(word) = getter(entry).and_then(|w| normalize_word(w)) {
                    if let Some(idx) = reg.index_of(G, *slot, &format!("{role}={word}")) {
                        out.push(idx, 1.0);
                    }
                }
            }
        }
        if self.with_similarity {
            let cur = sidecar
                .get(&w.user_cur.utterance_id)
                .expect("target checked above");
            for &slot in self.setting.similarity_slots() {
                let Some(adjacent) = w.slot(slot) else { continue };
                let adj = sidecar.get(&adjacent.utterance_id).expect("checked above");
                for (role, getter) in ROLES {
                    let (a, b) = (
                        getter(cur).and_then(|w| normalize_word(w)),
                        getter(adj).and_then(|w| normalize_word(w)),
                    );
                    if let (Some(a), Some(b)) = (a, b) {
                        if a == b {
                            if let Some(idx) = reg.index_of(G, slot, &format!("repeat_{role}")) {
                                out.push(idx, 1.0);
                            }
                        }
                    }
                }
            }
        }
        Ok(())
    }
}
