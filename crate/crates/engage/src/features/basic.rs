//! Basic features: utterance lengths, dialogue-position features, and
//! command-word features against a per-dataset command vocabulary.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{BufRead, Read};

use serde::{Deserialize, Serialize};

use crate::dialogue::Session;
use crate::error::{Error, Result};
use crate::features::registry::{FeatureGroup, FeatureRegistry, RegistryBuilder, SparseFeatures};
use crate::features::similarity::jaccard;
use crate::features::tokenize::tokenize;
use crate::features::window::{ContextSetting, ContextWindow, Slot};

/// Command words/phrases of one dataset (e.g. "play", "turn on", "address").
///
/// Entries are normalized through the tokenizer (lowercased, punctuation
/// stripped), deduplicated, and sorted, so the derived one-hot columns are
/// deterministic.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "CommandVocabFile", into = "CommandVocabFile")]
pub struct CommandVocab {
    dataset_id: String,
    commands: Vec<String>,
    #[serde(skip)]
    token_seqs: Vec<Vec<String>>,
}

/// Wire form of the vocab file: JSON `{dataset_id, commands: [str]}`.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct CommandVocabFile {
    dataset_id: String,
    commands: Vec<String>,
}

impl From<CommandVocab> for CommandVocabFile {
    fn from(v: CommandVocab) -> Self {
        CommandVocabFile {
            dataset_id: v.dataset_id,
            commands: v.commands,
        }
    }
}

impl TryFrom<CommandVocabFile> for CommandVocab {
    type Error = Error;

    fn try_from(f: CommandVocabFile) -> Result<Self> {
        Ok(CommandVocab::new(f.dataset_id, f.commands))
    }
}

impl CommandVocab {
    pub fn new(dataset_id: impl Into<String>, entries: impl IntoIterator<Item = String>) -> Self {
        let mut normalized: Vec<String> = entries
            .into_iter()
            .map(|e| tokenize(&e).join(" "))
            .filter(|e| !e.is_empty())
            .collect();
        normalized.sort();
        normalized.dedup();
        let token_seqs = normalized.iter().map(|e| tokenize(e)).collect();
        CommandVocab {
            dataset_id: dataset_id.into(),
            commands: normalized,
            token_seqs,
        }
    }

    pub fn dataset_id(&self) -> &str {
        &self.dataset_id
    }

    pub fn commands(&self) -> &[String] {
        &self.commands
    }

    pub fn is_empty(&self) -> bool {
        self.commands.is_empty()
    }

    /// Indices of vocabulary entries occurring (as contiguous token runs)
    /// in the given token list.
    pub fn matched(&self, tokens: &[String]) -> BTreeSet<usize> {
        self.token_seqs
            .iter()
            .enumerate()
            .filter(|(_, seq)| tokens.windows(seq.len()).any(|w| w == seq.as_slice()))
            .map(|(i, _)| i)
            .collect()
    }

    pub fn from_json_reader(reader: impl Read) -> Result<Self> {
        let file: CommandVocabFile = serde_json::from_reader(reader)?;
        file.try_into()
    }

    /// Derive a vocabulary from a corpus: the `n` most frequent non-stopword
    /// user tokens (ties broken alphabetically).
    pub fn most_common_words(
        dataset_id: impl Into<String>,
        sessions: &[Session],
        n: usize,
        stopwords: &BTreeSet<String>,
    ) -> Self {
        let mut counts: BTreeMap<String, usize> = BTreeMap::new();
        for session in sessions {
            for utt in session.user_utterances() {
                for token in tokenize(&utt.text) {
                    if !stopwords.contains(&token) {
                        *counts.entry(token).or_insert(0) += 1;
                    }
                }
            }
        }
        let mut ranked: Vec<(String, usize)> = counts.into_iter().collect();
        // BTreeMap iteration is alphabetical, so a stable sort by descending
        // count leaves ties alphabetical.
        ranked.sort_by_key(|&(_, count)| std::cmp::Reverse(count));
        CommandVocab::new(dataset_id, ranked.into_iter().take(n).map(|(w, _)| w))
    }
}

/// Parse a stopword list: plain text, one word per line, `#` comments allowed.
pub fn stopwords_from_reader(reader: impl BufRead) -> Result<BTreeSet<String>> {
    let mut words = BTreeSet::new();
    for line in reader.lines() {
        let line = line?;
        let word = line.trim();
        if !word.is_empty() && !word.starts_with('#') {
            words.insert(word.to_lowercase());
        }
    }
    Ok(words)
}

/// The stopword list shipped with the crate.
pub fn default_stopwords() -> &'static BTreeSet<String> {
    static WORDS: std::sync::OnceLock<BTreeSet<String>> = std::sync::OnceLock::new();
    WORDS.get_or_init(|| {
        stopwords_from_reader(include_str!("stopwords.txt").as_bytes())
            .expect("embedded stopword list parses")
    })
}

/// Fitted basic-feature extractor. Columns depend only on the context
/// setting and command vocabulary, so fitting needs no training pass.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BasicExtractor {
    setting: ContextSetting,
    vocab: CommandVocab,
    with_similarity: bool,
}

impl BasicExtractor {
    pub fn new(setting: ContextSetting, vocab: CommandVocab, with_similarity: bool) -> Self {
        BasicExtractor {
            setting,
            vocab,
            with_similarity,
        }
    }

    pub fn vocab(&self) -> &CommandVocab {
        &self.vocab
    }

    pub fn register(&self, b: &mut RegistryBuilder) -> Result<()> {
        const G: FeatureGroup = FeatureGroup::Basic;
        for &slot in self.setting.slots() {
            b.add(G, slot, "utt_length", false)?;
            if slot != Slot::UserCur {
                b.add(G, slot, "present", false)?;
            }
            if slot.is_user() {
                for command in self.vocab.commands() {
                    b.add(G, slot, format!("command_word={command}"), false)?;
                }
                b.add(G, slot, "#command_word", false)?;
            }
        }
        b.add(G, Slot::Global, "if_dialogue_start", false)?;
        b.add(G, Slot::Global, "if_dialogue_end", false)?;
        b.add(G, Slot::Global, "#utt_from_start", false)?;
        b.add(G, Slot::Global, "#utt_to_end", false)?;
        b.add(G, Slot::Global, "time_percent", false)?;
        if self.with_similarity {
            for &slot in self.setting.similarity_slots() {
                b.add(G, slot, "command_jaccard_similarity", true)?;
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
        const G: FeatureGroup = FeatureGroup::Basic;
        let col = |slot: Slot, name: &str| -> Result<usize> {
            reg.index_of(G, slot, name).ok_or_else(|| {
                Error::Internal(format!("basic column {}/{} not registered", slot, name))
            })
        };
        let command_set = |text: &str| self.vocab.matched(&tokenize(text));

        for (slot, slot_text) in w.in_scope_slots() {
            let Some(st) = slot_text else { continue };
            let tokens = tokenize(&st.text);
            out.push(col(slot, "utt_length")?, tokens.len() as f64);
            if slot != Slot::UserCur {
                out.push(col(slot, "present")?, 1.0);
            }
            if slot.is_user() && !self.vocab.is_empty() {
                let matched = self.vocab.matched(&tokens);
                for &i in &matched {
                    let name = format!("command_word={}", self.vocab.commands()[i]);
                    out.push(col(slot, &name)?, 1.0);
                }
                out.push(col(slot, "#command_word")?, matched.len() as f64);
            }
        }

        let turn_1based = (w.user_turn + 1) as f64;
        let total = w.total_user_turns as f64;
        if w.is_dialogue_start() {
            out.push(col(Slot::Global, "if_dialogue_start")?, 1.0);
        }
        if w.is_dialogue_end() {
            out.push(col(Slot::Global, "if_dialogue_end")?, 1.0);
        }
        out.push(col(Slot::Global, "#utt_from_start")?, turn_1based);
        out.push(
            col(Slot::Global, "#utt_to_end")?,
            total - turn_1based,
        );
        out.push(col(Slot::Global, "time_percent")?, turn_1based / total);

        if self.with_similarity {
            for &slot in self.setting.similarity_slots() {
                let Some(adjacent) = w.slot(slot) else { continue };
                let a = command_set(&w.user_cur.text);
                let b = command_set(&adjacent.text);
                out.push(col(slot, "command_jaccard_similarity")?, jaccard(&a, &b));
            }
        }
        Ok(())
    }
}
