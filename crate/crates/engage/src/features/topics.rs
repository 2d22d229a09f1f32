//! Topic features: per-slot topic proportions from a latent Dirichlet
//! allocation model fit with collapsed Gibbs sampling, plus a cosine
//! similarity between the current utterance's topic vector and each
//! adjacent user utterance's.
//!
//! The model is fit once on the training fold's slot texts (sorted and
//! deduplicated so corpus order cannot leak into the sampler). Held-out
//! inference keeps the topic-word counts frozen and resamples only the
//! document's own assignments; its RNG is seeded from the document tokens
//! so repeated calls are reproducible in any order.

use std::collections::BTreeMap;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::registry::{FeatureGroup, FeatureRegistry, RegistryBuilder, SparseFeatures};
use crate::features::similarity::cosine;
use crate::features::tokenize::tokenize;
use crate::features::window::{ContextSetting, ContextWindow};

/// Sampler hyperparameters. Defaults follow the common convention for
/// symmetric priors: `alpha = 50/K`, `beta = 0.01`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LdaConfig {
    /// Number of topics.
    pub n_topics: usize,
    /// Document-topic prior; `None` means `50 / n_topics`.
    pub alpha: Option<f64>,
    /// Topic-word prior.
    pub beta: f64,
    /// Gibbs sweeps over the training corpus before counts are frozen.
    pub burn_in: usize,
    /// Gibbs sweeps per held-out document at inference time.
    pub infer_sweeps: usize,
    /// Seed for the training sampler; also mixed into inference seeds.
    pub seed: u64,
}

impl Default for LdaConfig {
    fn default() -> Self {
        LdaConfig {
            n_topics: 50,
            alpha: None,
            beta: 0.01,
            burn_in: 500,
            infer_sweeps: 50,
            seed: 0,
        }
    }
}

impl LdaConfig {
    pub fn alpha(&self) -> f64 {
        self.alpha.unwrap_or(50.0 / self.n_topics as f64)
    }

    fn validate(&self) -> Result<()> {
        if self.n_topics == 0 {
            return Err(Error::Config("LDA needs at least one topic".into()));
        }
        if self.alpha() <= 0.0 || self.beta <= 0.0 {
            return Err(Error::Config("LDA priors must be positive".into()));
        }
        Ok(())
    }
}

/// FNV-1a over the document's tokens, used to give every held-out document
/// its own deterministic inference seed.
fn document_seed(tokens: &[String], model_seed: u64) -> u64 {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for token in tokens {
        for byte in token.as_bytes() {
            hash ^= u64::from(*byte);
            hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
        }
        // Separate tokens so ["ab"] and ["a", "b"] hash differently.
        hash ^= 0x1f;
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash ^ model_seed
}

/// Draw an index proportional to the given unnormalized weights.
fn sample_index(rng: &mut ChaCha8Rng, weights: &[f64]) -> usize {
    let total: f64 = weights.iter().sum();
    let mut u = rng.random::<f64>() * total;
    for (i, w) in weights.iter().enumerate() {
        u -= w;
        if u <= 0.0 {
            return i;
        }
    }
    weights.len() - 1
}

/// A fitted topic model: frozen topic-word counts plus the vocabulary.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LdaModel {
    n_topics: usize,
    alpha: f64,
    beta: f64,
    infer_sweeps: usize,
    seed: u64,
    vocab: BTreeMap<String, usize>,
    /// Topic-word counts from the training corpus, `n_topics × vocab`.
    topic_word: Vec<Vec<u32>>,
    /// Row sums of `topic_word`.
    topic_total: Vec<u32>,
}

impl LdaModel {
    /// Fit by collapsed Gibbs sampling on the given documents.
    pub fn fit(texts: &[String], cfg: &LdaConfig) -> Result<Self> {
        cfg.validate()?;
        let mut vocab: BTreeMap<String, usize> = BTreeMap::new();
        let docs: Vec<Vec<usize>> = texts
            .iter()
            .map(|text| {
                tokenize(text)
                    .into_iter()
                    .map(|token| {
                        let next = vocab.len();
                        *vocab.entry(token).or_insert(next)
                    })
                    .collect()
            })
            .collect();
        let n_words: usize = docs.iter().map(Vec::len).sum();
        if n_words == 0 {
            return Err(Error::InvalidInput(
                "topic model corpus has no tokens".into(),
            ));
        }

        let k = cfg.n_topics;
        let v = vocab.len();
        let alpha = cfg.alpha();
        let beta = cfg.beta;
        let mut topic_word = vec![vec![0u32; v]; k];
        let mut topic_total = vec![0u32; k];
        let mut doc_topic: Vec<Vec<u32>> = docs.iter().map(|_| vec![0u32; k]).collect();
        let mut assignments: Vec<Vec<usize>> = Vec::with_capacity(docs.len());

        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        for (d, doc) in docs.iter().enumerate() {
            let mut z = Vec::with_capacity(doc.len());
            for &w in doc {
                let topic = rng.random_range(0..k);
                topic_word[topic][w] += 1;
                topic_total[topic] += 1;
                doc_topic[d][topic] += 1;
                z.push(topic);
            }
            assignments.push(z);
        }

        let mut weights = vec![0.0f64; k];
        for _sweep in 0..cfg.burn_in {
            for (d, doc) in docs.iter().enumerate() {
                for (i, &w) in doc.iter().enumerate() {
                    let old = assignments[d][i];
                    topic_word[old][w] -= 1;
                    topic_total[old] -= 1;
                    doc_topic[d][old] -= 1;
                    for t in 0..k {
                        weights[t] = (f64::from(doc_topic[d][t]) + alpha)
                            * (f64::from(topic_word[t][w]) + beta)
                            / (f64::from(topic_total[t]) + v as f64 * beta);
                    }
                    let new = sample_index(&mut rng, &weights);
                    topic_word[new][w] += 1;
                    topic_total[new] += 1;
                    doc_topic[d][new] += 1;
                    assignments[d][i] = new;
                }
            }
        }

        Ok(LdaModel {
            n_topics: k,
            alpha,
            beta,
            infer_sweeps: cfg.infer_sweeps,
            seed: cfg.seed,
            vocab,
            topic_word,
            topic_total,
        })
    }

    pub fn n_topics(&self) -> usize {
        self.n_topics
    }

    pub fn vocab_len(&self) -> usize {
        self.vocab.len()
    }

    /// Smoothed topic-word probability `(n_kw + β) / (n_k + Vβ)`.
    fn word_prob(&self, topic: usize, word: usize) -> f64 {
        (f64::from(self.topic_word[topic][word]) + self.beta)
            / (f64::from(self.topic_total[topic]) + self.vocab.len() as f64 * self.beta)
    }

    /// Topic proportions for a held-out document. Out-of-vocabulary tokens
    /// are dropped; a document with no in-vocabulary tokens gets the
    /// uniform distribution.
    pub fn infer(&self, tokens: &[String]) -> Vec<f64> {
        let k = self.n_topics;
        let words: Vec<usize> = tokens
            .iter()
            .filter_map(|t| self.vocab.get(t).copied())
            .collect();
        if words.is_empty() {
            return vec![1.0 / k as f64; k];
        }

        let mut rng = ChaCha8Rng::seed_from_u64(document_seed(tokens, self.seed));
        let mut doc_topic = vec![0u32; k];
        let mut z = Vec::with_capacity(words.len());
        for &w in &words {
            let mut weights = vec![0.0f64; k];
            for (t, weight) in weights.iter_mut().enumerate() {
                *weight = self.word_prob(t, w);
            }
            let topic = sample_index(&mut rng, &weights);
            doc_topic[topic] += 1;
            z.push(topic);
        }
        let mut weights = vec![0.0f64; k];
        for _sweep in 0..self.infer_sweeps {
            for (i, &w) in words.iter().enumerate() {
                let old = z[i];
                doc_topic[old] -= 1;
                for (t, weight) in weights.iter_mut().enumerate() {
                    *weight = (f64::from(doc_topic[t]) + self.alpha) * self.word_prob(t, w);
                }
                let new = sample_index(&mut rng, &weights);
                doc_topic[new] += 1;
                z[i] = new;
            }
        }

        let denom = words.len() as f64 + k as f64 * self.alpha;
        (0..k)
            .map(|t| (f64::from(doc_topic[t]) + self.alpha) / denom)
            .collect()
    }
}

/// Fitted topic-feature extractor: one LDA model shared by every slot.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TopicExtractor {
    setting: ContextSetting,
    with_similarity: bool,
    model: LdaModel,
}

impl TopicExtractor {
    /// Fit the topic model on the training windows' slot texts, sorted and
    /// deduplicated.
    pub fn fit(
        windows: &[&ContextWindow],
        setting: ContextSetting,
        with_similarity: bool,
        cfg: &LdaConfig,
    ) -> Result<Self> {
        let mut texts: Vec<String> = windows
            .iter()
            .flat_map(|w| w.in_scope_slots())
            .filter_map(|(_, st)| st.map(|st| st.text.clone()))
            .collect();
        texts.sort();
        texts.dedup();
        let model = LdaModel::fit(&texts, cfg)?;
        Ok(TopicExtractor {
            setting,
            with_similarity,
            model,
        })
    }

    pub fn model(&self) -> &LdaModel {
        &self.model
    }

    pub fn register(&self, b: &mut RegistryBuilder) -> Result<()> {
        const G: FeatureGroup = FeatureGroup::Topic;
        for &slot in self.setting.slots() {
            for t in 1..=self.model.n_topics {
                b.add(G, slot, format!("topic_{t}"), false)?;
            }
        }
        if self.with_similarity {
            for &slot in self.setting.similarity_slots() {
                b.add(G, slot, "lda_cosine", true)?;
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
        const G: FeatureGroup = FeatureGroup::Topic;
        let cur_theta = self.model.infer(&tokenize(&w.user_cur.text));
        for (slot, slot_text) in w.in_scope_slots() {
            let Some(st) = slot_text else { continue };
            let theta = if slot == crate::features::window::Slot::UserCur {
                cur_theta.clone()
            } else {
                self.model.infer(&tokenize(&st.text))
            };
            for (t, &p) in theta.iter().enumerate() {
                if let Some(idx) = reg.index_of(G, slot, &format!("topic_{}", t + 1)) {
                    out.push(idx, p);
                }
            }
        }
        if self.with_similarity {
            for &slot in self.setting.similarity_slots() {
                let Some(adjacent) = w.slot(slot) else { continue };
                if let Some(idx) = reg.index_of(G, slot, "lda_cosine") {
                    let theta = self.model.infer(&tokenize(&adjacent.text));
                    out.push(idx, cosine(&cur_theta, &theta));
                }
            }
        }
        Ok(())
    }
}
