//! Column bookkeeping: the registry mapping feature identities to column
//! indices, and sparse row/matrix containers addressed against it.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::window::Slot;

/// The five feature groups. The declaration order fixes the column-block
/// order in assembled vectors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureGroup {
    Basic,
    Phrasal,
    Syntactic,
    Ngram,
    Topic,
}

impl FeatureGroup {
    pub const ALL: [FeatureGroup; 5] = [
        FeatureGroup::Basic,
        FeatureGroup::Phrasal,
        FeatureGroup::Syntactic,
        FeatureGroup::Ngram,
        FeatureGroup::Topic,
    ];

    pub fn name(self) -> &'static str {
        match self {
            FeatureGroup::Basic => "basic",
            FeatureGroup::Phrasal => "phrasal",
            FeatureGroup::Syntactic => "syntactic",
            FeatureGroup::Ngram => "ngram",
            FeatureGroup::Topic => "topic",
        }
    }
}

impl std::str::FromStr for FeatureGroup {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_lowercase().as_str() {
            "basic" => Ok(FeatureGroup::Basic),
            "phrasal" => Ok(FeatureGroup::Phrasal),
            "syntactic" => Ok(FeatureGroup::Syntactic),
            "ngram" => Ok(FeatureGroup::Ngram),
            "topic" => Ok(FeatureGroup::Topic),
            other => Err(Error::Config(format!("unknown feature group {other:?}"))),
        }
    }
}

impl std::fmt::Display for FeatureGroup {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Identity of one column: which group produced it, which slot it reads,
/// and its human-readable name (e.g. `utt_length`, `noun_phrase=stair lights`).
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FeatureKey {
    pub group: FeatureGroup,
    pub slot: Slot,
    pub name: String,
    /// True for columns comparing two utterances (similarity, repetition,
    /// edit-distance, repeat-* features); these are dropped wholesale when a
    /// configuration disables similarity features.
    pub similarity: bool,
}

/// Frozen bijection between feature identities and column indices.
///
/// Built once per fitted configuration; columns are grouped by feature
/// group, then slot, preserving insertion order within each block so that
/// vocabulary-derived columns keep their fitted ordering.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FeatureRegistry {
    keys: Vec<FeatureKey>,
    #[serde(skip)]
    index: HashMap<(FeatureGroup, Slot, String), usize>,
}

impl FeatureRegistry {
    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }

    pub fn key(&self, index: usize) -> &FeatureKey {
        &self.keys[index]
    }

    pub fn keys(&self) -> &[FeatureKey] {
        &self.keys
    }

    pub fn index_of(&self, group: FeatureGroup, slot: Slot, name: &str) -> Option<usize> {
        self.index
            .get(&(group, slot, name.to_string()))
            .copied()
    }

    /// Column indices belonging to the given group, ascending.
    pub fn group_columns(&self, group: FeatureGroup) -> Vec<usize> {
        (0..self.keys.len())
            .filter(|&i| self.keys[i].group == group)
            .collect()
    }

    /// Rebuild the lookup map (needed after deserializing).
    pub fn reindex(&mut self) {
        self.index = Self::build_index(&self.keys);
    }

    /// Content checksum over the ordered column identities, so serialized
    /// models can assert they are paired with the right registry.
    pub fn checksum(&self) -> String {
        crate::checksum::sha256_hex(|hasher| {
            use sha2::Digest;
            for key in &self.keys {
                hasher.update(key.group.name().as_bytes());
                hasher.update([0x1f]);
                hasher.update(key.slot.name().as_bytes());
                hasher.update([0x1f]);
                hasher.update(key.name.as_bytes());
                hasher.update([u8::from(key.similarity), 0x1e]);
            }
        })
    }

    fn build_index(keys: &[FeatureKey]) -> HashMap<(FeatureGroup, Slot, String), usize> {
        keys.iter()
            .enumerate()
            .map(|(i, k)| ((k.group, k.slot, k.name.clone()), i))
            .collect()
    }
}

/// Accumulates feature identities during fitting, then freezes them into a
/// [`FeatureRegistry`].
#[derive(Debug, Default)]
pub struct RegistryBuilder {
    keys: Vec<FeatureKey>,
    seen: HashMap<(FeatureGroup, Slot, String), usize>,
}

impl RegistryBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    /// Register a column; duplicate identities are rejected.
    pub fn add(&mut self, group: FeatureGroup, slot: Slot, name: impl Into<String>, similarity: bool) -> Result<()> {
        let name = name.into();
        let id = (group, slot, name.clone());
        if self.seen.contains_key(&id) {
            return Err(Error::Internal(format!(
                "duplicate feature column {}/{}/{}",
                group,
                slot,
                id.2
            )));
        }
        self.seen.insert(id, self.keys.len());
        self.keys.push(FeatureKey {
            group,
            slot,
            name,
            similarity,
        });
        Ok(())
    }

    /// Freeze into a registry: stable-sort by (group, slot) so each block is
    /// contiguous, keeping insertion order inside a block.
    pub fn freeze(mut self) -> FeatureRegistry {
        self.keys.sort_by_key(|k| (k.group, k.slot));
        let index = FeatureRegistry::build_index(&self.keys);
        FeatureRegistry {
            keys: self.keys,
            index,
        }
    }
}

/// One row of features: (column, value) pairs sorted by column.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SparseFeatures {
    entries: Vec<(usize, f64)>,
}

impl SparseFeatures {
    pub fn new() -> Self {
        Self::default()
    }

    /// Append an entry; rows are validated (sorted, deduplicated, finite)
    /// via [`SparseFeatures::finish`] once extraction completes.
    pub fn push(&mut self, index: usize, value: f64) {
        self.entries.push((index, value));
    }

    /// Sort by column and enforce the row invariants: strictly increasing
    /// in-range indices and finite values. Zero entries are dropped.
    pub fn finish(mut self, n_cols: usize) -> Result<Self> {
        self.entries.retain(|&(_, v)| v != 0.0);
        self.entries.sort_by_key(|&(i, _)| i);
        for pair in self.entries.windows(2) {
            if pair[0].0 == pair[1].0 {
                return Err(Error::Internal(format!(
                    "duplicate feature index {}",
                    pair[0].0
                )));
            }
        }
        for &(i, v) in &self.entries {
            if i >= n_cols {
                return Err(Error::Internal(format!(
                    "feature index {i} out of range ({n_cols} columns)"
                )));
            }
            if !v.is_finite() {
                return Err(Error::Internal(format!("non-finite value at column {i}")));
            }
        }
        Ok(self)
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.entries.iter().copied()
    }

    pub fn nnz(&self) -> usize {
        self.entries.len()
    }

    pub fn get(&self, index: usize) -> f64 {
        self.entries
            .binary_search_by_key(&index, |&(i, _)| i)
            .map(|pos| self.entries[pos].1)
            .unwrap_or(0.0)
    }

    pub fn to_dense(&self, n_cols: usize) -> Vec<f64> {
        let mut row = vec![0.0; n_cols];
        for &(i, v) in &self.entries {
            row[i] = v;
        }
        row
    }

    /// Re-express the row against a column subset: `columns[new] = old`.
    /// Entries outside the subset are dropped.
    pub fn project(&self, columns: &[usize]) -> SparseFeatures {
        let lookup: HashMap<usize, usize> = columns
            .iter()
            .enumerate()
            .map(|(new, &old)| (old, new))
            .collect();
        let mut entries: Vec<(usize, f64)> = self
            .entries
            .iter()
            .filter_map(|&(i, v)| lookup.get(&i).map(|&new| (new, v)))
            .collect();
        entries.sort_by_key(|&(i, _)| i);
        SparseFeatures { entries }
    }
}

/// Row-major sparse matrix with a fixed column count.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SparseMatrix {
    pub n_cols: usize,
    pub rows: Vec<SparseFeatures>,
}

impl SparseMatrix {
    pub fn new(n_cols: usize) -> Self {
        SparseMatrix {
            n_cols,
            rows: Vec::new(),
        }
    }

    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn push_row(&mut self, row: SparseFeatures) -> Result<()> {
        let row = row.finish(self.n_cols)?;
        self.rows.push(row);
        Ok(())
    }

    pub fn to_dense(&self) -> ndarray::Array2<f64> {
        let mut out = ndarray::Array2::zeros((self.rows.len(), self.n_cols));
        for (r, row) in self.rows.iter().enumerate() {
            for (c, v) in row.iter() {
                out[(r, c)] = v;
            }
        }
        out
    }

    /// Select a row subset (e.g. a fold) by index.
    pub fn select_rows(&self, indices: &[usize]) -> SparseMatrix {
        SparseMatrix {
            n_cols: self.n_cols,
            rows: indices.iter().map(|&i| self.rows[i].clone()).collect(),
        }
    }

    /// Select a column subset, renumbering columns to 0..len.
    pub fn select_columns(&self, columns: &[usize]) -> SparseMatrix {
        SparseMatrix {
            n_cols: columns.len(),
            rows: self.rows.iter().map(|r| r.project(columns)).collect(),
        }
    }
}
