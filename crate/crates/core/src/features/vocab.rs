use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use super::categorical_embed_dim;

/// Label inventory for one categorical feature. Index 0 is reserved for
/// labels unseen when the vocabulary was built.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(from = "Vec<String>", into = "Vec<String>")]
pub struct FeatureVocab {
    labels: Vec<String>,
    index: HashMap<String, usize>,
}

impl FeatureVocab {
    pub const OOV: usize = 0;

    /// Builds a vocabulary over the distinct labels, sorted.
    pub fn build<I, S>(labels: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let distinct: BTreeSet<String> = labels
            .into_iter()
            .map(|s| s.as_ref().to_string())
            .collect();
        Self::from(distinct.into_iter().collect::<Vec<_>>())
    }

    pub fn index(&self, label: &str) -> usize {
        self.index.get(label).copied().unwrap_or(Self::OOV)
    }

    pub fn label(&self, index: usize) -> Option<&str> {
        index
            .checked_sub(1)
            .and_then(|i| self.labels.get(i))
            .map(String::as_str)
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    /// Number of known labels, excluding the OOV slot.
    pub fn cardinality(&self) -> usize {
        self.labels.len()
    }

    /// Rows needed in an embedding table (known labels plus OOV).
    pub fn table_size(&self) -> usize {
        self.labels.len() + 1
    }

    pub fn embed_dim(&self) -> usize {
        categorical_embed_dim(self.cardinality().max(1)).expect("cardinality clamped to >= 1")
    }
}

impl From<Vec<String>> for FeatureVocab {
    fn from(labels: Vec<String>) -> Self {
        let index = labels
            .iter()
            .enumerate()
            .map(|(i, l)| (l.clone(), i + 1))
            .collect();
        FeatureVocab { labels, index }
    }
}

impl From<FeatureVocab> for Vec<String> {
    fn from(vocab: FeatureVocab) -> Self {
        vocab.labels
    }
}
