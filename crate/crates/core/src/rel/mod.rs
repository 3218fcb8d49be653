//! Pair classifier for discourse relations.

mod features;
mod model;

use serde::{Deserialize, Serialize};

use crate::corpus::{Direction, RelationInstance};
use crate::{DiscoError, Result};

pub use features::{inject_feature_vector, FeatureEncoder, FeatureLayout, LayoutEntry, SlotKind};
pub use model::{predict_relations, train_rel_classifier, RelEpochLog, RelModel, RelPrediction, TrainedRelClassifier};

pub const CLS: &str = "[CLS]";
pub const SEP: &str = "[SEP]";

/// Pseudo-token pairs marking the head side: `}`/`>` around unit 1 for
/// `1>2`, `<`/`{` around unit 2 for `1<2`.
pub const LEFT_OPEN: &str = "}";
pub const LEFT_CLOSE: &str = ">";
pub const RIGHT_OPEN: &str = "<";
pub const RIGHT_CLOSE: &str = "{";

/// Word-level input sequence for one relation instance.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PairSequence {
    pub tokens: Vec<String>,
    /// 0 up to and including the first `[SEP]`, 1 after it.
    pub segment_ids: Vec<u8>,
}

impl PairSequence {
    pub fn text(&self) -> String {
        self.tokens.join(" ")
    }
}

/// Word-level pieces of a pair sequence before assembly.
pub(crate) struct PairParts<'a> {
    pub unit1: Vec<&'a str>,
    pub unit2: Vec<&'a str>,
    pub direction: Direction,
}

pub(crate) fn pair_parts(inst: &RelationInstance) -> Result<PairParts<'_>> {
    let unit1: Vec<&str> = inst.unit1_text.split_whitespace().collect();
    let unit2: Vec<&str> = inst.unit2_text.split_whitespace().collect();
    if unit1.is_empty() || unit2.is_empty() {
        return Err(DiscoError::contract(format!(
            "relation in {} has an empty unit text",
            inst.doc_id
        )));
    }
    Ok(PairParts {
        unit1,
        unit2,
        direction: inst.direction,
    })
}

/// Lays out `u1` and `u2` with markers and separators; `T` is a word or a
/// subword id.
pub(crate) fn assemble<T: Clone>(
    cls: T,
    sep: T,
    markers: [T; 4],
    unit1: &[T],
    unit2: &[T],
    direction: Direction,
) -> (Vec<T>, Vec<u8>) {
    let [lo, lc, ro, rc] = markers;
    let mut first = vec![cls];
    let mut second = Vec::new();
    match direction {
        Direction::LeftToRight => {
            first.push(lo);
            first.extend_from_slice(unit1);
            first.push(lc);
            first.push(sep.clone());
            second.extend_from_slice(unit2);
        }
        Direction::RightToLeft => {
            first.extend_from_slice(unit1);
            first.push(sep.clone());
            second.push(ro);
            second.extend_from_slice(unit2);
            second.push(rc);
        }
    }
    second.push(sep);
    let mut segments = vec![0u8; first.len()];
    segments.resize(first.len() + second.len(), 1);
    first.extend(second);
    (first, segments)
}

pub fn build_pair_sequence(inst: &RelationInstance) -> Result<PairSequence> {
    let p = pair_parts(inst)?;
    let s = |x: &str| x.to_string();
    let u1: Vec<String> = p.unit1.iter().map(|w| s(w)).collect();
    let u2: Vec<String> = p.unit2.iter().map(|w| s(w)).collect();
    let markers = [s(LEFT_OPEN), s(LEFT_CLOSE), s(RIGHT_OPEN), s(RIGHT_CLOSE)];
    let (tokens, segment_ids) = assemble(s(CLS), s(SEP), markers, &u1, &u2, p.direction);
    Ok(PairSequence { tokens, segment_ids })
}

/// Lengths kept from each unit when `n1 + n2` subwords must fit `budget`
/// (at least 2): tails are cut in proportion to unit length and each unit
/// keeps at least one subword.
pub fn truncation_lengths(n1: usize, n2: usize, budget: usize) -> (usize, usize) {
    if n1 + n2 <= budget {
        return (n1, n2);
    }
    let budget = budget.max(2);
    let k1 = ((budget * n1) / (n1 + n2)).clamp(1, budget - 1);
    let k2 = budget - k1;
    if k2 > n2 {
        (budget - n2, n2)
    } else {
        (k1, k2)
    }
}

/// What reaches the encoder between `[CLS]` and the first unit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureMode {
    /// The learned feature vector.
    #[default]
    Inject,
    /// Nothing; the sequence keeps its original length.
    Skip,
    /// An all-zero vector.
    Zero,
}

fn default_runs() -> usize {
    5
}

fn default_clip() -> Option<f64> {
    Some(5.0)
}

/// Hyperparameters for one relation classifier run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RelConfig {
    pub encoder_name: String,
    pub lr_encoder: f64,
    pub lr_other: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    #[serde(default = "default_runs")]
    pub runs: usize,
    /// Feature menu names; the corpus default when absent.
    #[serde(default)]
    pub features: Option<Vec<String>>,
    #[serde(default)]
    pub feature_mode: FeatureMode,
    /// Cap on sequence length below the encoder's own limit.
    #[serde(default)]
    pub max_subwords: Option<usize>,
    #[serde(default = "default_clip")]
    pub grad_clip: Option<f64>,
    #[serde(default)]
    pub patience: Option<usize>,
}

impl RelConfig {
    pub fn new(encoder_name: impl Into<String>) -> Self {
        RelConfig {
            encoder_name: encoder_name.into(),
            lr_encoder: 2e-5,
            lr_other: 1e-3,
            epochs: 10,
            batch_size: 16,
            seed: 1,
            runs: default_runs(),
            features: None,
            feature_mode: FeatureMode::Inject,
            max_subwords: None,
            grad_clip: default_clip(),
            patience: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr_encoder > 0.0 && self.lr_other > 0.0) {
            return Err(DiscoError::config("learning rates must be positive"));
        }
        if self.lr_encoder >= self.lr_other {
            return Err(DiscoError::config(format!(
                "lr_encoder ({}) must be below lr_other ({})",
                self.lr_encoder, self.lr_other
            )));
        }
        if self.runs == 0 || self.epochs == 0 || self.batch_size == 0 {
            return Err(DiscoError::config("runs, epochs and batch_size must be at least 1"));
        }
        if self.max_subwords.is_some_and(|m| m < 8) {
            return Err(DiscoError::config("max_subwords must be at least 8"));
        }
        Ok(())
    }
}
