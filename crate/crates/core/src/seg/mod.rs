//! Sequence tagger for discourse unit boundaries and connective spans.

mod model;
mod train;

use candle_core::Tensor;
use serde::{Deserialize, Serialize};

use crate::corpus::SegLabel;
use crate::nn::{argmax_rows, masked_cross_entropy, viterbi, Crf, CrfParams};
use crate::{DiscoError, Result};

pub use model::{SegModel, SegVocabs};
pub use train::{predict_segments, train_segmenter, EpochLog, SegTrainer, TrainedSegmenter};

pub const D_CHAR: usize = 64;
pub const D_STATIC: usize = 300;
pub const D_NEIGHBORS: usize = 400;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SegTask {
    /// Unit boundaries, tags `_` / `BeginSeg`.
    Seg,
    /// Connective spans, tags `O` / `B-Conn` / `I-Conn`.
    Conn,
}

impl SegTask {
    pub fn tagset(self) -> Vec<String> {
        let tags: &[&str] = match self {
            SegTask::Seg => &["_", "BeginSeg"],
            SegTask::Conn => &["O", "B-Conn", "I-Conn"],
        };
        tags.iter().map(|s| s.to_string()).collect()
    }

    pub fn tag_of(self, label: SegLabel) -> usize {
        match (self, label) {
            (SegTask::Seg, SegLabel::BeginSeg) => 1,
            (SegTask::Conn, SegLabel::BeginConn) => 1,
            (SegTask::Conn, SegLabel::InsideConn) => 2,
            _ => 0,
        }
    }

    pub fn label_of(self, tag: usize) -> SegLabel {
        match (self, tag) {
            (SegTask::Seg, 1) => SegLabel::BeginSeg,
            (SegTask::Conn, 1) => SegLabel::BeginConn,
            (SegTask::Conn, 2) => SegLabel::InsideConn,
            _ => SegLabel::None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            SegTask::Seg => "seg",
            SegTask::Conn => "conn",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DecodeMode {
    Linear,
    Crf,
}

/// Which optional input components the tagger uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Components {
    #[serde(default = "yes")]
    pub char: bool,
    #[serde(default = "yes")]
    pub static_vectors: bool,
    #[serde(default = "yes")]
    pub features: bool,
}

fn yes() -> bool {
    true
}

impl Default for Components {
    fn default() -> Self {
        Components {
            char: true,
            static_vectors: true,
            features: true,
        }
    }
}

/// Width bookkeeping for the tagger input.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SegModelDims {
    pub d_char: usize,
    pub d_static: usize,
    pub d_cwe: usize,
    pub d_emb: usize,
    pub d_feat: usize,
    pub d_neighbors: usize,
    pub d_enc: usize,
    pub lstm_hidden: usize,
    pub tagset: Vec<String>,
}

impl SegModelDims {
    pub fn new(
        components: Components,
        d_cwe: usize,
        d_feat: usize,
        d_neighbors: usize,
        lstm_hidden: usize,
        tagset: Vec<String>,
    ) -> Self {
        let d_char = if components.char { D_CHAR } else { 0 };
        let d_static = if components.static_vectors { D_STATIC } else { 0 };
        let d_feat = if components.features { d_feat } else { 0 };
        let d_emb = d_char + d_static + d_cwe;
        SegModelDims {
            d_char,
            d_static,
            d_cwe,
            d_emb,
            d_feat,
            d_neighbors,
            d_enc: d_emb + d_feat + d_neighbors,
            lstm_hidden,
            tagset,
        }
    }

    pub fn check(&self) -> Result<()> {
        if self.d_emb != self.d_char + self.d_static + self.d_cwe
            || self.d_enc != self.d_emb + self.d_feat + self.d_neighbors
        {
            return Err(DiscoError::contract(format!("inconsistent tagger dims {self:?}")));
        }
        if self.d_neighbors % 2 != 0 {
            return Err(DiscoError::config("neighbor summary width must be even"));
        }
        Ok(())
    }
}

fn default_runs() -> usize {
    5
}

fn default_lstm_hidden() -> usize {
    128
}

fn default_d_neighbors() -> usize {
    D_NEIGHBORS
}

fn default_clip() -> Option<f64> {
    Some(5.0)
}

/// Hyperparameters for one tagger training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingConfig {
    pub encoder_name: String,
    pub lr_encoder: f64,
    pub lr_other: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub decode_mode: DecodeMode,
    #[serde(default = "default_runs")]
    pub runs: usize,
    #[serde(default = "default_lstm_hidden")]
    pub lstm_hidden: usize,
    #[serde(default = "default_d_neighbors")]
    pub d_neighbors: usize,
    #[serde(default)]
    pub components: Components,
    /// fastText-style `.vec` file; random frozen vectors when absent.
    #[serde(default)]
    pub static_vectors: Option<std::path::PathBuf>,
    /// Cap on subwords per encoder window, below the encoder's own limit.
    #[serde(default)]
    pub max_subwords: Option<usize>,
    #[serde(default = "default_clip")]
    pub grad_clip: Option<f64>,
    /// Stop after this many epochs without a validation improvement.
    #[serde(default)]
    pub patience: Option<usize>,
}

impl TrainingConfig {
    pub fn new(encoder_name: impl Into<String>, decode_mode: DecodeMode) -> Self {
        TrainingConfig {
            encoder_name: encoder_name.into(),
            lr_encoder: 2e-5,
            lr_other: 1e-3,
            epochs: 10,
            batch_size: 16,
            seed: 1,
            decode_mode,
            runs: default_runs(),
            lstm_hidden: default_lstm_hidden(),
            d_neighbors: D_NEIGHBORS,
            components: Components::default(),
            static_vectors: None,
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
        if self.runs == 0 || self.epochs == 0 || self.batch_size == 0 || self.lstm_hidden == 0 {
            return Err(DiscoError::config("runs, epochs, batch_size and lstm_hidden must be at least 1"));
        }
        if self.max_subwords == Some(0) {
            return Err(DiscoError::config("max_subwords must be at least 1"));
        }
        Ok(())
    }
}

/// Best tag path for one sequence of emission rows.
pub fn decode_labels(emissions: &[Vec<f64>], mode: DecodeMode, crf: Option<&CrfParams>) -> Result<Vec<usize>> {
    match mode {
        DecodeMode::Linear => Ok(argmax_rows(emissions)),
        DecodeMode::Crf => {
            let p = crf.ok_or_else(|| DiscoError::contract("CRF decoding needs transition scores"))?;
            Ok(viterbi(emissions, p))
        }
    }
}

/// Loss for one sequence: mean token cross-entropy, or the CRF negative
/// log-likelihood of the gold path. `emissions` is `[n, K]`.
pub fn sequence_loss(emissions: &Tensor, gold: &[usize], mode: DecodeMode, crf: Option<&Crf>) -> Result<Tensor> {
    let (n, _) = emissions.dims2()?;
    if gold.len() != n {
        return Err(DiscoError::contract(format!("{} gold tags for {n} emission rows", gold.len())));
    }
    if n == 0 {
        return Err(DiscoError::contract("cannot compute a loss for an empty sequence"));
    }
    let em = emissions.unsqueeze(0)?;
    let mask = Tensor::ones((1, n), emissions.dtype(), emissions.device())?;
    let gold = vec![gold.to_vec()];
    match mode {
        DecodeMode::Linear => masked_cross_entropy(&em, &gold, &mask),
        DecodeMode::Crf => {
            let crf = crf.ok_or_else(|| DiscoError::contract("CRF loss needs transition scores"))?;
            crf.neg_log_likelihood(&em, &gold, &mask)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use candle_core::{DType, Device};

    #[test]
    fn dims_identity() {
        let d = SegModelDims::new(Components::default(), 768, 37, 400, 128, SegTask::Seg.tagset());
        assert_eq!(d.d_enc, 64 + 300 + 768 + 37 + 400);
        d.check().unwrap();
        let cwe_only = Components {
            char: false,
            static_vectors: false,
            features: true,
        };
        let d = SegModelDims::new(cwe_only, 64, 10, 400, 32, SegTask::Conn.tagset());
        assert_eq!(d.d_emb, d.d_cwe);
        let mut bad = d.clone();
        bad.d_enc += 1;
        assert!(bad.check().is_err());
    }

    #[test]
    fn tagsets() {
        assert_eq!(SegTask::Seg.tagset().len(), 2);
        assert_eq!(SegTask::Conn.tagset().len(), 3);
        for l in [SegLabel::None, SegLabel::BeginConn, SegLabel::InsideConn] {
            assert_eq!(SegTask::Conn.label_of(SegTask::Conn.tag_of(l)), l);
        }
        assert_eq!(SegTask::Seg.tag_of(SegLabel::BeginConn), 0);
    }

    #[test]
    fn config_validation() {
        let mut c = TrainingConfig::new("random:1x32", DecodeMode::Linear);
        c.validate().unwrap();
        c.lr_encoder = 1e-2;
        assert!(c.validate().is_err());
        let json = r#"{"encoder_name":"x","lr_encoder":1e-5,"lr_other":1e-3,"epochs":1,
            "batch_size":2,"seed":1,"decode_mode":"crf","dropoutt":0.1}"#;
        let err = serde_json::from_str::<TrainingConfig>(json).unwrap_err().to_string();
        assert!(err.contains("dropoutt"));
    }

    #[test]
    fn decode_examples() {
        let e = vec![vec![0.2, 0.9]];
        assert_eq!(decode_labels(&e, DecodeMode::Linear, None).unwrap(), vec![1]);
        assert!(decode_labels(&e, DecodeMode::Crf, None).is_err());
        assert!(decode_labels(&[], DecodeMode::Linear, None).unwrap().is_empty());
    }

    #[test]
    fn loss_examples() {
        let dev = Device::Cpu;
        let uniform = Tensor::zeros((4, 3), DType::F64, &dev).unwrap();
        let l = sequence_loss(&uniform, &[0, 1, 2, 0], DecodeMode::Linear, None).unwrap();
        assert!((l.to_scalar::<f64>().unwrap() - 3f64.ln()).abs() < 1e-12);
        let peaked = Tensor::new(&[[50.0f64, 0.0], [0.0, 50.0]], &dev).unwrap();
        let l = sequence_loss(&peaked, &[0, 1], DecodeMode::Linear, None).unwrap();
        assert!(l.to_scalar::<f64>().unwrap() < 1e-15);
        assert!(sequence_loss(&peaked, &[0, 2], DecodeMode::Linear, None).is_err());
        assert!(sequence_loss(&peaked, &[0], DecodeMode::Linear, None).is_err());
    }
}
