use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::model::{PreparedDoc, SegModel};
use super::{SegTask, TrainingConfig};
use crate::corpus::{Document, SegLabel};
use crate::nn::SplitOptimizer;
use crate::scoring::{score_connectives, score_segmentation, ConnectiveMatch};
use crate::{DiscoError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub loss: f64,
    pub dev_f1: f64,
}

pub struct TrainedSegmenter {
    pub model: SegModel,
    pub log: Vec<EpochLog>,
}

fn sentence_keys(docs: &[PreparedDoc]) -> Vec<(usize, usize)> {
    docs.iter()
        .enumerate()
        .flat_map(|(d, doc)| {
            doc.sents
                .iter()
                .enumerate()
                .filter(|(_, s)| !s.forms.is_empty())
                .map(move |(s, _)| (d, s))
        })
        .collect()
}

/// Minibatch optimization over a fixed training set.
pub struct SegTrainer {
    model: SegModel,
    data: Vec<PreparedDoc>,
    keys: Vec<(usize, usize)>,
    opt: SplitOptimizer,
    rng: ChaCha8Rng,
    cursor: usize,
}

impl SegTrainer {
    pub fn new(model: SegModel, train: &[Document]) -> Result<Self> {
        let data = train.iter().map(|d| model.prepare(d)).collect::<Result<Vec<_>>>()?;
        let keys = sentence_keys(&data);
        if keys.is_empty() {
            return Err(DiscoError::contract("training corpus is empty"));
        }
        let c = &model.meta.config;
        let opt = SplitOptimizer::new(&model.ps, c.lr_encoder, c.lr_other, c.grad_clip)?;
        let rng = ChaCha8Rng::seed_from_u64(c.seed.wrapping_add(0x5eed));
        let mut t = SegTrainer {
            model,
            data,
            keys,
            opt,
            rng,
            cursor: 0,
        };
        t.keys.shuffle(&mut t.rng);
        Ok(t)
    }

    pub fn model(&self) -> &SegModel {
        &self.model
    }

    pub fn into_model(self) -> SegModel {
        self.model
    }

    pub fn batches_per_epoch(&self) -> usize {
        self.keys.len().div_ceil(self.model.meta.config.batch_size)
    }

    /// One optimization step on the next batch; returns its loss.
    pub fn step(&mut self) -> Result<f64> {
        if self.cursor >= self.keys.len() {
            self.keys.shuffle(&mut self.rng);
            self.cursor = 0;
        }
        let end = (self.cursor + self.model.meta.config.batch_size).min(self.keys.len());
        let batch = self.keys[self.cursor..end].to_vec();
        self.cursor = end;
        let loss = self.model.batch_loss(&self.data, &batch)?;
        let value = loss.to_dtype(candle_core::DType::F64)?.to_scalar::<f64>()?;
        if !value.is_finite() {
            return Err(DiscoError::Training(format!("loss became {value}")));
        }
        self.opt.backward_step(&loss)?;
        Ok(value)
    }

    /// A full pass over the shuffled training sentences; mean batch loss.
    pub fn epoch(&mut self) -> Result<f64> {
        if self.cursor != 0 && self.cursor < self.keys.len() {
            self.cursor = self.keys.len();
        }
        let n = self.batches_per_epoch();
        let mut total = 0.0;
        for _ in 0..n {
            total += self.step()?;
        }
        Ok(total / n as f64)
    }
}

fn dev_f1(model: &SegModel, dev: &[Document]) -> Result<f64> {
    let pred = predict_segments(dev, model)?;
    let report = match model.task() {
        SegTask::Seg => score_segmentation(dev, &pred)?,
        SegTask::Conn => score_connectives(dev, &pred, ConnectiveMatch::Token)?,
    };
    Ok(report.f1.unwrap_or(0.0))
}

/// Trains for the configured number of epochs and keeps the weights of the
/// epoch with the best validation F1 (earliest on ties).
pub fn train_segmenter(
    train: &[Document],
    dev: &[Document],
    task: SegTask,
    config: &TrainingConfig,
    cache: Option<&Path>,
) -> Result<TrainedSegmenter> {
    if dev.iter().all(|d| d.token_count() == 0) {
        return Err(DiscoError::contract("validation split is empty"));
    }
    let model = SegModel::build(train, dev, task, config, cache)?;
    let mut trainer = SegTrainer::new(model, train)?;
    let mut log = Vec::new();
    let mut best: Option<(usize, f64, _)> = None;
    for epoch in 1..=config.epochs {
        let loss = trainer.epoch()?;
        let f1 = dev_f1(trainer.model(), dev)?;
        log::info!("{} epoch {epoch}: loss {loss:.4}, dev F1 {f1:.4}", task.as_str());
        log.push(EpochLog { epoch, loss, dev_f1: f1 });
        if !f1.is_finite() {
            continue;
        }
        if best.as_ref().is_none_or(|(_, b, _)| f1 > *b) {
            best = Some((epoch, f1, trainer.model().ps.snapshot()?));
        }
        if let (Some(p), Some((b, ..))) = (config.patience, &best) {
            if epoch - b >= p {
                break;
            }
        }
    }
    let (epoch, f1, snapshot) =
        best.ok_or_else(|| DiscoError::Training("validation F1 was never finite".into()))?;
    let mut model = trainer.into_model();
    model.ps.restore(&snapshot)?;
    model.meta.best_epoch = epoch;
    model.meta.dev_f1 = f1;
    Ok(TrainedSegmenter { model, log })
}

/// Labels for every token of one document.
pub fn predict_labels(model: &SegModel, doc: &Document) -> Result<Vec<SegLabel>> {
    let prepared = model.prepare(doc)?;
    let docs = std::slice::from_ref(&prepared);
    let keys = sentence_keys(docs);
    let crf = model.crf_params()?;
    let mut tags: Vec<Vec<usize>> = prepared.sents.iter().map(|s| vec![0; s.forms.len()]).collect();
    for batch in keys.chunks(model.meta.config.batch_size.max(1)) {
        for (&(_, s), t) in batch.iter().zip(model.batch_decode(docs, batch, crf.as_ref())?) {
            tags[s] = t;
        }
    }
    let task = model.task();
    Ok(tags.into_iter().flatten().map(|t| task.label_of(t)).collect())
}

/// Copies of `docs` with every token labeled by the model. Documents are
/// processed independently, so batch order never affects a document.
pub fn predict_segments(docs: &[Document], model: &SegModel) -> Result<Vec<Document>> {
    docs.iter()
        .map(|doc| {
            let labels = predict_labels(model, doc)?;
            let mut out = doc.clone();
            out.set_labels(&labels)?;
            Ok(out)
        })
        .collect()
}
