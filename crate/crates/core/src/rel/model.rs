use std::collections::BTreeMap;
use std::path::Path;

use candle_core::{DType, Tensor, D};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::features::{inject_feature_vector, FeatureEncoder, FeatureLayout};
use super::{assemble, pair_parts, truncation_lengths, FeatureMode, RelConfig};
use super::{LEFT_CLOSE, LEFT_OPEN, RIGHT_CLOSE, RIGHT_OPEN};
use crate::corpus::{CorpusId, Document, RelationInstance};
use crate::error::{read_to_string, write_string};
use crate::features::{compute_all_rel_features, default_feature_menu, CorpusFeatureConfig, RelFeatureRecord, Stoplist};
use crate::nn::bert::{load_pretrained, resolve_encoder};
use crate::nn::{Bert, BertConfig, EncoderSource, Linear, ParamGroup, ParamStore, SplitOptimizer, WordPiece};
use crate::{DiscoError, Result};

const WEIGHTS_FILE: &str = "weights.safetensors";
const META_FILE: &str = "checkpoint.json";
const FORMAT: &str = "disco-rel-1";
const RANDOM_ENCODER_WORDS: usize = 5000;

#[derive(Debug, Clone, Serialize, Deserialize)]
struct RelMeta {
    format: String,
    corpus_id: String,
    labels: Vec<String>,
    /// Index of the most frequent training label.
    majority: usize,
    feature_config: CorpusFeatureConfig,
    layout: FeatureLayout,
    encoder: BertConfig,
    tokenizer: WordPiece,
    max_len: usize,
    config: RelConfig,
    #[serde(default)]
    best_epoch: usize,
    #[serde(default)]
    dev_accuracy: f64,
}

/// Subword ids of one pair, ready for batching.
#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) struct EncodedPair {
    ids: Vec<u32>,
    type_ids: Vec<u32>,
    truncated: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RelPrediction {
    pub label: String,
    pub probs: Vec<f64>,
}

/// Encoder, feature encoder and classification head.
pub struct RelModel {
    ps: ParamStore,
    meta: RelMeta,
    bert: Bert,
    features: FeatureEncoder,
    head: Linear,
    stoplist: Stoplist,
}

fn feature_config(corpus_id: &str, config: &RelConfig) -> Result<CorpusFeatureConfig> {
    if config.feature_mode == FeatureMode::Skip {
        return Ok(CorpusFeatureConfig::none());
    }
    match &config.features {
        Some(names) => CorpusFeatureConfig::from_names(names),
        None => Ok(default_feature_menu(corpus_id)),
    }
}

impl RelModel {
    /// A fresh model for `corpus_id`; labels and feature vocabularies come
    /// from `train`.
    pub fn build(
        train: &[RelationInstance],
        docs: &[Document],
        corpus_id: &str,
        config: &RelConfig,
        cache: Option<&Path>,
    ) -> Result<Self> {
        config.validate()?;
        if train.is_empty() {
            return Err(DiscoError::contract("no training relations"));
        }
        let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
        for inst in train {
            *counts.entry(inst.label.as_str()).or_default() += 1;
        }
        let labels: Vec<String> = counts.keys().map(|s| s.to_string()).collect();
        // Earliest label wins ties, so the majority is stable across runs.
        let majority = counts
            .values()
            .enumerate()
            .fold((0, 0), |best, (i, &c)| if c > best.1 { (i, c) } else { best })
            .0;

        let feature_config = feature_config(corpus_id, config)?;
        let stoplist = Stoplist::for_language(&CorpusId::parse(corpus_id).language);
        let records = compute_all_rel_features(train, docs, &stoplist, feature_config.head_side)?;

        let mut ps = ParamStore::new(config.seed, DType::F32);
        let (encoder, tokenizer) = match resolve_encoder(&config.encoder_name, cache)? {
            EncoderSource::Random { layers, hidden } => {
                let markers = [LEFT_OPEN, LEFT_CLOSE, RIGHT_OPEN, RIGHT_CLOSE];
                let words = train
                    .iter()
                    .flat_map(|i| i.unit1_text.split_whitespace().chain(i.unit2_text.split_whitespace()))
                    .chain(markers);
                let wp = WordPiece::build_from_words(words, false, RANDOM_ENCODER_WORDS);
                (BertConfig::tiny(wp.len(), layers, hidden)?, wp)
            }
            EncoderSource::Pretrained(dir) => {
                let pre = load_pretrained(&dir)?;
                ps = ps.with_weights(pre.weights);
                (pre.config, pre.tokenizer)
            }
        };
        let layout = FeatureLayout::build(&feature_config, &records, encoder.hidden_size)?;
        let max_len = config
            .max_subwords
            .unwrap_or(usize::MAX)
            .min(encoder.max_position_embeddings);
        let meta = RelMeta {
            format: FORMAT.to_string(),
            corpus_id: corpus_id.to_string(),
            labels,
            majority,
            feature_config,
            layout,
            encoder,
            tokenizer,
            max_len,
            config: config.clone(),
            best_epoch: 0,
            dev_accuracy: 0.0,
        };
        let model = Self::assemble(ps, meta)?;
        let unused = model.ps.unused_weights();
        if !unused.is_empty() {
            log::warn!("{} pretrained weights unused, e.g. {}", unused.len(), unused[0]);
        }
        Ok(model)
    }

    fn assemble(mut ps: ParamStore, meta: RelMeta) -> Result<Self> {
        let bert = Bert::new(&mut ps, &meta.encoder)?;
        let features = FeatureEncoder::new(&mut ps, meta.layout.clone())?;
        let head = Linear::new(&mut ps, "classifier", meta.encoder.hidden_size, meta.labels.len(), ParamGroup::Other)?;
        let stoplist = Stoplist::for_language(&CorpusId::parse(&meta.corpus_id).language);
        Ok(RelModel {
            ps,
            meta,
            bert,
            features,
            head,
            stoplist,
        })
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|source| DiscoError::Io {
            path: dir.to_path_buf(),
            source,
        })?;
        self.ps.save(&dir.join(WEIGHTS_FILE))?;
        write_string(&dir.join(META_FILE), &serde_json::to_string_pretty(&self.meta)?)
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let meta: RelMeta = serde_json::from_str(&read_to_string(&dir.join(META_FILE))?)?;
        if meta.format != FORMAT {
            return Err(DiscoError::config(format!(
                "{} is not a relation checkpoint (format {:?})",
                dir.display(),
                meta.format
            )));
        }
        let weights = ParamStore::load_weights(&dir.join(WEIGHTS_FILE))?;
        let ps = ParamStore::new(meta.config.seed, DType::F32).with_weights(weights);
        let model = Self::assemble(ps, meta)?;
        let unused = model.ps.unused_weights();
        if !unused.is_empty() {
            return Err(DiscoError::config(format!("checkpoint has unexpected weights: {unused:?}")));
        }
        Ok(model)
    }

    pub fn labels(&self) -> &[String] {
        &self.meta.labels
    }

    pub fn config(&self) -> &RelConfig {
        &self.meta.config
    }

    pub fn feature_config(&self) -> &CorpusFeatureConfig {
        &self.meta.feature_config
    }

    pub fn layout(&self) -> &FeatureLayout {
        &self.meta.layout
    }

    pub fn feature_encoder(&self) -> &FeatureEncoder {
        &self.features
    }

    pub fn params(&self) -> &ParamStore {
        &self.ps
    }

    pub fn encoder(&self) -> &Bert {
        &self.bert
    }

    pub fn tokenizer(&self) -> &WordPiece {
        &self.meta.tokenizer
    }

    pub fn best_epoch(&self) -> usize {
        self.meta.best_epoch
    }

    pub fn dev_accuracy(&self) -> f64 {
        self.meta.dev_accuracy
    }

    pub fn feature_mode(&self) -> FeatureMode {
        self.meta.config.feature_mode
    }

    /// Label index for a gold label; labels unseen in training map to the
    /// most frequent training label.
    pub fn label_index(&self, label: &str) -> usize {
        match self.meta.labels.binary_search_by(|l| l.as_str().cmp(label)) {
            Ok(i) => i,
            Err(_) => {
                log::warn!(
                    "label {label:?} was not seen in training; using {:?}",
                    self.meta.labels[self.meta.majority]
                );
                self.meta.majority
            }
        }
    }

    /// Feature records for `instances`, computed against their documents.
    pub fn feature_records(&self, instances: &[RelationInstance], docs: &[Document]) -> Result<Vec<RelFeatureRecord>> {
        compute_all_rel_features(instances, docs, &self.stoplist, self.meta.feature_config.head_side)
    }

    /// Positions the injected vector takes up.
    fn injected(&self) -> usize {
        usize::from(self.feature_mode() != FeatureMode::Skip)
    }

    /// Subword ids for one instance, with unit tails cut so the sequence
    /// (plus the injected position) fits the encoder.
    pub(crate) fn encode_pair(&self, inst: &RelationInstance) -> Result<EncodedPair> {
        let wp = &self.meta.tokenizer;
        let p = pair_parts(inst)?;
        let pieces = |words: &[&str]| -> Vec<u32> { words.iter().flat_map(|w| wp.tokenize_text(w)).collect() };
        let mut u1 = pieces(&p.unit1);
        let mut u2 = pieces(&p.unit2);
        let marker = |m: &str| -> Vec<u32> { wp.tokenize_text(m) };
        let (lo, lc, ro, rc) = (marker(LEFT_OPEN), marker(LEFT_CLOSE), marker(RIGHT_OPEN), marker(RIGHT_CLOSE));
        let fixed = 3 + self.injected() + lo.len() + lc.len();
        let fixed = fixed.max(3 + self.injected() + ro.len() + rc.len());
        let budget = self.meta.max_len.saturating_sub(fixed);
        let (k1, k2) = truncation_lengths(u1.len(), u2.len(), budget);
        let truncated = (k1, k2) != (u1.len(), u2.len());
        u1.truncate(k1);
        u2.truncate(k2);
        // Markers may span several subwords; assemble over subword groups.
        let groups = |v: &[u32]| v.iter().map(|&x| vec![x]).collect::<Vec<_>>();
        let (seq, segs) = assemble(
            vec![wp.cls_id()],
            vec![wp.sep_id()],
            [lo, lc, ro, rc],
            &groups(&u1),
            &groups(&u2),
            p.direction,
        );
        let mut ids = Vec::new();
        let mut type_ids = Vec::new();
        for (g, s) in seq.into_iter().zip(segs) {
            type_ids.extend(std::iter::repeat_n(u32::from(s), g.len()));
            ids.extend(g);
        }
        Ok(EncodedPair { ids, type_ids, truncated })
    }

    /// Logits `[B, labels]` for a batch of encoded pairs and their records.
    pub(crate) fn logits(&self, pairs: &[&EncodedPair], records: &[&RelFeatureRecord]) -> Result<Tensor> {
        if pairs.len() != records.len() || pairs.is_empty() {
            return Err(DiscoError::contract("one feature record per pair required"));
        }
        let b = pairs.len();
        let l = pairs.iter().map(|p| p.ids.len()).max().unwrap_or(0);
        let pad = self.meta.tokenizer.pad_id();
        let mut ids = Vec::with_capacity(b * l);
        let mut types = Vec::with_capacity(b * l);
        let mut mask = Vec::with_capacity(b * l);
        for p in pairs {
            let n = p.ids.len();
            ids.extend(p.ids.iter().copied().chain(std::iter::repeat_n(pad, l - n)));
            types.extend(p.type_ids.iter().copied().chain(std::iter::repeat_n(0, l - n)));
            mask.extend((0..l).map(|i| if i < n { 1f32 } else { 0.0 }));
        }
        let dev = self.ps.device();
        let ids = Tensor::from_vec(ids, (b, l), dev)?;
        let types = Tensor::from_vec(types, (b, l), dev)?;
        let mask = Tensor::from_vec(mask, (b, l), dev)?.to_dtype(self.ps.dtype())?;
        let embedded = self.bert.embed(&ids, &types)?;
        let (x, mask) = match self.feature_mode() {
            FeatureMode::Skip => (embedded, mask),
            FeatureMode::Inject => {
                let fvec = self.features.encode(records, &self.ps)?;
                inject_feature_vector(&embedded, &mask, &fvec)?
            }
            FeatureMode::Zero => {
                let fvec = Tensor::zeros((b, self.bert.hidden()), embedded.dtype(), dev)?;
                inject_feature_vector(&embedded, &mask, &fvec)?
            }
        };
        let seq = self.bert.encode(&x, &mask)?;
        self.head.forward(&self.bert.pool(&seq)?)
    }

    /// Label distribution for one instance.
    pub fn classify(&self, inst: &RelationInstance, record: &RelFeatureRecord) -> Result<Vec<f64>> {
        let pair = self.encode_pair(inst)?;
        if pair.truncated {
            log::warn!("truncated relation in {} to fit the encoder", inst.doc_id);
        }
        let logits = self.logits(&[&pair], &[record])?;
        let probs = candle_nn::ops::softmax(&logits.to_dtype(DType::F64)?, D::Minus1)?;
        Ok(probs.squeeze(0)?.to_vec1::<f64>()?)
    }

    fn batch_loss(&self, pairs: &[&EncodedPair], records: &[&RelFeatureRecord], gold: &[u32]) -> Result<Tensor> {
        let logits = self.logits(pairs, records)?;
        let gold = Tensor::new(gold, self.ps.device())?;
        Ok(candle_nn::loss::cross_entropy(&logits, &gold)?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelEpochLog {
    pub epoch: usize,
    pub loss: f64,
    pub dev_accuracy: f64,
}

pub struct TrainedRelClassifier {
    pub model: RelModel,
    pub log: Vec<RelEpochLog>,
}

/// Predicted label and distribution for each instance, in input order.
pub fn predict_relations(
    model: &RelModel,
    instances: &[RelationInstance],
    docs: &[Document],
) -> Result<Vec<RelPrediction>> {
    let records = model.feature_records(instances, docs)?;
    let pairs = instances.iter().map(|i| model.encode_pair(i)).collect::<Result<Vec<_>>>()?;
    let cut = pairs.iter().filter(|p| p.truncated).count();
    if cut > 0 {
        log::warn!("truncated {cut} relation instances to fit the encoder");
    }
    let mut out = Vec::with_capacity(instances.len());
    let bs = model.config().batch_size.max(1);
    for start in (0..instances.len()).step_by(bs) {
        let end = (start + bs).min(instances.len());
        let p: Vec<&EncodedPair> = pairs[start..end].iter().collect();
        let r: Vec<&RelFeatureRecord> = records[start..end].iter().collect();
        let logits = model.logits(&p, &r)?.to_dtype(DType::F64)?;
        let probs = candle_nn::ops::softmax(&logits, D::Minus1)?.to_vec2::<f64>()?;
        for row in probs {
            let best = row
                .iter()
                .enumerate()
                .fold(0, |b, (i, &x)| if x > row[b] { i } else { b });
            out.push(RelPrediction {
                label: model.labels()[best].clone(),
                probs: row,
            });
        }
    }
    Ok(out)
}

fn accuracy(model: &RelModel, instances: &[RelationInstance], docs: &[Document]) -> Result<f64> {
    let pred = predict_relations(model, instances, docs)?;
    let correct = pred
        .iter()
        .zip(instances)
        .filter(|(p, i)| model.labels()[model.label_index(&i.label)] == p.label)
        .count();
    Ok(correct as f64 / instances.len() as f64)
}

/// Fine-tunes the classifier and keeps the epoch with the best validation
/// accuracy (earliest on ties).
pub fn train_rel_classifier(
    train: &[RelationInstance],
    dev: &[RelationInstance],
    docs: &[Document],
    corpus_id: &str,
    config: &RelConfig,
    cache: Option<&Path>,
) -> Result<TrainedRelClassifier> {
    if dev.is_empty() {
        return Err(DiscoError::contract("validation split is empty"));
    }
    let mut model = RelModel::build(train, docs, corpus_id, config, cache)?;
    let records = model.feature_records(train, docs)?;
    let pairs = train.iter().map(|i| model.encode_pair(i)).collect::<Result<Vec<_>>>()?;
    let gold: Vec<u32> = train.iter().map(|i| model.label_index(&i.label) as u32).collect();
    let mut opt = SplitOptimizer::new(&model.ps, config.lr_encoder, config.lr_other, config.grad_clip)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(0x5eed));
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut log = Vec::new();
    let mut best: Option<(usize, f64, _)> = None;
    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        let mut batches = 0;
        for batch in order.chunks(config.batch_size) {
            let p: Vec<&EncodedPair> = batch.iter().map(|&i| &pairs[i]).collect();
            let r: Vec<&RelFeatureRecord> = batch.iter().map(|&i| &records[i]).collect();
            let g: Vec<u32> = batch.iter().map(|&i| gold[i]).collect();
            let loss = model.batch_loss(&p, &r, &g)?;
            let value = loss.to_dtype(DType::F64)?.to_scalar::<f64>()?;
            if !value.is_finite() {
                return Err(DiscoError::Training(format!("loss became {value}")));
            }
            opt.backward_step(&loss)?;
            total += value;
            batches += 1;
        }
        let loss = total / batches as f64;
        let acc = accuracy(&model, dev, docs)?;
        log::info!("rel epoch {epoch}: loss {loss:.4}, dev accuracy {acc:.4}");
        log.push(RelEpochLog {
            epoch,
            loss,
            dev_accuracy: acc,
        });
        if best.as_ref().is_none_or(|(_, b, _)| acc > *b) {
            best = Some((epoch, acc, model.ps.snapshot()?));
        }
        if let (Some(p), Some((b, ..))) = (config.patience, &best) {
            if epoch - b >= p {
                break;
            }
        }
    }
    let (epoch, acc, snapshot) = best.expect("at least one epoch");
    model.ps.restore(&snapshot)?;
    model.meta.best_epoch = epoch;
    model.meta.dev_accuracy = acc;
    Ok(TrainedRelClassifier { model, log })
}
