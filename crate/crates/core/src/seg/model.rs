use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use candle_core::{DType, Device, Tensor};
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{Components, DecodeMode, SegModelDims, SegTask, TrainingConfig, D_CHAR};
use crate::corpus::{Document, Sentence};
use crate::error::{read_to_string, write_string};
use crate::features::{extract_seg_features, scale_numeric, SegFeatureVocabs, TokenFeatureRecord};
use crate::nn::bert::{load_pretrained, resolve_encoder};
use crate::nn::{
    masked_cross_entropy, to_rows, Bert, BertConfig, BiLstm, Crf, CrfParams, EncoderSource, Embedding, Init,
    Linear, ParamGroup, ParamStore, WordPiece,
};
use crate::{DiscoError, Result};

const CHAR_EMB: usize = 32;
const MAX_CHARS: usize = 40;
const RANDOM_ENCODER_WORDS: usize = 5000;
const STATIC_STD: f64 = 0.1;
const OTHER: ParamGroup = ParamGroup::Other;

pub(crate) const WEIGHTS_FILE: &str = "weights.safetensors";
pub(crate) const META_FILE: &str = "checkpoint.json";
const FORMAT: &str = "disco-seg-1";

/// Vocabularies fixed at training time.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SegVocabs {
    /// Id 0 pads, 1 is unknown, characters follow.
    pub chars: Vec<char>,
    /// Static vector rows; id 0 is the OOV row.
    pub words: Vec<String>,
    pub subwords: WordPiece,
    pub features: SegFeatureVocabs,
    #[serde(skip)]
    char_index: HashMap<char, u32>,
    #[serde(skip)]
    word_index: HashMap<String, u32>,
}

impl SegVocabs {
    fn new(chars: Vec<char>, words: Vec<String>, subwords: WordPiece, features: SegFeatureVocabs) -> Self {
        let mut v = SegVocabs {
            chars,
            words,
            subwords,
            features,
            char_index: HashMap::new(),
            word_index: HashMap::new(),
        };
        v.reindex();
        v
    }

    fn reindex(&mut self) {
        self.char_index = self.chars.iter().enumerate().map(|(i, &c)| (c, i as u32 + 2)).collect();
        self.word_index = self
            .words
            .iter()
            .enumerate()
            .map(|(i, w)| (w.clone(), i as u32 + 1))
            .collect();
    }

    pub fn char_id(&self, c: char) -> u32 {
        self.char_index.get(&c).copied().unwrap_or(1)
    }

    /// Exact form first, then lowercased; 0 when unknown.
    pub fn word_id(&self, form: &str) -> u32 {
        self.word_index
            .get(form)
            .or_else(|| self.word_index.get(&form.to_lowercase()))
            .copied()
            .unwrap_or(0)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub(crate) struct SegMeta {
    pub format: String,
    pub task: SegTask,
    pub decode_mode: DecodeMode,
    pub dims: SegModelDims,
    pub components: Components,
    pub encoder: BertConfig,
    pub window: usize,
    pub vocabs: SegVocabs,
    pub config: TrainingConfig,
    #[serde(default)]
    pub best_epoch: usize,
    #[serde(default)]
    pub dev_f1: f64,
}

/// Model inputs for one sentence.
#[derive(Debug, Clone)]
pub(crate) struct PreparedSent {
    pub forms: Vec<String>,
    pub static_ids: Vec<u32>,
    pub subwords: Vec<Vec<u32>>,
    pub feat_ids: Vec<Vec<u32>>,
    pub numerics: Vec<[f32; 4]>,
    pub gold: Vec<usize>,
}

impl PreparedSent {
    fn len(&self) -> usize {
        self.forms.len()
    }
}

#[derive(Debug, Clone)]
pub(crate) struct PreparedDoc {
    pub sents: Vec<PreparedSent>,
}

/// The tagger: embedding stack, neighbor summary, bi-LSTM and decoder.
pub struct SegModel {
    pub(crate) ps: ParamStore,
    pub(crate) meta: SegMeta,
    char_emb: Option<Embedding>,
    char_lstm: Option<BiLstm>,
    static_table: Option<Tensor>,
    bert: Bert,
    feat_embs: Vec<Embedding>,
    marker: Option<Tensor>,
    neighbor_lstm: Option<BiLstm>,
    encoder: BiLstm,
    proj: Linear,
    crf: Option<Crf>,
}

fn read_vec_file(path: &Path, dim: usize, words: &[String]) -> Result<HashMap<String, Vec<f32>>> {
    let wanted: std::collections::HashSet<&str> = words.iter().map(String::as_str).collect();
    let text = read_to_string(path)?;
    let mut out = HashMap::new();
    for (i, line) in text.lines().enumerate() {
        let mut parts = line.split(' ');
        let Some(word) = parts.next() else { continue };
        let rest: Vec<&str> = parts.filter(|p| !p.is_empty()).collect();
        if i == 0 && rest.len() == 1 {
            continue;
        }
        if !wanted.contains(word) {
            continue;
        }
        if rest.len() != dim {
            return Err(DiscoError::format(i + 1, format!("expected {dim} vector components, found {}", rest.len())));
        }
        let v = rest
            .iter()
            .map(|x| x.parse::<f32>().map_err(|_| DiscoError::format(i + 1, format!("bad number {x:?}"))))
            .collect::<Result<Vec<_>>>()?;
        out.insert(word.to_string(), v);
    }
    Ok(out)
}

impl SegModel {
    /// Builds a fresh model with vocabularies taken from `train` (and the
    /// forms of `dev` for the static table).
    pub fn build(
        train: &[Document],
        dev: &[Document],
        task: SegTask,
        config: &TrainingConfig,
        cache: Option<&Path>,
    ) -> Result<Self> {
        config.validate()?;
        if train.iter().all(|d| d.token_count() == 0) {
            return Err(DiscoError::contract("training corpus is empty"));
        }
        let mut chars: Vec<char> = train
            .iter()
            .flat_map(|d| d.tokens())
            .flat_map(|t| t.form.chars())
            .collect::<std::collections::BTreeSet<_>>()
            .into_iter()
            .collect();
        chars.dedup();
        let mut words: Vec<String> = train
            .iter()
            .chain(dev)
            .flat_map(|d| d.tokens())
            .map(|t| t.form.clone())
            .collect::<std::collections::BTreeSet<_>>()
            .into_iter()
            .collect();
        let file_vectors = match &config.static_vectors {
            Some(p) if config.components.static_vectors => {
                let v = read_vec_file(p, super::D_STATIC, &words)?;
                words.retain(|w| v.contains_key(w));
                Some(v)
            }
            _ => None,
        };
        let records: Vec<TokenFeatureRecord> = train.iter().flat_map(extract_seg_features).collect();
        let features = SegFeatureVocabs::build(&records);

        let mut ps = ParamStore::new(config.seed, DType::F32);
        let (encoder, subwords) = match resolve_encoder(&config.encoder_name, cache)? {
            EncoderSource::Random { layers, hidden } => {
                let wp = WordPiece::build_from_words(
                    train.iter().flat_map(|d| d.tokens()).map(|t| t.form.as_str()),
                    false,
                    RANDOM_ENCODER_WORDS,
                );
                (BertConfig::tiny(wp.len(), layers, hidden)?, wp)
            }
            EncoderSource::Pretrained(dir) => {
                let pre = load_pretrained(&dir)?;
                ps = ps.with_weights(pre.weights);
                (pre.config, pre.tokenizer)
            }
        };
        let vocabs = SegVocabs::new(chars, words, subwords, features);
        let d_feat = vocabs.features.feature_dim();
        let dims = SegModelDims::new(
            config.components,
            encoder.hidden_size,
            d_feat,
            config.d_neighbors,
            config.lstm_hidden,
            task.tagset(),
        );
        let window = config
            .max_subwords
            .unwrap_or(usize::MAX)
            .min(encoder.max_position_embeddings.saturating_sub(2))
            .max(1);
        let meta = SegMeta {
            format: FORMAT.to_string(),
            task,
            decode_mode: config.decode_mode,
            dims,
            components: config.components,
            encoder,
            window,
            vocabs,
            config: config.clone(),
            best_epoch: 0,
            dev_f1: 0.0,
        };
        let model = Self::assemble(ps, meta, file_vectors)?;
        let unused = model.ps.unused_weights();
        if !unused.is_empty() {
            log::warn!("{} pretrained weights unused, e.g. {}", unused.len(), unused[0]);
        }
        Ok(model)
    }

    fn assemble(mut ps: ParamStore, meta: SegMeta, file_vectors: Option<HashMap<String, Vec<f32>>>) -> Result<Self> {
        meta.dims.check()?;
        let c = meta.components;
        let dims = &meta.dims;
        let (char_emb, char_lstm) = if c.char {
            let rows = meta.vocabs.chars.len() + 2;
            (
                Some(Embedding::new(&mut ps, "char.embedding", rows, CHAR_EMB, Init::Normal(0.1), OTHER)?),
                Some(BiLstm::new(&mut ps, "char.lstm", CHAR_EMB, D_CHAR / 2, OTHER)?),
            )
        } else {
            (None, None)
        };
        let static_table = if c.static_vectors {
            let rows = meta.vocabs.words.len() + 1;
            let d = dims.d_static;
            let words = &meta.vocabs.words;
            Some(ps.frozen("static.table", &[rows, d], |rng| {
                let mut v = vec![0f32; d];
                match &file_vectors {
                    Some(file) => {
                        for w in words {
                            v.extend_from_slice(&file[w]);
                        }
                    }
                    None => {
                        let dist = Normal::new(0.0, STATIC_STD).expect("finite std");
                        v.extend((0..words.len() * d).map(|_| dist.sample(rng) as f32));
                    }
                }
                v
            })?)
        } else {
            None
        };
        let bert = Bert::new(&mut ps, &meta.encoder)?;
        let feat_embs = if c.features {
            meta.vocabs
                .features
                .vocabs
                .iter()
                .enumerate()
                .map(|(k, v)| {
                    let name = format!("features.{}", TokenFeatureRecord::CATEGORICAL[k]);
                    Embedding::new(&mut ps, &name, v.table_size(), v.embed_dim(), Init::Normal(0.3), OTHER)
                })
                .collect::<Result<Vec<_>>>()?
        } else {
            Vec::new()
        };
        let nb_in = Self::neighbor_input_dim(dims, c);
        let (marker, neighbor_lstm) = if dims.d_neighbors > 0 {
            (
                Some(ps.param("neighbors.marker", &[nb_in], Init::Normal(0.1), OTHER)?),
                Some(BiLstm::new(&mut ps, "neighbors.lstm", nb_in, dims.d_neighbors / 2, OTHER)?),
            )
        } else {
            (None, None)
        };
        let encoder = BiLstm::new(&mut ps, "encoder.lstm", dims.d_enc, dims.lstm_hidden, OTHER)?;
        let k = dims.tagset.len();
        let proj = Linear::new(&mut ps, "decoder.proj", 2 * dims.lstm_hidden, k, OTHER)?;
        let crf = match meta.decode_mode {
            DecodeMode::Linear => None,
            DecodeMode::Crf => {
                let crf = Crf::new(&mut ps, "decoder.crf", k, OTHER)?;
                Some(match meta.task {
                    SegTask::Conn => crf.forbid_transition(0, 2).forbid_start(2),
                    SegTask::Seg => crf,
                })
            }
        };
        Ok(SegModel {
            ps,
            meta,
            char_emb,
            char_lstm,
            static_table,
            bert,
            feat_embs,
            marker,
            neighbor_lstm,
            encoder,
            proj,
            crf,
        })
    }

    fn neighbor_input_dim(dims: &SegModelDims, c: Components) -> usize {
        if c.char || c.static_vectors {
            dims.d_char + dims.d_static
        } else {
            dims.d_cwe
        }
    }

    pub fn dims(&self) -> &SegModelDims {
        &self.meta.dims
    }

    pub fn task(&self) -> SegTask {
        self.meta.task
    }

    pub fn decode_mode(&self) -> DecodeMode {
        self.meta.decode_mode
    }

    pub fn config(&self) -> &TrainingConfig {
        &self.meta.config
    }

    pub fn vocabs(&self) -> &SegVocabs {
        &self.meta.vocabs
    }

    pub fn params(&self) -> &ParamStore {
        &self.ps
    }

    /// The frozen static vector table, when static vectors are enabled.
    pub fn static_table(&self) -> Option<&Tensor> {
        self.static_table.as_ref()
    }

    pub fn crf(&self) -> Option<&Crf> {
        self.crf.as_ref()
    }

    pub fn best_epoch(&self) -> usize {
        self.meta.best_epoch
    }

    pub fn dev_f1(&self) -> f64 {
        self.meta.dev_f1
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        self.ps.save(&dir.join(WEIGHTS_FILE))?;
        write_string(&dir.join(META_FILE), &serde_json::to_string_pretty(&self.meta)?)
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let mut meta: SegMeta = serde_json::from_str(&read_to_string(&dir.join(META_FILE))?)?;
        if meta.format != FORMAT {
            return Err(DiscoError::config(format!(
                "{} is not a segmenter checkpoint (format {:?})",
                dir.display(),
                meta.format
            )));
        }
        meta.vocabs.reindex();
        let weights = ParamStore::load_weights(&dir.join(WEIGHTS_FILE))?;
        let ps = ParamStore::new(meta.config.seed, DType::F32).with_weights(weights);
        let model = Self::assemble(ps, meta, None)?;
        let unused = model.ps.unused_weights();
        if !unused.is_empty() {
            return Err(DiscoError::config(format!("checkpoint has unexpected weights: {unused:?}")));
        }
        Ok(model)
    }

    pub(crate) fn prepare_sentence(&self, sent: &Sentence, records: Option<&[TokenFeatureRecord]>) -> Result<PreparedSent> {
        let v = &self.meta.vocabs;
        let mut feat_ids = Vec::new();
        let mut numerics = Vec::new();
        if let Some(recs) = records {
            for r in recs {
                feat_ids.push(v.features.indices(r).into_iter().map(|i| i as u32).collect());
                let n = r.numeric_values();
                let mut arr = [0f32; 4];
                for (slot, x) in arr.iter_mut().zip(n) {
                    *slot = scale_numeric(x)? as f32;
                }
                numerics.push(arr);
            }
        }
        Ok(PreparedSent {
            forms: sent.tokens.iter().map(|t| t.form.clone()).collect(),
            static_ids: sent.tokens.iter().map(|t| v.word_id(&t.form)).collect(),
            subwords: sent.tokens.iter().map(|t| v.subwords.tokenize_word(&t.form)).collect(),
            feat_ids,
            numerics,
            gold: sent.tokens.iter().map(|t| self.meta.task.tag_of(t.seg_label)).collect(),
        })
    }

    pub(crate) fn prepare(&self, doc: &Document) -> Result<PreparedDoc> {
        let records = extract_seg_features(doc);
        let mut sents = Vec::with_capacity(doc.sentences.len());
        let mut at = 0;
        for sent in &doc.sentences {
            let recs = &records[at..at + sent.len()];
            at += sent.len();
            sents.push(self.prepare_sentence(sent, Some(recs))?);
        }
        Ok(PreparedDoc { sents })
    }

    fn dtype(&self) -> DType {
        self.ps.dtype()
    }

    fn device(&self) -> &Device {
        self.ps.device()
    }

    fn char_reps(&self, forms: &[&str]) -> Result<Option<Tensor>> {
        let (Some(emb), Some(lstm)) = (&self.char_emb, &self.char_lstm) else {
            return Ok(None);
        };
        let mut unique: BTreeMap<&str, u32> = BTreeMap::new();
        for f in forms {
            let n = unique.len() as u32;
            unique.entry(f).or_insert(n);
        }
        let mut ordered = vec![""; unique.len()];
        for (f, &i) in &unique {
            ordered[i as usize] = f;
        }
        let ids: Vec<Vec<u32>> = ordered
            .iter()
            .map(|f| {
                let mut v: Vec<u32> = f.chars().take(MAX_CHARS).map(|c| self.meta.vocabs.char_id(c)).collect();
                if v.is_empty() {
                    v.push(1);
                }
                v
            })
            .collect();
        let (x, mask) = self.pad_ids(&ids, 0)?;
        let (_, summary) = lstm.forward(&emb.forward(&x)?, &mask)?;
        let select: Vec<u32> = forms.iter().map(|f| unique[f]).collect();
        let select = Tensor::from_vec(select, forms.len(), self.device())?;
        Ok(Some(summary.index_select(&select, 0)?))
    }

    /// Right-pads id rows into a `[B, T]` u32 tensor plus a float mask.
    fn pad_ids(&self, rows: &[Vec<u32>], pad: u32) -> Result<(Tensor, Tensor)> {
        let t = rows.iter().map(Vec::len).max().unwrap_or(0).max(1);
        let mut ids = Vec::with_capacity(rows.len() * t);
        let mut mask = Vec::with_capacity(rows.len() * t);
        for r in rows {
            for j in 0..t {
                ids.push(r.get(j).copied().unwrap_or(pad));
                mask.push(if j < r.len() { 1f32 } else { 0f32 });
            }
        }
        let ids = Tensor::from_vec(ids, (rows.len(), t), self.device())?;
        let mask = Tensor::from_vec(mask, (rows.len(), t), self.device())?.to_dtype(self.dtype())?;
        Ok((ids, mask))
    }

    fn static_reps(&self, sents: &[&PreparedSent]) -> Result<Option<Tensor>> {
        let Some(table) = &self.static_table else {
            return Ok(None);
        };
        let ids: Vec<u32> = sents.iter().flat_map(|s| s.static_ids.iter().copied()).collect();
        let n = ids.len();
        Ok(Some(table.index_select(&Tensor::from_vec(ids, n, self.device())?, 0)?))
    }

    /// Average-pooled final-layer subword states per token, `[n_tokens, d_cwe]`.
    fn cwe_reps(&self, sents: &[&PreparedSent]) -> Result<Tensor> {
        let wp = &self.meta.vocabs.subwords;
        let w = self.meta.window;
        let mut rows: Vec<Vec<u32>> = Vec::new();
        // (token row, window row, position in window, weight)
        let mut pairs: Vec<(u32, usize, usize, f32)> = Vec::new();
        let mut tok_base = 0u32;
        for s in sents {
            let mut flat = Vec::new();
            let mut owner = Vec::new();
            for (i, subs) in s.subwords.iter().enumerate() {
                if subs.is_empty() {
                    flat.push(wp.unk_id());
                    owner.push(i);
                } else {
                    flat.extend_from_slice(subs);
                    owner.extend(std::iter::repeat_n(i, subs.len()));
                }
            }
            let n_sub = flat.len();
            let mut starts = vec![0usize];
            if n_sub > w {
                let stride = (w / 2).max(1);
                let mut s0 = 0;
                while s0 + w < n_sub {
                    s0 = (s0 + stride).min(n_sub - w);
                    starts.push(s0);
                }
            }
            let first_row = rows.len();
            for &st in &starts {
                let end = (st + w).min(n_sub);
                let mut r = Vec::with_capacity(end - st + 2);
                r.push(wp.cls_id());
                r.extend_from_slice(&flat[st..end]);
                r.push(wp.sep_id());
                rows.push(r);
            }
            let mut counts = vec![0usize; s.len()];
            for &o in &owner {
                counts[o] += 1;
            }
            for p in 0..n_sub {
                let mut best = 0;
                let mut best_dist = f64::INFINITY;
                for (k, &st) in starts.iter().enumerate() {
                    let end = (st + w).min(n_sub);
                    if p < st || p >= end {
                        continue;
                    }
                    let center = (st + end) as f64 / 2.0 - 0.5;
                    let dist = (p as f64 - center).abs();
                    if dist < best_dist {
                        best_dist = dist;
                        best = k;
                    }
                }
                let tok = owner[p];
                pairs.push((
                    tok_base + tok as u32,
                    first_row + best,
                    1 + p - starts[best],
                    1.0 / counts[tok] as f32,
                ));
            }
            tok_base += s.len() as u32;
        }
        let (ids, mask) = self.pad_ids(&rows, wp.pad_id())?;
        let (r, l) = ids.dims2()?;
        let hidden = self
            .bert
            .encode(&self.bert.embed(&ids, &ids.zeros_like()?)?, &mask)?
            .reshape((r * l, self.bert.hidden()))?;
        let p = pairs.len();
        let dev = self.device();
        let flat_pos: Vec<u32> = pairs.iter().map(|&(_, row, pos, _)| (row * l + pos) as u32).collect();
        let tok_idx: Vec<u32> = pairs.iter().map(|&(t, ..)| t).collect();
        let weights: Vec<f32> = pairs.iter().map(|&(.., wt)| wt).collect();
        let gathered = hidden
            .index_select(&Tensor::from_vec(flat_pos, p, dev)?, 0)?
            .broadcast_mul(&Tensor::from_vec(weights, (p, 1), dev)?.to_dtype(self.dtype())?)?;
        let out = Tensor::zeros((tok_base as usize, self.bert.hidden()), self.dtype(), dev)?;
        Ok(out.index_add(&Tensor::from_vec(tok_idx, p, dev)?, &gathered, 0)?)
    }

    fn feature_reps(&self, sents: &[&PreparedSent]) -> Result<Option<Tensor>> {
        if self.feat_embs.is_empty() {
            return Ok(None);
        }
        let n: usize = sents.iter().map(|s| s.len()).sum();
        let dev = self.device();
        let mut parts = Vec::new();
        for (k, emb) in self.feat_embs.iter().enumerate() {
            let ids: Vec<u32> = sents.iter().flat_map(|s| s.feat_ids.iter().map(move |f| f[k])).collect();
            if ids.len() != n {
                return Err(DiscoError::contract("feature records missing for some tokens"));
            }
            parts.push(emb.forward(&Tensor::from_vec(ids, n, dev)?)?);
        }
        let nums: Vec<f32> = sents.iter().flat_map(|s| s.numerics.iter().flatten().copied()).collect();
        parts.push(Tensor::from_vec(nums, (n, 4), dev)?.to_dtype(self.dtype())?);
        Ok(Some(Tensor::cat(&parts, 1)?))
    }

    /// Char+static rows (or CWE rows when both are disabled) for neighbor tokens.
    fn neighbor_base(&self, chars: Option<&Tensor>, statics: Option<&Tensor>, cwe: &Tensor) -> Result<Tensor> {
        let parts: Vec<Tensor> = [chars, statics].into_iter().flatten().cloned().collect();
        if parts.is_empty() {
            Ok(cwe.clone())
        } else {
            Ok(Tensor::cat(&parts, 1)?)
        }
    }

    /// Summaries `[S, d_neighbors]` for sequences of rows of `base`; `None`
    /// marks the marker position. Empty sequences summarize to zeros.
    fn summarize(&self, base: &Tensor, seqs: &[Option<Vec<Option<u32>>>]) -> Result<Tensor> {
        let d_nb = self.meta.dims.d_neighbors;
        let dev = self.device();
        let (Some(marker), Some(lstm)) = (&self.marker, &self.neighbor_lstm) else {
            return Ok(Tensor::zeros((seqs.len(), d_nb), self.dtype(), dev)?);
        };
        let n = base.dims()[0] as u32;
        let (marker_row, pad_row) = (n, n + 1);
        let present: Vec<Vec<u32>> = seqs
            .iter()
            .flatten()
            .map(|s| s.iter().map(|r| r.unwrap_or(marker_row)).collect())
            .collect();
        if present.is_empty() {
            return Ok(Tensor::zeros((seqs.len(), d_nb), self.dtype(), dev)?);
        }
        let d_in = base.dims()[1];
        let table = Tensor::cat(
            &[base.clone(), marker.unsqueeze(0)?, Tensor::zeros((1, d_in), self.dtype(), dev)?],
            0,
        )?;
        let (idx, mask) = self.pad_ids(&present, pad_row)?;
        let (b, t) = idx.dims2()?;
        let x = table.index_select(&idx.flatten_all()?, 0)?.reshape((b, t, d_in))?;
        let (_, summary) = lstm.forward(&x, &mask)?;
        let summary = Tensor::cat(&[summary, Tensor::zeros((1, d_nb), self.dtype(), dev)?], 0)?;
        let mut k = 0u32;
        let pick: Vec<u32> = seqs
            .iter()
            .map(|s| match s {
                Some(_) => {
                    k += 1;
                    k - 1
                }
                None => present.len() as u32,
            })
            .collect();
        Ok(summary.index_select(&Tensor::from_vec(pick, seqs.len(), dev)?, 0)?)
    }

    /// Padded encoder input `[B, T, d_enc]` and mask `[B, T]` for a batch of
    /// `(document, sentence)` keys.
    pub(crate) fn encode_inputs(&self, docs: &[PreparedDoc], batch: &[(usize, usize)]) -> Result<(Tensor, Tensor)> {
        let dims = &self.meta.dims;
        let c = self.meta.components;
        let use_nb = dims.d_neighbors > 0;
        let mut slots: Vec<(usize, usize)> = batch.to_vec();
        let mut slot_of: HashMap<(usize, usize), usize> = HashMap::new();
        for (i, &k) in batch.iter().enumerate() {
            slot_of.entry(k).or_insert(i);
        }
        if use_nb {
            for &(d, s) in batch {
                let mut add = |key: (usize, usize)| {
                    if let std::collections::hash_map::Entry::Vacant(e) = slot_of.entry(key) {
                        e.insert(slots.len());
                        slots.push(key);
                    }
                };
                if s > 0 {
                    add((d, s - 1));
                }
                if s + 1 < docs[d].sents.len() {
                    add((d, s + 1));
                }
            }
        }
        let sents: Vec<&PreparedSent> = slots.iter().map(|&(d, s)| &docs[d].sents[s]).collect();
        let mut offsets = Vec::with_capacity(sents.len());
        let mut n_tok = 0usize;
        for s in &sents {
            offsets.push(n_tok);
            n_tok += s.len();
        }
        let n_center: usize = sents[..batch.len()].iter().map(|s| s.len()).sum();
        let nb_uses_cwe = use_nb && !(c.char || c.static_vectors);
        let all_forms: Vec<&str> = sents.iter().flat_map(|s| s.forms.iter().map(String::as_str)).collect();
        let forms: &[&str] = if use_nb { &all_forms } else { &all_forms[..n_center] };
        let chars = self.char_reps(forms)?;
        let statics = self.static_reps(if use_nb { &sents } else { &sents[..batch.len()] })?;
        let cwe = self.cwe_reps(if nb_uses_cwe { &sents } else { &sents[..batch.len()] })?;

        let mut parts = Vec::new();
        for t in [&chars, &statics].into_iter().flatten() {
            parts.push(t.narrow(0, 0, n_center)?);
        }
        parts.push(cwe.narrow(0, 0, n_center)?);
        if let Some(f) = self.feature_reps(&sents[..batch.len()])? {
            parts.push(f);
        }
        if use_nb {
            let base = self.neighbor_base(chars.as_ref(), statics.as_ref(), &cwe)?;
            let (offs, sents_ref) = (&offsets, &sents);
            let rows = move |slot: usize| (0..sents_ref[slot].len()).map(move |i| Some((offs[slot] + i) as u32));
            let seqs: Vec<Option<Vec<Option<u32>>>> = batch
                .iter()
                .map(|&(d, s)| {
                    let prev = (s > 0).then(|| slot_of[&(d, s - 1)]);
                    let next = (s + 1 < docs[d].sents.len()).then(|| slot_of[&(d, s + 1)]);
                    if prev.is_none() && next.is_none() {
                        return None;
                    }
                    let mut seq: Vec<Option<u32>> = Vec::new();
                    if let Some(p) = prev {
                        seq.extend(rows(p));
                    }
                    seq.push(None);
                    if let Some(nx) = next {
                        seq.extend(rows(nx));
                    }
                    Some(seq)
                })
                .collect();
            let summaries = self.summarize(&base, &seqs)?;
            let owner: Vec<u32> = (0..batch.len())
                .flat_map(|b| std::iter::repeat_n(b as u32, sents[b].len()))
                .collect();
            parts.push(summaries.index_select(&Tensor::from_vec(owner, n_center, self.device())?, 0)?);
        }
        let x = Tensor::cat(&parts, 1)?;
        if x.dims()[1] != dims.d_enc {
            return Err(DiscoError::contract(format!(
                "assembled {} input columns, expected d_enc = {}",
                x.dims()[1],
                dims.d_enc
            )));
        }
        let rows: Vec<Vec<u32>> = (0..batch.len())
            .map(|b| (offsets[b]..offsets[b] + sents[b].len()).map(|i| i as u32).collect())
            .collect();
        let (idx, mask) = self.pad_ids(&rows, n_center as u32)?;
        let (b, t) = idx.dims2()?;
        let table = Tensor::cat(&[x, Tensor::zeros((1, dims.d_enc), self.dtype(), self.device())?], 0)?;
        let x = table.index_select(&idx.flatten_all()?, 0)?.reshape((b, t, dims.d_enc))?;
        Ok((x, mask))
    }

    /// Emission scores `[B, T, K]` for padded encoder input.
    fn emissions_from(&self, x: &Tensor, mask: &Tensor) -> Result<Tensor> {
        let (h, _) = self.encoder.forward(x, mask)?;
        self.proj.forward(&h)
    }

    pub(crate) fn batch_emissions(&self, docs: &[PreparedDoc], batch: &[(usize, usize)]) -> Result<(Tensor, Tensor)> {
        let (x, mask) = self.encode_inputs(docs, batch)?;
        Ok((self.emissions_from(&x, &mask)?, mask))
    }

    pub(crate) fn batch_loss(&self, docs: &[PreparedDoc], batch: &[(usize, usize)]) -> Result<Tensor> {
        let (em, mask) = self.batch_emissions(docs, batch)?;
        let gold: Vec<Vec<usize>> = batch.iter().map(|&(d, s)| docs[d].sents[s].gold.clone()).collect();
        match &self.crf {
            Some(crf) => crf.neg_log_likelihood(&em, &gold, &mask),
            None => masked_cross_entropy(&em, &gold, &mask),
        }
    }

    pub(crate) fn crf_params(&self) -> Result<Option<CrfParams>> {
        self.crf.as_ref().map(Crf::host_params).transpose()
    }

    /// Decoded tags for each key of a batch.
    pub(crate) fn batch_decode(
        &self,
        docs: &[PreparedDoc],
        batch: &[(usize, usize)],
        crf: Option<&CrfParams>,
    ) -> Result<Vec<Vec<usize>>> {
        let (em, _) = self.batch_emissions(docs, batch)?;
        let mut out = Vec::with_capacity(batch.len());
        for (b, &(d, s)) in batch.iter().enumerate() {
            let n = docs[d].sents[s].len();
            let rows = to_rows(&em.narrow(0, b, 1)?.narrow(1, 0, n)?)?;
            out.push(super::decode_labels(&rows, self.meta.decode_mode, crf)?);
        }
        Ok(out)
    }

    /// Encoder input rows `[n_tokens, d_enc]` for one sentence of a document.
    pub fn embed_sentence(&self, doc: &Document, sentence: usize) -> Result<Tensor> {
        if sentence >= doc.sentences.len() || doc.sentences[sentence].is_empty() {
            return Err(DiscoError::contract(format!("no sentence {sentence} with tokens in {}", doc.doc_id)));
        }
        let prepared = self.prepare(doc)?;
        let (x, _) = self.encode_inputs(std::slice::from_ref(&prepared), &[(0, sentence)])?;
        Ok(x.squeeze(0)?)
    }

    /// The `d_neighbors`-wide summary of the sentences around a center
    /// sentence; zeros when both are absent.
    pub fn encode_neighbors(&self, prev: Option<&Sentence>, next: Option<&Sentence>) -> Result<Tensor> {
        let present: Vec<&Sentence> = [prev, next].into_iter().flatten().collect();
        if present.is_empty() || self.meta.dims.d_neighbors == 0 {
            return Ok(Tensor::zeros(self.meta.dims.d_neighbors, self.dtype(), self.device())?);
        }
        let prepared = present
            .iter()
            .map(|s| self.prepare_sentence(s, None))
            .collect::<Result<Vec<_>>>()?;
        let refs: Vec<&PreparedSent> = prepared.iter().collect();
        let forms: Vec<&str> = refs.iter().flat_map(|s| s.forms.iter().map(String::as_str)).collect();
        let chars = self.char_reps(&forms)?;
        let statics = self.static_reps(&refs)?;
        let c = self.meta.components;
        let cwe = if c.char || c.static_vectors {
            Tensor::zeros((forms.len(), self.meta.dims.d_cwe), self.dtype(), self.device())?
        } else {
            self.cwe_reps(&refs)?
        };
        let base = self.neighbor_base(chars.as_ref(), statics.as_ref(), &cwe)?;
        let mut seq: Vec<Option<u32>> = Vec::new();
        let mut at = 0u32;
        if let Some(p) = prev {
            seq.extend((0..p.len() as u32).map(|i| Some(at + i)));
            at += p.len() as u32;
        }
        seq.push(None);
        if let Some(n) = next {
            seq.extend((0..n.len() as u32).map(|i| Some(at + i)));
        }
        Ok(self.summarize(&base, &[Some(seq)])?.squeeze(0)?)
    }

    /// Emission scores `[n, K]` for embedded rows `[n, d_enc]`.
    pub fn tag_emissions(&self, embedded: &Tensor) -> Result<Tensor> {
        let (n, d) = embedded.dims2()?;
        if d != self.meta.dims.d_enc {
            return Err(DiscoError::contract(format!(
                "embedded input has {d} columns, expected {}",
                self.meta.dims.d_enc
            )));
        }
        let mask = Tensor::ones((1, n), self.dtype(), self.device())?;
        Ok(self.emissions_from(&embedded.unsqueeze(0)?, &mask)?.squeeze(0)?)
    }
}
