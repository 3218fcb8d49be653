use std::collections::HashMap;
use std::path::{Path, PathBuf};

use candle_core::{DType, Tensor, D};
use serde::{Deserialize, Serialize};

use super::layers::{Embedding, LayerNorm, Linear};
use super::wordpiece::WordPiece;
use super::{Init, ParamGroup, ParamStore};
use crate::error::read_to_string;
use crate::{DiscoError, Result};

const GROUP: ParamGroup = ParamGroup::Encoder;

fn default_max_position() -> usize {
    512
}

fn default_type_vocab() -> usize {
    2
}

fn default_eps() -> f64 {
    1e-12
}

/// Subset of a Hugging Face BERT `config.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BertConfig {
    pub vocab_size: usize,
    pub hidden_size: usize,
    pub num_hidden_layers: usize,
    pub num_attention_heads: usize,
    pub intermediate_size: usize,
    #[serde(default = "default_max_position")]
    pub max_position_embeddings: usize,
    #[serde(default = "default_type_vocab")]
    pub type_vocab_size: usize,
    #[serde(default = "default_eps")]
    pub layer_norm_eps: f64,
}

impl BertConfig {
    /// A small configuration for randomly initialized encoders.
    pub fn tiny(vocab_size: usize, layers: usize, hidden: usize) -> Result<Self> {
        if layers == 0 || hidden == 0 {
            return Err(DiscoError::config("random encoder needs at least one layer and hidden unit"));
        }
        let heads = if hidden % 32 == 0 { hidden / 32 } else { 1 };
        Ok(BertConfig {
            vocab_size,
            hidden_size: hidden,
            num_hidden_layers: layers,
            num_attention_heads: heads,
            intermediate_size: 4 * hidden,
            max_position_embeddings: default_max_position(),
            type_vocab_size: default_type_vocab(),
            layer_norm_eps: default_eps(),
        })
    }
}

#[derive(Debug, Clone)]
struct BertLayer {
    query: Linear,
    key: Linear,
    value: Linear,
    attn_out: Linear,
    attn_ln: LayerNorm,
    inter: Linear,
    out: Linear,
    out_ln: LayerNorm,
    heads: usize,
}

fn dense(ps: &mut ParamStore, name: &str, i: usize, o: usize) -> Result<Linear> {
    Linear::with_init(ps, name, i, o, Init::Normal(0.02), Init::Zeros, GROUP)
}

impl BertLayer {
    fn new(ps: &mut ParamStore, name: &str, c: &BertConfig) -> Result<Self> {
        let h = c.hidden_size;
        Ok(BertLayer {
            query: dense(ps, &format!("{name}.attention.self.query"), h, h)?,
            key: dense(ps, &format!("{name}.attention.self.key"), h, h)?,
            value: dense(ps, &format!("{name}.attention.self.value"), h, h)?,
            attn_out: dense(ps, &format!("{name}.attention.output.dense"), h, h)?,
            attn_ln: LayerNorm::new(ps, &format!("{name}.attention.output.LayerNorm"), h, c.layer_norm_eps, GROUP)?,
            inter: dense(ps, &format!("{name}.intermediate.dense"), h, c.intermediate_size)?,
            out: dense(ps, &format!("{name}.output.dense"), c.intermediate_size, h)?,
            out_ln: LayerNorm::new(ps, &format!("{name}.output.LayerNorm"), h, c.layer_norm_eps, GROUP)?,
            heads: c.num_attention_heads,
        })
    }

    fn forward(&self, x: &Tensor, bias: &Tensor) -> Result<Tensor> {
        let (b, l, h) = x.dims3()?;
        let dh = h / self.heads;
        let split = |t: Tensor| -> Result<Tensor> {
            Ok(t.reshape((b, l, self.heads, dh))?.transpose(1, 2)?.contiguous()?)
        };
        let q = split(self.query.forward(x)?)?;
        let k = split(self.key.forward(x)?)?;
        let v = split(self.value.forward(x)?)?;
        let scores = (q.matmul(&k.t()?.contiguous()?)? / (dh as f64).sqrt())?.broadcast_add(bias)?;
        let probs = candle_nn::ops::softmax(&scores, D::Minus1)?;
        let ctx = probs.matmul(&v)?.transpose(1, 2)?.reshape((b, l, h))?;
        let x = self.attn_ln.forward(&(self.attn_out.forward(&ctx)? + x)?)?;
        let ff = self.out.forward(&self.inter.forward(&x)?.gelu_erf()?)?;
        self.out_ln.forward(&(ff + x)?)
    }
}

/// BERT encoder with parameter names following the Hugging Face layout
/// under a `bert.` prefix.
#[derive(Debug, Clone)]
pub struct Bert {
    word: Embedding,
    position: Embedding,
    token_type: Embedding,
    emb_ln: LayerNorm,
    layers: Vec<BertLayer>,
    pooler: Linear,
    config: BertConfig,
}

impl Bert {
    pub fn new(ps: &mut ParamStore, config: &BertConfig) -> Result<Self> {
        let c = config;
        if c.num_attention_heads == 0 || c.hidden_size % c.num_attention_heads != 0 {
            return Err(DiscoError::config("hidden size must divide evenly into attention heads"));
        }
        let init = Init::Normal(0.02);
        let h = c.hidden_size;
        let word = Embedding::new(ps, "bert.embeddings.word_embeddings", c.vocab_size, h, init, GROUP)?;
        let position = Embedding::new(ps, "bert.embeddings.position_embeddings", c.max_position_embeddings, h, init, GROUP)?;
        let token_type = Embedding::new(ps, "bert.embeddings.token_type_embeddings", c.type_vocab_size, h, init, GROUP)?;
        let emb_ln = LayerNorm::new(ps, "bert.embeddings.LayerNorm", h, c.layer_norm_eps, GROUP)?;
        let layers = (0..c.num_hidden_layers)
            .map(|i| BertLayer::new(ps, &format!("bert.encoder.layer.{i}"), c))
            .collect::<Result<Vec<_>>>()?;
        let pooler = dense(ps, "bert.pooler.dense", h, h)?;
        Ok(Bert {
            word,
            position,
            token_type,
            emb_ln,
            layers,
            pooler,
            config: c.clone(),
        })
    }

    pub fn config(&self) -> &BertConfig {
        &self.config
    }

    pub fn hidden(&self) -> usize {
        self.config.hidden_size
    }

    pub fn max_len(&self) -> usize {
        self.config.max_position_embeddings
    }

    /// Output of the embedding layer for u32 `ids` and `type_ids` `[B, L]`.
    pub fn embed(&self, ids: &Tensor, type_ids: &Tensor) -> Result<Tensor> {
        let (b, l) = ids.dims2()?;
        if l > self.max_len() {
            return Err(DiscoError::contract(format!(
                "sequence of {l} subwords exceeds the encoder maximum {}",
                self.max_len()
            )));
        }
        let pos: Vec<u32> = (0..l as u32).collect();
        let pos = Tensor::from_vec(pos, l, ids.device())?;
        let x = self
            .word
            .forward(ids)?
            .broadcast_add(&self.position.forward(&pos)?)?
            .add(&self.token_type.forward(type_ids)?)?;
        let _ = b;
        self.emb_ln.forward(&x)
    }

    /// Runs the encoder blocks over embedded input `[B, L, H]`; `mask` is
    /// `[B, L]` with 1 for attended positions.
    pub fn encode(&self, x: &Tensor, mask: &Tensor) -> Result<Tensor> {
        let (b, l, _) = x.dims3()?;
        let bias = ((mask.to_dtype(x.dtype())? - 1.0)? * 1e4)?.reshape((b, 1, 1, l))?;
        let mut h = x.clone();
        for layer in &self.layers {
            h = layer.forward(&h, &bias)?;
        }
        Ok(h)
    }

    /// Pooled representation of the first position.
    pub fn pool(&self, seq: &Tensor) -> Result<Tensor> {
        Ok(self.pooler.forward(&seq.narrow(1, 0, 1)?.squeeze(1)?)?.tanh()?)
    }
}

/// Where encoder weights come from.
#[derive(Debug, Clone, PartialEq)]
pub enum EncoderSource {
    /// Randomly initialized, `random:<layers>x<hidden>`.
    Random { layers: usize, hidden: usize },
    /// A directory holding `config.json`, `vocab.txt` and `model.safetensors`.
    Pretrained(PathBuf),
}

/// Resolves an encoder name against the weight cache directory.
pub fn resolve_encoder(name: &str, cache: Option<&Path>) -> Result<EncoderSource> {
    if let Some(spec) = name.strip_prefix("random:") {
        let parsed = spec
            .split_once('x')
            .and_then(|(l, h)| Some((l.parse().ok()?, h.parse().ok()?)));
        return match parsed {
            Some((layers, hidden)) => Ok(EncoderSource::Random { layers, hidden }),
            None => Err(DiscoError::config(format!(
                "encoder {name:?}: expected random:<layers>x<hidden>"
            ))),
        };
    }
    let dir = match cache {
        Some(c) => c.join(name),
        None => PathBuf::from(name),
    };
    if !dir.join("config.json").exists() {
        return Err(DiscoError::config(format!(
            "encoder {name:?} not found at {}; place config.json, vocab.txt and model.safetensors there or set DISCO_CACHE",
            dir.display()
        )));
    }
    Ok(EncoderSource::Pretrained(dir))
}

/// Pretrained encoder files loaded from disk.
pub struct PretrainedEncoder {
    pub config: BertConfig,
    pub tokenizer: WordPiece,
    /// Weights renamed to this crate's `bert.` layout.
    pub weights: HashMap<String, Tensor>,
}

pub fn load_pretrained(dir: &Path) -> Result<PretrainedEncoder> {
    let config: BertConfig = serde_json::from_str(&read_to_string(&dir.join("config.json"))?)?;
    let lowercase = match read_to_string(&dir.join("tokenizer_config.json")) {
        Ok(text) => serde_json::from_str::<serde_json::Value>(&text)?
            .get("do_lower_case")
            .and_then(|v| v.as_bool())
            .unwrap_or(false),
        Err(_) => dir.to_string_lossy().contains("uncased"),
    };
    let tokenizer = WordPiece::from_vocab_file(&dir.join("vocab.txt"), lowercase)?;
    let raw = ParamStore::load_weights(&dir.join("model.safetensors"))?;
    Ok(PretrainedEncoder {
        config,
        tokenizer,
        weights: rename_hf_weights(raw)?,
    })
}

/// Maps Hugging Face BERT weight names onto the `bert.` layout, dropping
/// pretraining heads.
pub fn rename_hf_weights(raw: HashMap<String, Tensor>) -> Result<HashMap<String, Tensor>> {
    let mut out = HashMap::new();
    for (name, t) in raw {
        let base = name.strip_prefix("bert.").unwrap_or(&name);
        if !(base.starts_with("embeddings.") || base.starts_with("encoder.") || base.starts_with("pooler.")) {
            continue;
        }
        if base.ends_with("position_ids") {
            continue;
        }
        let base = if let Some(s) = base.strip_suffix(".gamma") {
            format!("{s}.weight")
        } else if let Some(s) = base.strip_suffix(".beta") {
            format!("{s}.bias")
        } else {
            base.to_string()
        };
        out.insert(format!("bert.{base}"), t.to_dtype(DType::F32)?);
    }
    Ok(out)
}
