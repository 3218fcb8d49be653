//! Neural building blocks on top of candle: a seeded parameter store,
//! dense layers, LSTMs, a linear-chain CRF, a BERT encoder and its
//! subword tokenizer.

pub mod bert;
pub mod crf;
pub mod layers;
pub mod lstm;
pub mod params;
pub mod wordpiece;

use candle_core::{Tensor, D};
use candle_nn::optim::{AdamW, Optimizer, ParamsAdamW};

pub use bert::{Bert, BertConfig, EncoderSource};
pub use crf::{argmax_rows, viterbi, Crf, CrfParams};
pub use layers::{Embedding, LayerNorm, Linear};
pub use lstm::{BiLstm, Lstm};
pub use params::{Init, ParamGroup, ParamStore};
pub use wordpiece::WordPiece;

use crate::{DiscoError, Result};

/// Mean cross-entropy over positions where `mask` is 1. `logits` is
/// `[B, T, K]`, `gold` holds one tag per real position.
pub fn masked_cross_entropy(logits: &Tensor, gold: &[Vec<usize>], mask: &Tensor) -> Result<Tensor> {
    let (b, t_len, k) = logits.dims3()?;
    if gold.len() != b {
        return Err(DiscoError::contract("one gold sequence per row required"));
    }
    let mut ids = Vec::with_capacity(b * t_len);
    for g in gold {
        if g.len() > t_len {
            return Err(DiscoError::contract("gold sequence longer than emissions"));
        }
        if let Some(&bad) = g.iter().find(|&&y| y >= k) {
            return Err(DiscoError::contract(format!("tag {bad} outside the tagset of {k}")));
        }
        ids.extend((0..t_len).map(|t| g.get(t).copied().unwrap_or(0) as u32));
    }
    let ids = Tensor::from_vec(ids, (b, t_len, 1), logits.device())?;
    let logp = candle_nn::ops::log_softmax(logits, D::Minus1)?;
    let picked = logp.gather(&ids, 2)?.squeeze(2)?;
    let total = (picked * mask)?.sum_all()?;
    let count = mask.sum_all()?;
    Ok((total.neg()? / count)?)
}

/// Host copy of a `[T, K]` or `[1, T, K]` score matrix.
pub fn to_rows(t: &Tensor) -> Result<Vec<Vec<f64>>> {
    let t = t.to_dtype(candle_core::DType::F64)?;
    let t = if t.rank() == 3 { t.squeeze(0)? } else { t };
    Ok(t.to_vec2::<f64>()?)
}

/// Two AdamW instances: one for the encoder, one for everything else.
pub struct SplitOptimizer {
    encoder: Option<AdamW>,
    other: Option<AdamW>,
    clip: Option<f64>,
    vars: Vec<candle_core::Var>,
}

impl SplitOptimizer {
    pub fn new(ps: &ParamStore, lr_encoder: f64, lr_other: f64, clip: Option<f64>) -> Result<Self> {
        let mk = |group, lr| -> Result<Option<AdamW>> {
            let vars = ps.vars(group);
            if vars.is_empty() {
                return Ok(None);
            }
            let params = ParamsAdamW {
                lr,
                weight_decay: 0.0,
                ..Default::default()
            };
            Ok(Some(AdamW::new(vars, params)?))
        };
        let mut vars = ps.vars(ParamGroup::Encoder);
        vars.extend(ps.vars(ParamGroup::Other));
        Ok(SplitOptimizer {
            encoder: mk(ParamGroup::Encoder, lr_encoder)?,
            other: mk(ParamGroup::Other, lr_other)?,
            clip,
            vars,
        })
    }

    /// Backpropagates `loss`, clips by global norm, and steps both groups.
    pub fn backward_step(&mut self, loss: &Tensor) -> Result<()> {
        let mut grads = loss.backward()?;
        if let Some(max_norm) = self.clip {
            let mut sq = 0f64;
            for v in &self.vars {
                if let Some(g) = grads.get(v.as_tensor()) {
                    sq += g.to_dtype(candle_core::DType::F64)?.sqr()?.sum_all()?.to_scalar::<f64>()?;
                }
            }
            let norm = sq.sqrt();
            if !norm.is_finite() {
                return Err(DiscoError::Training("gradient norm is not finite".into()));
            }
            if norm > max_norm {
                let scale = max_norm / norm;
                for v in &self.vars {
                    if let Some(g) = grads.remove(v.as_tensor()) {
                        grads.insert(v.as_tensor(), (g * scale)?);
                    }
                }
            }
        }
        if let Some(o) = &mut self.encoder {
            o.step(&grads)?;
        }
        if let Some(o) = &mut self.other {
            o.step(&grads)?;
        }
        Ok(())
    }
}
