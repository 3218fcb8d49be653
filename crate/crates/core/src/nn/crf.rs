use candle_core::{DType, Tensor};

use super::{Init, ParamGroup, ParamStore};
use crate::{DiscoError, Result};

/// Score added to forbidden transitions during training; decoding uses -inf.
pub const FORBIDDEN_PENALTY: f64 = -1e4;

/// `log(sum(exp(x)))` over `dim`, removing it.
pub fn log_sum_exp(x: &Tensor, dim: usize) -> Result<Tensor> {
    let m = x.max_keepdim(dim)?.detach();
    let s = x.broadcast_sub(&m)?.exp()?.sum_keepdim(dim)?.log()?;
    Ok((s + m)?.squeeze(dim)?)
}

/// Host copy of CRF scores with forbidden moves at -inf.
#[derive(Debug, Clone, PartialEq)]
pub struct CrfParams {
    /// `transitions[from][to]`.
    pub transitions: Vec<Vec<f64>>,
    pub start: Vec<f64>,
    pub end: Vec<f64>,
}

/// Linear-chain CRF with optional hard constraints.
#[derive(Debug, Clone)]
pub struct Crf {
    transitions: Tensor,
    start: Tensor,
    end: Tensor,
    num_tags: usize,
    forbidden: Vec<(usize, usize)>,
    forbidden_start: Vec<usize>,
}

impl Crf {
    pub fn new(ps: &mut ParamStore, name: &str, num_tags: usize, group: ParamGroup) -> Result<Self> {
        let init = Init::Uniform(0.1);
        Self::from_tensors(
            ps.param(&format!("{name}.transitions"), &[num_tags, num_tags], init, group)?,
            ps.param(&format!("{name}.start"), &[num_tags], init, group)?,
            ps.param(&format!("{name}.end"), &[num_tags], init, group)?,
        )
    }

    pub fn from_tensors(transitions: Tensor, start: Tensor, end: Tensor) -> Result<Self> {
        let k = start.dims1()?;
        if transitions.dims2()? != (k, k) || end.dims1()? != k {
            return Err(DiscoError::contract("CRF parameter shapes disagree"));
        }
        Ok(Crf {
            transitions,
            start,
            end,
            num_tags: k,
            forbidden: Vec::new(),
            forbidden_start: Vec::new(),
        })
    }

    pub fn forbid_transition(mut self, from: usize, to: usize) -> Self {
        self.forbidden.push((from, to));
        self
    }

    pub fn forbid_start(mut self, tag: usize) -> Self {
        self.forbidden_start.push(tag);
        self
    }

    pub fn num_tags(&self) -> usize {
        self.num_tags
    }

    fn effective(&self) -> Result<(Tensor, Tensor)> {
        let k = self.num_tags;
        if self.forbidden.is_empty() && self.forbidden_start.is_empty() {
            return Ok((self.transitions.clone(), self.start.clone()));
        }
        let mut pt = vec![0f64; k * k];
        for &(a, b) in &self.forbidden {
            pt[a * k + b] = FORBIDDEN_PENALTY;
        }
        let mut ps = vec![0f64; k];
        for &a in &self.forbidden_start {
            ps[a] = FORBIDDEN_PENALTY;
        }
        let dev = self.start.device();
        let dt = self.start.dtype();
        let pt = Tensor::from_vec(pt, (k, k), dev)?.to_dtype(dt)?;
        let ps = Tensor::from_vec(ps, k, dev)?.to_dtype(dt)?;
        Ok(((&self.transitions + pt)?, (&self.start + ps)?))
    }

    fn check(&self, emissions: &Tensor) -> Result<(usize, usize)> {
        let (b, t, k) = emissions.dims3()?;
        if k != self.num_tags {
            return Err(DiscoError::contract(format!(
                "emissions have {k} tags, CRF has {}",
                self.num_tags
            )));
        }
        Ok((b, t))
    }

    /// Log partition `[B]` by the forward algorithm. `mask` is `[B, T]` with
    /// leading ones; every sequence has at least one step.
    pub fn log_partition(&self, emissions: &Tensor, mask: &Tensor) -> Result<Tensor> {
        let (_, t_len) = self.check(emissions)?;
        let (trans, start) = self.effective()?;
        let mut alpha = emissions.narrow(1, 0, 1)?.squeeze(1)?.broadcast_add(&start)?;
        for t in 1..t_len {
            let e = emissions.narrow(1, t, 1)?;
            let scores = alpha.unsqueeze(2)?.broadcast_add(&trans)?.broadcast_add(&e)?;
            let next = log_sum_exp(&scores, 1)?;
            let m = mask.narrow(1, t, 1)?;
            alpha = ((next - &alpha)?.broadcast_mul(&m)? + &alpha)?;
        }
        log_sum_exp(&alpha.broadcast_add(&self.end)?, 1)
    }

    /// Unnormalized score `[B]` of the given tag paths.
    pub fn path_score(&self, emissions: &Tensor, tags: &[Vec<usize>], mask: &Tensor) -> Result<Tensor> {
        let (b, t_len) = self.check(emissions)?;
        let k = self.num_tags;
        if tags.len() != b {
            return Err(DiscoError::contract("one tag path per sequence required"));
        }
        for path in tags {
            if path.is_empty() || path.len() > t_len {
                return Err(DiscoError::contract("tag path length outside the emission window"));
            }
            if let Some(&bad) = path.iter().find(|&&y| y >= k) {
                return Err(DiscoError::contract(format!("tag {bad} outside the tagset of {k}")));
            }
        }
        let (trans, start) = self.effective()?;
        let dev = emissions.device();
        let dt = emissions.dtype();
        let padded: Vec<u32> = tags
            .iter()
            .flat_map(|p| (0..t_len).map(move |t| p.get(t).copied().unwrap_or(0) as u32))
            .collect();
        let ids = Tensor::from_vec(padded, (b, t_len, 1), dev)?;
        let emit = emissions.gather(&ids, 2)?.squeeze(2)?;
        let mut total = (emit * mask)?.sum(1)?;
        if t_len > 1 {
            let pairs: Vec<u32> = tags
                .iter()
                .flat_map(|p| {
                    (1..t_len).map(move |t| match (p.get(t - 1), p.get(t)) {
                        (Some(&a), Some(&c)) => (a * k + c) as u32,
                        _ => 0,
                    })
                })
                .collect();
            let pairs = Tensor::from_vec(pairs, b * (t_len - 1), dev)?;
            let tr = trans
                .flatten_all()?
                .index_select(&pairs, 0)?
                .reshape((b, t_len - 1))?;
            total = (total + (tr * mask.narrow(1, 1, t_len - 1)?)?.sum(1)?)?;
        }
        let firsts = Tensor::from_vec(tags.iter().map(|p| p[0] as u32).collect::<Vec<_>>(), b, dev)?;
        let lasts = Tensor::from_vec(
            tags.iter().map(|p| *p.last().unwrap() as u32).collect::<Vec<_>>(),
            b,
            dev,
        )?;
        total = (total + start.index_select(&firsts, 0)?)?;
        total = (total + self.end.index_select(&lasts, 0)?)?;
        Ok(total.to_dtype(dt)?)
    }

    /// Mean over the batch of `log Z - score(gold)`.
    pub fn neg_log_likelihood(&self, emissions: &Tensor, tags: &[Vec<usize>], mask: &Tensor) -> Result<Tensor> {
        let nll = (self.log_partition(emissions, mask)? - self.path_score(emissions, tags, mask)?)?;
        Ok(nll.mean_all()?)
    }

    pub fn host_params(&self) -> Result<CrfParams> {
        let to64 = |t: &Tensor| t.to_dtype(DType::F64);
        let mut transitions = to64(&self.transitions)?.to_vec2::<f64>()?;
        let mut start = to64(&self.start)?.to_vec1::<f64>()?;
        let end = to64(&self.end)?.to_vec1::<f64>()?;
        for &(a, b) in &self.forbidden {
            transitions[a][b] = f64::NEG_INFINITY;
        }
        for &a in &self.forbidden_start {
            start[a] = f64::NEG_INFINITY;
        }
        Ok(CrfParams { transitions, start, end })
    }
}

/// Highest-scoring tag path; ties go to the lower tag index.
pub fn viterbi(emissions: &[Vec<f64>], p: &CrfParams) -> Vec<usize> {
    let Some(first) = emissions.first() else {
        return Vec::new();
    };
    let k = first.len();
    let mut score: Vec<f64> = (0..k).map(|j| p.start[j] + first[j]).collect();
    let mut back: Vec<Vec<usize>> = Vec::with_capacity(emissions.len());
    for e in &emissions[1..] {
        let mut next = vec![f64::NEG_INFINITY; k];
        let mut arg = vec![0; k];
        for j in 0..k {
            for i in 0..k {
                let s = score[i] + p.transitions[i][j];
                if s > next[j] {
                    next[j] = s;
                    arg[j] = i;
                }
            }
            next[j] += e[j];
        }
        back.push(arg);
        score = next;
    }
    let mut best = 0;
    let mut best_score = f64::NEG_INFINITY;
    for j in 0..k {
        let s = score[j] + p.end[j];
        if s > best_score {
            best_score = s;
            best = j;
        }
    }
    let mut path = vec![best];
    for arg in back.iter().rev() {
        let prev = arg[*path.last().unwrap()];
        path.push(prev);
    }
    path.reverse();
    path
}

/// Per-row argmax; ties go to the lower index.
pub fn argmax_rows(emissions: &[Vec<f64>]) -> Vec<usize> {
    emissions
        .iter()
        .map(|row| {
            let mut best = 0;
            for (j, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = j;
                }
            }
            best
        })
        .collect()
}
