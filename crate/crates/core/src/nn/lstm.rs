use candle_core::{Tensor, D};

use super::layers::sigmoid;
use super::{Init, ParamGroup, ParamStore};
use crate::Result;

/// Single-direction LSTM over right-padded batches.
#[derive(Debug, Clone)]
pub struct Lstm {
    w_ih: Tensor,
    w_hh: Tensor,
    bias: Tensor,
    hidden: usize,
}

impl Lstm {
    pub fn new(ps: &mut ParamStore, name: &str, input: usize, hidden: usize, group: ParamGroup) -> Result<Self> {
        let a = 1.0 / (hidden as f64).sqrt();
        Ok(Lstm {
            w_ih: ps.param(&format!("{name}.w_ih"), &[4 * hidden, input], Init::Uniform(a), group)?,
            w_hh: ps.param(&format!("{name}.w_hh"), &[4 * hidden, hidden], Init::Uniform(a), group)?,
            bias: ps.param(&format!("{name}.bias"), &[4 * hidden], Init::Uniform(a), group)?,
            hidden,
        })
    }

    /// Runs over `x` `[B, T, in]` with `mask` `[B, T]` (1 for real steps).
    /// Padded steps leave the state untouched and emit zeros. Returns all
    /// outputs `[B, T, H]` and the final state `[B, H]`.
    pub fn run(&self, x: &Tensor, mask: &Tensor, reverse: bool) -> Result<(Tensor, Tensor)> {
        let (b, t_len, input) = x.dims3()?;
        let h4 = 4 * self.hidden;
        let proj = x
            .reshape((b * t_len, input))?
            .matmul(&self.w_ih.t()?)?
            .broadcast_add(&self.bias)?
            .reshape((b, t_len, h4))?;
        let w_hh_t = self.w_hh.t()?;
        let mut h = Tensor::zeros((b, self.hidden), x.dtype(), x.device())?;
        let mut c = h.clone();
        let mut outs = Vec::with_capacity(t_len);
        let steps: Vec<usize> = if reverse {
            (0..t_len).rev().collect()
        } else {
            (0..t_len).collect()
        };
        for t in steps {
            let m = mask.narrow(1, t, 1)?;
            let gates = (proj.narrow(1, t, 1)?.squeeze(1)? + h.matmul(&w_hh_t)?)?;
            let hs = self.hidden;
            let i = sigmoid(&gates.narrow(1, 0, hs)?)?;
            let f = sigmoid(&gates.narrow(1, hs, hs)?)?;
            let g = gates.narrow(1, 2 * hs, hs)?.tanh()?;
            let o = sigmoid(&gates.narrow(1, 3 * hs, hs)?)?;
            let c_new = ((f * &c)? + (i * g)?)?;
            let h_new = (o * c_new.tanh()?)?;
            c = ((c_new - &c)?.broadcast_mul(&m)? + &c)?;
            h = ((&h_new - &h)?.broadcast_mul(&m)? + &h)?;
            outs.push(h_new.broadcast_mul(&m)?);
        }
        if reverse {
            outs.reverse();
        }
        Ok((Tensor::stack(&outs, 1)?, h))
    }
}

#[derive(Debug, Clone)]
pub struct BiLstm {
    fwd: Lstm,
    bwd: Lstm,
}

impl BiLstm {
    pub fn new(ps: &mut ParamStore, name: &str, input: usize, hidden: usize, group: ParamGroup) -> Result<Self> {
        Ok(BiLstm {
            fwd: Lstm::new(ps, &format!("{name}.fwd"), input, hidden, group)?,
            bwd: Lstm::new(ps, &format!("{name}.bwd"), input, hidden, group)?,
        })
    }

    pub fn out_dim(&self) -> usize {
        2 * self.fwd.hidden
    }

    /// Per-step outputs `[B, T, 2H]` and the summary `[B, 2H]` made of the
    /// forward final state and the backward state at the first step.
    pub fn forward(&self, x: &Tensor, mask: &Tensor) -> Result<(Tensor, Tensor)> {
        let (of, hf) = self.fwd.run(x, mask, false)?;
        let (ob, hb) = self.bwd.run(x, mask, true)?;
        Ok((Tensor::cat(&[of, ob], D::Minus1)?, Tensor::cat(&[hf, hb], D::Minus1)?))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use candle_core::{DType, Device};

    #[test]
    fn padding_does_not_change_real_steps() {
        let mut ps = ParamStore::new(1, DType::F64);
        let lstm = BiLstm::new(&mut ps, "l", 3, 4, ParamGroup::Other).unwrap();
        let dev = Device::Cpu;
        let seq: Vec<f64> = (0..6).map(|v| v as f64 * 0.1).collect();
        let x1 = Tensor::from_vec(seq.clone(), (1, 2, 3), &dev).unwrap();
        let m1 = Tensor::ones((1, 2), DType::F64, &dev).unwrap();
        let mut padded = seq;
        padded.extend([9.0, 9.0, 9.0]);
        let x2 = Tensor::from_vec(padded, (1, 3, 3), &dev).unwrap();
        let m2 = Tensor::new(&[[1.0f64, 1.0, 0.0]], &dev).unwrap();
        let (o1, s1) = lstm.forward(&x1, &m1).unwrap();
        let (o2, s2) = lstm.forward(&x2, &m2).unwrap();
        assert_eq!(s1.to_vec2::<f64>().unwrap(), s2.to_vec2::<f64>().unwrap());
        assert_eq!(
            o1.to_vec3::<f64>().unwrap()[0],
            o2.narrow(1, 0, 2).unwrap().to_vec3::<f64>().unwrap()[0]
        );
        let tail = o2.narrow(1, 2, 1).unwrap().abs().unwrap().sum_all().unwrap();
        assert_eq!(tail.to_scalar::<f64>().unwrap(), 0.0);
        assert_eq!(s1.dims(), &[1, 8]);
    }
}
