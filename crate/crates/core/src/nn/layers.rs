use candle_core::{Tensor, D};

use super::{Init, ParamGroup, ParamStore};
use crate::Result;

#[derive(Debug, Clone)]
pub struct Linear {
    weight: Tensor,
    bias: Tensor,
}

impl Linear {
    /// Uniform init scaled by fan-in.
    pub fn new(ps: &mut ParamStore, name: &str, input: usize, output: usize, group: ParamGroup) -> Result<Self> {
        let a = 1.0 / (input as f64).sqrt();
        Self::with_init(ps, name, input, output, Init::Uniform(a), Init::Uniform(a), group)
    }

    pub fn with_init(
        ps: &mut ParamStore,
        name: &str,
        input: usize,
        output: usize,
        w_init: Init,
        b_init: Init,
        group: ParamGroup,
    ) -> Result<Self> {
        let weight = ps.param(&format!("{name}.weight"), &[output, input], w_init, group)?;
        let bias = ps.param(&format!("{name}.bias"), &[output], b_init, group)?;
        Ok(Linear { weight, bias })
    }

    pub fn out_dim(&self) -> usize {
        self.weight.dims()[0]
    }

    /// Applies to the last dimension of an input of any rank.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let dims = x.dims().to_vec();
        let input = *dims.last().expect("rank >= 1");
        let rows = x.elem_count() / input;
        let y = x
            .reshape((rows, input))?
            .matmul(&self.weight.t()?)?
            .broadcast_add(&self.bias)?;
        let mut out = dims;
        *out.last_mut().unwrap() = self.out_dim();
        Ok(y.reshape(out)?)
    }
}

#[derive(Debug, Clone)]
pub struct Embedding {
    table: Tensor,
}

impl Embedding {
    pub fn new(ps: &mut ParamStore, name: &str, rows: usize, dim: usize, init: Init, group: ParamGroup) -> Result<Self> {
        Ok(Embedding {
            table: ps.param(&format!("{name}.weight"), &[rows, dim], init, group)?,
        })
    }

    pub fn from_tensor(table: Tensor) -> Self {
        Embedding { table }
    }

    pub fn table(&self) -> &Tensor {
        &self.table
    }

    pub fn dim(&self) -> usize {
        self.table.dims()[1]
    }

    /// Looks up rows for u32 ids of any shape; output gains a trailing dim.
    pub fn forward(&self, ids: &Tensor) -> Result<Tensor> {
        let mut shape = ids.dims().to_vec();
        let flat = ids.flatten_all()?;
        let rows = self.table.index_select(&flat, 0)?;
        shape.push(self.dim());
        Ok(rows.reshape(shape)?)
    }
}

#[derive(Debug, Clone)]
pub struct LayerNorm {
    weight: Tensor,
    bias: Tensor,
    eps: f64,
}

impl LayerNorm {
    pub fn new(ps: &mut ParamStore, name: &str, dim: usize, eps: f64, group: ParamGroup) -> Result<Self> {
        Ok(LayerNorm {
            weight: ps.param(&format!("{name}.weight"), &[dim], Init::Ones, group)?,
            bias: ps.param(&format!("{name}.bias"), &[dim], Init::Zeros, group)?,
            eps,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let mean = x.mean_keepdim(D::Minus1)?;
        let centered = x.broadcast_sub(&mean)?;
        let var = centered.sqr()?.mean_keepdim(D::Minus1)?;
        let normed = centered.broadcast_div(&(var + self.eps)?.sqrt()?)?;
        Ok(normed.broadcast_mul(&self.weight)?.broadcast_add(&self.bias)?)
    }
}

/// Logistic function built from differentiable primitives.
pub fn sigmoid(x: &Tensor) -> Result<Tensor> {
    Ok(x.affine(0.5, 0.0)?.tanh()?.affine(0.5, 0.5)?)
}
