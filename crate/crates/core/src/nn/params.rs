use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use candle_core::{DType, Device, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::{DiscoError, Result};

/// Optimizer group a trainable parameter belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamGroup {
    /// The contextual encoder, trained at the lower learning rate.
    Encoder,
    Other,
}

#[derive(Debug, Clone, Copy)]
pub enum Init {
    Zeros,
    Ones,
    /// Uniform on `[-a, a]`.
    Uniform(f64),
    Normal(f64),
}

/// Named parameters with seeded initialization.
///
/// Parameters found in preloaded weights are taken from there instead of
/// being initialized, so the same constructors build fresh and restored
/// models.
pub struct ParamStore {
    device: Device,
    dtype: DType,
    rng: ChaCha8Rng,
    vars: BTreeMap<String, (Var, ParamGroup)>,
    frozen: BTreeMap<String, Tensor>,
    preloaded: HashMap<String, Tensor>,
}

impl ParamStore {
    pub fn new(seed: u64, dtype: DType) -> Self {
        ParamStore {
            device: Device::Cpu,
            dtype,
            rng: ChaCha8Rng::seed_from_u64(seed),
            vars: BTreeMap::new(),
            frozen: BTreeMap::new(),
            preloaded: HashMap::new(),
        }
    }

    pub fn with_weights(mut self, weights: HashMap<String, Tensor>) -> Self {
        self.preloaded = weights;
        self
    }

    pub fn device(&self) -> &Device {
        &self.device
    }

    pub fn dtype(&self) -> DType {
        self.dtype
    }

    pub fn rng(&mut self) -> &mut ChaCha8Rng {
        &mut self.rng
    }

    fn take_preloaded(&mut self, name: &str, shape: &[usize]) -> Result<Option<Tensor>> {
        match self.preloaded.remove(name) {
            None => Ok(None),
            Some(t) => {
                if t.dims() != shape {
                    return Err(DiscoError::contract(format!(
                        "weight {name} has shape {:?}, expected {shape:?}",
                        t.dims()
                    )));
                }
                Ok(Some(t.to_dtype(self.dtype)?))
            }
        }
    }

    fn sample(&mut self, n: usize, init: Init) -> Vec<f64> {
        match init {
            Init::Zeros => vec![0.0; n],
            Init::Ones => vec![1.0; n],
            Init::Uniform(a) => (0..n).map(|_| self.rng.random_range(-a..=a)).collect(),
            Init::Normal(std) => {
                let dist = Normal::new(0.0, std).expect("finite std");
                (0..n).map(|_| dist.sample(&mut self.rng)).collect()
            }
        }
    }

    fn check_fresh(&self, name: &str) -> Result<()> {
        if self.vars.contains_key(name) || self.frozen.contains_key(name) {
            return Err(DiscoError::contract(format!("parameter {name} registered twice")));
        }
        Ok(())
    }

    /// Registers a trainable parameter.
    pub fn param(&mut self, name: &str, shape: &[usize], init: Init, group: ParamGroup) -> Result<Tensor> {
        self.check_fresh(name)?;
        let n = shape.iter().product();
        // Sample even when preloaded so later parameters draw the same numbers.
        let values = self.sample(n, init);
        let tensor = match self.take_preloaded(name, shape)? {
            Some(t) => t,
            None => Tensor::from_vec(values, shape, &self.device)?.to_dtype(self.dtype)?,
        };
        let var = Var::from_tensor(&tensor)?;
        let t = var.as_tensor().clone();
        self.vars.insert(name.to_string(), (var, group));
        Ok(t)
    }

    /// Registers a non-trainable tensor that is still saved with the weights.
    pub fn frozen(&mut self, name: &str, shape: &[usize], values: impl FnOnce(&mut ChaCha8Rng) -> Vec<f32>) -> Result<Tensor> {
        self.check_fresh(name)?;
        let tensor = match self.take_preloaded(name, shape)? {
            Some(t) => t,
            None => {
                let v = values(&mut self.rng);
                Tensor::from_vec(v, shape, &self.device)?.to_dtype(self.dtype)?
            }
        };
        self.frozen.insert(name.to_string(), tensor.clone());
        Ok(tensor)
    }

    pub fn frozen_tensor(&self, name: &str) -> Option<&Tensor> {
        self.frozen.get(name)
    }

    pub fn vars(&self, group: ParamGroup) -> Vec<Var> {
        self.vars
            .values()
            .filter(|(_, g)| *g == group)
            .map(|(v, _)| v.clone())
            .collect()
    }

    pub fn var(&self, name: &str) -> Option<&Var> {
        self.vars.get(name).map(|(v, _)| v)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.vars.keys().map(String::as_str)
    }

    /// Names of preloaded weights that no constructor asked for.
    pub fn unused_weights(&self) -> Vec<&str> {
        let mut v: Vec<&str> = self.preloaded.keys().map(String::as_str).collect();
        v.sort();
        v
    }

    /// Copies of every trainable parameter.
    pub fn snapshot(&self) -> Result<BTreeMap<String, Tensor>> {
        self.vars
            .iter()
            .map(|(k, (v, _))| Ok((k.clone(), v.as_tensor().copy()?)))
            .collect()
    }

    pub fn restore(&self, snapshot: &BTreeMap<String, Tensor>) -> Result<()> {
        for (name, (var, _)) in &self.vars {
            let t = snapshot
                .get(name)
                .ok_or_else(|| DiscoError::contract(format!("snapshot lacks {name}")))?;
            var.set(t)?;
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut all: HashMap<String, Tensor> = HashMap::new();
        for (k, (v, _)) in &self.vars {
            all.insert(k.clone(), v.as_tensor().to_dtype(DType::F32)?);
        }
        for (k, t) in &self.frozen {
            all.insert(k.clone(), t.to_dtype(DType::F32)?);
        }
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir).map_err(|e| DiscoError::io(dir, e))?;
        }
        candle_core::safetensors::save(&all, path)?;
        Ok(())
    }

    pub fn load_weights(path: &Path) -> Result<HashMap<String, Tensor>> {
        if !path.exists() {
            return Err(DiscoError::io(
                path,
                std::io::Error::new(std::io::ErrorKind::NotFound, "weights file not found"),
            ));
        }
        Ok(candle_core::safetensors::load(path, &Device::Cpu)?)
    }
}
