use std::collections::BTreeMap;

use candle_core::{DType, Device, Tensor, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};

/// How a parameter is filled when first created.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Init {
    /// Standard normal; layers apply their runtime gain on top.
    Normal,
    Const(f64),
}

/// Named trainable tensors, keyed `{network}/{layer}/{tensor}`.
///
/// Each tensor's initial values depend only on the store seed and its name,
/// so adding a layer never perturbs the initialization of the others.
#[derive(Clone, Debug)]
pub struct ParamStore {
    vars: BTreeMap<String, Var>,
    seed: u64,
    dtype: DType,
    device: Device,
}

fn name_seed(seed: u64, name: &str) -> u64 {
    // FNV-1a over the name, mixed with the store seed
    let mut h: u64 = 0xcbf2_9ce4_8422_2325 ^ seed.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    for b in name.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

impl ParamStore {
    pub fn new(seed: u64, dtype: DType, device: Device) -> Self {
        Self {
            vars: BTreeMap::new(),
            seed,
            dtype,
            device,
        }
    }

    pub fn dtype(&self) -> DType {
        self.dtype
    }

    pub fn device(&self) -> &Device {
        &self.device
    }

    /// Returns the named parameter, creating it on first use.
    pub fn get_or_init(&mut self, name: &str, shape: &[usize], init: Init) -> Result<Var> {
        if let Some(v) = self.vars.get(name) {
            if v.dims() != shape {
                return Err(Error::shape(format!(
                    "parameter {name} has shape {:?}, requested {shape:?}",
                    v.dims()
                )));
            }
            return Ok(v.clone());
        }
        let n: usize = shape.iter().product();
        let data: Vec<f64> = match init {
            Init::Normal => {
                let mut rng = ChaCha8Rng::seed_from_u64(name_seed(self.seed, name));
                (0..n).map(|_| StandardNormal.sample(&mut rng)).collect()
            }
            Init::Const(c) => vec![c; n],
        };
        let t = Tensor::from_vec(data, shape, &self.device)?.to_dtype(self.dtype)?;
        let v = Var::from_tensor(&t)?;
        self.vars.insert(name.to_string(), v.clone());
        Ok(v)
    }

    pub fn get(&self, name: &str) -> Option<&Var> {
        self.vars.get(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.vars.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.vars.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vars.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn num_elements(&self) -> usize {
        self.vars.values().map(|v| v.elem_count()).sum()
    }

    /// Parameters whose network prefix (text before the first `/`) is in `networks`.
    pub fn vars_of(&self, networks: &[&str]) -> Vec<Var> {
        self.vars
            .iter()
            .filter(|(k, _)| networks.contains(&k.split('/').next().unwrap_or("")))
            .map(|(_, v)| v.clone())
            .collect()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Var)> {
        self.vars.iter().map(|(k, v)| (k.as_str(), v))
    }

    /// Overwrites an existing parameter's values.
    pub fn set(&self, name: &str, value: &Tensor) -> Result<()> {
        let v = self
            .vars
            .get(name)
            .ok_or_else(|| Error::Checkpoint(format!("unknown parameter {name}")))?;
        if v.dims() != value.dims() {
            return Err(Error::Checkpoint(format!(
                "parameter {name}: stored shape {:?}, loaded {:?}",
                v.dims(),
                value.dims()
            )));
        }
        v.set(&value.to_dtype(self.dtype)?)?;
        Ok(())
    }

    /// FNV-1a digest of the raw parameter bytes of the given networks.
    pub fn digest(&self, networks: &[&str]) -> Result<u64> {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for (k, v) in &self.vars {
            if !networks.contains(&k.split('/').next().unwrap_or("")) {
                continue;
            }
            for b in k.bytes() {
                h ^= b as u64;
                h = h.wrapping_mul(0x0100_0000_01b3);
            }
            let vals = v.as_tensor().flatten_all()?.to_dtype(DType::F64)?.to_vec1::<f64>()?;
            for x in vals {
                for b in x.to_bits().to_le_bytes() {
                    h ^= b as u64;
                    h = h.wrapping_mul(0x0100_0000_01b3);
                }
            }
        }
        Ok(h)
    }

    /// True when every parameter is finite.
    pub fn all_finite(&self) -> Result<bool> {
        for v in self.vars.values() {
            let s = v.as_tensor().abs()?.sum_all()?.to_dtype(DType::F64)?.to_scalar::<f64>()?;
            if !s.is_finite() {
                return Ok(false);
            }
        }
        Ok(true)
    }
}
