use std::cell::RefCell;
use std::collections::BTreeMap;

use candle_core::{DType, Device, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};

/// Parameter initialisers; all draws come from the store's seeded generator.
#[derive(Debug, Clone, Copy)]
pub enum Init {
    Uniform(f64),
    Normal(f64),
    Const(f64),
}

/// Named trainable parameters with seeded initialisation.
///
/// Names are dotted paths whose first component is the checkpoint group
/// (`unit_encoder.block0.ffn1.w`). Creation order does not matter for
/// reproducibility of values: each parameter draws from a generator seeded by
/// the store seed and its own name.
#[derive(Debug)]
pub struct ParamStore {
    vars: BTreeMap<String, Var>,
    dtype: DType,
    device: Device,
    seed: u64,
}

impl ParamStore {
    pub fn new(dtype: DType, seed: u64) -> Self {
        Self { vars: BTreeMap::new(), dtype, device: Device::Cpu, seed }
    }

    pub fn dtype(&self) -> DType {
        self.dtype
    }

    pub fn device(&self) -> &Device {
        &self.device
    }

    /// Creates `name`, or returns the existing tensor if the shape matches.
    pub fn get(&mut self, name: &str, shape: &[usize], init: Init) -> Result<Tensor> {
        if let Some(v) = self.vars.get(name) {
            if v.dims() != shape {
                return Err(Error::Shape(format!("parameter {name}: have {:?}, requested {shape:?}", v.dims())));
            }
            return Ok(v.as_tensor().clone());
        }
        let n: usize = shape.iter().product();
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ fnv1a(name));
        let values: Vec<f64> = match init {
            Init::Uniform(b) => (0..n).map(|_| rng.random_range(-b..=b)).collect(),
            Init::Normal(std) => {
                let d = Normal::new(0.0, std).map_err(|e| Error::InvalidConfig(e.to_string()))?;
                (0..n).map(|_| d.sample(&mut rng)).collect()
            }
            Init::Const(c) => vec![c; n],
        };
        let t = Tensor::from_vec(values, shape, &self.device)?.to_dtype(self.dtype)?;
        let var = Var::from_tensor(&t)?;
        let out = var.as_tensor().clone();
        self.vars.insert(name.to_string(), var);
        Ok(out)
    }

    pub fn vars(&self) -> &BTreeMap<String, Var> {
        &self.vars
    }

    pub fn var(&self, name: &str) -> Option<&Var> {
        self.vars.get(name)
    }

    /// Parameters whose top-level group is `group`.
    pub fn group(&self, group: &str) -> impl Iterator<Item = (&String, &Var)> {
        let prefix = format!("{group}.");
        self.vars.iter().filter(move |(k, _)| k.starts_with(&prefix))
    }

    pub fn groups(&self) -> Vec<String> {
        let mut g: Vec<String> = self.vars.keys().map(|k| k.split('.').next().unwrap_or("").to_string()).collect();
        g.dedup();
        g
    }

    pub fn num_params(&self) -> usize {
        self.vars.values().map(|v| v.elem_count()).sum()
    }

    /// Overwrites the value of an existing parameter in place.
    pub fn assign(&self, name: &str, value: &Tensor) -> Result<()> {
        let var = self.vars.get(name).ok_or_else(|| Error::Checkpoint(format!("unknown parameter {name}")))?;
        if var.dims() != value.dims() {
            return Err(Error::Checkpoint(format!(
                "parameter {name}: shape {:?} in store, {:?} in source",
                var.dims(),
                value.dims()
            )));
        }
        var.set(&value.to_dtype(self.dtype)?)?;
        Ok(())
    }
}

fn fnv1a(s: &str) -> u64 {
    s.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| (h ^ b as u64).wrapping_mul(0x0100_0000_01b3))
}

/// Forward-pass context: train/eval mode and the seeded dropout generator.
#[derive(Debug)]
pub struct Ctx {
    train: bool,
    rng: RefCell<ChaCha8Rng>,
}

impl Ctx {
    pub fn eval() -> Self {
        Self { train: false, rng: RefCell::new(ChaCha8Rng::seed_from_u64(0)) }
    }

    pub fn train(seed: u64) -> Self {
        Self { train: true, rng: RefCell::new(ChaCha8Rng::seed_from_u64(seed)) }
    }

    pub fn is_train(&self) -> bool {
        self.train
    }

    /// Inverted dropout; identity in eval mode or when `p == 0`.
    pub fn dropout(&self, x: &Tensor, p: f64) -> Result<Tensor> {
        if !self.train || p <= 0.0 {
            return Ok(x.clone());
        }
        let scale = 1.0 / (1.0 - p);
        let mut rng = self.rng.borrow_mut();
        let mask: Vec<f32> =
            (0..x.elem_count()).map(|_| if rng.random::<f64>() < p { 0.0 } else { scale as f32 }).collect();
        let mask = Tensor::from_vec(mask, x.dims(), x.device())?.to_dtype(x.dtype())?;
        Ok(x.mul(&mask)?)
    }
}
