use std::collections::BTreeMap;

use candle_core::backprop::GradStore;
use candle_core::{DType, Tensor, Var};
use serde::{Deserialize, Serialize};

use super::params::ParamStore;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub warmup: usize,
    /// Global gradient-norm clip; `None` disables clipping.
    pub clip_norm: Option<f64>,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 1e-3, beta1: 0.9, beta2: 0.98, eps: 1e-9, warmup: 400, clip_norm: Some(5.0) }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0) || !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || !(self.eps > 0.0) {
            return Err(Error::InvalidConfig(format!("bad optimizer settings {self:?}")));
        }
        Ok(())
    }

    /// Linear warmup to `lr` over `warmup` steps, then `lr * sqrt(warmup / step)`.
    /// `step` is 1-based.
    pub fn lr_at(&self, step: usize) -> f64 {
        let s = step.max(1) as f64;
        if self.warmup == 0 {
            return self.lr;
        }
        let w = self.warmup as f64;
        if s <= w {
            self.lr * s / w
        } else {
            self.lr * (w / s).sqrt()
        }
    }
}

/// Adam over every variable of a [`ParamStore`], keyed by parameter name.
#[derive(Debug)]
pub struct Adam {
    pub cfg: AdamConfig,
    step: usize,
    m: BTreeMap<String, Tensor>,
    v: BTreeMap<String, Tensor>,
}

impl Adam {
    pub fn new(cfg: AdamConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self { cfg, step: 0, m: BTreeMap::new(), v: BTreeMap::new() })
    }

    pub fn step_count(&self) -> usize {
        self.step
    }

    pub fn current_lr(&self) -> f64 {
        self.cfg.lr_at(self.step)
    }

    /// One update from `grads`. Returns the global gradient norm before clipping.
    pub fn step(&mut self, ps: &ParamStore, grads: &GradStore) -> Result<f64> {
        let present: Vec<(&String, &Var, Tensor)> = ps
            .vars()
            .iter()
            .filter_map(|(n, v)| grads.get(v.as_tensor()).map(|g| (n, v, g.clone())))
            .collect();
        let mut sq = 0.0f64;
        for (_, _, g) in &present {
            sq += g.to_dtype(DType::F64)?.sqr()?.sum_all()?.to_scalar::<f64>()?;
        }
        let norm = sq.sqrt();
        if !norm.is_finite() {
            return Err(Error::InvalidInput("non-finite gradient".into()));
        }
        let scale = match self.cfg.clip_norm {
            Some(c) if norm > c => c / norm,
            _ => 1.0,
        };
        self.step += 1;
        let t = self.step as i32;
        let lr = self.cfg.lr_at(self.step);
        let (b1, b2) = (self.cfg.beta1, self.cfg.beta2);
        let bc1 = 1.0 - b1.powi(t);
        let bc2 = 1.0 - b2.powi(t);
        for (name, var, g) in present {
            let g = (g * scale)?;
            let m_prev = match self.m.get(name) {
                Some(m) => m.clone(),
                None => g.zeros_like()?,
            };
            let v_prev = match self.v.get(name) {
                Some(v) => v.clone(),
                None => g.zeros_like()?,
            };
            let m = ((m_prev * b1)? + (&g * (1.0 - b1))?)?;
            let v = ((v_prev * b2)? + (g.sqr()? * (1.0 - b2))?)?;
            let m_hat = (&m / bc1)?;
            let v_hat = (&v / bc2)?;
            let update = (m_hat / (v_hat.sqrt()? + self.cfg.eps)?)?;
            var.set(&(var.as_tensor() - (update * lr)?)?.detach())?;
            self.m.insert(name.clone(), m.detach());
            self.v.insert(name.clone(), v.detach());
        }
        Ok(norm)
    }

    /// Moment tensors as `adam.m.<name>` / `adam.v.<name>` plus a step counter.
    pub fn state_tensors(&self) -> Result<BTreeMap<String, Tensor>> {
        let mut out = BTreeMap::new();
        for (k, t) in &self.m {
            out.insert(format!("adam.m.{k}"), t.clone());
        }
        for (k, t) in &self.v {
            out.insert(format!("adam.v.{k}"), t.clone());
        }
        Ok(out)
    }

    pub fn restore(&mut self, step: usize, tensors: &BTreeMap<String, Tensor>) {
        self.step = step;
        self.m.clear();
        self.v.clear();
        for (k, t) in tensors {
            if let Some(n) = k.strip_prefix("adam.m.") {
                self.m.insert(n.to_string(), t.clone());
            } else if let Some(n) = k.strip_prefix("adam.v.") {
                self.v.insert(n.to_string(), t.clone());
            }
        }
    }
}
