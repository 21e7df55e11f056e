//! Content x speaker feature fusion: additive FFN, speaker-gated GLU, and
//! cross-attention with the speaker as a length-1 memory.

use std::fmt;
use std::str::FromStr;

use candle_core::Tensor;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nnet::{relu, sigmoid, MultiHeadAttention, Linear, ParamStore};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FusionKind {
    SimpleFfn,
    Glu,
    #[default]
    CrossAttention,
}

impl FusionKind {
    pub const ALL: [FusionKind; 3] = [FusionKind::SimpleFfn, FusionKind::Glu, FusionKind::CrossAttention];

    pub fn as_str(self) -> &'static str {
        match self {
            FusionKind::SimpleFfn => "simple_ffn",
            FusionKind::Glu => "glu",
            FusionKind::CrossAttention => "cross_attention",
        }
    }
}

impl fmt::Display for FusionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.pad(self.as_str())
    }
}

impl FromStr for FusionKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        FusionKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown fusion `{s}` (expected simple_ffn, glu or cross_attention)")))
    }
}

/// `h_t = content_t + speaker`, `out_t = W2 relu(W1 h_t + b1) + b2`. No residual.
#[derive(Debug, Clone)]
pub struct SimpleFfnFusion {
    pub w1: Linear,
    pub w2: Linear,
}

/// `out_t = (W_c content_t) * sigmoid(W_s speaker + b_s)`; the gate is constant over time.
#[derive(Debug, Clone)]
pub struct GluFusion {
    pub content: Linear,
    pub gate: Linear,
}

/// `out = content + MHA(q = content, k = v = speaker)` with a single memory slot.
#[derive(Debug, Clone)]
pub struct CrossAttentionFusion {
    pub mha: MultiHeadAttention,
}

#[derive(Debug, Clone)]
pub enum Fusion {
    SimpleFfn(SimpleFfnFusion),
    Glu(GluFusion),
    CrossAttention(CrossAttentionFusion),
}

impl Fusion {
    /// The simple strategy projects to `2 * hidden` (1024 at hidden 512) and back.
    pub fn new(ps: &mut ParamStore, name: &str, kind: FusionKind, hidden: usize, heads: usize) -> Result<Self> {
        Ok(match kind {
            FusionKind::SimpleFfn => Fusion::SimpleFfn(SimpleFfnFusion {
                w1: Linear::new(ps, &format!("{name}.ffn.w1"), hidden, 2 * hidden)?,
                w2: Linear::new(ps, &format!("{name}.ffn.w2"), 2 * hidden, hidden)?,
            }),
            FusionKind::Glu => Fusion::Glu(GluFusion {
                content: Linear::new(ps, &format!("{name}.glu.content"), hidden, hidden)?,
                gate: Linear::new(ps, &format!("{name}.glu.gate"), hidden, hidden)?,
            }),
            FusionKind::CrossAttention => Fusion::CrossAttention(CrossAttentionFusion {
                mha: MultiHeadAttention::new(ps, &format!("{name}.xattn"), hidden, heads)?,
            }),
        })
    }

    pub fn kind(&self) -> FusionKind {
        match self {
            Fusion::SimpleFfn(_) => FusionKind::SimpleFfn,
            Fusion::Glu(_) => FusionKind::Glu,
            Fusion::CrossAttention(_) => FusionKind::CrossAttention,
        }
    }

    /// `content`: `[B, T, H]`; `speaker`: `[B, H]` (projected embedding). Returns `[B, T, H]`.
    pub fn forward(&self, content: &Tensor, speaker: &Tensor) -> Result<Tensor> {
        let (b, t, h) = content.dims3()?;
        if t == 0 || speaker.dims() != [b, h] {
            return Err(Error::Shape(format!("fusion: content {:?} and speaker {:?}", content.dims(), speaker.dims())));
        }
        let spk = speaker.unsqueeze(1)?;
        match self {
            Fusion::SimpleFfn(f) => {
                let x = content.broadcast_add(&spk)?;
                f.w2.forward(&relu(&f.w1.forward(&x)?)?)
            }
            Fusion::Glu(f) => {
                let gate = sigmoid(&f.gate.forward(&spk)?)?;
                Ok(f.content.forward(content)?.broadcast_mul(&gate)?)
            }
            Fusion::CrossAttention(f) => Ok((content + f.mha.forward(content, &spk, None)?)?),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nnet::{grad_check, Init};
    use candle_core::{DType, Var};

    fn randn(shape: &[usize], seed: u64) -> Tensor {
        ParamStore::new(DType::F64, seed).get("x.v", shape, Init::Normal(1.0)).unwrap()
    }

    fn max_abs(t: &Tensor) -> f64 {
        t.abs().unwrap().max_all().unwrap().to_scalar::<f64>().unwrap()
    }

    #[test]
    fn parse_names() {
        for k in FusionKind::ALL {
            assert_eq!(k.as_str().parse::<FusionKind>().unwrap(), k);
        }
        assert!("film".parse::<FusionKind>().is_err());
    }

    #[test]
    fn all_kinds_preserve_length() {
        for k in FusionKind::ALL {
            let mut ps = ParamStore::new(DType::F64, 0);
            let f = Fusion::new(&mut ps, "fusion", k, 16, 8).unwrap();
            for t in [1usize, 7, 20] {
                assert_eq!(f.forward(&randn(&[2, t, 16], t as u64), &randn(&[2, 16], 99)).unwrap().dims(), &[2, t, 16]);
            }
            assert!(f.forward(&randn(&[2, 3, 16], 1), &randn(&[1, 16], 2)).is_err());
        }
    }

    #[test]
    fn simple_ffn_zero_weights_give_zero() {
        let mut ps = ParamStore::new(DType::F64, 0);
        let f = Fusion::new(&mut ps, "fusion", FusionKind::SimpleFfn, 8, 2).unwrap();
        for (name, v) in ps.vars() {
            ps.assign(name, &v.zeros_like().unwrap()).unwrap();
        }
        assert_eq!(max_abs(&f.forward(&randn(&[1, 4, 8], 1), &randn(&[1, 8], 2)).unwrap()), 0.0);
    }

    #[test]
    fn simple_ffn_zero_speaker_is_content_ffn() {
        let mut ps = ParamStore::new(DType::F64, 0);
        let Fusion::SimpleFfn(f) = Fusion::new(&mut ps, "fusion", FusionKind::SimpleFfn, 8, 2).unwrap() else { unreachable!() };
        let c = randn(&[1, 5, 8], 1);
        let zero = Tensor::zeros((1, 8), DType::F64, c.device()).unwrap();
        let fused = Fusion::SimpleFfn(f.clone()).forward(&c, &zero).unwrap();
        let direct = f.w2.forward(&relu(&f.w1.forward(&c).unwrap()).unwrap()).unwrap();
        assert_eq!(max_abs(&(fused - direct).unwrap()), 0.0);
    }

    #[test]
    fn glu_half_and_closed_gates() {
        let mut ps = ParamStore::new(DType::F64, 0);
        let f = Fusion::new(&mut ps, "fusion", FusionKind::Glu, 8, 2).unwrap();
        let Fusion::Glu(g) = &f else { unreachable!() };
        let c = randn(&[1, 6, 8], 3);
        let s = randn(&[1, 8], 4);
        let wc = g.content.forward(&c).unwrap();
        ps.assign("fusion.glu.gate.w", &Tensor::zeros((8, 8), DType::F64, c.device()).unwrap()).unwrap();
        ps.assign("fusion.glu.gate.b", &Tensor::zeros(8, DType::F64, c.device()).unwrap()).unwrap();
        let half = f.forward(&c, &s).unwrap();
        assert!(max_abs(&(half - (&wc * 0.5).unwrap()).unwrap()) < 1e-15);
        ps.assign("fusion.glu.gate.b", &Tensor::full(-50.0f64, 8, c.device()).unwrap()).unwrap();
        let closed = f.forward(&c, &s).unwrap();
        assert!(max_abs(&closed) <= 1e-8 * max_abs(&wc));
    }

    #[test]
    fn cross_attention_singleton_deltas_are_constant() {
        let mut ps = ParamStore::new(DType::F64, 0);
        let f = Fusion::new(&mut ps, "fusion", FusionKind::CrossAttention, 16, 8).unwrap();
        let c = randn(&[1, 9, 16], 5);
        let delta = (f.forward(&c, &randn(&[1, 16], 6)).unwrap() - &c).unwrap();
        let first = delta.narrow(1, 0, 1).unwrap();
        assert!(max_abs(&delta.broadcast_sub(&first).unwrap()) <= 1e-6);
    }

    #[test]
    fn cross_attention_zero_speaker_zero_value_bias_is_identity() {
        let mut ps = ParamStore::new(DType::F64, 0);
        let f = Fusion::new(&mut ps, "fusion", FusionKind::CrossAttention, 8, 2).unwrap();
        ps.assign("fusion.xattn.v.b", &Tensor::zeros(8, DType::F64, &candle_core::Device::Cpu).unwrap()).unwrap();
        ps.assign("fusion.xattn.o.b", &Tensor::zeros(8, DType::F64, &candle_core::Device::Cpu).unwrap()).unwrap();
        let c = randn(&[1, 4, 8], 7);
        let zero = Tensor::zeros((1, 8), DType::F64, c.device()).unwrap();
        assert!(max_abs(&(f.forward(&c, &zero).unwrap() - &c).unwrap()) < 1e-15);
    }

    #[test]
    fn gradients_for_every_kind() {
        for k in FusionKind::ALL {
            let mut ps = ParamStore::new(DType::F64, 11);
            let f = Fusion::new(&mut ps, "fusion", k, 4, 2).unwrap();
            let c = Var::from_tensor(&randn(&[1, 3, 4], 12)).unwrap();
            let s = Var::from_tensor(&randn(&[1, 4], 13)).unwrap();
            let mut inputs = vec![c.clone(), s.clone()];
            inputs.extend(ps.vars().values().cloned());
            let r = grad_check(|| Ok(f.forward(c.as_tensor(), s.as_tensor())?.sin()?.sum_all()?), &inputs, 1e-5).unwrap();
            assert!(r.max_rel_error <= 1e-4, "{k}: {r:?}");
        }
    }
}
