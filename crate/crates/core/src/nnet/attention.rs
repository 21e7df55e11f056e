use candle_core::Tensor;

use super::layers::{softmax, Linear};
use super::params::ParamStore;
use crate::error::{Error, Result};

/// Scaled dot-product attention over `heads` heads with an output projection.
///
/// Inputs are `[B, T, H]` (or `[T, H]`, treated as `B = 1`). `bias` is an additive
/// mask broadcastable to `[B, heads, Tq, Tk]`, see [`super::key_padding_bias`] and
/// [`super::causal_bias`].
#[derive(Debug, Clone)]
pub struct MultiHeadAttention {
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub o: Linear,
    heads: usize,
}

impl MultiHeadAttention {
    pub fn new(ps: &mut ParamStore, name: &str, hidden: usize, heads: usize) -> Result<Self> {
        if heads == 0 || hidden % heads != 0 {
            return Err(Error::InvalidConfig(format!("hidden {hidden} not divisible by {heads} heads")));
        }
        Ok(Self {
            q: Linear::new(ps, &format!("{name}.q"), hidden, hidden)?,
            k: Linear::new(ps, &format!("{name}.k"), hidden, hidden)?,
            v: Linear::new(ps, &format!("{name}.v"), hidden, hidden)?,
            o: Linear::new(ps, &format!("{name}.o"), hidden, hidden)?,
            heads,
        })
    }

    pub fn heads(&self) -> usize {
        self.heads
    }

    pub fn hidden(&self) -> usize {
        self.q.d_in()
    }

    pub fn forward(&self, query: &Tensor, memory: &Tensor, bias: Option<&Tensor>) -> Result<Tensor> {
        Ok(self.forward_with_weights(query, memory, bias)?.0)
    }

    /// Returns the output and the post-softmax weights `[B, heads, Tq, Tk]`.
    pub fn forward_with_weights(&self, query: &Tensor, memory: &Tensor, bias: Option<&Tensor>) -> Result<(Tensor, Tensor)> {
        let squeeze = query.rank() == 2;
        let (query, memory) = if squeeze {
            (query.unsqueeze(0)?, if memory.rank() == 2 { memory.unsqueeze(0)? } else { memory.clone() })
        } else {
            (query.clone(), memory.clone())
        };
        let (b, tq, h) = query.dims3()?;
        let (bm, tk, hm) = memory.dims3()?;
        if h != self.hidden() || hm != h || bm != b {
            return Err(Error::Shape(format!(
                "attention: query {:?}, memory {:?}, hidden {}",
                query.dims(),
                memory.dims(),
                self.hidden()
            )));
        }
        let d = h / self.heads;
        let split = |x: Tensor, t: usize| -> Result<Tensor> {
            Ok(x.reshape((b, t, self.heads, d))?.transpose(1, 2)?.contiguous()?)
        };
        let q = split(self.q.forward(&query)?, tq)?;
        let k = split(self.k.forward(&memory)?, tk)?;
        let v = split(self.v.forward(&memory)?, tk)?;
        let mut scores = (q.matmul(&k.t()?.contiguous()?)? / (d as f64).sqrt())?;
        if let Some(bias) = bias {
            scores = scores.broadcast_add(bias)?;
        }
        let weights = softmax(&scores)?;
        let ctx = weights.matmul(&v)?.transpose(1, 2)?.contiguous()?.reshape((b, tq, h))?;
        let mut out = self.o.forward(&ctx)?;
        if squeeze {
            out = out.squeeze(0)?;
        }
        Ok((out, weights))
    }
}
