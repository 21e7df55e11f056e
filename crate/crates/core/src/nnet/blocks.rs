use candle_core::{DType, Device, Tensor};
use serde::{Deserialize, Serialize};

use super::attention::MultiHeadAttention;
use super::layers::{causal_bias, glu, key_padding_bias, length_mask, relu, silu, DepthwiseConv1d, LayerNorm, Linear};
use super::params::{Ctx, ParamStore};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BlockConfig {
    pub hidden: usize,
    pub heads: usize,
    pub dropout: f64,
    pub conv_kernel: usize,
    pub ffn_mult: usize,
}

impl Default for BlockConfig {
    fn default() -> Self {
        Self { hidden: 512, heads: 8, dropout: 0.1, conv_kernel: 31, ffn_mult: 4 }
    }
}

impl BlockConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden == 0 || self.heads == 0 || self.hidden % self.heads != 0 {
            return Err(Error::InvalidConfig(format!("hidden {} not divisible by heads {}", self.hidden, self.heads)));
        }
        if self.conv_kernel % 2 == 0 {
            return Err(Error::InvalidConfig(format!("conv_kernel {} must be odd", self.conv_kernel)));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::InvalidConfig(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        if self.ffn_mult == 0 {
            return Err(Error::InvalidConfig("ffn_mult must be positive".into()));
        }
        Ok(())
    }
}

/// Padding information for a `[B, T, H]` batch: a `[B, T, 1]` validity mask and
/// the matching key bias for attention.
#[derive(Debug, Clone)]
pub struct Padding {
    pub valid: Tensor,
    pub key_bias: Tensor,
    pub lengths: Vec<usize>,
}

impl Padding {
    pub fn new(lengths: &[usize], t: usize, dtype: DType, device: &Device) -> Result<Self> {
        Ok(Self {
            valid: length_mask(lengths, t, dtype, device)?.unsqueeze(2)?,
            key_bias: key_padding_bias(lengths, t, dtype, device)?,
            lengths: lengths.to_vec(),
        })
    }
}

fn check_input(x: &Tensor, hidden: usize, what: &str) -> Result<(usize, usize)> {
    let dims = x.dims();
    if dims.len() != 3 || dims[2] != hidden {
        return Err(Error::Shape(format!("{what} expects [B, T, {hidden}], got {dims:?}")));
    }
    if dims[1] == 0 {
        return Err(Error::Shape(format!("{what}: empty sequence")));
    }
    Ok((dims[0], dims[1]))
}

#[derive(Debug, Clone)]
struct FeedForward {
    norm: LayerNorm,
    up: Linear,
    down: Linear,
}

impl FeedForward {
    fn new(ps: &mut ParamStore, name: &str, cfg: &BlockConfig) -> Result<Self> {
        Ok(Self {
            norm: LayerNorm::new(ps, &format!("{name}.norm"), cfg.hidden)?,
            up: Linear::new(ps, &format!("{name}.up"), cfg.hidden, cfg.hidden * cfg.ffn_mult)?,
            down: Linear::new(ps, &format!("{name}.down"), cfg.hidden * cfg.ffn_mult, cfg.hidden)?,
        })
    }

    fn forward(&self, x: &Tensor, ctx: &Ctx, p: f64, swish: bool) -> Result<Tensor> {
        let h = self.up.forward(&self.norm.forward(x)?)?;
        let h = if swish { silu(&h)? } else { relu(&h)? };
        let h = ctx.dropout(&h, p)?;
        ctx.dropout(&self.down.forward(&h)?, p)
    }
}

#[derive(Debug, Clone)]
struct SelfAttention {
    norm: LayerNorm,
    mha: MultiHeadAttention,
}

impl SelfAttention {
    fn new(ps: &mut ParamStore, name: &str, cfg: &BlockConfig) -> Result<Self> {
        Ok(Self {
            norm: LayerNorm::new(ps, &format!("{name}.norm"), cfg.hidden)?,
            mha: MultiHeadAttention::new(ps, &format!("{name}.mha"), cfg.hidden, cfg.heads)?,
        })
    }
}

/// Conformer block: half FFN, self-attention, convolution module, half FFN, final norm.
///
/// The convolution module normalises with LayerNorm after the depthwise conv.
#[derive(Debug, Clone)]
pub struct ConformerBlock {
    cfg: BlockConfig,
    ffn1: FeedForward,
    attn: SelfAttention,
    conv_norm: LayerNorm,
    pointwise_in: Linear,
    depthwise: DepthwiseConv1d,
    conv_mid_norm: LayerNorm,
    pointwise_out: Linear,
    ffn2: FeedForward,
    out_norm: LayerNorm,
}

impl ConformerBlock {
    pub fn new(ps: &mut ParamStore, name: &str, cfg: &BlockConfig) -> Result<Self> {
        cfg.validate()?;
        let h = cfg.hidden;
        Ok(Self {
            cfg: cfg.clone(),
            ffn1: FeedForward::new(ps, &format!("{name}.ffn1"), cfg)?,
            attn: SelfAttention::new(ps, &format!("{name}.attn"), cfg)?,
            conv_norm: LayerNorm::new(ps, &format!("{name}.conv.norm"), h)?,
            pointwise_in: Linear::new(ps, &format!("{name}.conv.pw_in"), h, 2 * h)?,
            depthwise: DepthwiseConv1d::new(ps, &format!("{name}.conv.dw"), h, cfg.conv_kernel)?,
            conv_mid_norm: LayerNorm::new(ps, &format!("{name}.conv.mid_norm"), h)?,
            pointwise_out: Linear::new(ps, &format!("{name}.conv.pw_out"), h, h)?,
            ffn2: FeedForward::new(ps, &format!("{name}.ffn2"), cfg)?,
            out_norm: LayerNorm::new(ps, &format!("{name}.out_norm"), h)?,
        })
    }

    pub fn forward(&self, x: &Tensor, pad: Option<&Padding>, ctx: &Ctx) -> Result<Tensor> {
        check_input(x, self.cfg.hidden, "conformer block")?;
        let p = self.cfg.dropout;
        let x = (x + (self.ffn1.forward(x, ctx, p, true)? * 0.5)?)?;

        let q = self.attn.norm.forward(&x)?;
        let a = self.attn.mha.forward(&q, &q, pad.map(|m| &m.key_bias))?;
        let x = (x + ctx.dropout(&a, p)?)?;

        let mut c = glu(&self.pointwise_in.forward(&self.conv_norm.forward(&x)?)?)?;
        if let Some(m) = pad {
            c = c.broadcast_mul(&m.valid)?;
        }
        let c = silu(&self.conv_mid_norm.forward(&self.depthwise.forward(&c)?)?)?;
        let c = ctx.dropout(&self.pointwise_out.forward(&c)?, p)?;
        let x = (x + c)?;

        let x = (&x + (self.ffn2.forward(&x, ctx, p, true)? * 0.5)?)?;
        let y = self.out_norm.forward(&x)?;
        match pad {
            Some(m) => Ok(y.broadcast_mul(&m.valid)?),
            None => Ok(y),
        }
    }
}

/// Pre-norm transformer encoder block (self-attention + FFN).
#[derive(Debug, Clone)]
pub struct TransformerEncoderBlock {
    cfg: BlockConfig,
    attn: SelfAttention,
    ffn: FeedForward,
}

impl TransformerEncoderBlock {
    pub fn new(ps: &mut ParamStore, name: &str, cfg: &BlockConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            cfg: cfg.clone(),
            attn: SelfAttention::new(ps, &format!("{name}.attn"), cfg)?,
            ffn: FeedForward::new(ps, &format!("{name}.ffn"), cfg)?,
        })
    }

    pub fn forward(&self, x: &Tensor, pad: Option<&Padding>, ctx: &Ctx) -> Result<Tensor> {
        check_input(x, self.cfg.hidden, "transformer encoder block")?;
        let p = self.cfg.dropout;
        let q = self.attn.norm.forward(x)?;
        let a = self.attn.mha.forward(&q, &q, pad.map(|m| &m.key_bias))?;
        let x = (x + ctx.dropout(&a, p)?)?;
        let y = (&x + self.ffn.forward(&x, ctx, p, false)?)?;
        match pad {
            Some(m) => Ok(y.broadcast_mul(&m.valid)?),
            None => Ok(y),
        }
    }
}

/// Pre-norm transformer decoder block: causal self-attention, cross-attention
/// over encoder memory, FFN.
#[derive(Debug, Clone)]
pub struct TransformerDecoderBlock {
    cfg: BlockConfig,
    self_attn: SelfAttention,
    cross: SelfAttention,
    ffn: FeedForward,
}

impl TransformerDecoderBlock {
    pub fn new(ps: &mut ParamStore, name: &str, cfg: &BlockConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            cfg: cfg.clone(),
            self_attn: SelfAttention::new(ps, &format!("{name}.self_attn"), cfg)?,
            cross: SelfAttention::new(ps, &format!("{name}.cross_attn"), cfg)?,
            ffn: FeedForward::new(ps, &format!("{name}.ffn"), cfg)?,
        })
    }

    /// `x`: `[B, T, H]` decoder states (causal); `memory`: `[B, S, H]` with optional padding.
    pub fn forward(&self, x: &Tensor, memory: &Tensor, memory_pad: Option<&Padding>, ctx: &Ctx) -> Result<Tensor> {
        let (b, t) = check_input(x, self.cfg.hidden, "transformer decoder block")?;
        let (bm, _) = check_input(memory, self.cfg.hidden, "decoder memory")?;
        if bm != b {
            return Err(Error::Shape(format!("decoder batch {b} vs memory batch {bm}")));
        }
        let p = self.cfg.dropout;
        let causal = causal_bias(t, x.dtype(), x.device())?;
        let q = self.self_attn.norm.forward(x)?;
        let a = self.self_attn.mha.forward(&q, &q, Some(&causal))?;
        let x = (x + ctx.dropout(&a, p)?)?;
        let q = self.cross.norm.forward(&x)?;
        let c = self.cross.mha.forward(&q, memory, memory_pad.map(|m| &m.key_bias))?;
        let x = (x + ctx.dropout(&c, p)?)?;
        Ok((&x + self.ffn.forward(&x, ctx, p, false)?)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nnet::{grad_check, Init};
    use candle_core::Var;

    fn small() -> BlockConfig {
        BlockConfig { hidden: 4, heads: 2, dropout: 0.0, conv_kernel: 3, ffn_mult: 2 }
    }

    fn randn(shape: &[usize], seed: u64) -> Tensor {
        ParamStore::new(DType::F64, seed).get("x.v", shape, Init::Normal(1.0)).unwrap()
    }

    #[test]
    fn config_validation() {
        assert!(BlockConfig::default().validate().is_ok());
        assert!(BlockConfig { heads: 3, ..small() }.validate().is_err());
        assert!(BlockConfig { conv_kernel: 4, ..small() }.validate().is_err());
    }

    #[test]
    fn shapes_preserved() {
        let cfg = BlockConfig { hidden: 8, ..small() };
        let mut ps = ParamStore::new(DType::F32, 0);
        let conf = ConformerBlock::new(&mut ps, "c", &cfg).unwrap();
        let enc = TransformerEncoderBlock::new(&mut ps, "e", &cfg).unwrap();
        let dec = TransformerDecoderBlock::new(&mut ps, "d", &cfg).unwrap();
        let ctx = Ctx::eval();
        for t in [1usize, 7, 53] {
            let x = randn(&[2, t, 8], t as u64).to_dtype(DType::F32).unwrap();
            assert_eq!(conf.forward(&x, None, &ctx).unwrap().dims(), &[2, t, 8]);
            assert_eq!(enc.forward(&x, None, &ctx).unwrap().dims(), &[2, t, 8]);
            let mem = randn(&[2, 5, 8], 9).to_dtype(DType::F32).unwrap();
            assert_eq!(dec.forward(&x, &mem, None, &ctx).unwrap().dims(), &[2, t, 8]);
        }
    }

    #[test]
    fn dim_mismatch_rejected() {
        let mut ps = ParamStore::new(DType::F64, 0);
        let conf = ConformerBlock::new(&mut ps, "c", &small()).unwrap();
        assert!(matches!(conf.forward(&randn(&[1, 3, 5], 0), None, &Ctx::eval()), Err(Error::Shape(_))));
    }

    #[test]
    fn eval_is_deterministic() {
        let cfg = BlockConfig { dropout: 0.1, ..small() };
        let mut ps = ParamStore::new(DType::F64, 0);
        let conf = ConformerBlock::new(&mut ps, "c", &cfg).unwrap();
        let x = randn(&[1, 6, 4], 1);
        let a = conf.forward(&x, None, &Ctx::eval()).unwrap().flatten_all().unwrap().to_vec1::<f64>().unwrap();
        let b = conf.forward(&x, None, &Ctx::eval()).unwrap().flatten_all().unwrap().to_vec1::<f64>().unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn padding_does_not_leak_into_valid_frames() {
        let mut ps = ParamStore::new(DType::F64, 0);
        let conf = ConformerBlock::new(&mut ps, "c", &small()).unwrap();
        let x = randn(&[1, 4, 4], 2);
        let pad = Padding::new(&[4], 6, DType::F64, &Device::Cpu).unwrap();
        let junk = (randn(&[1, 2, 4], 3) * 100.0).unwrap();
        let padded = Tensor::cat(&[&x, &junk], 1).unwrap();
        let short = conf.forward(&x, None, &Ctx::eval()).unwrap();
        let long = conf.forward(&padded, Some(&pad), &Ctx::eval()).unwrap().narrow(1, 0, 4).unwrap();
        let d = (short - long).unwrap().abs().unwrap().max_all().unwrap().to_scalar::<f64>().unwrap();
        assert!(d < 1e-9, "{d}");
    }

    fn check_block(f: &dyn Fn(&Tensor) -> Result<Tensor>, ps: &ParamStore, shape: &[usize]) {
        let x = Var::from_tensor(&randn(shape, 4)).unwrap();
        let mut inputs = vec![x.clone()];
        inputs.extend(ps.vars().values().cloned());
        let r = grad_check(|| Ok(f(x.as_tensor())?.sin()?.sum_all()?), &inputs, 1e-5).unwrap();
        assert!(r.max_rel_error <= 1e-4, "{r:?}");
    }

    #[test]
    fn conformer_gradients() {
        let mut ps = ParamStore::new(DType::F64, 1);
        let b = ConformerBlock::new(&mut ps, "c", &small()).unwrap();
        check_block(&|x| b.forward(x, None, &Ctx::eval()), &ps, &[1, 3, 4]);
    }

    #[test]
    fn encoder_gradients() {
        let mut ps = ParamStore::new(DType::F64, 2);
        let b = TransformerEncoderBlock::new(&mut ps, "e", &small()).unwrap();
        check_block(&|x| b.forward(x, None, &Ctx::eval()), &ps, &[1, 3, 4]);
    }

    #[test]
    fn decoder_gradients() {
        let mut ps = ParamStore::new(DType::F64, 3);
        let b = TransformerDecoderBlock::new(&mut ps, "d", &small()).unwrap();
        let mem = randn(&[1, 2, 4], 8);
        check_block(&|x| b.forward(x, &mem, None, &Ctx::eval()), &ps, &[1, 3, 4]);
    }
}
