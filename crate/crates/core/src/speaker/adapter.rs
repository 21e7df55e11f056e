//! ECAPA-style speaker adapter: dilated TDNN stack with SE-gated residual
//! blocks, multi-layer feature aggregation, attentive statistics pooling.

use candle_core::{Tensor, D};
use serde::{Deserialize, Serialize};

use crate::audio_dsp::MelSpectrogram;
use crate::error::{Error, Result};
use crate::nnet::{length_mask, pad_frames, relu, sigmoid, Conv1d, LayerNorm, Linear, ParamStore};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdapterConfig {
    pub n_mels: usize,
    pub channels: Vec<usize>,
    pub kernels: Vec<usize>,
    pub dilations: Vec<usize>,
    pub groups: Vec<usize>,
    pub attention_channels: usize,
    pub se_channels: usize,
    pub embed_dim: usize,
}

impl Default for AdapterConfig {
    fn default() -> Self {
        Self {
            n_mels: 80,
            channels: vec![1024, 1024, 1024, 1024, 3072],
            kernels: vec![5, 3, 3, 3, 1],
            dilations: vec![1, 2, 3, 4, 1],
            groups: vec![1, 1, 1, 1, 1],
            attention_channels: 128,
            se_channels: 128,
            embed_dim: 192,
        }
    }
}

impl AdapterConfig {
    pub fn validate(&self) -> Result<()> {
        let n = self.channels.len();
        if n < 3 || self.kernels.len() != n || self.dilations.len() != n || self.groups.len() != n {
            return Err(Error::InvalidConfig(format!(
                "adapter lists must have equal length >= 3 (channels {}, kernels {}, dilations {}, groups {})",
                n,
                self.kernels.len(),
                self.dilations.len(),
                self.groups.len()
            )));
        }
        if let Some(k) = self.kernels.iter().find(|&&k| k % 2 == 0) {
            return Err(Error::InvalidConfig(format!("adapter kernel {k} must be odd")));
        }
        if self.groups.iter().any(|&g| g != 1) {
            return Err(Error::InvalidConfig("grouped adapter convolutions are not supported (groups must be 1)".into()));
        }
        if self.channels.iter().chain([&self.n_mels, &self.attention_channels, &self.se_channels, &self.embed_dim]).any(|&c| c == 0)
            || self.dilations.contains(&0)
        {
            return Err(Error::InvalidConfig("adapter widths and dilations must be positive".into()));
        }
        Ok(())
    }

    /// Receptive field in frames; shorter inputs are rejected.
    pub fn min_frames(&self) -> usize {
        1 + self.kernels.iter().zip(&self.dilations).map(|(k, d)| (k - 1) * d).sum::<usize>()
    }
}

#[derive(Debug, Clone)]
struct Tdnn {
    conv: Conv1d,
    norm: LayerNorm,
}

impl Tdnn {
    fn new(ps: &mut ParamStore, name: &str, c_in: usize, c_out: usize, k: usize, d: usize) -> Result<Self> {
        Ok(Self {
            conv: Conv1d::new(ps, &format!("{name}.conv"), c_in, c_out, k, d)?,
            norm: LayerNorm::new(ps, &format!("{name}.norm"), c_out)?,
        })
    }

    /// `[B, T, C_in] -> [B, T, C_out]`, padded frames zeroed.
    fn forward(&self, x: &Tensor, valid: &Tensor) -> Result<Tensor> {
        let y = self.conv.forward(&x.transpose(1, 2)?.contiguous()?)?.transpose(1, 2)?;
        Ok(self.norm.forward(&relu(&y)?)?.broadcast_mul(valid)?)
    }
}

#[derive(Debug, Clone)]
struct SqueezeExcite {
    down: Linear,
    up: Linear,
}

impl SqueezeExcite {
    fn forward(&self, x: &Tensor, valid: &Tensor, lengths: &Tensor) -> Result<Tensor> {
        let mean = x.sum(1)?.broadcast_div(lengths)?;
        let gate = sigmoid(&self.up.forward(&relu(&self.down.forward(&mean)?)?)?)?;
        Ok(x.broadcast_mul(&gate.unsqueeze(1)?)?.broadcast_mul(valid)?)
    }
}

#[derive(Debug, Clone)]
pub struct SpeakerAdapter {
    cfg: AdapterConfig,
    first: Tdnn,
    blocks: Vec<(Tdnn, SqueezeExcite)>,
    aggregate: Tdnn,
    attn_in: Linear,
    attn_out: Linear,
    pool_norm: LayerNorm,
    out: Linear,
}

impl SpeakerAdapter {
    /// Parameters live under `<name>.` (the checkpoint group is the first path component).
    pub fn new(ps: &mut ParamStore, name: &str, cfg: &AdapterConfig) -> Result<Self> {
        cfg.validate()?;
        let n = cfg.channels.len();
        let first = Tdnn::new(ps, &format!("{name}.tdnn0"), cfg.n_mels, cfg.channels[0], cfg.kernels[0], cfg.dilations[0])?;
        let mut blocks = Vec::new();
        let mut concat = 0;
        for i in 1..n - 1 {
            let c = cfg.channels[i];
            let b = format!("{name}.block{i}");
            blocks.push((
                Tdnn::new(ps, &format!("{b}.tdnn"), cfg.channels[i - 1], c, cfg.kernels[i], cfg.dilations[i])?,
                SqueezeExcite {
                    down: Linear::new(ps, &format!("{b}.se.down"), c, cfg.se_channels)?,
                    up: Linear::new(ps, &format!("{b}.se.up"), cfg.se_channels, c)?,
                },
            ));
            concat += c;
        }
        let c_last = cfg.channels[n - 1];
        let aggregate = Tdnn::new(ps, &format!("{name}.mfa"), concat, c_last, cfg.kernels[n - 1], cfg.dilations[n - 1])?;
        Ok(Self {
            cfg: cfg.clone(),
            first,
            blocks,
            aggregate,
            attn_in: Linear::new(ps, &format!("{name}.asp.in"), 3 * c_last, cfg.attention_channels)?,
            attn_out: Linear::new(ps, &format!("{name}.asp.out"), cfg.attention_channels, c_last)?,
            pool_norm: LayerNorm::new(ps, &format!("{name}.asp.norm"), 2 * c_last)?,
            out: Linear::new(ps, &format!("{name}.fc"), 2 * c_last, cfg.embed_dim)?,
        })
    }

    pub fn config(&self) -> &AdapterConfig {
        &self.cfg
    }

    /// `mel`: `[B, T, n_mels]` with per-row valid `lengths`; returns `[B, embed_dim]`.
    pub fn forward(&self, mel: &Tensor, lengths: &[usize]) -> Result<Tensor> {
        let (b, t, f) = mel.dims3()?;
        if f != self.cfg.n_mels || lengths.len() != b {
            return Err(Error::Shape(format!("adapter expects [B, T, {}] with {b} lengths, got {:?}", self.cfg.n_mels, mel.dims())));
        }
        let min = self.cfg.min_frames();
        if let Some(&short) = lengths.iter().find(|&&l| l < min) {
            return Err(Error::InvalidInput(format!("speaker input has {short} frames; the adapter needs at least {min}")));
        }
        let dtype = mel.dtype();
        let valid = length_mask(lengths, t, dtype, mel.device())?.unsqueeze(2)?;
        let lens = Tensor::from_vec(lengths.iter().map(|&l| l as f32).collect::<Vec<_>>(), (b, 1), mel.device())?.to_dtype(dtype)?;

        let mut h = self.first.forward(&mel.broadcast_mul(&valid)?, &valid)?;
        let mut outs = Vec::with_capacity(self.blocks.len());
        for (tdnn, se) in &self.blocks {
            let y = se.forward(&tdnn.forward(&h, &valid)?, &valid, &lens)?;
            h = if y.dims() == h.dims() { (y + &h)? } else { y };
            outs.push(h.clone());
        }
        let h = self.aggregate.forward(&Tensor::cat(&outs, 2)?, &valid)?;

        // attentive statistics pooling with global context
        let mean = h.sum(1)?.broadcast_div(&lens)?;
        let var = h.sqr()?.sum(1)?.broadcast_div(&lens)?.sub(&mean.sqr()?)?;
        let std = (relu(&var)? + 1e-5)?.sqrt()?;
        let ctx_in = Tensor::cat(&[h.clone(), mean.unsqueeze(1)?.broadcast_as(h.shape())?, std.unsqueeze(1)?.broadcast_as(h.shape())?], 2)?;
        let logits = self.attn_out.forward(&self.attn_in.forward(&ctx_in)?.tanh()?)?;
        let pad_bias = ((&valid - 1.0)? * 1e9)?;
        let alpha = candle_nn::ops::softmax(&logits.broadcast_add(&pad_bias)?, 1)?;
        let mu = h.mul(&alpha)?.sum(1)?;
        let second = h.sqr()?.mul(&alpha)?.sum(1)?;
        let sigma = (relu(&second.sub(&mu.sqr()?)?)? + 1e-5)?.sqrt()?;
        let pooled = self.pool_norm.forward(&Tensor::cat(&[mu, sigma], D::Minus1)?)?;
        self.out.forward(&pooled)
    }

    /// Embeds a batch of mel spectrograms.
    pub fn embed_mels(&self, mels: &[&MelSpectrogram], ps: &ParamStore) -> Result<Tensor> {
        let rows: Vec<&[f32]> = mels.iter().map(|m| m.data.as_slice()).collect();
        let (x, lengths) = pad_frames(&rows, self.cfg.n_mels, ps.dtype(), ps.device())?;
        self.forward(&x, &lengths)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use candle_core::DType;

    pub(crate) fn tiny() -> AdapterConfig {
        AdapterConfig {
            n_mels: 6,
            channels: vec![8, 8, 8, 8, 12],
            kernels: vec![5, 3, 3, 3, 1],
            dilations: vec![1, 2, 3, 4, 1],
            groups: vec![1; 5],
            attention_channels: 4,
            se_channels: 4,
            embed_dim: 5,
        }
    }

    fn mel(t: usize, seed: u64) -> Tensor {
        ParamStore::new(DType::F32, seed).get("m.x", &[1, t, 6], crate::nnet::Init::Normal(1.0)).unwrap()
    }

    #[test]
    fn default_receptive_field() {
        assert_eq!(AdapterConfig::default().min_frames(), 23);
        let bad = AdapterConfig { kernels: vec![5, 3, 4, 3, 1], ..AdapterConfig::default() };
        assert!(bad.validate().is_err());
        let bad = AdapterConfig { dilations: vec![1, 2], ..AdapterConfig::default() };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn output_dim_is_length_independent() {
        let mut ps = ParamStore::new(DType::F32, 0);
        let a = SpeakerAdapter::new(&mut ps, "speaker_adapter", &tiny()).unwrap();
        for t in [50, 120, 23] {
            assert_eq!(a.forward(&mel(t, t as u64), &[t]).unwrap().dims(), &[1, 5]);
        }
    }

    #[test]
    fn too_short_input_names_minimum() {
        let mut ps = ParamStore::new(DType::F32, 0);
        let a = SpeakerAdapter::new(&mut ps, "speaker_adapter", &tiny()).unwrap();
        let err = a.forward(&mel(10, 1), &[10]).unwrap_err();
        assert!(err.to_string().contains("23"), "{err}");
    }

    #[test]
    fn padding_is_ignored() {
        let mut ps = ParamStore::new(DType::F64, 0);
        let a = SpeakerAdapter::new(&mut ps, "speaker_adapter", &tiny()).unwrap();
        let x = mel(30, 2).to_dtype(DType::F64).unwrap();
        let junk = (mel(9, 3).to_dtype(DType::F64).unwrap() * 50.0).unwrap();
        let padded = Tensor::cat(&[&x, &junk], 1).unwrap();
        let e1 = a.forward(&x, &[30]).unwrap();
        let e2 = a.forward(&padded, &[30]).unwrap();
        let d = (e1 - e2).unwrap().abs().unwrap().max_all().unwrap().to_scalar::<f64>().unwrap();
        assert!(d < 1e-9, "{d}");
    }

    #[test]
    fn deterministic_in_eval() {
        let mut ps = ParamStore::new(DType::F32, 0);
        let a = SpeakerAdapter::new(&mut ps, "speaker_adapter", &tiny()).unwrap();
        let x = mel(40, 5);
        let e1 = a.forward(&x, &[40]).unwrap().flatten_all().unwrap().to_vec1::<f32>().unwrap();
        let e2 = a.forward(&x, &[40]).unwrap().flatten_all().unwrap().to_vec1::<f32>().unwrap();
        assert_eq!(e1, e2);
    }
}
