//! Speaker-retention unit-to-mel model: unit encoder, speaker adapter +
//! projection, fusion, and a non-autoregressive mel decoder that emits exactly
//! one mel frame per input unit.

use candle_core::{DType, Device, Tensor};
use serde::{Deserialize, Serialize};

use crate::audio_dsp::{mel_spectrogram, MelConfig, MelSpectrogram, Waveform};
use crate::error::{Error, Result};
use crate::fusion::{Fusion, FusionKind};
use crate::nnet::{pad_frames, pad_ids, sinusoidal_positions, BlockConfig, ConformerBlock, Ctx, Embedding, LayerNorm, Linear, Padding, ParamStore};
use crate::quantizer::UnitSequence;
use crate::speaker::{AdapterConfig, SpeakerAdapter, SpeakerProjection};

/// Constant added to the decoder head so that an untrained model starts near
/// typical log-mel levels instead of zero.
pub const MEL_OFFSET: f64 = -5.0;

pub const GROUP_UNIT_ENCODER: &str = "unit_encoder";
pub const GROUP_MEL_DECODER: &str = "mel_decoder";
pub const GROUP_FUSION: &str = "fusion";
pub const GROUP_SPEAKER_ADAPTER: &str = "speaker_adapter";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct U2mConfig {
    pub n_units: usize,
    pub encoder_blocks: usize,
    pub decoder_blocks: usize,
    pub hidden: usize,
    pub heads: usize,
    pub encoder_kernel: usize,
    pub ffn_mult: usize,
    pub dropout: f64,
    pub n_mels: usize,
    pub fusion: FusionKind,
    pub adapter: AdapterConfig,
}

impl Default for U2mConfig {
    fn default() -> Self {
        Self {
            n_units: 100,
            encoder_blocks: 6,
            decoder_blocks: 6,
            hidden: 512,
            heads: 8,
            encoder_kernel: 31,
            ffn_mult: 4,
            dropout: 0.1,
            n_mels: 80,
            fusion: FusionKind::CrossAttention,
            adapter: AdapterConfig::default(),
        }
    }
}

impl U2mConfig {
    /// Desk-scale sizes used for the toy experiments.
    pub fn toy() -> Self {
        Self {
            encoder_blocks: 2,
            decoder_blocks: 2,
            hidden: 64,
            heads: 4,
            encoder_kernel: 7,
            ffn_mult: 2,
            dropout: 0.0,
            adapter: AdapterConfig {
                channels: vec![64, 64, 64, 64, 192],
                attention_channels: 32,
                se_channels: 32,
                embed_dim: 64,
                // receptive field 17 frames so that half-utterance prompts fit
                dilations: vec![1, 2, 2, 2, 1],
                ..AdapterConfig::default()
            },
            ..Self::default()
        }
    }

    pub fn block(&self) -> BlockConfig {
        BlockConfig {
            hidden: self.hidden,
            heads: self.heads,
            dropout: self.dropout,
            conv_kernel: self.encoder_kernel,
            ffn_mult: self.ffn_mult,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.block().validate()?;
        self.adapter.validate()?;
        if self.n_units == 0 || self.encoder_blocks == 0 || self.decoder_blocks == 0 || self.n_mels == 0 {
            return Err(Error::InvalidConfig("u2m sizes must be positive".into()));
        }
        if self.adapter.n_mels != self.n_mels {
            return Err(Error::InvalidConfig(format!("adapter n_mels {} != model n_mels {}", self.adapter.n_mels, self.n_mels)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct SrU2m {
    cfg: U2mConfig,
    embed: Embedding,
    encoder: Vec<ConformerBlock>,
    pub fusion: Fusion,
    pub adapter: SpeakerAdapter,
    pub projection: SpeakerProjection,
    decoder: Vec<ConformerBlock>,
    head_norm: LayerNorm,
    head: Linear,
    dtype: DType,
    device: Device,
}

impl SrU2m {
    pub fn new(ps: &mut ParamStore, cfg: &U2mConfig) -> Result<Self> {
        cfg.validate()?;
        let block = cfg.block();
        let encoder = (0..cfg.encoder_blocks)
            .map(|i| ConformerBlock::new(ps, &format!("{GROUP_UNIT_ENCODER}.block{i}"), &block))
            .collect::<Result<Vec<_>>>()?;
        let decoder = (0..cfg.decoder_blocks)
            .map(|i| ConformerBlock::new(ps, &format!("{GROUP_MEL_DECODER}.block{i}"), &block))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            cfg: cfg.clone(),
            embed: Embedding::new(ps, &format!("{GROUP_UNIT_ENCODER}.embed"), cfg.n_units, cfg.hidden)?,
            encoder,
            fusion: Fusion::new(ps, GROUP_FUSION, cfg.fusion, cfg.hidden, cfg.heads)?,
            adapter: SpeakerAdapter::new(ps, GROUP_SPEAKER_ADAPTER, &cfg.adapter)?,
            projection: SpeakerProjection::new(ps, &format!("{GROUP_SPEAKER_ADAPTER}.proj"), cfg.adapter.embed_dim, cfg.hidden)?,
            decoder,
            head_norm: LayerNorm::new(ps, &format!("{GROUP_MEL_DECODER}.head_norm"), cfg.hidden)?,
            head: Linear::new(ps, &format!("{GROUP_MEL_DECODER}.head"), cfg.hidden, cfg.n_mels)?,
            dtype: ps.dtype(),
            device: ps.device().clone(),
        })
    }

    pub fn config(&self) -> &U2mConfig {
        &self.cfg
    }

    pub fn check_units(&self, units: &[u32]) -> Result<()> {
        if let Some(u) = units.iter().find(|&&u| u as usize >= self.cfg.n_units) {
            return Err(Error::InvalidInput(format!("unit {u} outside [0, {})", self.cfg.n_units)));
        }
        Ok(())
    }

    /// `ids`: `[B, T]` u32 unit ids; returns `[B, T, H]` content features.
    pub fn unit_encode(&self, ids: &Tensor, pad: Option<&Padding>, ctx: &Ctx) -> Result<Tensor> {
        let (_, t) = ids.dims2()?;
        let ids_v: Vec<u32> = ids.flatten_all()?.to_vec1()?;
        self.check_units(&ids_v)?;
        let scale = (self.cfg.hidden as f64).sqrt();
        let pos = sinusoidal_positions(t, self.cfg.hidden, self.dtype, &self.device)?;
        let mut x = (self.embed.forward(ids)? * scale)?.broadcast_add(&pos)?;
        x = ctx.dropout(&x, self.cfg.dropout)?;
        for b in &self.encoder {
            x = b.forward(&x, pad, ctx)?;
        }
        Ok(x)
    }

    /// Raw adapter embeddings `[B, embed_dim]` from `[B, T, n_mels]` speaker mels.
    pub fn speaker_embed(&self, mel: &Tensor, lengths: &[usize]) -> Result<Tensor> {
        self.adapter.forward(mel, lengths)
    }

    /// `[B, T, H]` fused features to `[B, T, n_mels]` log-mel frames.
    pub fn mel_decode(&self, fused: &Tensor, pad: Option<&Padding>, ctx: &Ctx) -> Result<Tensor> {
        let mut x = fused.clone();
        for b in &self.decoder {
            x = b.forward(&x, pad, ctx)?;
        }
        Ok((self.head.forward(&self.head_norm.forward(&x)?)? + MEL_OFFSET)?)
    }

    /// Batched forward: `[B, T]` units, `[B, T_s, n_mels]` speaker mels -> `[B, T, n_mels]`.
    pub fn forward(
        &self,
        ids: &Tensor,
        unit_lengths: &[usize],
        speaker_mel: &Tensor,
        speaker_lengths: &[usize],
        ctx: &Ctx,
    ) -> Result<Tensor> {
        let (_, t) = ids.dims2()?;
        let pad = Padding::new(unit_lengths, t, self.dtype, &self.device)?;
        let content = self.unit_encode(ids, Some(&pad), ctx)?;
        let spk = self.projection.forward(&self.speaker_embed(speaker_mel, speaker_lengths)?)?;
        let fused = self.fusion.forward(&content, &spk)?;
        self.mel_decode(&fused, Some(&pad), ctx)
    }

    /// Batches unit sequences and speaker mels into tensors for [`Self::forward`].
    pub fn batch_inputs(&self, units: &[&[u32]], speakers: &[&MelSpectrogram]) -> Result<BatchInputs> {
        for u in units {
            self.check_units(u)?;
            if u.is_empty() {
                return Err(Error::InvalidInput("empty unit sequence".into()));
            }
        }
        let (ids, unit_lengths) = pad_ids(units, 0, &self.device)?;
        let rows: Vec<&[f32]> = speakers.iter().map(|m| m.data.as_slice()).collect();
        let (speaker_mel, speaker_lengths) = pad_frames(&rows, self.cfg.n_mels, self.dtype, &self.device)?;
        Ok(BatchInputs { ids, unit_lengths, speaker_mel, speaker_lengths })
    }

    /// Eval-mode synthesis of one utterance conditioned on a speaker mel.
    pub fn synthesize(&self, units: &UnitSequence, speaker: &MelSpectrogram, hop_seconds: f64) -> Result<MelSpectrogram> {
        let b = self.batch_inputs(&[&units.0], &[speaker])?;
        let out = self.forward(&b.ids, &b.unit_lengths, &b.speaker_mel, &b.speaker_lengths, &Ctx::eval())?;
        let data: Vec<f32> = out.squeeze(0)?.to_dtype(DType::F32)?.flatten_all()?.to_vec1()?;
        MelSpectrogram::new(data, units.0.len(), self.cfg.n_mels, hop_seconds)
    }
}

#[derive(Debug, Clone)]
pub struct BatchInputs {
    pub ids: Tensor,
    pub unit_lengths: Vec<usize>,
    pub speaker_mel: Tensor,
    pub speaker_lengths: Vec<usize>,
}

/// Units plus a speaker-source waveform to a mel spectrogram with one frame per unit.
pub fn sr_u2m_forward(units: &UnitSequence, speaker_src: &Waveform, model: &SrU2m, mel_cfg: &MelConfig) -> Result<MelSpectrogram> {
    let m = mel_spectrogram(speaker_src, mel_cfg)?;
    model.synthesize(units, &m, mel_cfg.hop_seconds())
}

/// Mean absolute error over all entries; shapes must match exactly.
pub fn reconstruction_loss(pred: &MelSpectrogram, target: &MelSpectrogram) -> Result<f64> {
    if pred.n_frames != target.n_frames || pred.n_mels != target.n_mels {
        return Err(Error::Shape(format!(
            "reconstruction loss: pred {}x{} vs target {}x{}",
            pred.n_frames, pred.n_mels, target.n_frames, target.n_mels
        )));
    }
    if pred.data.is_empty() {
        return Err(Error::Shape("reconstruction loss of empty spectrograms".into()));
    }
    let sum: f64 = pred.data.iter().zip(&target.data).map(|(a, b)| (*a as f64 - *b as f64).abs()).sum();
    Ok(sum / pred.data.len() as f64)
}

/// Differentiable L1 over valid frames: `pred`, `target` `[B, T, F]`, `valid` `[B, T, 1]`.
pub fn masked_l1(pred: &Tensor, target: &Tensor, valid: &Tensor) -> Result<Tensor> {
    if pred.dims() != target.dims() {
        return Err(Error::Shape(format!("masked_l1: pred {:?} vs target {:?}", pred.dims(), target.dims())));
    }
    let f = pred.dim(2)? as f64;
    let diff = (pred - target)?.abs()?.broadcast_mul(valid)?;
    let count = (valid.sum_all()? * f)?;
    Ok(diff.sum_all()?.div(&count)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nnet::{grad_check, Init};
    use candle_core::Var;

    fn tiny(fusion: FusionKind) -> U2mConfig {
        U2mConfig {
            n_units: 10,
            encoder_blocks: 1,
            decoder_blocks: 1,
            hidden: 8,
            heads: 2,
            encoder_kernel: 3,
            ffn_mult: 2,
            dropout: 0.0,
            n_mels: 6,
            fusion,
            adapter: AdapterConfig {
                n_mels: 6,
                channels: vec![8, 8, 8, 8, 12],
                attention_channels: 4,
                se_channels: 4,
                embed_dim: 5,
                ..AdapterConfig::default()
            },
        }
    }

    fn mel(t: usize, f: usize, seed: u64) -> MelSpectrogram {
        let v = ParamStore::new(DType::F32, seed).get("m.x", &[t * f], Init::Normal(2.0)).unwrap();
        MelSpectrogram::new((v - 5.0).unwrap().to_vec1().unwrap(), t, f, 0.02).unwrap()
    }

    #[test]
    fn output_length_equals_unit_count() {
        let mut ps = ParamStore::new(DType::F32, 0);
        let m = SrU2m::new(&mut ps, &tiny(FusionKind::CrossAttention)).unwrap();
        let spk = mel(30, 6, 1);
        for len in [1usize, 37, 50] {
            let units = UnitSequence((0..len as u32).map(|i| (i * 7) % 10).collect());
            let out = m.synthesize(&units, &spk, 0.02).unwrap();
            assert_eq!((out.n_frames, out.n_mels), (len, 6));
        }
    }

    #[test]
    fn unit_range_checked() {
        let mut ps = ParamStore::new(DType::F32, 0);
        let m = SrU2m::new(&mut ps, &tiny(FusionKind::Glu)).unwrap();
        assert!(m.synthesize(&UnitSequence(vec![1, 10]), &mel(30, 6, 1), 0.02).is_err());
    }

    #[test]
    fn unit_encoder_sees_order() {
        let mut ps = ParamStore::new(DType::F64, 0);
        let m = SrU2m::new(&mut ps, &tiny(FusionKind::SimpleFfn)).unwrap();
        let fwd: Vec<u32> = (0..37).map(|i| (i * 3 % 10) as u32).collect();
        let rev: Vec<u32> = fwd.iter().rev().copied().collect();
        let enc = |u: &[u32]| m.unit_encode(&Tensor::new(u, &Device::Cpu).unwrap().unsqueeze(0).unwrap(), None, &Ctx::eval()).unwrap();
        let a = enc(&fwd);
        assert_eq!(a.dims(), &[1, 37, 8]);
        let d = (a - enc(&rev)).unwrap().abs().unwrap().sum_all().unwrap().to_scalar::<f64>().unwrap();
        assert!(d > 0.0);
    }

    #[test]
    fn eval_synthesis_is_deterministic_and_speaker_dependent() {
        let mut ps = ParamStore::new(DType::F32, 0);
        let m = SrU2m::new(&mut ps, &tiny(FusionKind::CrossAttention)).unwrap();
        let units = UnitSequence(vec![1, 2, 3, 4, 5]);
        let a = m.synthesize(&units, &mel(40, 6, 1), 0.02).unwrap();
        let b = m.synthesize(&units, &mel(40, 6, 1), 0.02).unwrap();
        assert_eq!(a.data, b.data);
        let c = m.synthesize(&units, &mel(40, 6, 2), 0.02).unwrap();
        assert!(a.mean_abs_diff(&c).unwrap() > 0.0);
    }

    #[test]
    fn loss_examples() {
        let a = mel(5, 4, 1);
        let b = mel(5, 4, 2);
        assert_eq!(reconstruction_loss(&a, &a).unwrap(), 0.0);
        let plus = MelSpectrogram::new(a.data.iter().map(|v| v + 1.0).collect(), 5, 4, 0.02).unwrap();
        assert!((reconstruction_loss(&plus, &a).unwrap() - 1.0).abs() < 1e-6);
        assert_eq!(reconstruction_loss(&a, &b).unwrap(), reconstruction_loss(&b, &a).unwrap());
        assert!(reconstruction_loss(&a, &mel(6, 4, 1)).is_err());
    }

    #[test]
    fn masked_l1_ignores_padding() {
        let p = Tensor::new(&[[[1.0f64, 2.0], [9.0, 9.0]]], &Device::Cpu).unwrap();
        let t = Tensor::new(&[[[0.0f64, 0.0], [0.0, 0.0]]], &Device::Cpu).unwrap();
        let valid = Tensor::new(&[[[1.0f64], [0.0]]], &Device::Cpu).unwrap();
        assert_eq!(masked_l1(&p, &t, &valid).unwrap().to_scalar::<f64>().unwrap(), 1.5);
    }

    #[test]
    fn mel_decoder_gradients() {
        let mut ps = ParamStore::new(DType::F64, 4);
        let m = SrU2m::new(&mut ps, &tiny(FusionKind::CrossAttention)).unwrap();
        let x = Var::from_tensor(&ps.get("x.in", &[1, 3, 8], Init::Normal(1.0)).unwrap()).unwrap();
        let target = ps.get("x.target", &[1, 3, 6], Init::Normal(1.0)).unwrap();
        let mut inputs = vec![x.clone()];
        inputs.extend(ps.group(GROUP_MEL_DECODER).map(|(_, v)| v.clone()));
        let r = grad_check(|| Ok((m.mel_decode(x.as_tensor(), None, &Ctx::eval())? - &target)?.sqr()?.mean_all()?), &inputs, 1e-5).unwrap();
        assert!(r.max_rel_error <= 1e-4, "{r:?}");
    }
}
