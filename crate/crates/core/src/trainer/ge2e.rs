use std::collections::BTreeMap;

use candle_core::{DType, Tensor};
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::audio_dsp::MelSpectrogram;
use crate::error::{Error, Result};
use crate::nnet::{pad_frames, Adam, AdamConfig, ParamStore};
use crate::speaker::{ge2e_loss, ge2e_scale_bias, Ge2eConfig, Ge2eEncoder};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Ge2eTrainConfig {
    pub encoder: Ge2eConfig,
    pub steps: usize,
    pub speakers_per_batch: usize,
    pub utts_per_speaker: usize,
    /// Random crop length; shorter utterances are used whole.
    pub crop_frames: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for Ge2eTrainConfig {
    fn default() -> Self {
        Self { encoder: Ge2eConfig::default(), steps: 300, speakers_per_batch: 8, utts_per_speaker: 4, crop_frames: 40, lr: 2e-3, seed: 0 }
    }
}

/// Trains the recurrent GE2E encoder on mels grouped by speaker; returns per-step losses.
pub fn train_ge2e(by_speaker: &BTreeMap<String, Vec<MelSpectrogram>>, cfg: &Ge2eTrainConfig) -> Result<(ParamStore, Ge2eEncoder, Vec<f64>)> {
    let speakers: Vec<&Vec<MelSpectrogram>> = by_speaker.values().filter(|v| v.len() >= cfg.utts_per_speaker).collect();
    if speakers.len() < cfg.speakers_per_batch.max(2) || cfg.utts_per_speaker < 2 {
        return Err(Error::InvalidInput(format!(
            "ge2e training needs {} speakers with {} utterances each; {} qualify",
            cfg.speakers_per_batch.max(2),
            cfg.utts_per_speaker.max(2),
            speakers.len()
        )));
    }
    let mut ps = ParamStore::new(DType::F32, cfg.seed);
    let enc = Ge2eEncoder::new(&mut ps, "ge2e", &cfg.encoder)?;
    let (w, b) = ge2e_scale_bias(&mut ps, "ge2e.scale")?;
    let mut opt = Adam::new(AdamConfig { lr: cfg.lr, warmup: 50, ..AdamConfig::default() })?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let (n, m) = (cfg.speakers_per_batch, cfg.utts_per_speaker);
    let mut losses = Vec::with_capacity(cfg.steps);
    for _ in 0..cfg.steps {
        let mut crops: Vec<MelSpectrogram> = Vec::with_capacity(n * m);
        for spk in speakers.choose_multiple(&mut rng, n) {
            for mel in spk.choose_multiple(&mut rng, m) {
                let len = cfg.crop_frames.min(mel.n_frames);
                let start = rng.random_range(0..=mel.n_frames - len);
                crops.push(mel.slice(start, start + len));
            }
        }
        let rows: Vec<&[f32]> = crops.iter().map(|c| c.data.as_slice()).collect();
        let (x, lengths) = pad_frames(&rows, cfg.encoder.n_mels, ps.dtype(), ps.device())?;
        let e = enc.forward(&x, &lengths)?;
        let d = e.dim(1)?;
        let loss = ge2e_loss(&e.reshape((n, m, d))?, &w, &b)?;
        opt.step(&ps, &loss.backward()?)?;
        losses.push(loss.to_dtype(DType::F64)?.to_scalar::<f64>()?);
    }
    Ok((ps, enc, losses))
}

/// Embeds each mel whole (eval mode); rows are unit-norm.
pub fn ge2e_embed_all(enc: &Ge2eEncoder, ps: &ParamStore, mels: &[&MelSpectrogram]) -> Result<Vec<Vec<f32>>> {
    let rows: Vec<&[f32]> = mels.iter().map(|c| c.data.as_slice()).collect();
    let (x, lengths) = pad_frames(&rows, enc.config().n_mels, ps.dtype(), ps.device())?;
    let e: Tensor = enc.forward(&x, &lengths)?;
    Ok(e.to_dtype(DType::F32)?.to_vec2()?)
}
