use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::audio_dsp::{mel_spectrogram, read_wav, MelConfig, MelSpectrogram};
use crate::corpus::{pair_up, split_halves, Manifest};
use crate::error::{Error, Result};
use crate::quantizer::{encode, fit_kmeans, Codebook, Frames, KMeansConfig, UnitSequence, LOG_MEL_TAG};

/// One unit-to-mel training example.
#[derive(Debug, Clone)]
pub struct U2mItem {
    pub id: String,
    pub speaker_id: String,
    pub units: Vec<u32>,
    /// Prompt the speaker embedding is taken from.
    pub speaker_mel: MelSpectrogram,
    /// Reconstruction target; one frame per unit.
    pub target: MelSpectrogram,
}

#[derive(Debug, Clone)]
pub struct S2utItem {
    pub id: String,
    pub source: MelSpectrogram,
    pub units: Vec<u32>,
    pub transcript: Vec<String>,
}

/// Items plus per-manifest accounting: `processed + skipped == manifest rows considered`.
#[derive(Debug, Clone)]
pub struct Prepared<T> {
    pub items: Vec<T>,
    pub processed: usize,
    pub skipped: usize,
}

pub fn units_of(mel: &MelSpectrogram, cb: &Codebook) -> Result<Vec<u32>> {
    Ok(encode(&Frames::from_mel(mel), cb)?.0)
}

/// Fits the shared codebook on every frame of `m` and encodes each utterance with it.
pub fn fit_units(m: &Manifest, mel_cfg: &MelConfig, kmeans: &KMeansConfig) -> Result<(Codebook, Vec<(String, UnitSequence)>)> {
    let mels = m.rows.iter().map(|u| mel_spectrogram(&read_wav(m.wav_path(u))?, mel_cfg)).collect::<Result<Vec<_>>>()?;
    let mut all = Vec::with_capacity(mels.iter().map(|x| x.data.len()).sum());
    for x in &mels {
        all.extend_from_slice(&x.data);
    }
    let cb = fit_kmeans(&Frames::new(&all, mel_cfg.n_mels, LOG_MEL_TAG)?, kmeans)?.codebook;
    let units = m.rows.iter().zip(&mels).map(|(u, x)| Ok((u.id.clone(), UnitSequence(units_of(x, &cb)?)))).collect::<Result<Vec<_>>>()?;
    Ok((cb, units))
}

/// Rows kept under `fraction`: the first `ceil(fraction * n)`, so every speaker of a
/// round-robin corpus stays represented.
pub fn take_fraction(n: usize, fraction: f64) -> usize {
    ((n as f64 * fraction).ceil() as usize).clamp(1, n.max(1))
}

/// Half-split examples: speaker prompt = first half, units and target = second half.
pub fn half_split_items(
    m: &Manifest,
    mel_cfg: &MelConfig,
    cb: &Codebook,
    min_seconds: f64,
    min_prompt_frames: usize,
) -> Result<Prepared<U2mItem>> {
    let mut items = Vec::new();
    let mut skipped = 0;
    for u in &m.rows {
        let w = read_wav(m.wav_path(u))?;
        let (first, second) = match split_halves(&w, min_seconds) {
            Ok(h) => h,
            Err(Error::Skip(msg)) => {
                log::warn!("skipping {}: {msg}", u.id);
                skipped += 1;
                continue;
            }
            Err(e) => return Err(e),
        };
        let speaker_mel = mel_spectrogram(&first, mel_cfg)?;
        if speaker_mel.n_frames < min_prompt_frames {
            log::warn!("skipping {}: prompt has {} frames, adapter needs {min_prompt_frames}", u.id, speaker_mel.n_frames);
            skipped += 1;
            continue;
        }
        let target = mel_spectrogram(&second, mel_cfg)?;
        items.push(U2mItem { id: u.id.clone(), speaker_id: u.speaker_id.clone(), units: units_of(&target, cb)?, speaker_mel, target });
    }
    Ok(Prepared { processed: items.len(), items, skipped })
}

/// Whole-utterance examples: prompt, units and target all come from the same utterance.
pub fn whole_items(m: &Manifest, mel_cfg: &MelConfig, cb: &Codebook, fraction: f64, min_prompt_frames: usize) -> Result<Prepared<U2mItem>> {
    let n = take_fraction(m.rows.len(), fraction);
    let mut items = Vec::new();
    let mut skipped = 0;
    for u in &m.rows[..n] {
        let mel = mel_spectrogram(&read_wav(m.wav_path(u))?, mel_cfg)?;
        if mel.n_frames < min_prompt_frames {
            log::warn!("skipping {}: {} frames, adapter needs {min_prompt_frames}", u.id, mel.n_frames);
            skipped += 1;
            continue;
        }
        items.push(U2mItem { id: u.id.clone(), speaker_id: u.speaker_id.clone(), units: units_of(&mel, cb)?, speaker_mel: mel.clone(), target: mel });
    }
    Ok(Prepared { processed: items.len(), items, skipped })
}

/// Source mel, target units (from the target wav) and target transcript per pair.
pub fn s2ut_items(source: &Manifest, target: &Manifest, mel_cfg: &MelConfig, cb: &Codebook, fraction: f64) -> Result<Prepared<S2utItem>> {
    let pairs = pair_up(source, target)?;
    let n = take_fraction(pairs.len(), fraction);
    let mut items = Vec::with_capacity(n);
    for p in &pairs[..n] {
        let src = mel_spectrogram(&read_wav(source.wav_path(&p.source))?, mel_cfg)?;
        let tgt = mel_spectrogram(&read_wav(target.wav_path(&p.target))?, mel_cfg)?;
        items.push(S2utItem { id: p.pair_id.clone(), source: src, units: units_of(&tgt, cb)?, transcript: p.target.transcript.clone() });
    }
    Ok(Prepared { processed: items.len(), items, skipped: 0 })
}

/// Epoch-wise shuffled minibatches from a seeded generator.
#[derive(Debug)]
pub struct Sampler {
    order: Vec<usize>,
    pos: usize,
    epoch: usize,
    rng: ChaCha8Rng,
}

impl Sampler {
    pub fn new(n: usize, seed: u64) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidInput("no training items left after skipping".into()));
        }
        Ok(Self { order: (0..n).collect(), pos: n, epoch: 0, rng: ChaCha8Rng::seed_from_u64(seed) })
    }

    pub fn epoch(&self) -> usize {
        self.epoch
    }

    /// Next batch of indices; returns `true` alongside when a new epoch started.
    pub fn next_batch(&mut self, size: usize) -> (Vec<usize>, bool) {
        let size = size.min(self.order.len());
        let mut fresh = false;
        if self.pos + size > self.order.len() {
            self.order.shuffle(&mut self.rng);
            self.pos = 0;
            self.epoch += 1;
            fresh = true;
        }
        let b = self.order[self.pos..self.pos + size].to_vec();
        self.pos += size;
        (b, fresh)
    }
}
