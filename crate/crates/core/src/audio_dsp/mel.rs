use std::io::{Read, Write};
use std::path::Path;
use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use super::{padded_hann, reflect_index, Waveform};
use crate::error::{invalid, Error, Result};

/// STFT and mel-filterbank geometry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MelConfig {
    pub rate: u32,
    pub n_fft: usize,
    pub hop: usize,
    pub win: usize,
    pub n_mels: usize,
    pub fmin: f64,
    pub fmax: f64,
    pub log_floor: f64,
}

impl Default for MelConfig {
    fn default() -> Self {
        Self {
            rate: 16000,
            n_fft: 1024,
            hop: 320,
            win: 1024,
            n_mels: 80,
            fmin: 0.0,
            fmax: 8000.0,
            log_floor: 1e-5,
        }
    }
}

impl MelConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.hop >= 1 && self.hop <= self.win && self.win <= self.n_fft) {
            return Err(Error::InvalidConfig(format!(
                "need 1 <= hop <= win <= n_fft, got hop={} win={} n_fft={}",
                self.hop, self.win, self.n_fft
            )));
        }
        if self.n_mels == 0 {
            return Err(Error::InvalidConfig("n_mels must be >= 1".into()));
        }
        if !(self.fmin >= 0.0 && self.fmin < self.fmax && self.fmax <= self.rate as f64 / 2.0) {
            return Err(Error::InvalidConfig(format!(
                "need 0 <= fmin < fmax <= rate/2, got fmin={} fmax={} rate={}",
                self.fmin, self.fmax, self.rate
            )));
        }
        if self.log_floor <= 0.0 {
            return Err(Error::InvalidConfig("log_floor must be positive".into()));
        }
        Ok(())
    }

    /// Frame count for `n_samples`: `ceil(n / hop)`.
    pub fn frame_count(&self, n_samples: usize) -> usize {
        n_samples.div_ceil(self.hop)
    }

    pub fn hop_seconds(&self) -> f64 {
        self.hop as f64 / self.rate as f64
    }

    pub fn n_bins(&self) -> usize {
        self.n_fft / 2 + 1
    }

    pub fn log_floor_value(&self) -> f32 {
        self.log_floor.ln() as f32
    }
}

/// Log-amplitude mel frames, row-major `[frames x n_mels]`.
#[derive(Debug, Clone, PartialEq)]
pub struct MelSpectrogram {
    pub data: Vec<f32>,
    pub n_frames: usize,
    pub n_mels: usize,
    pub hop_seconds: f64,
}

impl MelSpectrogram {
    pub fn new(data: Vec<f32>, n_frames: usize, n_mels: usize, hop_seconds: f64) -> Result<Self> {
        if data.len() != n_frames * n_mels {
            return Err(Error::Shape(format!(
                "mel data has {} values, expected {n_frames}x{n_mels}",
                data.len()
            )));
        }
        Ok(Self { data, n_frames, n_mels, hop_seconds })
    }

    pub fn frame(&self, t: usize) -> &[f32] {
        &self.data[t * self.n_mels..(t + 1) * self.n_mels]
    }

    pub fn frames(&self) -> impl Iterator<Item = &[f32]> {
        self.data.chunks(self.n_mels)
    }

    /// Frames `start..end` as a new spectrogram.
    pub fn slice(&self, start: usize, end: usize) -> MelSpectrogram {
        let end = end.min(self.n_frames);
        let start = start.min(end);
        MelSpectrogram {
            data: self.data[start * self.n_mels..end * self.n_mels].to_vec(),
            n_frames: end - start,
            n_mels: self.n_mels,
            hop_seconds: self.hop_seconds,
        }
    }

    pub fn mean_abs_diff(&self, other: &MelSpectrogram) -> Result<f64> {
        if self.n_frames != other.n_frames || self.n_mels != other.n_mels {
            return Err(Error::Shape(format!(
                "{}x{} vs {}x{}",
                self.n_frames, self.n_mels, other.n_frames, other.n_mels
            )));
        }
        let sum: f64 = self.data.iter().zip(&other.data).map(|(a, b)| (a - b).abs() as f64).sum();
        Ok(sum / self.data.len().max(1) as f64)
    }
}

pub fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

pub fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

/// Triangular filters on the HTK mel scale, peak weight 1, evaluated at FFT bin centers.
#[derive(Debug, Clone)]
pub struct MelFilterbank {
    /// Dense `[n_mels x n_bins]`.
    pub weights: Vec<Vec<f64>>,
    /// Filter edges in Hz, `n_mels + 2` entries; filter `m` peaks at `edges[m + 1]`.
    pub edges: Vec<f64>,
    /// Per filter, the contiguous range of bins with nonzero weight.
    support: Vec<(usize, usize)>,
}

impl MelFilterbank {
    pub fn new(cfg: &MelConfig) -> Self {
        let n_bins = cfg.n_bins();
        let (lo, hi) = (hz_to_mel(cfg.fmin), hz_to_mel(cfg.fmax));
        let edges: Vec<f64> = (0..cfg.n_mels + 2)
            .map(|i| mel_to_hz(lo + (hi - lo) * i as f64 / (cfg.n_mels + 1) as f64))
            .collect();
        let bin_hz = cfg.rate as f64 / cfg.n_fft as f64;
        let mut weights = vec![vec![0.0; n_bins]; cfg.n_mels];
        let mut support = Vec::with_capacity(cfg.n_mels);
        for (m, row) in weights.iter_mut().enumerate() {
            let (left, center, right) = (edges[m], edges[m + 1], edges[m + 2]);
            let (mut first, mut last) = (usize::MAX, 0);
            for (k, w) in row.iter_mut().enumerate() {
                let f = k as f64 * bin_hz;
                let v = if f > left && f <= center {
                    (f - left) / (center - left)
                } else if f > center && f < right {
                    (right - f) / (right - center)
                } else {
                    0.0
                };
                if v > 0.0 {
                    *w = v;
                    first = first.min(k);
                    last = k;
                }
            }
            support.push(if first == usize::MAX { (0, 0) } else { (first, last + 1) });
        }
        Self { weights, edges, support }
    }

    /// Peak frequency of each filter.
    pub fn center_frequencies(&self) -> Vec<f64> {
        self.edges[1..self.edges.len() - 1].to_vec()
    }

    pub fn apply(&self, magnitudes: &[f64], out: &mut [f64]) {
        for (m, o) in out.iter_mut().enumerate() {
            let (a, b) = self.support[m];
            *o = (a..b).map(|k| self.weights[m][k] * magnitudes[k]).sum();
        }
    }
}

pub(crate) struct Stft {
    fft: Arc<dyn Fft<f64>>,
    window: Vec<f64>,
    n_fft: usize,
    hop: usize,
}

impl Stft {
    pub(crate) fn new(cfg: &MelConfig) -> Self {
        let fft = FftPlanner::new().plan_fft_forward(cfg.n_fft);
        Self { fft, window: padded_hann(cfg.win, cfg.n_fft), n_fft: cfg.n_fft, hop: cfg.hop }
    }

    /// Center-aligned frames: frame `t` is centered on sample `t * hop`, reflect-padded.
    /// Returns `ceil(len / hop)` half spectra of `n_fft / 2 + 1` bins.
    pub(crate) fn forward(&self, samples: &[f64]) -> Vec<Vec<Complex<f64>>> {
        let n = samples.len();
        let n_frames = n.div_ceil(self.hop);
        let half = (self.n_fft / 2) as isize;
        let mut buf = vec![Complex::new(0.0, 0.0); self.n_fft];
        let mut out = Vec::with_capacity(n_frames);
        for t in 0..n_frames {
            let start = (t * self.hop) as isize - half;
            for (i, b) in buf.iter_mut().enumerate() {
                let s = samples[reflect_index(start + i as isize, n)];
                *b = Complex::new(s * self.window[i], 0.0);
            }
            self.fft.process(&mut buf);
            out.push(buf[..self.n_fft / 2 + 1].to_vec());
        }
        out
    }
}

/// Natural-log mel magnitudes, floored at `cfg.log_floor`.
///
/// Produces exactly `ceil(len / hop)` frames so that frame and unit sequences line up.
pub fn mel_spectrogram(w: &Waveform, cfg: &MelConfig) -> Result<MelSpectrogram> {
    cfg.validate()?;
    if w.is_empty() {
        return invalid("empty waveform");
    }
    w.validate()?;
    if w.rate != cfg.rate {
        return invalid(format!("waveform rate {} does not match mel config rate {}", w.rate, cfg.rate));
    }
    let samples: Vec<f64> = w.samples.iter().map(|&s| s as f64).collect();
    let stft = Stft::new(cfg);
    let fb = MelFilterbank::new(cfg);
    let spectra = stft.forward(&samples);
    let mut data = Vec::with_capacity(spectra.len() * cfg.n_mels);
    let mut mags = vec![0.0; cfg.n_bins()];
    let mut mel = vec![0.0; cfg.n_mels];
    for spec in &spectra {
        for (m, c) in mags.iter_mut().zip(spec) {
            *m = c.norm();
        }
        fb.apply(&mags, &mut mel);
        data.extend(mel.iter().map(|&v| v.max(cfg.log_floor).ln() as f32));
    }
    MelSpectrogram::new(data, spectra.len(), cfg.n_mels, cfg.hop_seconds())
}

/// Writes `[u32 frames][u32 n_mels]` then row-major f32, all little-endian.
pub fn write_mel_file(path: impl AsRef<Path>, m: &MelSpectrogram) -> Result<()> {
    let mut bytes = Vec::with_capacity(8 + m.data.len() * 4);
    bytes.extend_from_slice(&(m.n_frames as u32).to_le_bytes());
    bytes.extend_from_slice(&(m.n_mels as u32).to_le_bytes());
    for v in &m.data {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    if let Some(dir) = path.as_ref().parent() {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::File::create(path)?.write_all(&bytes)?;
    Ok(())
}

/// Reads the matrix format of [`write_mel_file`]. `hop_seconds` is not stored and defaults to 20 ms.
pub fn read_mel_file(path: impl AsRef<Path>) -> Result<MelSpectrogram> {
    let path = path.as_ref();
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    if bytes.len() < 8 {
        return invalid(format!("{}: truncated header", path.display()));
    }
    let rows = u32::from_le_bytes(bytes[0..4].try_into().unwrap()) as usize;
    let cols = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    if bytes.len() != 8 + rows * cols * 4 {
        return invalid(format!(
            "{}: expected {} bytes of data for {rows}x{cols}, found {}",
            path.display(),
            rows * cols * 4,
            bytes.len() - 8
        ));
    }
    let data = bytes[8..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    MelSpectrogram::new(data, rows, cols, 0.020)
}
