use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use super::mel::{MelFilterbank, Stft};
use super::{MelConfig, MelSpectrogram, Waveform};
use crate::error::{invalid, Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GriffinLimConfig {
    pub iters: usize,
    /// Fast Griffin-Lim momentum; 0 gives the classic algorithm.
    pub momentum: f64,
    pub seed: u64,
    /// After the first quarter of the iterations, rescale bin magnitudes so the
    /// estimate's mel projection tracks the input instead of the fixed pseudo-inverse.
    pub mel_consistency: bool,
}

impl Default for GriffinLimConfig {
    fn default() -> Self {
        Self { iters: 60, momentum: 0.99, seed: 0, mel_consistency: true }
    }
}

/// Inverts a log-mel spectrogram to a waveform of exactly `frames * hop` samples.
pub fn griffin_lim(m: &MelSpectrogram, cfg: &MelConfig, iters: usize) -> Result<Waveform> {
    griffin_lim_with(m, cfg, &GriffinLimConfig { iters, ..GriffinLimConfig::default() })
}

pub fn griffin_lim_with(m: &MelSpectrogram, cfg: &MelConfig, gl: &GriffinLimConfig) -> Result<Waveform> {
    cfg.validate()?;
    if gl.iters < 1 {
        return invalid("griffin_lim needs at least one iteration");
    }
    if m.n_mels != cfg.n_mels {
        return Err(Error::Shape(format!("mel has {} bands, config expects {}", m.n_mels, cfg.n_mels)));
    }
    let n_out = m.n_frames * cfg.hop;
    if n_out == 0 {
        return invalid("empty mel spectrogram");
    }
    let mut target = linear_magnitudes(m, cfg);

    let stft = Stft::new(cfg);
    let n_bins = cfg.n_bins();
    let mut rng = ChaCha8Rng::seed_from_u64(gl.seed);
    let mut spec: Vec<Vec<Complex<f64>>> = target
        .iter()
        .map(|row| {
            row.iter()
                .map(|&a| Complex::from_polar(a, rng.random_range(0.0..std::f64::consts::TAU)))
                .collect()
        })
        .collect();
    let mut prev: Vec<Vec<Complex<f64>>> = vec![vec![Complex::new(0.0, 0.0); n_bins]; m.n_frames];
    let istft = Istft::new(cfg);
    let mut signal = istft.inverse(&spec, n_out);
    let fb = MelFilterbank::new(cfg);
    let mel_target: Vec<Vec<f64>> = m
        .frames()
        .map(|f| f.iter().map(|&v| if (v as f64) <= cfg.log_floor.ln() + 1e-6 { 0.0 } else { (v as f64).exp() }).collect())
        .collect();
    for it in 0..gl.iters {
        let rebuilt = stft.forward(&signal);
        if it >= gl.iters / 4 && gl.mel_consistency {
            refine_magnitudes(&fb, &rebuilt, &mel_target, &mut target);
        }
        for t in 0..m.n_frames {
            for k in 0..n_bins {
                let c = rebuilt[t][k];
                let accel = c + (c - prev[t][k]) * gl.momentum;
                prev[t][k] = c;
                let norm = accel.norm();
                let phase = if norm > 1e-16 { accel / norm } else { Complex::new(1.0, 0.0) };
                spec[t][k] = phase * target[t][k];
            }
        }
        signal = istft.inverse(&spec, n_out);
    }
    Waveform::new(signal.iter().map(|&s| s as f32).collect(), cfg.rate)
}

/// Pseudo-inverse of the mel filterbank applied to the exponentiated mel frames, clamped at 0.
fn linear_magnitudes(m: &MelSpectrogram, cfg: &MelConfig) -> Vec<Vec<f64>> {
    let fb = MelFilterbank::new(cfg);
    let fbm = DMatrix::from_fn(cfg.n_mels, cfg.n_bins(), |r, c| fb.weights[r][c]);
    let pinv = fbm.pseudo_inverse(1e-10).expect("filterbank SVD");
    let floor = cfg.log_floor;
    m.frames()
        .map(|frame| {
            let mel = nalgebra::DVector::from_iterator(
                cfg.n_mels,
                frame.iter().map(|&v| {
                    let a = (v as f64).exp();
                    if a <= floor * (1.0 + 1e-6) {
                        0.0
                    } else {
                        a
                    }
                }),
            );
            (&pinv * &mel).iter().map(|v| v.max(0.0)).collect()
        })
        .collect()
}

/// Rescales each bin of the current estimate so its mel projection matches the target.
fn refine_magnitudes(fb: &MelFilterbank, rebuilt: &[Vec<Complex<f64>>], mel: &[Vec<f64>], target: &mut [Vec<f64>]) {
    let n_mels = mel[0].len();
    let mut proj = vec![0.0; n_mels];
    for t in 0..rebuilt.len() {
        let mags: Vec<f64> = rebuilt[t].iter().map(|c| c.norm()).collect();
        fb.apply(&mags, &mut proj);
        for (k, tk) in target[t].iter_mut().enumerate() {
            let (mut num, mut den) = (0.0, 0.0);
            for j in 0..n_mels {
                let w = fb.weights[j][k];
                if w > 0.0 {
                    num += w * mel[t][j] / (proj[j] + 1e-9);
                    den += w;
                }
            }
            *tk = if den > 0.0 { mags[k] * num / den } else { 0.0 };
        }
    }
}

struct Istft {
    ifft: std::sync::Arc<dyn rustfft::Fft<f64>>,
    window: Vec<f64>,
    n_fft: usize,
    hop: usize,
}

impl Istft {
    fn new(cfg: &MelConfig) -> Self {
        let ifft = FftPlanner::new().plan_fft_inverse(cfg.n_fft);
        Self { ifft, window: super::padded_hann(cfg.win, cfg.n_fft), n_fft: cfg.n_fft, hop: cfg.hop }
    }

    /// Weighted overlap-add, frame `t` centered on sample `t * hop`.
    fn inverse(&self, spec: &[Vec<Complex<f64>>], n_out: usize) -> Vec<f64> {
        let half = self.n_fft / 2;
        let total = n_out + self.n_fft;
        let mut acc = vec![0.0; total];
        let mut norm = vec![0.0; total];
        let mut buf = vec![Complex::new(0.0, 0.0); self.n_fft];
        for (t, row) in spec.iter().enumerate() {
            for k in 0..self.n_fft {
                buf[k] = if k <= half { row[k] } else { row[self.n_fft - k].conj() };
            }
            buf[0].im = 0.0;
            buf[half].im = 0.0;
            self.ifft.process(&mut buf);
            let start = t * self.hop;
            for i in 0..self.n_fft {
                let w = self.window[i];
                acc[start + i] += buf[i].re / self.n_fft as f64 * w;
                norm[start + i] += w * w;
            }
        }
        (0..n_out)
            .map(|i| {
                let j = i + half;
                if norm[j] > 1e-8 {
                    acc[j] / norm[j]
                } else {
                    0.0
                }
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::audio_dsp::mel_spectrogram;

    fn tone(partials: &[(f64, f64)], n: usize) -> Waveform {
        let samples = (0..n)
            .map(|i| {
                let t = i as f64 / 16000.0;
                partials.iter().map(|(f, a)| a * (std::f64::consts::TAU * f * t).sin()).sum::<f64>() as f32
            })
            .collect();
        Waveform::new(samples, 16000).unwrap()
    }

    /// Oracle: peak of a zero-padded long DFT of the whole output.
    fn spectral_peak_hz(w: &Waveform) -> f64 {
        let n = 1 << 16;
        let mut buf: Vec<Complex<f64>> = (0..n)
            .map(|i| Complex::new(w.samples.get(i).copied().unwrap_or(0.0) as f64, 0.0))
            .collect();
        FftPlanner::new().plan_fft_forward(n).process(&mut buf);
        let k = (1..n / 2).max_by(|&a, &b| buf[a].norm().partial_cmp(&buf[b].norm()).unwrap()).unwrap();
        k as f64 * 16000.0 / n as f64
    }

    #[test]
    fn recovers_sine_frequency() {
        let cfg = MelConfig::default();
        let m = mel_spectrogram(&tone(&[(440.0, 0.5)], 16000), &cfg).unwrap();
        let out = griffin_lim(&m, &cfg, 60).unwrap();
        assert_eq!(out.len(), m.n_frames * cfg.hop);
        let peak = spectral_peak_hz(&out);
        assert!((peak - 440.0).abs() <= 10.0, "peak at {peak} Hz");
    }

    #[test]
    fn floor_mel_gives_silence() {
        let cfg = MelConfig::default();
        let m = MelSpectrogram::new(vec![cfg.log_floor_value(); 20 * 80], 20, 80, 0.02).unwrap();
        let out = griffin_lim(&m, &cfg, 10).unwrap();
        assert_eq!(out.len(), 20 * 320);
        assert!(out.rms() < 1e-3);
    }

    #[test]
    fn round_trip_on_harmonic_signal() {
        let cfg = MelConfig::default();
        let partials: Vec<(f64, f64)> = (1..30).map(|k| (150.0 * k as f64, 0.3 / k as f64)).collect();
        let x = tone(&partials, 16000);
        let mx = mel_spectrogram(&x, &cfg).unwrap();
        let y = griffin_lim(&mx, &cfg, 60).unwrap();
        let my = mel_spectrogram(&y, &cfg).unwrap();
        let err = mx.mean_abs_diff(&my).unwrap();
        assert!(err <= 1.0, "mean abs log-mel error {err}");
    }

    #[test]
    fn zero_iterations_rejected() {
        let cfg = MelConfig::default();
        let m = MelSpectrogram::new(vec![0.0; 80], 1, 80, 0.02).unwrap();
        assert!(griffin_lim(&m, &cfg, 0).is_err());
    }
}
