use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::audio_dsp::Waveform;
use crate::error::{invalid, Error, Result};

/// Voice of a synthetic speaker.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpeakerParams {
    pub f0_base: f64,
    /// Per-segment relative F0 perturbation, uniform in `[-jitter, jitter]`.
    pub f0_jitter: f64,
    pub formants: [f64; 3],
    /// Spectral tilt in dB per octave above F0.
    pub tilt: f64,
}

impl SpeakerParams {
    pub fn validate(&self) -> Result<()> {
        if !(60.0..=400.0).contains(&self.f0_base) {
            return invalid(format!("f0_base {} outside [60, 400]", self.f0_base));
        }
        if !(self.formants[0] < self.formants[1] && self.formants[1] < self.formants[2]) {
            return invalid(format!("formants {:?} not strictly increasing", self.formants));
        }
        if !(0.0..1.0).contains(&self.f0_jitter) {
            return invalid(format!("f0_jitter {} outside [0, 1)", self.f0_jitter));
        }
        Ok(())
    }

    /// Fixed voice used for every C-style target.
    pub fn reference() -> Self {
        Self { f0_base: 140.0, f0_jitter: 0.0, formants: [500.0, 1500.0, 2500.0], tilt: -6.0 }
    }

    /// Samples a voice with F0 in 85..250 Hz and formants scaled by 0.85..1.2.
    pub fn sample(rng: &mut impl Rng) -> Self {
        let scale = rng.random_range(0.85..1.2);
        Self {
            f0_base: rng.random_range(85.0..250.0),
            f0_jitter: 0.03,
            formants: [500.0 * scale, 1500.0 * scale, 2500.0 * scale],
            tilt: rng.random_range(-9.0..-3.0),
        }
    }
}

/// Vowel-like formant ratios relative to a neutral `[500, 1500, 2500]` tract.
const VOWELS: [[f64; 3]; 8] = [
    [1.46, 0.73, 0.98],
    [0.54, 1.53, 1.20],
    [0.60, 0.58, 0.90],
    [1.06, 1.23, 0.99],
    [1.14, 0.56, 0.96],
    [1.32, 1.15, 0.96],
    [0.78, 1.33, 1.02],
    [1.04, 0.79, 1.10],
];

/// How one segment is rendered.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SegmentSpec {
    pub formant_scale: [f64; 3],
    pub samples: usize,
}

/// A language: a symbol set, each symbol mapped to a vowel colour and a canonical duration.
#[derive(Debug, Clone, PartialEq)]
pub struct SymbolInventory {
    pub language: String,
    pub symbols: Vec<String>,
    /// Index into the vowel table per symbol.
    colour: Vec<usize>,
    /// Canonical duration in samples, always a multiple of `hop`.
    canonical: Vec<usize>,
}

impl SymbolInventory {
    /// `rotation` shifts the vowel assignment so two languages sound different.
    pub fn new(language: &str, symbols: &[String], rotation: usize, hop: usize) -> Self {
        let n = symbols.len();
        Self {
            language: language.to_string(),
            symbols: symbols.to_vec(),
            colour: (0..n).map(|i| (i * 3 + rotation) % VOWELS.len()).collect(),
            canonical: (0..n).map(|i| (7 + i % 3) * hop).collect(),
        }
    }

    pub fn index_of(&self, symbol: &str) -> Result<usize> {
        self.symbols
            .iter()
            .position(|s| s == symbol)
            .ok_or_else(|| Error::InvalidInput(format!("unknown symbol {symbol:?} for language {}", self.language)))
    }

    pub fn canonical_samples(&self, idx: usize) -> usize {
        self.canonical[idx]
    }

    pub fn formant_scale(&self, idx: usize) -> [f64; 3] {
        let mut f = VOWELS[self.colour[idx]];
        // More symbols than vowels: nudge repeats apart.
        let lap = idx / VOWELS.len();
        f[1] *= 1.0 + 0.12 * lap as f64;
        f
    }
}

/// How segment durations are chosen.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Durations {
    /// Per-symbol fixed length (hop-aligned), identical every time the symbol occurs.
    Canonical,
    /// Uniform in the given millisecond range, drawn from the utterance seed.
    RandomMs(f64, f64),
}

/// Renders `symbols` as a concatenation of voiced segments.
///
/// Each segment is a harmonic series at the (jittered) speaker F0, shaped by
/// formant resonances at `speaker.formants * symbol colour`, the speaker's tilt,
/// and a syllable envelope. Harmonic phases restart at every segment.
pub fn synthesize_symbol_speech(
    symbols: &[String],
    inventory: &SymbolInventory,
    speaker: &SpeakerParams,
    durations: Durations,
    rate: u32,
    seed: u64,
) -> Result<Waveform> {
    if symbols.is_empty() {
        return invalid("cannot synthesize an empty symbol sequence");
    }
    speaker.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for s in symbols {
        let idx = inventory.index_of(s)?;
        let len = match durations {
            Durations::Canonical => inventory.canonical_samples(idx),
            Durations::RandomMs(lo, hi) => {
                let ms = if hi > lo { rng.random_range(lo..hi) } else { lo };
                ((ms / 1000.0) * rate as f64).round().max(1.0) as usize
            }
        };
        let jitter = if speaker.f0_jitter > 0.0 {
            rng.random_range(-speaker.f0_jitter..speaker.f0_jitter)
        } else {
            0.0
        };
        let f0 = speaker.f0_base * (1.0 + jitter);
        let seg = SegmentSpec { formant_scale: inventory.formant_scale(idx), samples: len };
        render_segment(&mut out, &seg, speaker, f0, rate);
    }
    Waveform::new(out, rate)
}

fn render_segment(out: &mut Vec<f32>, seg: &SegmentSpec, speaker: &SpeakerParams, f0: f64, rate: u32) {
    const BANDWIDTH: [f64; 3] = [90.0, 120.0, 160.0];
    const GAIN: [f64; 3] = [1.0, 0.6, 0.35];
    let rate_f = rate as f64;
    let nyquist_guard = (rate_f / 2.0 - 400.0).min(7600.0);
    let formants: Vec<f64> = (0..3).map(|j| speaker.formants[j] * seg.formant_scale[j]).collect();

    let mut buf = vec![0.0f64; seg.samples];
    let mut k = 1usize;
    while k as f64 * f0 < nyquist_guard {
        let f = k as f64 * f0;
        let envelope: f64 = 0.02
            + (0..3)
                .map(|j| GAIN[j] / (1.0 + ((f - formants[j]) / BANDWIDTH[j]).powi(2)))
                .sum::<f64>();
        let tilt = 10f64.powf(speaker.tilt * (k as f64).log2() / 20.0);
        let amp = envelope * tilt;
        // sin((n + 1) w) = 2 cos(w) sin(n w) - sin((n - 1) w)
        let w = std::f64::consts::TAU * f / rate_f;
        let c = 2.0 * w.cos();
        let (mut prev, mut cur) = (-w.sin(), 0.0);
        for b in buf.iter_mut() {
            *b += amp * cur;
            let next = c * cur - prev;
            prev = cur;
            cur = next;
        }
        k += 1;
    }
    let rms = (buf.iter().map(|v| v * v).sum::<f64>() / buf.len().max(1) as f64).sqrt();
    let gain = if rms > 0.0 { 0.15 / rms } else { 0.0 };
    let n = buf.len() as f64;
    out.extend(buf.iter().enumerate().map(|(i, v)| {
        let env = 0.25 + 0.75 * (std::f64::consts::PI * (i as f64 + 0.5) / n).sin();
        (v * gain * env) as f32
    }));
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::audio_dsp::{f0_autocorr, F0Config};

    fn inv() -> SymbolInventory {
        let syms: Vec<String> = ["ka", "lo", "mi", "nu"].iter().map(|s| s.to_string()).collect();
        SymbolInventory::new("src", &syms, 0, 320)
    }

    fn syms(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn empty_rejected() {
        let r = synthesize_symbol_speech(&[], &inv(), &SpeakerParams::reference(), Durations::Canonical, 16000, 0);
        assert!(r.is_err());
    }

    #[test]
    fn unknown_symbol_rejected() {
        let r = synthesize_symbol_speech(&syms(&["zz"]), &inv(), &SpeakerParams::reference(), Durations::Canonical, 16000, 0);
        assert!(matches!(r, Err(Error::InvalidInput(_))));
    }

    #[test]
    fn deterministic_given_seed() {
        let sp = SpeakerParams { f0_jitter: 0.05, ..SpeakerParams::reference() };
        let s = syms(&["ka", "mi", "nu", "lo"]);
        let a = synthesize_symbol_speech(&s, &inv(), &sp, Durations::RandomMs(100.0, 200.0), 16000, 3).unwrap();
        let b = synthesize_symbol_speech(&s, &inv(), &sp, Durations::RandomMs(100.0, 200.0), 16000, 3).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn canonical_durations_are_hop_aligned() {
        let s = syms(&["ka", "lo", "mi"]);
        let w = synthesize_symbol_speech(&s, &inv(), &SpeakerParams::reference(), Durations::Canonical, 16000, 0).unwrap();
        assert_eq!(w.len(), (7 + 8 + 9) * 320);
        assert!(w.samples.iter().all(|s| s.abs() < 1.0));
    }

    #[test]
    fn f0_ratio_between_two_speakers() {
        let s = syms(&["ka", "lo", "mi", "nu", "ka", "lo"]);
        let median = |f0: f64| {
            let sp = SpeakerParams { f0_base: f0, ..SpeakerParams::reference() };
            let w = synthesize_symbol_speech(&s, &inv(), &sp, Durations::Canonical, 16000, 1).unwrap();
            let mut v: Vec<f64> = f0_autocorr(&w, &F0Config::default()).unwrap().into_iter().flatten().collect();
            v.sort_by(|a, b| a.partial_cmp(b).unwrap());
            v[v.len() / 2]
        };
        let ratio = median(220.0) / median(110.0);
        assert!((ratio - 2.0).abs() <= 0.1, "ratio {ratio}");
    }
}
