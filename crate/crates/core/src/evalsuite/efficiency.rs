use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::audio_dsp::Waveform;
use crate::error::{Error, Result};

/// A complete inference path, timed from waveform in to waveform out.
pub trait Pipeline {
    /// Returns the number of output tokens (units) generated.
    fn run(&mut self, input: &Waveform) -> Result<usize>;
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BenchConfig {
    /// Leading utterances run once and discarded.
    pub warmup: usize,
    /// Passes over the measured utterances.
    pub runs: usize,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self { warmup: 3, runs: 1 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EfficiencyReport {
    pub mean_inference_seconds: f64,
    pub mean_duration_seconds: f64,
    pub rtf: f64,
    pub tokens_per_sec: f64,
    pub n_utts: usize,
    pub total_audio_seconds: f64,
}

/// Wall-clock timing of `pipeline`; the first `warmup` utterances are excluded.
pub fn measure_efficiency(pipeline: &mut dyn Pipeline, utterances: &[Waveform], cfg: &BenchConfig) -> Result<EfficiencyReport> {
    if cfg.runs == 0 || utterances.len() <= cfg.warmup {
        return Err(Error::InvalidInput(format!(
            "measure_efficiency: {} utterances leave nothing after {} warmup",
            utterances.len(),
            cfg.warmup
        )));
    }
    for u in &utterances[..cfg.warmup] {
        pipeline.run(u)?;
    }
    let measured = &utterances[cfg.warmup..];
    let mut elapsed = Duration::ZERO;
    let mut tokens = 0usize;
    let mut audio = 0.0;
    for _ in 0..cfg.runs {
        for u in measured {
            let t0 = Instant::now();
            tokens += pipeline.run(u)?;
            elapsed += t0.elapsed();
            audio += u.duration_seconds();
        }
    }
    let n = measured.len() * cfg.runs;
    Ok(report_from_totals(elapsed.as_secs_f64(), audio, tokens, n))
}

/// Builds the report from raw totals; `rtf * mean_duration == mean_inference` by construction.
pub fn report_from_totals(total_seconds: f64, total_audio_seconds: f64, tokens: usize, n_utts: usize) -> EfficiencyReport {
    let mean_inference_seconds = total_seconds / n_utts as f64;
    let mean_duration_seconds = total_audio_seconds / n_utts as f64;
    EfficiencyReport {
        mean_inference_seconds,
        mean_duration_seconds,
        rtf: mean_inference_seconds / mean_duration_seconds,
        tokens_per_sec: tokens as f64 / total_seconds,
        n_utts,
        total_audio_seconds,
    }
}

/// Sleeps `rtf` seconds per second of input and reports `tokens_per_second * duration` tokens.
#[derive(Debug, Clone)]
pub struct SleepPipeline {
    pub rtf: f64,
    pub tokens_per_second: f64,
}

impl Pipeline for SleepPipeline {
    fn run(&mut self, input: &Waveform) -> Result<usize> {
        let d = input.duration_seconds() * self.rtf;
        std::thread::sleep(Duration::from_secs_f64(d));
        Ok((self.tokens_per_second * d).round() as usize)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn silence(seconds: f64) -> Waveform {
        Waveform::new(vec![0.0; (seconds * 16000.0) as usize], 16000).unwrap()
    }

    #[test]
    fn sleep_stub_rtf() {
        let utts: Vec<Waveform> = (0..5).map(|_| silence(1.0)).collect();
        let mut p = SleepPipeline { rtf: 0.1, tokens_per_second: 100.0 };
        let r = measure_efficiency(&mut p, &utts, &BenchConfig { warmup: 2, runs: 1 }).unwrap();
        assert_eq!(r.n_utts, 3);
        assert!((r.rtf - 0.10).abs() <= 0.02, "{r:?}");
        assert!((r.mean_inference_seconds - r.rtf * r.mean_duration_seconds).abs() < 1e-9);
    }

    #[test]
    fn tokens_per_second() {
        // 50 tokens in 0.5 s
        let utts = vec![silence(0.5); 4];
        let mut p = SleepPipeline { rtf: 1.0, tokens_per_second: 100.0 };
        let r = measure_efficiency(&mut p, &utts, &BenchConfig { warmup: 1, runs: 1 }).unwrap();
        assert!((r.tokens_per_sec - 100.0).abs() <= 10.0, "{r:?}");
    }

    #[test]
    fn empty_after_warmup() {
        let mut p = SleepPipeline { rtf: 0.0, tokens_per_second: 0.0 };
        assert!(measure_efficiency(&mut p, &[silence(0.1)], &BenchConfig::default()).is_err());
    }
}
