//! Timing harness on a stub pipeline with a known real-time factor.
//!
//! `cargo run --example efficiency`

use scs2ut::audio_dsp::Waveform;
use scs2ut::evalsuite::{measure_efficiency, BenchConfig, SleepPipeline};

fn main() -> scs2ut::Result<()> {
    let utts: Vec<Waveform> = (0..6).map(|i| Waveform::new(vec![0.0; 8000 + 4000 * i], 16000)).collect::<scs2ut::Result<_>>()?;
    let mut stub = SleepPipeline { rtf: 0.1, tokens_per_second: 50.0 };
    let r = measure_efficiency(&mut stub, &utts, &BenchConfig { warmup: 2, runs: 2 })?;
    println!("{}", serde_json::to_string_pretty(&r)?);
    println!("rtf * mean duration - mean time = {:.2e}", r.rtf * r.mean_duration_seconds - r.mean_inference_seconds);
    Ok(())
}
