//! Log-mel analysis, Griffin-Lim inversion and F0 of a synthetic utterance, with a PNG plot.
//!
//! `cargo run --example mel_griffin_lim [out_dir]`

use scs2ut::audio_dsp::{f0_autocorr, griffin_lim, mel_spectrogram, save_mel_png, write_wav, F0Config, MelConfig};
use scs2ut::corpus::{synthesize_symbol_speech, Durations, SpeakerParams, SymbolInventory};

fn main() -> scs2ut::Result<()> {
    let tmp = tempfile::tempdir()?;
    let out = std::env::args().nth(1).map(Into::into).unwrap_or_else(|| tmp.path().to_path_buf());
    std::fs::create_dir_all(&out)?;

    let symbols: Vec<String> = ["ka", "lo", "mi", "nu"].iter().map(|s| s.to_string()).collect();
    let inv = SymbolInventory::new("src", &symbols, 0, 320);
    let w = synthesize_symbol_speech(&symbols, &inv, &SpeakerParams::reference(), Durations::Canonical, 16000, 0)?;
    let cfg = MelConfig::default();
    let mel = mel_spectrogram(&w, &cfg)?;
    println!("{} samples -> {} frames x {} mels (ceil(n / hop) = {})", w.len(), mel.n_frames, mel.n_mels, w.len().div_ceil(cfg.hop));

    let back = griffin_lim(&mel, &cfg, 60)?;
    let again = mel_spectrogram(&back, &cfg)?;
    println!("Griffin-Lim: {} samples, mean |log-mel diff| {:.3}", back.len(), mel.mean_abs_diff(&again)?);

    let f0 = f0_autocorr(&w, &F0Config { hop_seconds: cfg.hop_seconds(), ..Default::default() })?;
    let voiced: Vec<f64> = f0.iter().flatten().copied().collect();
    println!("F0: {} of {} frames voiced, mean {:.1} Hz", voiced.len(), f0.len(), voiced.iter().sum::<f64>() / voiced.len().max(1) as f64);

    write_wav(out.join("original.wav"), &w)?;
    write_wav(out.join("griffin_lim.wav"), &back)?;
    save_mel_png(out.join("mel_f0.png"), &mel, &cfg, Some(&f0))?;
    println!("wrote original.wav, griffin_lim.wav and mel_f0.png to {}", out.display());
    Ok(())
}
