//! An untrained toy unit-to-mel generator: one mel frame per unit, voiced by a prompt.
//!
//! `cargo run --example unit_to_mel`

use candle_core::DType;
use scs2ut::audio_dsp::{mel_spectrogram, MelConfig};
use scs2ut::corpus::{synthesize_symbol_speech, Durations, SpeakerParams, SymbolInventory};
use scs2ut::nnet::ParamStore;
use scs2ut::quantizer::UnitSequence;
use scs2ut::u2m::{reconstruction_loss, SrU2m, U2mConfig};

fn main() -> scs2ut::Result<()> {
    let cfg = U2mConfig::toy();
    let mut ps = ParamStore::new(DType::F32, 0);
    let model = SrU2m::new(&mut ps, &cfg)?;
    println!("toy generator: {} parameters, groups {:?}", ps.num_params(), ps.groups());

    let symbols: Vec<String> = ["ka", "lo", "mi", "nu"].iter().map(|s| s.to_string()).collect();
    let inv = SymbolInventory::new("src", &symbols, 0, 320);
    let prompt_wav = synthesize_symbol_speech(&symbols, &inv, &SpeakerParams::reference(), Durations::Canonical, 16000, 0)?;
    let mel_cfg = MelConfig::default();
    let prompt = mel_spectrogram(&prompt_wav, &mel_cfg)?;

    for n in [5usize, 17, 40] {
        let units = UnitSequence((0..n as u32).map(|i| (i * 7) % cfg.n_units as u32).collect());
        let mel = model.synthesize(&units, &prompt, mel_cfg.hop_seconds())?;
        println!("{n:>3} units -> {:>3} frames = {:.2} s", mel.n_frames, mel.n_frames as f64 * mel.hop_seconds);
    }
    let same = model.synthesize(&UnitSequence(vec![3; prompt.n_frames]), &prompt, mel_cfg.hop_seconds())?;
    println!("L1 of untrained output against the prompt: {:.3}", reconstruction_loss(&same, &prompt)?);
    Ok(())
}
