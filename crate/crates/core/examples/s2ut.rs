//! Trains a toy speech-to-unit translator on a few pairs and decodes greedily and with a beam.
//!
//! `cargo run --release --example s2ut`

use scs2ut::audio_dsp::{mel_spectrogram, read_wav, MelConfig};
use scs2ut::corpus::{generate_toy_corpus, load_manifest, Role, ToyCorpusSpec};
use scs2ut::quantizer::{run_length_collapse, Codebook, KMeansConfig};
use scs2ut::s2ut::{unit_accuracy, DecodeMode, S2utConfig};
use scs2ut::trainer::data::{fit_units, units_of};
use scs2ut::trainer::{load_s2ut, train_s2ut, Stage, StageConfig};

fn main() -> scs2ut::Result<()> {
    let tmp = tempfile::tempdir()?;
    let spec = ToyCorpusSpec { n_speakers: 4, n_pairs: 24, n_dev_pairs: 2, n_test_pairs: 2, ..ToyCorpusSpec::default() };
    let corpus = generate_toy_corpus(&spec, tmp.path().join("corpus"))?;
    let mel = MelConfig::default();
    let targets = load_manifest(corpus.manifest_path("train", Role::CStyle))?;
    let (cb, _) = fit_units(&targets, &mel, &KMeansConfig { k: 32, ..Default::default() })?;
    let codebook = tmp.path().join("codebook.bin");
    cb.save(&codebook)?;

    let cfg = StageConfig {
        stage: Stage::S2ut,
        manifest: corpus.manifest_path("train", Role::Source),
        target_manifest: Some(corpus.manifest_path("train", Role::CStyle)),
        codebook: codebook.clone(),
        out_dir: tmp.path().join("runs"),
        steps: 300,
        batch_size: 8,
        lr: 2e-3,
        warmup: 50,
        log_every: 100,
        max_decode_len: 200,
        s2ut: S2utConfig { n_units: 32, ..S2utConfig::toy() },
        ..StageConfig::default()
    };
    let out = train_s2ut(&cfg)?;
    println!("s2ut loss {:.3} -> {:.3} in {} steps", out.losses[0], out.final_loss(), out.steps);

    let (_, model, _, _) = load_s2ut(&out.checkpoint)?;
    let cb = Codebook::load(&codebook)?;
    let sources = load_manifest(corpus.manifest_path("train", Role::Source))?;
    for (src, tgt) in sources.rows.iter().zip(&targets.rows).take(3) {
        let m = mel_spectrogram(&read_wav(sources.wav_path(src))?, &mel)?;
        let reference = units_of(&mel_spectrogram(&read_wav(targets.wav_path(tgt))?, &mel)?, &cb)?;
        for mode in [DecodeMode::Greedy, DecodeMode::Beam(4)] {
            let h = model.translate(&m, mode, 200)?;
            let acc = unit_accuracy(&[(&h.units.0[..], &reference[..])]);
            println!(
                "{} {mode:?}: {} units ({} runs), score {:.3}, accuracy {:.2}",
                src.id,
                h.units.len(),
                run_length_collapse(&h.units).0.len(),
                h.score,
                acc
            );
        }
    }
    Ok(())
}
