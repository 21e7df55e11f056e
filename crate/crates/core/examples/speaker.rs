//! Trains a small GE2E speaker encoder on toy voices and scores verification trials.
//!
//! `cargo run --release --example speaker`

use std::collections::BTreeMap;

use scs2ut::audio_dsp::{mel_spectrogram, read_wav, MelConfig};
use scs2ut::corpus::{generate_toy_corpus, load_manifest, Role, ToyCorpusSpec};
use scs2ut::speaker::{cosine, equal_error_rate, Ge2eConfig};
use scs2ut::trainer::{ge2e_embed_all, train_ge2e, Ge2eTrainConfig};

fn main() -> scs2ut::Result<()> {
    let tmp = tempfile::tempdir()?;
    let spec = ToyCorpusSpec { n_speakers: 6, n_pairs: 72, n_dev_pairs: 2, n_test_pairs: 24, ..ToyCorpusSpec::default() };
    let corpus = generate_toy_corpus(&spec, tmp.path())?;
    let mel_cfg = MelConfig::default();
    let load = |split: &str| -> scs2ut::Result<Vec<(String, _)>> {
        let m = load_manifest(corpus.manifest_path(split, Role::Source))?;
        m.rows.iter().map(|u| Ok((u.speaker_id.clone(), mel_spectrogram(&read_wav(m.wav_path(u))?, &mel_cfg)?))).collect()
    };

    let mut by_speaker = BTreeMap::<String, Vec<_>>::new();
    for (s, m) in load("train")? {
        by_speaker.entry(s).or_default().push(m);
    }
    let cfg = Ge2eTrainConfig {
        encoder: Ge2eConfig { hidden: 48, embed: 32, layers: 1, ..Ge2eConfig::default() },
        steps: 150,
        speakers_per_batch: 6,
        utts_per_speaker: 4,
        ..Ge2eTrainConfig::default()
    };
    let (ps, enc, losses) = train_ge2e(&by_speaker, &cfg)?;
    println!("GE2E loss {:.3} -> {:.3} over {} steps", losses[0], losses[losses.len() - 1], losses.len());

    let test = load("test")?;
    let mels: Vec<_> = test.iter().map(|(_, m)| m).collect();
    let embs = ge2e_embed_all(&enc, &ps, &mels)?;
    let mut trials = Vec::new();
    for i in 0..test.len() {
        for j in i + 1..test.len() {
            trials.push((cosine(&embs[i], &embs[j])?, test[i].0 == test[j].0));
        }
    }
    println!("{} trials on held-out utterances, EER {:.1}%", trials.len(), 100.0 * equal_error_rate(&trials)?);
    Ok(())
}
