//! Fits a k-means codebook on toy log-mel frames and encodes an utterance into units.
//!
//! `cargo run --example units`

use scs2ut::audio_dsp::{mel_spectrogram, read_wav, MelConfig};
use scs2ut::corpus::{generate_toy_corpus, load_manifest, Role, ToyCorpusSpec};
use scs2ut::quantizer::{encode, fit_kmeans, run_length_collapse, Frames, KMeansConfig, LOG_MEL_TAG};

fn main() -> scs2ut::Result<()> {
    let tmp = tempfile::tempdir()?;
    let spec = ToyCorpusSpec { n_speakers: 4, n_pairs: 40, n_dev_pairs: 2, n_test_pairs: 2, ..ToyCorpusSpec::default() };
    let corpus = generate_toy_corpus(&spec, tmp.path())?;
    let m = load_manifest(corpus.manifest_path("train", Role::CStyle))?;
    let cfg = MelConfig::default();
    let mels = m.rows.iter().map(|u| mel_spectrogram(&read_wav(m.wav_path(u))?, &cfg)).collect::<scs2ut::Result<Vec<_>>>()?;
    let data: Vec<f32> = mels.iter().flat_map(|x| x.data.iter().copied()).collect();

    let fit = fit_kmeans(&Frames::new(&data, cfg.n_mels, LOG_MEL_TAG)?, &KMeansConfig { k: 32, ..Default::default() })?;
    println!("{} frames, k = {}, {} Lloyd iterations", data.len() / cfg.n_mels, fit.codebook.k, fit.inertia.len());
    println!("inertia: first {:.1}, last {:.1}", fit.inertia[0], fit.inertia[fit.inertia.len() - 1]);

    let units = encode(&Frames::from_mel(&mels[0]), &fit.codebook)?;
    let (runs, durs) = run_length_collapse(&units);
    println!("utterance {} ({}): {} frames -> {} runs", m.rows[0].id, m.rows[0].transcript.join(" "), units.len(), runs.len());
    println!("runs: {:?}", runs.iter().zip(&durs).map(|(u, d)| format!("{u}x{d}")).collect::<Vec<_>>());
    Ok(())
}
