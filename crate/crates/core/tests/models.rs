use std::collections::BTreeMap;

use scs2ut::audio_dsp::{mel_spectrogram, read_wav, MelConfig, MelSpectrogram};
use scs2ut::corpus::{generate_toy_corpus, load_manifest, Role, ToyCorpus, ToyCorpusSpec};
use scs2ut::evalsuite::{calibrate_manifest, transcribe_toy};
use scs2ut::quantizer::{encode, Codebook, Frames, KMeansConfig};
use scs2ut::s2ut::{unit_accuracy, DecodeMode, S2utConfig};
use scs2ut::speaker::{
    cosine, equal_error_rate, read_embedding_file, write_embedding_file, EmbeddingSource, Ge2eConfig, SpeakerEmbedding,
};
use scs2ut::trainer::data::{fit_units, units_of};
use scs2ut::trainer::{ge2e_embed_all, load_s2ut, train_ge2e, train_s2ut, Checkpoint, Ge2eTrainConfig, Stage, StageConfig};

fn corpus(dir: &std::path::Path, n_speakers: usize, n_pairs: usize, n_test: usize) -> ToyCorpus {
    let spec = ToyCorpusSpec { n_speakers, n_pairs, n_dev_pairs: 2, n_test_pairs: n_test, ..ToyCorpusSpec::default() };
    generate_toy_corpus(&spec, dir.join("corpus")).unwrap()
}

fn mels(c: &ToyCorpus, split: &str, role: Role) -> Vec<(String, MelSpectrogram)> {
    let m = load_manifest(c.manifest_path(split, role)).unwrap();
    let cfg = MelConfig::default();
    m.rows.iter().map(|u| (u.speaker_id.clone(), mel_spectrogram(&read_wav(m.wav_path(u)).unwrap(), &cfg).unwrap())).collect()
}

#[test]
fn ge2e_verifies_toy_voices() {
    let tmp = tempfile::tempdir().unwrap();
    let c = corpus(tmp.path(), 6, 72, 24);
    let mut by_speaker = BTreeMap::<String, Vec<_>>::new();
    for (s, m) in mels(&c, "train", Role::Source) {
        by_speaker.entry(s).or_default().push(m);
    }
    let cfg = Ge2eTrainConfig {
        encoder: Ge2eConfig { hidden: 48, embed: 32, layers: 1, ..Ge2eConfig::default() },
        steps: 150,
        speakers_per_batch: 6,
        utts_per_speaker: 4,
        ..Ge2eTrainConfig::default()
    };
    let (ps, enc, losses) = train_ge2e(&by_speaker, &cfg).unwrap();
    assert!(losses[losses.len() - 1] < 0.5 * losses[0], "{losses:?}");

    let test = mels(&c, "test", Role::Source);
    let embs = ge2e_embed_all(&enc, &ps, &test.iter().map(|(_, m)| m).collect::<Vec<_>>()).unwrap();
    let mut trials = Vec::new();
    for i in 0..test.len() {
        for j in i + 1..test.len() {
            trials.push((cosine(&embs[i], &embs[j]).unwrap(), test[i].0 == test[j].0));
        }
    }
    let eer = equal_error_rate(&trials).unwrap();
    assert!(eer <= 0.15, "EER {eer}");

    let rows: Vec<(String, SpeakerEmbedding)> =
        embs.iter().enumerate().map(|(i, e)| (format!("u{i}"), SpeakerEmbedding::new(e.clone(), EmbeddingSource::Ge2e).unwrap())).collect();
    let path = tmp.path().join("emb.txt");
    write_embedding_file(&rows, &path).unwrap();
    let back = read_embedding_file(&path, EmbeddingSource::Ge2e).unwrap();
    assert_eq!(back.len(), rows.len());
    for ((a, x), (b, y)) in rows.iter().zip(&back) {
        assert_eq!(a, b);
        assert!(cosine(&x.vector, &y.vector).unwrap() > 1.0 - 1e-6);
    }
}

#[test]
fn toy_transcriber_reads_clean_held_out_speech() {
    let tmp = tempfile::tempdir().unwrap();
    let c = corpus(tmp.path(), 4, 120, 40);
    let mel = MelConfig::default();
    let train = load_manifest(c.manifest_path("train", Role::CStyle)).unwrap();
    let (cb, _) = fit_units(&train, &mel, &KMeansConfig::default()).unwrap();
    let cal = calibrate_manifest(&train, &c.spec.target_inventory(), &mel, &cb, 120, 2).unwrap();

    let test = load_manifest(c.manifest_path("test", Role::CStyle)).unwrap();
    let exact = test
        .rows
        .iter()
        .filter(|u| {
            let units = encode(&Frames::from_mel(&mel_spectrogram(&read_wav(test.wav_path(u)).unwrap(), &mel).unwrap()), &cb).unwrap();
            transcribe_toy(&units, &cal.map, 2) == u.transcript
        })
        .count();
    assert!(exact as f64 >= 0.95 * test.len() as f64, "{exact}/{} exact", test.len());
}

#[test]
fn s2ut_memorizes_and_checkpoint_round_trips() {
    let tmp = tempfile::tempdir().unwrap();
    let c = corpus(tmp.path(), 4, 16, 2);
    let mel = MelConfig::default();
    let targets = load_manifest(c.manifest_path("train", Role::CStyle)).unwrap();
    let (cb, _) = fit_units(&targets, &mel, &KMeansConfig { k: 32, ..Default::default() }).unwrap();
    let codebook = tmp.path().join("codebook.bin");
    cb.save(&codebook).unwrap();
    let cfg = StageConfig {
        stage: Stage::S2ut,
        manifest: c.manifest_path("train", Role::Source),
        target_manifest: Some(c.manifest_path("train", Role::CStyle)),
        codebook,
        out_dir: tmp.path().join("runs"),
        steps: 250,
        batch_size: 8,
        lr: 2e-3,
        warmup: 50,
        log_every: 50,
        max_decode_len: 150,
        s2ut: S2utConfig { n_units: 32, ..S2utConfig::toy() },
        ..StageConfig::default()
    };
    let out = train_s2ut(&cfg).unwrap();

    let (_, model, _, _) = load_s2ut(&out.checkpoint).unwrap();
    let sources = load_manifest(c.manifest_path("train", Role::Source)).unwrap();
    let mut pairs = Vec::new();
    for (s, t) in sources.rows.iter().zip(&targets.rows) {
        let m = mel_spectrogram(&read_wav(sources.wav_path(s)).unwrap(), &mel).unwrap();
        let h = model.translate(&m, DecodeMode::Greedy, 150).unwrap();
        let r = units_of(&mel_spectrogram(&read_wav(targets.wav_path(t)).unwrap(), &mel).unwrap(), &cb).unwrap();
        pairs.push((h.units.0, r));
    }
    let refs: Vec<(&[u32], &[u32])> = pairs.iter().map(|(h, r)| (h.as_slice(), r.as_slice())).collect();
    let acc = unit_accuracy(&refs);
    assert!(acc >= 0.9, "train unit accuracy {acc}");

    let ck = Checkpoint::load(&out.checkpoint).unwrap();
    let again = tmp.path().join("again.safetensors");
    ck.save(&again).unwrap();
    let back = Checkpoint::load(&again).unwrap();
    assert_eq!((back.stage, back.step, back.seed), (ck.stage, ck.step, ck.seed));
    assert_eq!((&back.config, &back.extra), (&ck.config, &ck.extra));
    assert_eq!(back.tensors.keys().collect::<Vec<_>>(), ck.tensors.keys().collect::<Vec<_>>());
    for (name, t) in &ck.tensors {
        let diff = (t - &back.tensors[name]).unwrap().abs().unwrap().flatten_all().unwrap().max(0).unwrap();
        assert_eq!(diff.to_dtype(candle_core::DType::F64).unwrap().to_scalar::<f64>().unwrap(), 0.0, "{name}");
    }
    assert_eq!(Codebook::load(&cfg.codebook).unwrap().k, 32);
}
