use std::path::Path;
use std::process::{Command, Output};

use scs2ut::audio_dsp::read_wav;
use scs2ut::corpus::load_manifest;
use scs2ut::s2ut::{read_hypotheses, S2utConfig};
use scs2ut::trainer::{Stage, StageConfig};
use scs2ut::u2m::U2mConfig;

fn scs2ut(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_scs2ut"))
        .args(args)
        .current_dir(dir)
        .env_remove("SCS2UT_DATA_DIR")
        .output()
        .expect("spawn scs2ut")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let o = scs2ut(dir, args);
    let stderr = String::from_utf8_lossy(&o.stderr);
    assert_eq!(o.status.code(), Some(0), "scs2ut {args:?} failed: {stderr}");
    String::from_utf8(o.stdout).unwrap()
}

const K: usize = 24;

fn stage_toml(dir: &Path, stage: Stage, manifest: &str, target: Option<&str>, steps: usize) -> String {
    let cfg = StageConfig {
        stage,
        manifest: manifest.into(),
        target_manifest: target.map(Into::into),
        codebook: "units/codebook.bin".into(),
        out_dir: "runs".into(),
        steps,
        batch_size: 4,
        warmup: 5,
        log_every: 5,
        eval_utts: 4,
        max_decode_len: 30,
        u2m: U2mConfig { n_units: K, ..U2mConfig::toy() },
        s2ut: S2utConfig { n_units: K, ..S2utConfig::toy() },
        ..StageConfig::default()
    };
    let name = format!("{}.toml", stage.as_str());
    std::fs::write(dir.join(&name), cfg.to_toml_string().unwrap()).unwrap();
    name
}

#[test]
fn corpus_units_pretrain_translate_chain() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    std::fs::write(dir.join("spec.toml"), "n_speakers = 4\nn_pairs = 200\nn_dev_pairs = 4\nn_test_pairs = 4\n").unwrap();
    let out = ok(dir, &["gen-corpus", "spec.toml", "--out-dir", "data"]);
    assert!(out.contains("\"train_pairs\":200"), "{out}");
    assert!(dir.join("data/train.c_style.jsonl").exists());

    ok(dir, &["fit-units", "data/train.c_style.jsonl", "--k", &K.to_string(), "--max-iters", "10", "--out-dir", "units"]);
    let units = std::fs::read_to_string(dir.join("units/units.txt")).unwrap();
    assert_eq!(units.lines().count(), 200);

    let a = stage_toml(dir, Stage::PretrainA, "data/train.c_style.jsonl", None, 3);
    let out = ok(dir, &["pretrain-a", &a]);
    assert!(out.contains("\"steps\":3"), "{out}");
    assert!(dir.join("runs/pretrain_a.safetensors").exists());
    assert!(dir.join("runs/pretrain_a.log.jsonl").exists());

    // a stage config run under the wrong subcommand is a config error
    assert_eq!(scs2ut(dir, &["pretrain-b", &a]).status.code(), Some(2));

    let s = stage_toml(dir, Stage::S2ut, "data/train.source.jsonl", Some("data/train.c_style.jsonl"), 3);
    ok(dir, &["train-s2ut", &s]);

    std::fs::write(
        dir.join("run.toml"),
        "s2ut_checkpoint = \"runs/s2ut.safetensors\"\nu2m_checkpoint = \"runs/pretrain_a.safetensors\"\ncorpus = \"data\"\n\n[griffin_lim]\niters = 4\n",
    )
    .unwrap();
    let test = load_manifest(dir.join("data/test.source.jsonl")).unwrap();
    let wav = test.wav_path(&test.rows[0]);
    ok(dir, &["translate", "run.toml", "--in", wav.to_str().unwrap(), "--out", "out/t.wav"]);
    let w = read_wav(dir.join("out/t.wav")).unwrap();
    let hyps = read_hypotheses(&dir.join("out/t.units")).unwrap();
    assert_eq!(hyps.len(), 1);
    let n = hyps[0].2.len();
    assert!(n > 0);
    assert!(dir.join("out/t.mel").exists());
    let expected = n as f64 * 0.02;
    assert!((w.duration_seconds() - expected).abs() <= 0.02 + 1e-9, "{} units but {:.3} s", n, w.duration_seconds());
}

#[test]
fn usage_errors() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    assert_eq!(scs2ut(dir, &["frobnicate"]).status.code(), Some(2));
    assert_eq!(scs2ut(dir, &["translate"]).status.code(), Some(2));
    assert_eq!(scs2ut(dir, &["--help"]).status.code(), Some(0));

    let o = scs2ut(dir, &["fit-units", "missing.jsonl"]);
    assert_eq!(o.status.code(), Some(3));
    let err = String::from_utf8_lossy(&o.stderr);
    assert_eq!(err.trim().lines().count(), 1, "{err}");
    assert!(err.starts_with("error["), "{err}");

    std::fs::write(dir.join("bad.toml"), "stage = \"pretrain_a\"\nmanifest = \"x.jsonl\"\n[u2m]\nhiden = 3\n").unwrap();
    let o = scs2ut(dir, &["pretrain-a", "bad.toml"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("u2m.hiden"));
}
