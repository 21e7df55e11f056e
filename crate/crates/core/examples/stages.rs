//! Runs the four training stages end to end at toy scale and leaves the checkpoints behind.
//!
//! `cargo run --release --example stages [out_dir]`
//!
//! Prints a run config that `scs2ut translate` / `scs2ut evaluate` accept.

use std::path::{Path, PathBuf};

use scs2ut::audio_dsp::MelConfig;
use scs2ut::corpus::{generate_toy_corpus, load_manifest, Role, ToyCorpus, ToyCorpusSpec};
use scs2ut::quantizer::KMeansConfig;
use scs2ut::s2ut::S2utConfig;
use scs2ut::trainer::data::fit_units;
use scs2ut::trainer::{run_stage, Checkpoint, Stage, StageConfig};
use scs2ut::u2m::U2mConfig;

pub fn toy_stages(root: &Path, steps: [usize; 4]) -> scs2ut::Result<(ToyCorpus, PathBuf, PathBuf)> {
    let spec = ToyCorpusSpec { n_speakers: 6, n_pairs: 60, n_dev_pairs: 6, n_test_pairs: 6, ..ToyCorpusSpec::default() };
    let corpus = generate_toy_corpus(&spec, root.join("corpus"))?;
    let c_train = load_manifest(corpus.manifest_path("train", Role::CStyle))?;
    let (cb, _) = fit_units(&c_train, &MelConfig::default(), &KMeansConfig { k: 50, ..Default::default() })?;
    let codebook = root.join("codebook.bin");
    cb.save(&codebook)?;

    let base = StageConfig {
        codebook,
        out_dir: root.join("runs"),
        warmup: 20,
        log_every: 20,
        eval_utts: 6,
        u2m: U2mConfig { n_units: 50, ..U2mConfig::toy() },
        ..StageConfig::default()
    };
    let m = |split: &str, role| Some(corpus.manifest_path(split, role));
    let a = StageConfig { stage: Stage::PretrainA, manifest: corpus.manifest_path("train", Role::CStyle), dev_manifest: m("dev", Role::CStyle), steps: steps[0], ..base.clone() };
    let b = StageConfig { stage: Stage::PretrainB, manifest: corpus.manifest_path("train", Role::Source), dev_manifest: m("dev", Role::Source), steps: steps[1], ..base.clone() };
    let mut ckpts = Vec::new();
    for cfg in [a, b] {
        let out = run_stage(&cfg)?;
        println!("{:>10}: held-out L1 {:.3} -> {:.3}", cfg.stage.as_str(), out.initial_eval_loss, out.final_eval_loss);
        ckpts.push(out.checkpoint);
    }
    let f = StageConfig {
        stage: Stage::Finetune,
        manifest: corpus.manifest_path("train", Role::TStyle),
        dev_manifest: m("dev", Role::TStyle),
        init_from: ckpts.clone(),
        data_fraction: Some(1.0),
        steps: steps[2],
        ..base.clone()
    };
    let f_out = run_stage(&f)?;
    println!("{:>10}: held-out L1 {:.3} -> {:.3}", "finetune", f_out.initial_eval_loss, f_out.final_eval_loss);
    let s = StageConfig {
        stage: Stage::S2ut,
        manifest: corpus.manifest_path("train", Role::Source),
        target_manifest: m("train", Role::CStyle),
        dev_manifest: m("dev", Role::Source),
        dev_target_manifest: m("dev", Role::CStyle),
        steps: steps[3],
        batch_size: 8,
        lr: 2e-3,
        warmup: 50,
        max_decode_len: 200,
        s2ut: S2utConfig { n_units: 50, ..S2utConfig::toy() },
        ..base
    };
    let s_out = run_stage(&s)?;
    println!("{:>10}: loss {:.3} -> {:.3}, dev unit accuracy {:?}", "s2ut", s_out.losses[0], s_out.final_loss(), s_out.dev_unit_accuracy);
    Ok((corpus, s_out.checkpoint, f_out.checkpoint))
}

#[allow(dead_code)]
fn main() -> scs2ut::Result<()> {
    let tmp = tempfile::tempdir()?;
    let root = std::env::args().nth(1).map(PathBuf::from).unwrap_or_else(|| tmp.path().to_path_buf());
    let (corpus, s2ut, u2m) = toy_stages(&root, [150, 150, 100, 400])?;
    let ck = Checkpoint::load(&u2m)?;
    println!("finetune checkpoint: stage {:?}, step {}, groups {:?}", ck.stage, ck.step, ck.groups());
    println!("\n# run.toml");
    println!("s2ut_checkpoint = {:?}\nu2m_checkpoint = {:?}\ncorpus = {:?}", s2ut, u2m, corpus.root);
    Ok(())
}
