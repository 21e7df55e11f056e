//! Generates a small toy parallel corpus and prints what it contains.
//!
//! `cargo run --example corpus [out_dir]`

use scs2ut::corpus::{generate_toy_corpus, load_manifest, pair_up, split_halves, Role, ToyCorpusSpec};
use scs2ut::audio_dsp::read_wav;

fn main() -> scs2ut::Result<()> {
    let tmp = tempfile::tempdir()?;
    let root = std::env::args().nth(1).map(Into::into).unwrap_or_else(|| tmp.path().join("toy"));
    let spec = ToyCorpusSpec { n_speakers: 4, n_pairs: 12, n_dev_pairs: 4, n_test_pairs: 4, ..ToyCorpusSpec::default() };
    let corpus = generate_toy_corpus(&spec, &root)?;
    println!("corpus at {}", corpus.root.display());
    println!("bijection src -> tgt:");
    for (i, j) in spec.mapping().into_iter().enumerate() {
        println!("  {} -> {}", spec.vocab_src[i], spec.vocab_tgt[j]);
    }

    let src = load_manifest(corpus.manifest_path("train", Role::Source))?;
    let tgt = load_manifest(corpus.manifest_path("train", Role::TStyle))?;
    for p in pair_up(&src, &tgt)?.iter().take(4) {
        let w = read_wav(src.wav_path(&p.source))?;
        println!(
            "{} [{}] {:.2} s  {}  =>  {}",
            p.pair_id,
            p.source.speaker_id,
            w.duration_seconds(),
            p.source.transcript.join(" "),
            p.target.transcript.join(" ")
        );
    }

    let first = read_wav(src.wav_path(&src.rows[0]))?;
    let (prompt, rest) = split_halves(&first, 0.7)?;
    println!("split {} samples into {} + {}", first.len(), prompt.len(), rest.len());
    for role in [Role::Source, Role::CStyle, Role::TStyle] {
        let m = load_manifest(corpus.manifest_path("test", role))?;
        println!("test.{}: {} rows, {} speakers", role.tag(), m.len(), m.speakers().len());
    }
    Ok(())
}
