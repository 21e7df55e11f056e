//! Translates one toy utterance into the target language in the source speaker's voice.
//!
//! `cargo run --release --example translate [s2ut.safetensors u2m.safetensors source.wav]`
//!
//! Without arguments, tiny models are trained first (see the `stages` example).

#[path = "stages.rs"]
mod stages;

use std::path::PathBuf;

use scs2ut::audio_dsp::{read_wav, write_wav};
use scs2ut::corpus::{load_manifest, Role};
use scs2ut::pipeline::SpeechTranslator;
use scs2ut::speaker::cosine;
use scs2ut::evalsuite::SpeakerEmbedder;

fn main() -> scs2ut::Result<()> {
    let tmp = tempfile::tempdir()?;
    let args: Vec<PathBuf> = std::env::args_os().skip(1).map(PathBuf::from).collect();
    let (s2ut, u2m, source, reference) = if let [s, u, w] = &args[..] {
        (s.clone(), u.clone(), w.clone(), None)
    } else {
        let (corpus, s, u) = stages::toy_stages(tmp.path(), [150, 150, 100, 400])?;
        let src = load_manifest(corpus.manifest_path("train", Role::Source))?;
        let tgt = load_manifest(corpus.manifest_path("train", Role::CStyle))?;
        println!("source: {}  (expected: {})", src.rows[0].transcript.join(" "), tgt.rows[0].transcript.join(" "));
        (s, u, src.wav_path(&src.rows[0]), Some(src))
    };

    let tr = SpeechTranslator::load(&s2ut, &u2m)?;
    let wav = read_wav(&source)?;
    let t = tr.translate(&wav)?;
    let out = tmp.path().join("translated.wav");
    write_wav(&out, &t.wav)?;
    println!(
        "{} units -> {} frames, {:.2} s of audio (source {:.2} s)",
        t.hypothesis.units.len(),
        t.mel.n_frames,
        t.wav.duration_seconds(),
        wav.duration_seconds()
    );

    let emb = tr.embedder();
    let (a, b) = (emb.embed(&wav)?, emb.embed(&t.wav)?);
    println!("adapter cosine source vs output: {:.3}", cosine(&a.vector, &b.vector)?);
    if let Some(src) = reference {
        let other = src.rows.iter().find(|u| u.speaker_id != src.rows[0].speaker_id).map(|u| src.wav_path(u));
        if let Some(p) = other {
            println!("adapter cosine other speaker vs output: {:.3}", cosine(&emb.embed(&read_wav(p)?)?.vector, &b.vector)?);
        }
    }
    Ok(())
}
