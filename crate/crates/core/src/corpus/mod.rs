//! Manifests, the synthetic parallel corpus, and the half-split used by pre-training.

mod manifest;
mod synth;
mod toy;

pub use manifest::{load_manifest, load_manifest_unchecked, pair_up, save_manifest, Manifest, ParallelPair, Utterance};
pub use synth::{synthesize_symbol_speech, Durations, SpeakerParams, SymbolInventory};
pub use toy::{generate_toy_corpus, manifest_path, Role, ToyCorpus, ToyCorpusSpec, REFERENCE_SPEAKER, SPLITS};

use crate::audio_dsp::Waveform;
use crate::error::{Error, Result};

/// Splits at the sample midpoint: `[0, N/2)` and `[N/2, N)` with floor division.
///
/// Utterances shorter than `min_seconds` yield [`Error::Skip`]; no silence trimming is applied.
pub fn split_halves(w: &Waveform, min_seconds: f64) -> Result<(Waveform, Waveform)> {
    if w.duration_seconds() < min_seconds {
        return Err(Error::Skip(format!(
            "{:.3} s utterance is shorter than the {min_seconds} s split minimum",
            w.duration_seconds()
        )));
    }
    let mid = w.samples.len() / 2;
    Ok((
        Waveform { samples: w.samples[..mid].to_vec(), rate: w.rate },
        Waveform { samples: w.samples[mid..].to_vec(), rate: w.rate },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn even_and_odd_lengths() {
        let (a, b) = split_halves(&Waveform { samples: vec![0.0; 16000], rate: 16000 }, 1.0).unwrap();
        assert_eq!((a.len(), b.len()), (8000, 8000));
        let (a, b) = split_halves(&Waveform { samples: vec![0.0; 16001], rate: 16000 }, 1.0).unwrap();
        assert_eq!((a.len(), b.len()), (8000, 8001));
    }

    #[test]
    fn too_short_is_skip() {
        let r = split_halves(&Waveform { samples: vec![0.0; 8000], rate: 16000 }, 1.0);
        assert!(matches!(r, Err(Error::Skip(_))));
    }

    proptest! {
        #[test]
        fn halves_concatenate_to_original(v in prop::collection::vec(-1.0f32..1.0, 2..400)) {
            let w = Waveform { samples: v.clone(), rate: 100 };
            let (a, b) = split_halves(&w, 0.0).unwrap();
            prop_assert_eq!([a.samples, b.samples].concat(), v);
        }
    }
}
