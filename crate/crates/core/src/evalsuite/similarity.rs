use serde::{Deserialize, Serialize};

use crate::audio_dsp::{mel_spectrogram, MelConfig, Waveform};
use crate::error::{Error, Result};
use crate::nnet::ParamStore;
use crate::speaker::{cosine, EmbeddingSource, SpeakerAdapter, SpeakerEmbedding};

/// Anything that turns a waveform into a speaker embedding.
pub trait SpeakerEmbedder {
    fn embed(&self, w: &Waveform) -> Result<SpeakerEmbedding>;
}

impl<F: Fn(&Waveform) -> Result<SpeakerEmbedding>> SpeakerEmbedder for F {
    fn embed(&self, w: &Waveform) -> Result<SpeakerEmbedding> {
        self(w)
    }
}

/// Embeds through a (trained) speaker adapter on log-mel input.
pub struct AdapterEmbedder<'a> {
    pub adapter: &'a SpeakerAdapter,
    pub params: &'a ParamStore,
    pub mel: MelConfig,
}

impl SpeakerEmbedder for AdapterEmbedder<'_> {
    fn embed(&self, w: &Waveform) -> Result<SpeakerEmbedding> {
        let m = mel_spectrogram(w, &self.mel)?;
        let t = self.adapter.embed_mels(&[&m], self.params)?;
        Ok(SpeakerEmbedding::from_rows(&t, EmbeddingSource::Adapter)?.remove(0))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimilarityReport {
    pub mean: f64,
    pub per_pair: Vec<f64>,
}

/// Mean cosine between embeddings of paired source and generated waveforms.
pub fn speaker_similarity(src: &[Waveform], gen: &[Waveform], embedder: &dyn SpeakerEmbedder) -> Result<SimilarityReport> {
    if src.len() != gen.len() || src.is_empty() {
        return Err(Error::InvalidInput(format!("speaker_similarity: {} sources vs {} generated", src.len(), gen.len())));
    }
    let per_pair = src
        .iter()
        .zip(gen)
        .map(|(a, b)| cosine(&embedder.embed(a)?.vector, &embedder.embed(b)?.vector))
        .collect::<Result<Vec<_>>>()?;
    let mean = per_pair.iter().sum::<f64>() / per_pair.len() as f64;
    Ok(SimilarityReport { mean, per_pair })
}
