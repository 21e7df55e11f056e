//! End-to-end inference: source speech to target units, then units plus the
//! source voice to a mel spectrogram and a Griffin-Lim waveform.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::audio_dsp::{griffin_lim_with, mel_spectrogram, read_wav, GriffinLimConfig, MelConfig, MelSpectrogram, Waveform};
use crate::corpus::{load_manifest, pair_up, Manifest, Role, ToyCorpus, Utterance};
use crate::error::{Error, Result};
use crate::evalsuite::{
    bleu, calibrate_manifest, measure_efficiency, speaker_similarity, transcribe_toy, AdapterEmbedder, BenchConfig, EvalReport,
    Pipeline, SpeakerEmbedder,
};
use crate::nnet::ParamStore;
use crate::quantizer::{encode, Codebook, Frames};
use crate::s2ut::{unit_accuracy, CharVocab, DecodeMode, S2ut, TranslationHypothesis};
use crate::speaker::cosine;
use crate::trainer::{load_s2ut, load_u2m};
use crate::u2m::SrU2m;

#[derive(Debug, Clone)]
pub struct Translation {
    pub hypothesis: TranslationHypothesis,
    pub mel: MelSpectrogram,
    pub wav: Waveform,
}

pub struct SpeechTranslator {
    pub s2ut: S2ut,
    pub s2ut_params: ParamStore,
    pub vocab: CharVocab,
    pub u2m: SrU2m,
    pub u2m_params: ParamStore,
    pub mel: MelConfig,
    pub decode: DecodeMode,
    pub max_len: usize,
    pub griffin_lim: GriffinLimConfig,
    /// Codebook the s2ut targets were encoded with.
    pub codebook: PathBuf,
}

impl SpeechTranslator {
    /// Loads an s2ut checkpoint and a unit-to-mel checkpoint (normally the fine-tuned one).
    pub fn load(s2ut_checkpoint: &Path, u2m_checkpoint: &Path) -> Result<Self> {
        let (s2ut_params, s2ut, vocab, s_cfg) = load_s2ut(s2ut_checkpoint)?;
        let (u2m_params, u2m, u_cfg) = load_u2m(u2m_checkpoint)?;
        if s_cfg.mel != u_cfg.mel {
            return Err(Error::InvalidConfig("s2ut and unit-to-mel checkpoints use different mel front ends".into()));
        }
        if s_cfg.s2ut.n_units != u_cfg.u2m.n_units {
            return Err(Error::InvalidConfig(format!("unit spaces differ: {} vs {}", s_cfg.s2ut.n_units, u_cfg.u2m.n_units)));
        }
        Ok(Self {
            s2ut,
            s2ut_params,
            vocab,
            u2m,
            u2m_params,
            mel: s_cfg.mel,
            decode: DecodeMode::Greedy,
            max_len: s_cfg.max_decode_len,
            griffin_lim: GriffinLimConfig::default(),
            codebook: s_cfg.codebook,
        })
    }

    pub fn units(&self, source: &Waveform) -> Result<TranslationHypothesis> {
        let m = mel_spectrogram(source, &self.mel)?;
        self.s2ut.translate(&m, self.decode, self.max_len)
    }

    /// Translates `source`, speaking the result in the voice of `speaker`.
    pub fn translate_with_speaker(&self, source: &Waveform, speaker: &Waveform) -> Result<Translation> {
        let hypothesis = self.units(source)?;
        let (mel, wav) = self.vocalize(&hypothesis, speaker)?;
        Ok(Translation { hypothesis, mel, wav })
    }

    /// Translates `source` in its own voice.
    pub fn translate(&self, source: &Waveform) -> Result<Translation> {
        self.translate_with_speaker(source, source)
    }

    pub fn embedder(&self) -> AdapterEmbedder<'_> {
        AdapterEmbedder { adapter: &self.u2m.adapter, params: &self.u2m_params, mel: self.mel.clone() }
    }

    /// Units plus a voice prompt to mel and waveform.
    pub fn vocalize(&self, hypothesis: &TranslationHypothesis, speaker: &Waveform) -> Result<(MelSpectrogram, Waveform)> {
        if hypothesis.units.is_empty() {
            return Err(Error::InvalidInput("translation produced no units".into()));
        }
        let prompt = mel_spectrogram(speaker, &self.mel)?;
        let mel = self.u2m.synthesize(&hypothesis.units, &prompt, self.mel.hop_seconds())?;
        let wav = griffin_lim_with(&mel, &self.mel, &self.griffin_lim)?;
        Ok((mel, wav))
    }
}

impl Pipeline for SpeechTranslator {
    fn run(&mut self, input: &Waveform) -> Result<usize> {
        Ok(self.translate(input)?.hypothesis.units.len())
    }
}

/// What [`evaluate_toy`] measures and on how much data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalOptions {
    pub split: String,
    pub max_utts: usize,
    /// Canonical-duration train rows used to fit the unit-to-symbol map.
    pub calibration_utts: usize,
    pub min_run_frames: usize,
    pub similarity: bool,
    /// Efficiency timing; skipped when absent.
    pub bench: Option<BenchConfig>,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            split: "test".into(),
            max_utts: 100,
            calibration_utts: 300,
            min_run_frames: 2,
            similarity: true,
            bench: Some(BenchConfig::default()),
        }
    }
}

fn source_target_pairs(corpus: &ToyCorpus, split: &str) -> Result<(Manifest, Manifest)> {
    let src = load_manifest(corpus.manifest_path(split, Role::Source))?;
    let tgt = load_manifest(corpus.manifest_path(split, Role::CStyle))?;
    Ok((src, tgt))
}

/// Unit accuracy against the canonical-style target units, toy BLEU, source/output
/// speaker similarity and timing on one split of a toy corpus.
pub fn evaluate_toy(tr: &mut SpeechTranslator, corpus: &ToyCorpus, opts: &EvalOptions) -> Result<EvalReport> {
    let (src, tgt) = source_target_pairs(corpus, &opts.split)?;
    let pairs = pair_up(&src, &tgt)?;
    let pairs = &pairs[..pairs.len().min(opts.max_utts)];
    if pairs.is_empty() {
        return Err(Error::InvalidInput(format!("split {} has no pairs", opts.split)));
    }
    let cb = Codebook::load(&tr.codebook)?;
    let cal_rows = load_manifest(corpus.manifest_path("train", Role::CStyle))?;
    let cal = calibrate_manifest(&cal_rows, &corpus.spec.target_inventory(), &tr.mel, &cb, opts.calibration_utts, opts.min_run_frames)?;
    log::info!("transcriber calibration: {}/{} exact on clean rows", cal.exact, cal.total);

    let (mut hyp_units, mut ref_units, mut hyps, mut refs) = (vec![], vec![], vec![], vec![]);
    let (mut sources, mut generated) = (vec![], vec![]);
    for p in pairs {
        let w = read_wav(src.wav_path(&p.source))?;
        let target = mel_spectrogram(&read_wav(tgt.wav_path(&p.target))?, &tr.mel)?;
        let h = tr.units(&w)?;
        hyps.push(transcribe_toy(&h.units, &cal.map, opts.min_run_frames));
        refs.push(p.target.transcript.clone());
        ref_units.push(encode(&Frames::from_mel(&target), &cb)?.0);
        if opts.similarity && !h.units.is_empty() {
            generated.push(tr.vocalize(&h, &w)?.1);
            sources.push(w.clone());
        }
        hyp_units.push(h.units.0);
    }
    let acc_pairs: Vec<(&[u32], &[u32])> = hyp_units.iter().zip(&ref_units).map(|(h, r)| (h.as_slice(), r.as_slice())).collect();
    let similarity = if sources.is_empty() { None } else { Some(speaker_similarity(&sources, &generated, &tr.embedder())?) };
    let efficiency = match &opts.bench {
        Some(b) => {
            let wavs = pairs.iter().map(|p| read_wav(src.wav_path(&p.source))).collect::<Result<Vec<_>>>()?;
            Some(measure_efficiency(tr, &wavs, b)?)
        }
        None => None,
    };
    Ok(EvalReport {
        n_utts: pairs.len(),
        unit_accuracy: Some(unit_accuracy(&acc_pairs)),
        bleu: Some(bleu(&hyps, &refs, 4)?),
        similarity,
        efficiency,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PreservationTrials {
    pub successes: usize,
    pub trials: usize,
}

impl PreservationTrials {
    pub fn rate(&self) -> f64 {
        self.successes as f64 / self.trials.max(1) as f64
    }
}

/// Another utterance of `speaker` in `refs`, searching forward from `start`.
fn reference_of<'a>(refs: &'a Manifest, speaker: &str, not_pair: Option<&str>, start: usize) -> Option<&'a Utterance> {
    let n = refs.rows.len();
    (0..n)
        .map(|k| &refs.rows[(start + k) % n])
        .find(|u| u.speaker_id == speaker && (not_pair.is_none() || u.pair_id.as_deref() != not_pair))
}

/// Conditioning swaps between two speakers of a held-out split.
///
/// Source utterance `i` is paired with `i + offset` (skipping same-speaker pairs). The
/// units translated from `i` are voiced once with each source as the prompt; a trial
/// succeeds when the generated voice embeds closer to an unrelated reference utterance
/// of the prompting speaker than to one of the other speaker. References come from
/// `refs` (normally the source-voiced target split) and never share the pair of either
/// prompt. Two trials per pair until `n_trials` are done.
pub fn speaker_preservation_trials(
    tr: &SpeechTranslator,
    embedder: &dyn SpeakerEmbedder,
    sources: &Manifest,
    refs: &Manifest,
    n_trials: usize,
    offset: usize,
) -> Result<PreservationTrials> {
    let n = sources.rows.len();
    let mut out = PreservationTrials { successes: 0, trials: 0 };
    for i in 0..n {
        if out.trials + 2 > n_trials {
            break;
        }
        let (a, b) = (&sources.rows[i], &sources.rows[(i + offset) % n]);
        if a.speaker_id == b.speaker_id {
            continue;
        }
        let ref_of = |u: &Utterance| {
            reference_of(refs, &u.speaker_id, u.pair_id.as_deref(), i + 1)
                .ok_or_else(|| Error::InvalidInput(format!("no reference utterance for speaker {}", u.speaker_id)))
        };
        let (ra, rb) = (ref_of(a)?, ref_of(b)?);
        let (wa, wb) = (read_wav(sources.wav_path(a))?, read_wav(sources.wav_path(b))?);
        let ea = embedder.embed(&read_wav(refs.wav_path(ra))?)?.vector;
        let eb = embedder.embed(&read_wav(refs.wav_path(rb))?)?.vector;
        let h = tr.units(&wa)?;
        if h.units.is_empty() {
            out.trials += 2;
            continue;
        }
        for (prompt, want, other) in [(&wa, &ea, &eb), (&wb, &eb, &ea)] {
            let g = embedder.embed(&tr.vocalize(&h, prompt)?.1)?.vector;
            out.successes += (cosine(&g, want)? > cosine(&g, other)?) as usize;
            out.trials += 1;
        }
    }
    Ok(out)
}
