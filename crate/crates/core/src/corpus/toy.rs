use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::manifest::{save_manifest, Utterance};
use super::synth::{synthesize_symbol_speech, Durations, SpeakerParams, SymbolInventory};
use crate::audio_dsp::write_wav;
use crate::error::{Error, Result};

pub const REFERENCE_SPEAKER: &str = "ref";

/// Parameters of the synthetic parallel corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ToyCorpusSpec {
    pub n_speakers: usize,
    /// Pairs in the train split; `n_dev_pairs` / `n_test_pairs` size the others.
    pub n_pairs: usize,
    pub n_dev_pairs: usize,
    pub n_test_pairs: usize,
    pub vocab_src: Vec<String>,
    pub vocab_tgt: Vec<String>,
    /// `mapping[i]` is the target index of source symbol `i`; a seeded permutation when absent.
    pub mapping: Option<Vec<usize>>,
    pub symbols_per_utt: [usize; 2],
    pub symbol_dur_ms: [f64; 2],
    pub rate: u32,
    pub hop: usize,
    pub src_language: String,
    pub tgt_language: String,
    pub seed: u64,
}

impl Default for ToyCorpusSpec {
    fn default() -> Self {
        let v = |s: &[&str]| s.iter().map(|x| x.to_string()).collect();
        Self {
            n_speakers: 20,
            n_pairs: 600,
            n_dev_pairs: 60,
            n_test_pairs: 100,
            vocab_src: v(&["ka", "lo", "mi", "nu", "pe", "ra", "si", "to"]),
            vocab_tgt: v(&["ba", "de", "fi", "go", "hu", "ja", "ke", "lu"]),
            mapping: None,
            symbols_per_utt: [5, 7],
            symbol_dur_ms: [140.0, 220.0],
            rate: 16000,
            hop: 320,
            src_language: "src".into(),
            tgt_language: "tgt".into(),
            seed: 0,
        }
    }
}

impl ToyCorpusSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.n_speakers < 2 {
            return bad(format!("n_speakers must be >= 2 for speaker contrast, got {}", self.n_speakers));
        }
        if self.vocab_src.len() != self.vocab_tgt.len() || self.vocab_src.len() < 2 {
            return bad("vocab_src and vocab_tgt must have equal size >= 2".into());
        }
        if let Some(m) = &self.mapping {
            let mut sorted = m.clone();
            sorted.sort_unstable();
            if sorted != (0..self.vocab_src.len()).collect::<Vec<_>>() {
                return bad("mapping is not a bijection".into());
            }
        }
        if self.symbols_per_utt[0] == 0 || self.symbols_per_utt[0] > self.symbols_per_utt[1] {
            return bad(format!("bad symbols_per_utt {:?}", self.symbols_per_utt));
        }
        if !(self.symbol_dur_ms[0] > 0.0 && self.symbol_dur_ms[0] <= self.symbol_dur_ms[1]) {
            return bad(format!("bad symbol_dur_ms {:?}", self.symbol_dur_ms));
        }
        if self.src_language == self.tgt_language {
            return bad("source and target languages must differ".into());
        }
        Ok(())
    }

    pub fn mapping(&self) -> Vec<usize> {
        self.mapping.clone().unwrap_or_else(|| {
            let mut m: Vec<usize> = (0..self.vocab_src.len()).collect();
            m.shuffle(&mut ChaCha8Rng::seed_from_u64(self.seed ^ 0x6d61_7070));
            m
        })
    }

    pub fn source_inventory(&self) -> SymbolInventory {
        SymbolInventory::new(&self.src_language, &self.vocab_src, 0, self.hop)
    }

    pub fn target_inventory(&self) -> SymbolInventory {
        SymbolInventory::new(&self.tgt_language, &self.vocab_tgt, 5, self.hop)
    }

    /// Source-to-target symbol translation.
    pub fn translate(&self, source: &[String]) -> Result<Vec<String>> {
        let inv = self.source_inventory();
        let m = self.mapping();
        source.iter().map(|s| Ok(self.vocab_tgt[m[inv.index_of(s)?]].clone())).collect()
    }
}

/// Manifest roles produced per split.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    /// Source-language speech from the sampled speakers.
    Source,
    /// Target speech, always the reference voice (single speaker).
    CStyle,
    /// Target speech in the source speaker's voice.
    TStyle,
}

impl Role {
    pub const ALL: [Role; 3] = [Role::Source, Role::CStyle, Role::TStyle];

    pub fn tag(self) -> &'static str {
        match self {
            Role::Source => "source",
            Role::CStyle => "c_style",
            Role::TStyle => "t_style",
        }
    }
}

pub const SPLITS: [&str; 3] = ["train", "dev", "test"];

/// Paths written by [`generate_toy_corpus`].
#[derive(Debug, Clone)]
pub struct ToyCorpus {
    pub root: PathBuf,
    pub spec: ToyCorpusSpec,
    pub speakers: BTreeMap<String, SpeakerParams>,
}

impl ToyCorpus {
    pub fn manifest_path(&self, split: &str, role: Role) -> PathBuf {
        manifest_path(&self.root, split, role)
    }

    /// Reopens a corpus written earlier.
    pub fn open(root: impl AsRef<Path>) -> Result<Self> {
        let root = root.as_ref().to_path_buf();
        let spec_path = root.join("corpus_spec.json");
        if !spec_path.exists() {
            return Err(Error::MissingFile(spec_path));
        }
        let spec = serde_json::from_str(&std::fs::read_to_string(&spec_path)?)?;
        let speakers = serde_json::from_str(&std::fs::read_to_string(root.join("speakers.json"))?)?;
        Ok(Self { root, spec, speakers })
    }
}

pub fn manifest_path(root: &Path, split: &str, role: Role) -> PathBuf {
    root.join(format!("{split}.{}.jsonl", role.tag()))
}

fn mix(seed: u64, a: u64, b: u64) -> u64 {
    // splitmix64 finalizer over a simple combination
    let mut z = seed ^ a.wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ b.wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Writes `corpus/<split>/<utt_id>.wav` plus three manifests per split under `root`.
///
/// Output is a pure function of `spec`. Speaker `i % n_speakers` voices pair `i` of
/// every split, so each split covers all speakers. Adjacent symbols never repeat.
pub fn generate_toy_corpus(spec: &ToyCorpusSpec, root: impl AsRef<Path>) -> Result<ToyCorpus> {
    spec.validate()?;
    let root = root.as_ref().to_path_buf();
    std::fs::create_dir_all(&root)?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let speakers: BTreeMap<String, SpeakerParams> =
        (0..spec.n_speakers).map(|i| (speaker_id(i), SpeakerParams::sample(&mut rng))).collect();
    let mut all_speakers = speakers.clone();
    all_speakers.insert(REFERENCE_SPEAKER.into(), SpeakerParams::reference());

    let src_inv = spec.source_inventory();
    let tgt_inv = spec.target_inventory();
    let counts = [spec.n_pairs, spec.n_dev_pairs, spec.n_test_pairs];
    for (split_idx, (&split, &count)) in SPLITS.iter().zip(&counts).enumerate() {
        let mut rows: BTreeMap<Role, Vec<Utterance>> = BTreeMap::new();
        for p in 0..count {
            let seed = mix(spec.seed, split_idx as u64 + 1, p as u64);
            let mut prng = ChaCha8Rng::seed_from_u64(seed);
            let n_sym = prng.random_range(spec.symbols_per_utt[0]..=spec.symbols_per_utt[1]);
            let mut symbols: Vec<String> = Vec::with_capacity(n_sym);
            while symbols.len() < n_sym {
                let s = &spec.vocab_src[prng.random_range(0..spec.vocab_src.len())];
                if symbols.last() != Some(s) {
                    symbols.push(s.clone());
                }
            }
            let translated = spec.translate(&symbols)?;
            let spk = speaker_id(p % spec.n_speakers);
            let voice = &speakers[&spk];
            let pair_id = format!("{split}-{p:05}");

            let renders = [
                (Role::Source, &symbols, &src_inv, voice, Durations::RandomMs(spec.symbol_dur_ms[0], spec.symbol_dur_ms[1]), spk.as_str(), &spec.src_language),
                (Role::CStyle, &translated, &tgt_inv, &all_speakers[REFERENCE_SPEAKER], Durations::Canonical, REFERENCE_SPEAKER, &spec.tgt_language),
                (Role::TStyle, &translated, &tgt_inv, voice, Durations::Canonical, spk.as_str(), &spec.tgt_language),
            ];
            for (k, (role, syms, inv, sp, dur, spk_id, lang)) in renders.into_iter().enumerate() {
                let w = synthesize_symbol_speech(syms, inv, sp, dur, spec.rate, mix(seed, 77, k as u64))?;
                let id = format!("{pair_id}-{}", role.tag());
                let rel = PathBuf::from("corpus").join(split).join(format!("{id}.wav"));
                write_wav(root.join(&rel), &w)?;
                rows.entry(role).or_default().push(Utterance {
                    id,
                    wav_path: rel,
                    rate: spec.rate,
                    speaker_id: spk_id.to_string(),
                    transcript: syms.clone(),
                    language: lang.clone(),
                    pair_id: Some(pair_id.clone()),
                    extra: Default::default(),
                });
            }
        }
        for role in Role::ALL {
            save_manifest(rows.get(&role).map(Vec::as_slice).unwrap_or(&[]), manifest_path(&root, split, role))?;
        }
    }
    std::fs::write(root.join("corpus_spec.json"), serde_json::to_string_pretty(spec)?)?;
    std::fs::write(root.join("speakers.json"), serde_json::to_string_pretty(&all_speakers)?)?;
    Ok(ToyCorpus { root, spec: spec.clone(), speakers: all_speakers })
}

fn speaker_id(i: usize) -> String {
    format!("spk{i:02}")
}
