use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::audio_dsp::{mel_spectrogram, read_wav, MelConfig};
use crate::corpus::{Manifest, SymbolInventory};
use crate::error::{Error, Result};
use crate::quantizer::{encode, run_length_collapse, Codebook, Frames, UnitSequence};

pub const UNK: &str = "<unk>";

/// Unit id to symbol, fitted by majority vote over frame-labelled data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnitSymbolMap {
    pub map: Vec<Option<String>>,
}

/// The symbol under the centre of every frame of a canonical-duration render.
pub fn canonical_frame_labels(symbols: &[String], inventory: &SymbolInventory, hop: usize, n_frames: usize) -> Result<Vec<String>> {
    let mut ends = Vec::with_capacity(symbols.len());
    let mut acc = 0usize;
    for s in symbols {
        acc += inventory.canonical_samples(inventory.index_of(s)?);
        ends.push(acc);
    }
    Ok((0..n_frames)
        .map(|t| {
            let centre = t * hop;
            let i = ends.iter().position(|&e| centre < e).unwrap_or(symbols.len() - 1);
            symbols[i].clone()
        })
        .collect())
}

impl UnitSymbolMap {
    /// `examples` pairs unit sequences with equally long per-frame symbol labels.
    pub fn calibrate(k: usize, examples: &[(&[u32], &[String])]) -> Result<Self> {
        let mut votes: Vec<BTreeMap<&str, usize>> = vec![BTreeMap::new(); k];
        for (units, labels) in examples {
            if units.len() != labels.len() {
                return Err(Error::Shape(format!("calibration: {} units vs {} labels", units.len(), labels.len())));
            }
            for (&u, l) in units.iter().zip(labels.iter()) {
                let slot = votes.get_mut(u as usize).ok_or_else(|| Error::InvalidInput(format!("unit {u} outside [0, {k})")))?;
                *slot.entry(l.as_str()).or_insert(0) += 1;
            }
        }
        let map = votes
            .into_iter()
            // ties go to the lexicographically first symbol
            .map(|v| v.into_iter().fold(None::<(&str, usize)>, |b, (s, c)| match b {
                Some((_, bc)) if bc >= c => b,
                _ => Some((s, c)),
            }))
            .map(|b| b.map(|(s, _)| s.to_string()))
            .collect();
        Ok(Self { map })
    }

    pub fn symbol(&self, unit: u32) -> &str {
        self.map.get(unit as usize).and_then(|s| s.as_deref()).unwrap_or(UNK)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingFile(path.to_path_buf()));
        }
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }
}

/// A calibrated map plus its exact-transcription rate on the calibration rows.
#[derive(Debug, Clone)]
pub struct Calibration {
    pub map: UnitSymbolMap,
    pub exact: usize,
    pub total: usize,
}

/// Calibrates on the first `max_utts` rows of a canonical-duration manifest.
pub fn calibrate_manifest(
    m: &Manifest,
    inventory: &SymbolInventory,
    mel: &MelConfig,
    cb: &Codebook,
    max_utts: usize,
    min_frames: usize,
) -> Result<Calibration> {
    let rows = &m.rows[..m.rows.len().min(max_utts)];
    if rows.is_empty() {
        return Err(Error::InvalidInput("calibration manifest is empty".into()));
    }
    let mut data = Vec::with_capacity(rows.len());
    for u in rows {
        let units = encode(&Frames::from_mel(&mel_spectrogram(&read_wav(m.wav_path(u))?, mel)?), cb)?;
        let labels = canonical_frame_labels(&u.transcript, inventory, mel.hop, units.len())?;
        data.push((units, labels));
    }
    let refs: Vec<(&[u32], &[String])> = data.iter().map(|(u, l)| (u.0.as_slice(), l.as_slice())).collect();
    let map = UnitSymbolMap::calibrate(cb.k, &refs)?;
    let exact = data.iter().zip(rows).filter(|((u, _), r)| transcribe_toy(u, &map, min_frames) == r.transcript).count();
    Ok(Calibration { map, exact, total: rows.len() })
}

/// Maps unit runs to symbols and merges neighbours that land on the same symbol.
///
/// Runs of one symbol shorter than `min_frames` are dropped first; they are
/// mostly transition frames between two segments.
pub fn transcribe_toy(units: &UnitSequence, map: &UnitSymbolMap, min_frames: usize) -> Vec<String> {
    let (runs, durs) = run_length_collapse(units);
    let mut merged: Vec<(&str, usize)> = Vec::new();
    for (u, d) in runs.into_iter().zip(durs) {
        let s = map.symbol(u);
        match merged.last_mut() {
            Some((p, n)) if *p == s => *n += d,
            _ => merged.push((s, d)),
        }
    }
    let mut out: Vec<String> = Vec::new();
    for (s, d) in merged {
        if d < min_frames {
            continue;
        }
        if out.last().map(String::as_str) != Some(s) {
            out.push(s.to_string());
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn s(x: &[&str]) -> Vec<String> {
        x.iter().map(|v| v.to_string()).collect()
    }

    #[test]
    fn empty_and_unknown() {
        let m = UnitSymbolMap { map: vec![Some("ba".into()), None] };
        assert!(transcribe_toy(&UnitSequence(vec![]), &m, 1).is_empty());
        assert_eq!(transcribe_toy(&UnitSequence(vec![0, 0, 1, 7]), &m, 1), s(&["ba", UNK]));
    }

    #[test]
    fn majority_vote_and_merge() {
        let labels = s(&["a", "a", "a", "b", "b", "b"]);
        let m = UnitSymbolMap::calibrate(4, &[(&[0, 1, 0, 2, 2, 3][..], &labels[..]), (&[1, 1, 0, 2, 3, 3][..], &labels[..])]).unwrap();
        assert_eq!(m.map, vec![Some("a".into()), Some("a".into()), Some("b".into()), Some("b".into())]);
        assert_eq!(transcribe_toy(&UnitSequence(vec![0, 1, 1, 2, 3, 3]), &m, 1), s(&["a", "b"]));
        // a one-frame blip is dropped at min_frames 2
        assert_eq!(transcribe_toy(&UnitSequence(vec![0, 0, 2, 0, 0, 3, 3]), &m, 2), s(&["a", "b"]));
    }

    #[test]
    fn frame_labels_follow_canonical_durations() {
        let inv = SymbolInventory::new("x", &s(&["p", "q"]), 0, 10);
        let (dp, dq) = (inv.canonical_samples(0) / 10, inv.canonical_samples(1) / 10);
        let l = canonical_frame_labels(&s(&["p", "q"]), &inv, 10, dp + dq + 1);
        let l = l.unwrap();
        assert!(l[..dp].iter().all(|x| x == "p"));
        assert!(l[dp..].iter().all(|x| x == "q"));
    }
}
