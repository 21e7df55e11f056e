use std::io::{BufRead, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One corpus record. Unknown fields survive a load/save round trip through `extra`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Utterance {
    pub id: String,
    /// As written in the manifest; relative paths resolve against the manifest directory.
    pub wav_path: PathBuf,
    pub rate: u32,
    pub speaker_id: String,
    pub transcript: Vec<String>,
    pub language: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pair_id: Option<String>,
    #[serde(flatten)]
    pub extra: serde_json::Map<String, serde_json::Value>,
}

/// Rows of a manifest plus the directory relative paths resolve against.
#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    pub rows: Vec<Utterance>,
    pub base_dir: PathBuf,
}

impl Manifest {
    pub fn wav_path(&self, u: &Utterance) -> PathBuf {
        if u.wav_path.is_absolute() {
            u.wav_path.clone()
        } else {
            self.base_dir.join(&u.wav_path)
        }
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn speakers(&self) -> Vec<String> {
        let mut s: Vec<String> = self.rows.iter().map(|u| u.speaker_id.clone()).collect();
        s.sort();
        s.dedup();
        s
    }
}

/// A source utterance and its translation, joined on `pair_id`.
#[derive(Debug, Clone, PartialEq)]
pub struct ParallelPair {
    pub pair_id: String,
    pub source: Utterance,
    pub target: Utterance,
}

/// Loads one JSON object per line; blank lines are ignored.
///
/// Fails on the first malformed row, naming its (1-based) line, and on rows whose
/// wav file does not exist.
pub fn load_manifest(path: impl AsRef<Path>) -> Result<Manifest> {
    load_manifest_inner(path.as_ref(), true)
}

/// As [`load_manifest`] but without checking that wav files exist.
pub fn load_manifest_unchecked(path: impl AsRef<Path>) -> Result<Manifest> {
    load_manifest_inner(path.as_ref(), false)
}

fn load_manifest_inner(path: &Path, check_files: bool) -> Result<Manifest> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
    let file = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut rows: Vec<Utterance> = Vec::new();
    let mut seen = std::collections::HashSet::new();
    for (i, line) in file.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let parse_err = |msg: String| Error::Parse { path: path.to_path_buf(), line: i + 1, msg };
        let row: Utterance = serde_json::from_str(&line).map_err(|e| parse_err(e.to_string()))?;
        if !seen.insert(row.id.clone()) {
            return Err(parse_err(format!("duplicate id {:?}", row.id)));
        }
        if check_files {
            let resolved = if row.wav_path.is_absolute() { row.wav_path.clone() } else { base_dir.join(&row.wav_path) };
            if !resolved.exists() {
                return Err(parse_err(format!("wav_path {} does not exist", resolved.display())));
            }
        }
        rows.push(row);
    }
    Ok(Manifest { rows, base_dir })
}

pub fn save_manifest(rows: &[Utterance], path: impl AsRef<Path>) -> Result<()> {
    if let Some(dir) = path.as_ref().parent() {
        std::fs::create_dir_all(dir)?;
    }
    let mut w = BufWriter::new(std::fs::File::create(path)?);
    for row in rows {
        serde_json::to_writer(&mut w, row)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

/// Joins source and target rows on `pair_id`, in source order.
pub fn pair_up(source: &Manifest, target: &Manifest) -> Result<Vec<ParallelPair>> {
    let by_pair: std::collections::HashMap<&str, &Utterance> = target
        .rows
        .iter()
        .filter_map(|u| u.pair_id.as_deref().map(|p| (p, u)))
        .collect();
    let mut out = Vec::with_capacity(source.rows.len());
    for s in &source.rows {
        let pid = s
            .pair_id
            .as_deref()
            .ok_or_else(|| Error::InvalidInput(format!("source row {} has no pair_id", s.id)))?;
        let t = by_pair
            .get(pid)
            .ok_or_else(|| Error::InvalidInput(format!("no target row for pair {pid}")))?;
        if s.language == t.language {
            return Err(Error::InvalidInput(format!("pair {pid}: source and target share language {}", s.language)));
        }
        out.push(ParallelPair { pair_id: pid.to_string(), source: s.clone(), target: (*t).clone() });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(id: &str) -> Utterance {
        Utterance {
            id: id.into(),
            wav_path: PathBuf::from(format!("{id}.wav")),
            rate: 16000,
            speaker_id: "spk00".into(),
            transcript: vec!["ka".into(), "lo".into()],
            language: "src".into(),
            pair_id: Some(format!("p-{id}")),
            extra: Default::default(),
        }
    }

    #[test]
    fn save_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mut rows = vec![row("a"), row("b"), row("c")];
        rows[1].extra.insert("gender".into(), serde_json::json!("f"));
        for r in &rows {
            std::fs::write(dir.path().join(&r.wav_path), b"").unwrap();
        }
        let p = dir.path().join("m.jsonl");
        save_manifest(&rows, &p).unwrap();
        let m = load_manifest(&p).unwrap();
        assert_eq!(m.rows, rows);
        assert_eq!(m.wav_path(&rows[0]), dir.path().join("a.wav"));
    }

    #[test]
    fn missing_wav_path_names_line() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.jsonl");
        std::fs::write(dir.path().join("a.wav"), b"").unwrap();
        let good = serde_json::to_string(&row("a")).unwrap();
        let bad = r#"{"id":"b","rate":16000,"speaker_id":"s","transcript":[],"language":"src"}"#;
        std::fs::write(&p, format!("{good}\n{bad}\n")).unwrap();
        match load_manifest(&p) {
            Err(Error::Parse { line, msg, .. }) => {
                assert_eq!(line, 2);
                assert!(msg.contains("wav_path"), "{msg}");
            }
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn empty_file_is_empty_manifest() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.jsonl");
        std::fs::write(&p, "").unwrap();
        assert!(load_manifest(&p).unwrap().is_empty());
    }

    #[test]
    fn duplicate_ids_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.jsonl");
        save_manifest(&[row("a"), row("a")], &p).unwrap();
        assert!(matches!(load_manifest_unchecked(&p), Err(Error::Parse { line: 2, .. })));
    }
}
