use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::audio_dsp::MelConfig;
use crate::error::{Error, Result};
use crate::s2ut::S2utConfig;
use crate::u2m::U2mConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    #[default]
    PretrainA,
    PretrainB,
    Finetune,
    S2ut,
}

impl Stage {
    pub const ALL: [Stage; 4] = [Stage::PretrainA, Stage::PretrainB, Stage::Finetune, Stage::S2ut];

    pub fn as_str(self) -> &'static str {
        match self {
            Stage::PretrainA => "pretrain_a",
            Stage::PretrainB => "pretrain_b",
            Stage::Finetune => "finetune",
            Stage::S2ut => "s2ut",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Stage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Stage::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown stage `{s}`")))
    }
}

/// One training run. Relative paths are resolved against the config file's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StageConfig {
    pub stage: Stage,
    /// Training utterances: C-style targets (pretrain_a), multi-speaker source
    /// speech (pretrain_b), T-style targets (finetune), source speech (s2ut).
    pub manifest: PathBuf,
    /// s2ut only: C-style targets paired with `manifest` by pair id.
    pub target_manifest: Option<PathBuf>,
    pub dev_manifest: Option<PathBuf>,
    pub dev_target_manifest: Option<PathBuf>,
    /// Shared k-means codebook used for every unit extraction.
    pub codebook: PathBuf,
    pub out_dir: PathBuf,
    pub steps: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub warmup: usize,
    pub clip_norm: Option<f64>,
    pub seed: u64,
    /// finetune: one pretrain_a and one pretrain_b checkpoint.
    pub init_from: Vec<PathBuf>,
    /// Share of the training manifest used; `None` means 0.25 for finetune, 1.0 otherwise.
    pub data_fraction: Option<f64>,
    /// Utterances shorter than this are skipped by the half-split stages.
    pub min_split_seconds: f64,
    pub log_every: usize,
    /// s2ut: dev unit accuracy every this many steps (0 disables).
    pub eval_every: usize,
    /// Cap on utterances used for dev / held-out loss evaluation.
    pub eval_utts: usize,
    pub max_decode_len: usize,
    pub mel: MelConfig,
    pub u2m: U2mConfig,
    pub s2ut: S2utConfig,
}

impl Default for StageConfig {
    fn default() -> Self {
        Self {
            stage: Stage::PretrainA,
            manifest: PathBuf::new(),
            target_manifest: None,
            dev_manifest: None,
            dev_target_manifest: None,
            codebook: PathBuf::from("units/codebook.bin"),
            out_dir: PathBuf::from("runs"),
            steps: 1000,
            batch_size: 8,
            lr: 1e-3,
            warmup: 400,
            clip_norm: Some(5.0),
            seed: 0,
            init_from: Vec::new(),
            data_fraction: None,
            min_split_seconds: 0.7,
            log_every: 10,
            eval_every: 0,
            eval_utts: 50,
            max_decode_len: 400,
            mel: MelConfig::default(),
            u2m: U2mConfig::default(),
            s2ut: S2utConfig::default(),
        }
    }
}

impl StageConfig {
    /// Parses TOML; unknown keys are reported with their full path.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let de = toml::Deserializer::new(text);
        serde_path_to_error::deserialize(de).map_err(|e| Error::InvalidConfig(format!("{}: {}", e.path(), e.inner().message())))
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingFile(path.to_path_buf()));
        }
        let mut cfg = Self::from_toml_str(&std::fs::read_to_string(path)?)?;
        cfg.resolve_paths(path.parent().unwrap_or(Path::new(".")));
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::InvalidConfig(e.to_string()))
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() && !p.as_os_str().is_empty() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.manifest);
        fix(&mut self.codebook);
        fix(&mut self.out_dir);
        for p in [&mut self.target_manifest, &mut self.dev_manifest, &mut self.dev_target_manifest].into_iter().flatten() {
            fix(p);
        }
        self.init_from.iter_mut().for_each(fix);
    }

    pub fn data_fraction(&self) -> f64 {
        self.data_fraction.unwrap_or(if self.stage == Stage::Finetune { 0.25 } else { 1.0 })
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.steps == 0 || self.batch_size == 0 {
            return bad("steps and batch_size must be positive".into());
        }
        if !(self.lr > 0.0) {
            return bad(format!("lr must be positive, got {}", self.lr));
        }
        let f = self.data_fraction();
        if !(f > 0.0 && f <= 1.0) {
            return bad(format!("data_fraction must be in (0, 1], got {f}"));
        }
        if self.manifest.as_os_str().is_empty() {
            return bad("manifest is required".into());
        }
        match self.stage {
            Stage::Finetune if self.init_from.len() != 2 => {
                return bad(format!("finetune needs two init_from checkpoints (pretrain_a, pretrain_b), got {}", self.init_from.len()));
            }
            Stage::S2ut if self.target_manifest.is_none() => return bad("s2ut needs target_manifest".into()),
            _ => {}
        }
        self.mel.validate()?;
        if self.stage == Stage::S2ut {
            self.s2ut.validate()?;
        } else {
            self.u2m.validate()?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_key_reports_path() {
        let e = StageConfig::from_toml_str("stage = \"s2ut\"\n[s2ut]\nhiden = 3\n").unwrap_err().to_string();
        assert!(e.contains("s2ut") && e.contains("hiden"), "{e}");
    }

    #[test]
    fn round_trip_and_defaults() {
        let c = StageConfig::from_toml_str("stage = \"finetune\"\nmanifest = \"m.jsonl\"\ninit_from = [\"a\", \"b\"]\n").unwrap();
        assert_eq!(c.data_fraction(), 0.25);
        c.validate().unwrap();
        assert_eq!(StageConfig::from_toml_str(&c.to_toml_string().unwrap()).unwrap(), c);
    }

    #[test]
    fn finetune_needs_two_parents() {
        let c = StageConfig { stage: Stage::Finetune, manifest: "m".into(), init_from: vec!["a".into()], ..Default::default() };
        assert!(matches!(c.validate(), Err(Error::InvalidConfig(_))));
    }

    #[test]
    fn paths_resolve_against_config_dir() {
        let mut c = StageConfig { manifest: "data/m.jsonl".into(), out_dir: "/abs".into(), ..Default::default() };
        c.resolve_paths(Path::new("/cfg"));
        assert_eq!(c.manifest, PathBuf::from("/cfg/data/m.jsonl"));
        assert_eq!(c.out_dir, PathBuf::from("/abs"));
    }
}
