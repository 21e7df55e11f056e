use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::Path;

use candle_core::{Device, Tensor};
use safetensors::SafeTensors;

use super::Stage;
use crate::error::{Error, Result};
use crate::nnet::{Adam, ParamStore};

const FORMAT: &str = "scs2ut-checkpoint-1";
const OPT_PREFIX: &str = "adam.";

/// Parameters, optimizer moments and run metadata in one safetensors file.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub stage: Stage,
    pub step: usize,
    pub seed: u64,
    /// JSON snapshot of the stage config.
    pub config: serde_json::Value,
    /// Extra string metadata (e.g. the char vocabulary of an s2ut run).
    pub extra: BTreeMap<String, String>,
    pub tensors: BTreeMap<String, Tensor>,
}

impl Checkpoint {
    /// Deep-copies the current parameter values (and optimizer moments).
    pub fn capture(stage: Stage, step: usize, seed: u64, config: serde_json::Value, ps: &ParamStore, opt: Option<&Adam>) -> Result<Self> {
        let mut tensors = BTreeMap::new();
        for (k, v) in ps.vars() {
            tensors.insert(k.clone(), v.as_tensor().copy()?);
        }
        if let Some(opt) = opt {
            for (k, t) in opt.state_tensors()? {
                tensors.insert(k, t.copy()?);
            }
        }
        Ok(Self { stage, step, seed, config, extra: BTreeMap::new(), tensors })
    }

    /// Parameter groups present (first name component), optimizer state excluded.
    pub fn groups(&self) -> BTreeSet<String> {
        self.param_names().map(|k| k.split('.').next().unwrap_or("").to_string()).collect()
    }

    fn param_names(&self) -> impl Iterator<Item = &String> {
        self.tensors.keys().filter(|k| !k.starts_with(OPT_PREFIX))
    }

    pub fn optimizer_state(&self) -> BTreeMap<String, Tensor> {
        self.tensors.iter().filter(|(k, _)| k.starts_with(OPT_PREFIX)).map(|(k, v)| (k.clone(), v.clone())).collect()
    }

    pub fn require_stage(&self, expected: Stage) -> Result<()> {
        if self.stage != expected {
            return Err(Error::Checkpoint(format!("expected a {expected} checkpoint, found {}", self.stage)));
        }
        Ok(())
    }

    /// Copies every parameter of `groups` into `ps`; shapes must agree and each
    /// store parameter in those groups must be present.
    pub fn load_groups(&self, ps: &ParamStore, groups: &[&str]) -> Result<()> {
        let have = self.groups();
        for g in groups {
            if !have.contains(*g) {
                return Err(Error::Checkpoint(format!("{} checkpoint has no `{g}` group", self.stage)));
            }
            for (name, _) in ps.group(g) {
                let t = self.tensors.get(name).ok_or_else(|| Error::Checkpoint(format!("group `{g}` is missing parameter {name}")))?;
                ps.assign(name, t)?;
            }
        }
        Ok(())
    }

    /// Loads every stored parameter into `ps`; both sides must hold the same names.
    pub fn load_all(&self, ps: &ParamStore) -> Result<()> {
        let stored: BTreeSet<&String> = self.param_names().collect();
        let wanted: BTreeSet<&String> = ps.vars().keys().collect();
        if let Some(n) = wanted.difference(&stored).next() {
            return Err(Error::Checkpoint(format!("checkpoint lacks parameter {n}")));
        }
        if let Some(n) = stored.difference(&wanted).next() {
            return Err(Error::Checkpoint(format!("checkpoint has unexpected parameter {n}")));
        }
        for n in wanted {
            ps.assign(n, &self.tensors[n])?;
        }
        Ok(())
    }

    /// Writes to `<path>.tmp` and renames, so readers never see a partial file.
    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir)?;
        }
        let mut meta: HashMap<String, String> = self.extra.iter().map(|(k, v)| (format!("x.{k}"), v.clone())).collect();
        meta.insert("format".into(), FORMAT.into());
        meta.insert("stage".into(), self.stage.as_str().into());
        meta.insert("step".into(), self.step.to_string());
        meta.insert("seed".into(), self.seed.to_string());
        meta.insert("config".into(), serde_json::to_string(&self.config)?);
        let bytes = safetensors::serialize(self.tensors.iter().map(|(k, v)| (k.as_str(), v)), Some(meta))
            .map_err(|e| Error::Checkpoint(e.to_string()))?;
        let tmp = path.with_extension("tmp");
        std::fs::write(&tmp, bytes)?;
        std::fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingFile(path.to_path_buf()));
        }
        let bytes = std::fs::read(path)?;
        let bad = |m: String| Error::Checkpoint(format!("{}: {m}", path.display()));
        let (_, md) = SafeTensors::read_metadata(&bytes).map_err(|e| bad(e.to_string()))?;
        let meta = md.metadata().clone().unwrap_or_default();
        let get = |k: &str| meta.get(k).ok_or_else(|| bad(format!("metadata lacks `{k}`")));
        if get("format")? != FORMAT {
            return Err(bad(format!("unknown format {}", get("format")?)));
        }
        let stage: Stage = get("stage")?.parse().map_err(|_| bad("bad stage tag".into()))?;
        let step = get("step")?.parse().map_err(|_| bad("bad step".into()))?;
        let seed = get("seed")?.parse().map_err(|_| bad("bad seed".into()))?;
        let config = serde_json::from_str(get("config")?)?;
        let extra = meta.iter().filter_map(|(k, v)| k.strip_prefix("x.").map(|k| (k.to_string(), v.clone()))).collect();
        let tensors = candle_core::safetensors::load_buffer(&bytes, &Device::Cpu)?.into_iter().collect();
        Ok(Self { stage, step, seed, config, extra, tensors })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nnet::{AdamConfig, Init};
    use candle_core::DType;

    fn store(seed: u64) -> ParamStore {
        let mut ps = ParamStore::new(DType::F32, seed);
        ps.get("unit_encoder.w", &[3, 2], Init::Normal(1.0)).unwrap();
        ps.get("fusion.b", &[4], Init::Normal(1.0)).unwrap();
        ps
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let ps = store(1);
        let loss = (ps.var("unit_encoder.w").unwrap().as_tensor().sqr().unwrap().sum_all().unwrap()
            + ps.var("fusion.b").unwrap().as_tensor().sum_all().unwrap())
        .unwrap();
        let mut opt = Adam::new(AdamConfig::default()).unwrap();
        opt.step(&ps, &loss.backward().unwrap()).unwrap();
        let mut ck = Checkpoint::capture(Stage::PretrainA, 1, 7, serde_json::json!({"k": 1}), &ps, Some(&opt)).unwrap();
        ck.extra.insert("vocab".into(), "[\"a\"]".into());
        let p = dir.path().join("a.safetensors");
        ck.save(&p).unwrap();
        assert!(!p.with_extension("tmp").exists());
        let back = Checkpoint::load(&p).unwrap();
        assert_eq!((back.stage, back.step, back.seed), (Stage::PretrainA, 1, 7));
        assert_eq!(back.config, serde_json::json!({"k": 1}));
        assert_eq!(back.extra["vocab"], "[\"a\"]");
        assert_eq!(back.groups().into_iter().collect::<Vec<_>>(), vec!["fusion", "unit_encoder"]);
        assert_eq!(back.optimizer_state().len(), 4);
        let other = store(2);
        back.load_all(&other).unwrap();
        for (k, v) in ps.vars() {
            let a: Vec<f32> = v.as_tensor().flatten_all().unwrap().to_vec1().unwrap();
            let b: Vec<f32> = other.var(k).unwrap().as_tensor().flatten_all().unwrap().to_vec1().unwrap();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn capture_is_a_snapshot() {
        let ps = store(1);
        let ck = Checkpoint::capture(Stage::PretrainB, 0, 0, serde_json::Value::Null, &ps, None).unwrap();
        ps.assign("fusion.b", &Tensor::zeros(4, DType::F32, &Device::Cpu).unwrap()).unwrap();
        assert_ne!(ck.tensors["fusion.b"].abs().unwrap().sum_all().unwrap().to_scalar::<f32>().unwrap(), 0.0);
    }

    #[test]
    fn missing_group_is_named() {
        let ps = store(1);
        let ck = Checkpoint::capture(Stage::PretrainB, 0, 0, serde_json::Value::Null, &ps, None).unwrap();
        let e = ck.load_groups(&ps, &["speaker_adapter"]).unwrap_err().to_string();
        assert!(e.contains("speaker_adapter"), "{e}");
        assert!(ck.require_stage(Stage::PretrainA).is_err());
        assert!(matches!(Checkpoint::load(Path::new("/nonexistent.ckpt")), Err(Error::MissingFile(_))));
    }
}
