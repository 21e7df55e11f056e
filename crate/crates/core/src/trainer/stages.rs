use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use candle_core::{DType, Tensor};
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::checkpoint::Checkpoint;
use super::data::{half_split_items, s2ut_items, whole_items, Prepared, S2utItem, Sampler, U2mItem};
use super::{Stage, StageConfig};
use crate::corpus::load_manifest;
use crate::error::{Error, Result};
use crate::nnet::{pad_frames, Adam, AdamConfig, Ctx, Padding, ParamStore};
use crate::quantizer::Codebook;
use crate::s2ut::{unit_accuracy, CharVocab, S2ut, S2utExample};
use crate::u2m::{masked_l1, SrU2m, GROUP_FUSION, GROUP_MEL_DECODER, GROUP_SPEAKER_ADAPTER, GROUP_UNIT_ENCODER};

/// Groups fine-tuning takes from the pretrain-A checkpoint.
pub const FROM_PRETRAIN_A: [&str; 3] = [GROUP_UNIT_ENCODER, GROUP_MEL_DECODER, GROUP_FUSION];
/// Groups fine-tuning takes from the pretrain-B checkpoint.
pub const FROM_PRETRAIN_B: [&str; 1] = [GROUP_SPEAKER_ADAPTER];

const CHAR_VOCAB_KEY: &str = "char_vocab";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainOutcome {
    pub stage: Stage,
    pub checkpoint: PathBuf,
    pub steps: usize,
    /// Training loss after every step.
    pub losses: Vec<f64>,
    /// Held-out loss before the first and after the last step.
    pub initial_eval_loss: f64,
    pub final_eval_loss: f64,
    pub processed: usize,
    pub skipped: usize,
    pub dev_unit_accuracy: Option<f64>,
}

impl TrainOutcome {
    pub fn final_loss(&self) -> f64 {
        self.losses.last().copied().unwrap_or(f64::NAN)
    }
}

pub fn checkpoint_path(cfg: &StageConfig) -> PathBuf {
    cfg.out_dir.join(format!("{}.safetensors", cfg.stage))
}

pub fn log_path(cfg: &StageConfig) -> PathBuf {
    cfg.out_dir.join(format!("{}.log.jsonl", cfg.stage))
}

/// Append-only JSON lines; `wall` is the only non-deterministic field.
struct TrainLog {
    w: BufWriter<File>,
    start: Instant,
}

impl TrainLog {
    fn open(path: &Path) -> Result<Self> {
        if let Some(d) = path.parent() {
            std::fs::create_dir_all(d)?;
        }
        let f = std::fs::OpenOptions::new().create(true).append(true).open(path)?;
        Ok(Self { w: BufWriter::new(f), start: Instant::now() })
    }

    fn record(&mut self, mut v: serde_json::Value) -> Result<()> {
        v["wall"] = json!(self.start.elapsed().as_secs_f64());
        writeln!(self.w, "{v}")?;
        Ok(())
    }
}

fn optimizer(cfg: &StageConfig) -> Result<Adam> {
    Adam::new(AdamConfig { lr: cfg.lr, warmup: cfg.warmup, clip_norm: cfg.clip_norm, ..AdamConfig::default() })
}

fn step_ctx(cfg: &StageConfig, step: usize) -> Ctx {
    Ctx::train(cfg.seed.wrapping_mul(0x9e37_79b9).wrapping_add(step as u64))
}

fn scalar(t: &Tensor) -> Result<f64> {
    Ok(t.to_dtype(DType::F64)?.to_scalar::<f64>()?)
}

fn require(cfg: &StageConfig, stage: Stage) -> Result<()> {
    cfg.validate()?;
    if cfg.stage != stage {
        return Err(Error::InvalidConfig(format!("config is for stage {}, not {stage}", cfg.stage)));
    }
    Ok(())
}

/// Masked L1 between the model's mel and each item's target.
pub fn u2m_batch_loss(model: &SrU2m, items: &[&U2mItem], ctx: &Ctx) -> Result<Tensor> {
    let units: Vec<&[u32]> = items.iter().map(|i| i.units.as_slice()).collect();
    let spk: Vec<&crate::audio_dsp::MelSpectrogram> = items.iter().map(|i| &i.speaker_mel).collect();
    let b = model.batch_inputs(&units, &spk)?;
    let pred = model.forward(&b.ids, &b.unit_lengths, &b.speaker_mel, &b.speaker_lengths, ctx)?;
    let rows: Vec<&[f32]> = items.iter().map(|i| i.target.data.as_slice()).collect();
    let (target, _) = pad_frames(&rows, model.config().n_mels, pred.dtype(), pred.device())?;
    let pad = Padding::new(&b.unit_lengths, pred.dim(1)?, pred.dtype(), pred.device())?;
    masked_l1(&pred, &target, &pad.valid)
}

/// Frame-weighted eval-mode L1 over `items`.
pub fn u2m_eval_loss(model: &SrU2m, items: &[U2mItem]) -> Result<f64> {
    let (mut sum, mut frames) = (0.0, 0usize);
    for chunk in items.chunks(16) {
        let refs: Vec<&U2mItem> = chunk.iter().collect();
        let n: usize = chunk.iter().map(|i| i.units.len()).sum();
        sum += scalar(&u2m_batch_loss(model, &refs, &Ctx::eval())?)? * n as f64;
        frames += n;
    }
    if frames == 0 {
        return Err(Error::InvalidInput("no evaluation items".into()));
    }
    Ok(sum / frames as f64)
}

fn load_codebook(cfg: &StageConfig) -> Result<Codebook> {
    Codebook::load(&cfg.codebook)
}

fn eval_split(cfg: &StageConfig, train: &[U2mItem], cb: &Codebook, min_frames: usize) -> Result<Vec<U2mItem>> {
    let items = match &cfg.dev_manifest {
        Some(p) => {
            let m = load_manifest(p)?;
            match cfg.stage {
                Stage::Finetune => whole_items(&m, &cfg.mel, cb, 1.0, min_frames)?.items,
                _ => half_split_items(&m, &cfg.mel, cb, cfg.min_split_seconds, min_frames)?.items,
            }
        }
        None => train.to_vec(),
    };
    Ok(items.into_iter().take(cfg.eval_utts.max(1)).collect())
}

fn run_u2m(cfg: &StageConfig, ps: &ParamStore, model: &SrU2m, data: Prepared<U2mItem>, eval: &[U2mItem]) -> Result<TrainOutcome> {
    let mut log = TrainLog::open(&log_path(cfg))?;
    let mut opt = optimizer(cfg)?;
    let mut sampler = Sampler::new(data.items.len(), cfg.seed)?;
    let initial_eval_loss = u2m_eval_loss(model, eval)?;
    log.record(json!({"event": "start", "stage": cfg.stage, "eval_loss": initial_eval_loss, "params": ps.num_params()}))?;
    let mut losses = Vec::with_capacity(cfg.steps);
    for step in 1..=cfg.steps {
        let (idx, fresh) = sampler.next_batch(cfg.batch_size);
        if fresh {
            log.record(json!({"event": "epoch", "epoch": sampler.epoch(), "processed": data.processed, "skipped": data.skipped}))?;
        }
        let batch: Vec<&U2mItem> = idx.iter().map(|&i| &data.items[i]).collect();
        let loss = u2m_batch_loss(model, &batch, &step_ctx(cfg, step))?;
        let norm = opt.step(ps, &loss.backward()?)?;
        let l = scalar(&loss)?;
        losses.push(l);
        if step % cfg.log_every.max(1) == 0 || step == cfg.steps {
            log.record(json!({"step": step, "loss": l, "lr": opt.current_lr(), "grad_norm": norm}))?;
        }
    }
    let final_eval_loss = u2m_eval_loss(model, eval)?;
    let ck = Checkpoint::capture(cfg.stage, cfg.steps, cfg.seed, serde_json::to_value(cfg)?, ps, Some(&opt))?;
    let path = checkpoint_path(cfg);
    ck.save(&path)?;
    log.record(json!({"event": "done", "eval_loss": final_eval_loss, "checkpoint": path}))?;
    Ok(TrainOutcome {
        stage: cfg.stage,
        checkpoint: path,
        steps: cfg.steps,
        losses,
        initial_eval_loss,
        final_eval_loss,
        processed: data.processed,
        skipped: data.skipped,
        dev_unit_accuracy: None,
    })
}

fn pretrain(cfg: &StageConfig, stage: Stage) -> Result<TrainOutcome> {
    require(cfg, stage)?;
    let cb = load_codebook(cfg)?;
    let m = load_manifest(&cfg.manifest)?;
    if stage == Stage::PretrainB && m.speakers().len() < 2 {
        return Err(Error::InvalidInput(format!("pretrain_b needs at least 2 speakers, manifest has {}", m.speakers().len())));
    }
    let mut ps = ParamStore::new(DType::F32, cfg.seed);
    let model = SrU2m::new(&mut ps, &cfg.u2m)?;
    let min_frames = cfg.u2m.adapter.min_frames();
    let mut data = half_split_items(&m, &cfg.mel, &cb, cfg.min_split_seconds, min_frames)?;
    let n = super::data::take_fraction(data.items.len(), cfg.data_fraction());
    data.items.truncate(n);
    let eval = eval_split(cfg, &data.items, &cb, min_frames)?;
    run_u2m(cfg, &ps, &model, data, &eval)
}

/// Pretrain-A: single-speaker half-split reconstruction on C-style targets.
pub fn pretrain_a(cfg: &StageConfig) -> Result<TrainOutcome> {
    pretrain(cfg, Stage::PretrainA)
}

/// Pretrain-B: the same objective on multi-speaker source speech; its adapter is the product.
pub fn pretrain_b(cfg: &StageConfig) -> Result<TrainOutcome> {
    pretrain(cfg, Stage::PretrainB)
}

/// Builds the fine-tune model: encoder, decoder and fusion from pretrain-A, adapter from pretrain-B.
pub fn init_finetune(cfg: &StageConfig) -> Result<(ParamStore, SrU2m)> {
    require(cfg, Stage::Finetune)?;
    let cks = cfg.init_from.iter().map(|p| Checkpoint::load(p)).collect::<Result<Vec<_>>>()?;
    let tags: Vec<Stage> = cks.iter().map(|c| c.stage).collect();
    let a = cks.iter().find(|c| c.stage == Stage::PretrainA);
    let b = cks.iter().find(|c| c.stage == Stage::PretrainB);
    let (Some(a), Some(b)) = (a, b) else {
        return Err(Error::Checkpoint(format!("finetune needs pretrain_a and pretrain_b checkpoints, got {tags:?}")));
    };
    let mut ps = ParamStore::new(DType::F32, cfg.seed);
    let model = SrU2m::new(&mut ps, &cfg.u2m)?;
    a.load_groups(&ps, &FROM_PRETRAIN_A)?;
    b.load_groups(&ps, &FROM_PRETRAIN_B)?;
    Ok((ps, model))
}

/// Joint fine-tune on T-style targets; nothing is frozen.
pub fn finetune(cfg: &StageConfig) -> Result<TrainOutcome> {
    let (ps, model) = init_finetune(cfg)?;
    let cb = load_codebook(cfg)?;
    let m = load_manifest(&cfg.manifest)?;
    let min_frames = cfg.u2m.adapter.min_frames();
    let data = whole_items(&m, &cfg.mel, &cb, cfg.data_fraction(), min_frames)?;
    let eval = eval_split(cfg, &data.items, &cb, min_frames)?;
    run_u2m(cfg, &ps, &model, data, &eval)
}

/// Rebuilds a unit-to-mel model from any U2M-stage checkpoint.
pub fn load_u2m(path: &Path) -> Result<(ParamStore, SrU2m, StageConfig)> {
    let ck = Checkpoint::load(path)?;
    if ck.stage == Stage::S2ut {
        return Err(Error::Checkpoint(format!("{} is an s2ut checkpoint", path.display())));
    }
    let cfg: StageConfig = serde_json::from_value(ck.config.clone())?;
    let mut ps = ParamStore::new(DType::F32, cfg.seed);
    let model = SrU2m::new(&mut ps, &cfg.u2m)?;
    ck.load_all(&ps)?;
    Ok((ps, model, cfg))
}

fn s2ut_examples<'a>(items: &'a [S2utItem], chars: &'a [Vec<u32>], idx: &[usize]) -> Vec<S2utExample<'a>> {
    idx.iter().map(|&i| S2utExample { source: &items[i].source, units: &items[i].units, chars: &chars[i] }).collect()
}

/// Greedy-decoding unit accuracy over `items`.
pub fn s2ut_unit_accuracy(model: &S2ut, items: &[S2utItem], max_len: usize) -> Result<f64> {
    let mut hyps = Vec::with_capacity(items.len());
    for chunk in items.chunks(16) {
        let srcs: Vec<&crate::audio_dsp::MelSpectrogram> = chunk.iter().map(|i| &i.source).collect();
        hyps.extend(model.translate_greedy(&srcs, max_len)?);
    }
    let pairs: Vec<(&[u32], &[u32])> = hyps.iter().zip(items).map(|(h, i)| (h.units.0.as_slice(), i.units.as_slice())).collect();
    Ok(unit_accuracy(&pairs))
}

/// Teacher-forced loss (ce + weighted ctc) over `items`, example-weighted.
pub fn s2ut_eval_loss(model: &S2ut, vocab: &CharVocab, items: &[S2utItem]) -> Result<f64> {
    let chars = items.iter().map(|i| vocab.encode(&i.transcript)).collect::<Result<Vec<_>>>()?;
    let (mut sum, mut n) = (0.0, 0usize);
    for start in (0..items.len()).step_by(16) {
        let idx: Vec<usize> = (start..(start + 16).min(items.len())).collect();
        let l = model.loss(&s2ut_examples(items, &chars, &idx), &Ctx::eval())?;
        sum += scalar(&l.total)? * idx.len() as f64;
        n += idx.len();
    }
    Ok(sum / n.max(1) as f64)
}

/// Loads the dev pairs named by the config, if any.
pub fn s2ut_dev_items(cfg: &StageConfig, cb: &Codebook) -> Result<Option<Vec<S2utItem>>> {
    match (&cfg.dev_manifest, &cfg.dev_target_manifest) {
        (Some(s), Some(t)) => {
            let mut items = s2ut_items(&load_manifest(s)?, &load_manifest(t)?, &cfg.mel, cb, 1.0)?.items;
            items.truncate(cfg.eval_utts.max(1));
            Ok(Some(items))
        }
        _ => Ok(None),
    }
}

/// S2UT training on (source speech, C-style target units, transcript) pairs.
pub fn train_s2ut(cfg: &StageConfig) -> Result<TrainOutcome> {
    require(cfg, Stage::S2ut)?;
    let cb = load_codebook(cfg)?;
    if cb.k != cfg.s2ut.n_units {
        return Err(Error::InvalidConfig(format!("codebook has {} units, s2ut.n_units is {}", cb.k, cfg.s2ut.n_units)));
    }
    let src = load_manifest(&cfg.manifest)?;
    let tgt = load_manifest(cfg.target_manifest.as_ref().expect("validated"))?;
    let data = s2ut_items(&src, &tgt, &cfg.mel, &cb, cfg.data_fraction())?;
    let vocab = CharVocab::from_transcripts(data.items.iter().map(|i| i.transcript.as_slice()));
    let chars = data.items.iter().map(|i| vocab.encode(&i.transcript)).collect::<Result<Vec<_>>>()?;
    let dev = s2ut_dev_items(cfg, &cb)?;
    let eval: Vec<S2utItem> = match &dev {
        Some(d) => d.clone(),
        None => data.items.iter().take(cfg.eval_utts.max(1)).cloned().collect(),
    };

    let mut ps = ParamStore::new(DType::F32, cfg.seed);
    let model = S2ut::new(&mut ps, &cfg.s2ut, vocab.len())?;
    let mut log = TrainLog::open(&log_path(cfg))?;
    let mut opt = optimizer(cfg)?;
    let mut sampler = Sampler::new(data.items.len(), cfg.seed)?;
    let initial_eval_loss = s2ut_eval_loss(&model, &vocab, &eval)?;
    log.record(json!({"event": "start", "stage": cfg.stage, "eval_loss": initial_eval_loss, "params": ps.num_params(), "chars": vocab.len()}))?;
    let mut losses = Vec::with_capacity(cfg.steps);
    for step in 1..=cfg.steps {
        let (idx, fresh) = sampler.next_batch(cfg.batch_size);
        if fresh {
            log.record(json!({"event": "epoch", "epoch": sampler.epoch(), "processed": data.processed, "skipped": data.skipped}))?;
        }
        let l = model.loss(&s2ut_examples(&data.items, &chars, &idx), &step_ctx(cfg, step))?;
        let norm = opt.step(&ps, &l.total.backward()?)?;
        let total = scalar(&l.total)?;
        losses.push(total);
        if step % cfg.log_every.max(1) == 0 || step == cfg.steps {
            log.record(json!({
                "step": step, "loss": total, "ce": scalar(&l.ce)?, "ctc": scalar(&l.ctc)?,
                "token_accuracy": l.token_accuracy, "lr": opt.current_lr(), "grad_norm": norm,
            }))?;
        }
        if cfg.eval_every > 0 && step % cfg.eval_every == 0 && step != cfg.steps {
            if let Some(d) = &dev {
                log.record(json!({"step": step, "dev_unit_accuracy": s2ut_unit_accuracy(&model, d, cfg.max_decode_len)?}))?;
            }
        }
    }
    let final_eval_loss = s2ut_eval_loss(&model, &vocab, &eval)?;
    let dev_unit_accuracy = match &dev {
        Some(d) => Some(s2ut_unit_accuracy(&model, d, cfg.max_decode_len)?),
        None => None,
    };
    let mut ck = Checkpoint::capture(Stage::S2ut, cfg.steps, cfg.seed, serde_json::to_value(cfg)?, &ps, Some(&opt))?;
    ck.extra.insert(CHAR_VOCAB_KEY.into(), serde_json::to_string(&vocab.symbols)?);
    let path = checkpoint_path(cfg);
    ck.save(&path)?;
    log.record(json!({"event": "done", "eval_loss": final_eval_loss, "dev_unit_accuracy": dev_unit_accuracy, "checkpoint": path}))?;
    Ok(TrainOutcome {
        stage: Stage::S2ut,
        checkpoint: path,
        steps: cfg.steps,
        losses,
        initial_eval_loss,
        final_eval_loss,
        processed: data.processed,
        skipped: data.skipped,
        dev_unit_accuracy,
    })
}

/// Rebuilds a translation model and its char vocabulary from an s2ut checkpoint.
pub fn load_s2ut(path: &Path) -> Result<(ParamStore, S2ut, CharVocab, StageConfig)> {
    let ck = Checkpoint::load(path)?;
    ck.require_stage(Stage::S2ut)?;
    let cfg: StageConfig = serde_json::from_value(ck.config.clone())?;
    let symbols: Vec<String> = serde_json::from_str(
        ck.extra.get(CHAR_VOCAB_KEY).ok_or_else(|| Error::Checkpoint("s2ut checkpoint lacks the char vocabulary".into()))?,
    )?;
    let vocab = CharVocab { symbols };
    let mut ps = ParamStore::new(DType::F32, cfg.seed);
    let model = S2ut::new(&mut ps, &cfg.s2ut, vocab.len())?;
    ck.load_all(&ps)?;
    Ok((ps, model, vocab, cfg))
}

/// Runs whichever stage the config names.
pub fn run_stage(cfg: &StageConfig) -> Result<TrainOutcome> {
    match cfg.stage {
        Stage::PretrainA => pretrain_a(cfg),
        Stage::PretrainB => pretrain_b(cfg),
        Stage::Finetune => finetune(cfg),
        Stage::S2ut => train_s2ut(cfg),
    }
}
