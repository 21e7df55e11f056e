//! Speech-to-unit translation: conformer acoustic encoder, autoregressive
//! transformer unit decoder, auxiliary CTC on an intermediate decoder layer,
//! greedy and beam decoding.

use std::io::{BufRead, Write};
use std::path::Path;

use candle_core::{DType, Device, IndexOp, Tensor, D};
use serde::{Deserialize, Serialize};

use crate::audio_dsp::{read_mel_file, MelSpectrogram};
use crate::error::{Error, Result};
use crate::nnet::{
    ctc_loss, log_softmax, pad_frames, pad_ids, sinusoidal_positions, BlockConfig, ConformerBlock, Ctx, Embedding, LayerNorm,
    Linear, Padding, ParamStore, TransformerDecoderBlock,
};
use crate::quantizer::UnitSequence;

pub const GROUP_ENCODER: &str = "s2ut_encoder";
pub const GROUP_DECODER: &str = "s2ut_decoder";
pub const GROUP_CTC: &str = "s2ut_ctc";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct S2utConfig {
    /// Number of discrete units K; the output vocabulary is K + 3 (pad, bos, eos).
    pub n_units: usize,
    /// Width of input frames (80 for log-mel, anything for external features).
    pub input_dim: usize,
    pub encoder_blocks: usize,
    pub decoder_blocks: usize,
    pub hidden: usize,
    pub heads: usize,
    pub encoder_kernel: usize,
    pub ffn_mult: usize,
    pub dropout: f64,
    /// 1 keeps the frame rate, 2 stacks frame pairs.
    pub subsample: usize,
    /// 1-based decoder block whose output feeds the CTC head.
    pub ctc_layer: usize,
    pub ctc_weight: f64,
    pub label_smoothing: f64,
}

impl Default for S2utConfig {
    fn default() -> Self {
        Self {
            n_units: 100,
            input_dim: 80,
            encoder_blocks: 6,
            decoder_blocks: 6,
            hidden: 512,
            heads: 8,
            encoder_kernel: 31,
            ffn_mult: 4,
            dropout: 0.1,
            subsample: 1,
            ctc_layer: 3,
            ctc_weight: 0.3,
            label_smoothing: 0.1,
        }
    }
}

impl S2utConfig {
    pub fn toy() -> Self {
        Self {
            encoder_blocks: 2,
            decoder_blocks: 2,
            hidden: 96,
            heads: 4,
            encoder_kernel: 7,
            ffn_mult: 2,
            dropout: 0.0,
            subsample: 2,
            ctc_layer: 1,
            ..Self::default()
        }
    }

    pub fn unit_vocab(&self) -> usize {
        self.n_units + 3
    }

    pub fn pad(&self) -> u32 {
        self.n_units as u32
    }

    pub fn bos(&self) -> u32 {
        self.n_units as u32 + 1
    }

    pub fn eos(&self) -> u32 {
        self.n_units as u32 + 2
    }

    fn block(&self) -> BlockConfig {
        BlockConfig {
            hidden: self.hidden,
            heads: self.heads,
            dropout: self.dropout,
            conv_kernel: self.encoder_kernel,
            ffn_mult: self.ffn_mult,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.block().validate()?;
        if self.n_units == 0 || self.input_dim == 0 || self.encoder_blocks == 0 || self.decoder_blocks == 0 {
            return Err(Error::InvalidConfig("s2ut sizes must be positive".into()));
        }
        if !(1..=self.decoder_blocks).contains(&self.ctc_layer) {
            return Err(Error::InvalidConfig(format!("ctc_layer {} outside [1, {}]", self.ctc_layer, self.decoder_blocks)));
        }
        if !matches!(self.subsample, 1 | 2) {
            return Err(Error::InvalidConfig(format!("subsample must be 1 or 2, got {}", self.subsample)));
        }
        if self.ctc_weight < 0.0 || !(0.0..1.0).contains(&self.label_smoothing) {
            return Err(Error::InvalidConfig("ctc_weight must be >= 0 and label_smoothing in [0, 1)".into()));
        }
        Ok(())
    }
}

/// Transcript symbols for the auxiliary CTC; index 0 is the blank.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CharVocab {
    pub symbols: Vec<String>,
}

pub const BLANK_SYMBOL: &str = "<blank>";

impl CharVocab {
    pub fn from_transcripts<'a>(transcripts: impl IntoIterator<Item = &'a [String]>) -> Self {
        let mut set = std::collections::BTreeSet::new();
        for t in transcripts {
            set.extend(t.iter().cloned());
        }
        let mut symbols = vec![BLANK_SYMBOL.to_string()];
        symbols.extend(set);
        Self { symbols }
    }

    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.symbols.len() <= 1
    }

    pub fn encode(&self, transcript: &[String]) -> Result<Vec<u32>> {
        let mut unknown: Vec<&str> = Vec::new();
        let ids: Vec<u32> = transcript
            .iter()
            .map(|s| match self.symbols.iter().skip(1).position(|v| v == s) {
                Some(i) => i as u32 + 1,
                None => {
                    if !unknown.contains(&s.as_str()) {
                        unknown.push(s);
                    }
                    0
                }
            })
            .collect();
        if !unknown.is_empty() {
            return Err(Error::InvalidInput(format!("transcript symbols outside the char vocabulary: {}", unknown.join(", "))));
        }
        Ok(ids)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        for s in &self.symbols {
            writeln!(f, "{s}")?;
        }
        f.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingFile(path.to_path_buf()));
        }
        let symbols: Vec<String> = std::io::BufReader::new(std::fs::File::open(path)?).lines().collect::<std::io::Result<_>>()?;
        if symbols.first().map(String::as_str) != Some(BLANK_SYMBOL) {
            return Err(Error::Parse { path: path.to_path_buf(), line: 1, msg: format!("first symbol must be {BLANK_SYMBOL}") });
        }
        Ok(Self { symbols })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TranslationHypothesis {
    pub units: UnitSequence,
    /// Log-probability of the emitted tokens (eos included) divided by their count.
    pub score: f64,
    /// `true` when `max_len` was reached without eos.
    pub truncated: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode", content = "width")]
pub enum DecodeMode {
    Greedy,
    Beam(usize),
}

/// One training example: source frames, target units, transcript char ids.
#[derive(Debug, Clone)]
pub struct S2utExample<'a> {
    pub source: &'a MelSpectrogram,
    pub units: &'a [u32],
    pub chars: &'a [u32],
}

#[derive(Debug, Clone)]
pub struct S2utLoss {
    pub ce: Tensor,
    pub ctc: Tensor,
    pub total: Tensor,
    /// Teacher-forced token accuracy over valid positions (eos included).
    pub token_accuracy: f64,
}

#[derive(Debug, Clone)]
pub struct S2ut {
    cfg: S2utConfig,
    input: Linear,
    input_norm: LayerNorm,
    encoder: Vec<ConformerBlock>,
    embed: Embedding,
    decoder: Vec<TransformerDecoderBlock>,
    out_norm: LayerNorm,
    out: Linear,
    ctc_norm: LayerNorm,
    ctc_head: Linear,
    dtype: DType,
    device: Device,
}

pub struct Memory {
    pub states: Tensor,
    pub pad: Padding,
}

impl S2ut {
    pub fn new(ps: &mut ParamStore, cfg: &S2utConfig, n_chars: usize) -> Result<Self> {
        cfg.validate()?;
        if n_chars < 2 {
            return Err(Error::InvalidConfig("char vocabulary needs the blank plus at least one symbol".into()));
        }
        let block = cfg.block();
        let h = cfg.hidden;
        Ok(Self {
            cfg: cfg.clone(),
            input: Linear::new(ps, &format!("{GROUP_ENCODER}.input"), cfg.input_dim * cfg.subsample, h)?,
            input_norm: LayerNorm::new(ps, &format!("{GROUP_ENCODER}.input_norm"), cfg.input_dim * cfg.subsample)?,
            encoder: (0..cfg.encoder_blocks)
                .map(|i| ConformerBlock::new(ps, &format!("{GROUP_ENCODER}.block{i}"), &block))
                .collect::<Result<_>>()?,
            embed: Embedding::new(ps, &format!("{GROUP_DECODER}.embed"), cfg.unit_vocab(), h)?,
            decoder: (0..cfg.decoder_blocks)
                .map(|i| TransformerDecoderBlock::new(ps, &format!("{GROUP_DECODER}.block{i}"), &block))
                .collect::<Result<_>>()?,
            out_norm: LayerNorm::new(ps, &format!("{GROUP_DECODER}.out_norm"), h)?,
            out: Linear::new(ps, &format!("{GROUP_DECODER}.out"), h, cfg.unit_vocab())?,
            ctc_norm: LayerNorm::new(ps, &format!("{GROUP_CTC}.norm"), h)?,
            ctc_head: Linear::new(ps, &format!("{GROUP_CTC}.head"), h, n_chars)?,
            dtype: ps.dtype(),
            device: ps.device().clone(),
        })
    }

    pub fn config(&self) -> &S2utConfig {
        &self.cfg
    }

    pub fn n_chars(&self) -> usize {
        self.ctc_head.d_out()
    }

    pub fn encoded_len(&self, t: usize) -> usize {
        t.div_ceil(self.cfg.subsample)
    }

    /// `[B, T, input_dim]` frames with lengths -> encoder memory `[B, ceil(T / subsample), H]`.
    pub fn acoustic_encode(&self, x: &Tensor, lengths: &[usize], ctx: &Ctx) -> Result<Memory> {
        let (b, t, d) = x.dims3()?;
        if d != self.cfg.input_dim {
            return Err(Error::Shape(format!("s2ut encoder expects input dim {}, got {d}", self.cfg.input_dim)));
        }
        if t == 0 || lengths.contains(&0) {
            return Err(Error::Shape("s2ut encoder: empty source".into()));
        }
        let s = self.cfg.subsample;
        let t_out = t.div_ceil(s);
        let x = if s > 1 {
            let padded = x.pad_with_zeros(1, 0, t_out * s - t)?;
            padded.reshape((b, t_out, d * s))?
        } else {
            x.clone()
        };
        let out_lengths: Vec<usize> = lengths.iter().map(|&l| self.encoded_len(l)).collect();
        let pad = Padding::new(&out_lengths, t_out, self.dtype, &self.device)?;
        let pos = sinusoidal_positions(t_out, self.cfg.hidden, self.dtype, &self.device)?;
        let mut h = self.input.forward(&self.input_norm.forward(&x)?)?.broadcast_add(&pos)?;
        h = ctx.dropout(&h, self.cfg.dropout)?.broadcast_mul(&pad.valid)?;
        for blk in &self.encoder {
            h = blk.forward(&h, Some(&pad), ctx)?;
        }
        Ok(Memory { states: h, pad })
    }

    /// Decoder over `[B, L]` input ids; returns (unit logits `[B, L, V]`, ctc layer states `[B, L, H]`).
    pub fn decode_states(&self, ids: &Tensor, memory: &Memory, ctx: &Ctx) -> Result<(Tensor, Tensor)> {
        let (_, l) = ids.dims2()?;
        let pos = sinusoidal_positions(l, self.cfg.hidden, self.dtype, &self.device)?;
        let mut h = (self.embed.forward(ids)? * (self.cfg.hidden as f64).sqrt())?.broadcast_add(&pos)?;
        h = ctx.dropout(&h, self.cfg.dropout)?;
        let mut ctc_states = None;
        for (i, blk) in self.decoder.iter().enumerate() {
            h = blk.forward(&h, &memory.states, Some(&memory.pad), ctx)?;
            if i + 1 == self.cfg.ctc_layer {
                ctc_states = Some(h.clone());
            }
        }
        let logits = self.out.forward(&self.out_norm.forward(&h)?)?;
        Ok((logits, ctc_states.expect("ctc_layer validated")))
    }

    pub fn batch_sources(&self, sources: &[&MelSpectrogram]) -> Result<(Tensor, Vec<usize>)> {
        if let Some(m) = sources.iter().find(|m| m.n_mels != self.cfg.input_dim) {
            return Err(Error::Shape(format!("source frames have dim {}, model expects {}", m.n_mels, self.cfg.input_dim)));
        }
        let rows: Vec<&[f32]> = sources.iter().map(|m| m.data.as_slice()).collect();
        pad_frames(&rows, self.cfg.input_dim, self.dtype, &self.device)
    }

    /// Teacher-forced loss on a batch: label-smoothed CE + `ctc_weight` * CTC.
    pub fn loss(&self, batch: &[S2utExample<'_>], ctx: &Ctx) -> Result<S2utLoss> {
        if batch.is_empty() {
            return Err(Error::InvalidInput("empty s2ut batch".into()));
        }
        let (bos, eos, pad) = (self.cfg.bos(), self.cfg.eos(), self.cfg.pad());
        let mut inputs = Vec::with_capacity(batch.len());
        let mut targets = Vec::with_capacity(batch.len());
        for ex in batch {
            if let Some(u) = ex.units.iter().find(|&&u| u as usize >= self.cfg.n_units) {
                return Err(Error::InvalidInput(format!("target unit {u} outside [0, {})", self.cfg.n_units)));
            }
            let mut i = vec![bos];
            i.extend_from_slice(ex.units);
            let mut t = ex.units.to_vec();
            t.push(eos);
            inputs.push(i);
            targets.push(t);
        }
        let in_refs: Vec<&[u32]> = inputs.iter().map(|v| v.as_slice()).collect();
        let tg_refs: Vec<&[u32]> = targets.iter().map(|v| v.as_slice()).collect();
        let (ids, lengths) = pad_ids(&in_refs, pad, &self.device)?;
        let (tgt, _) = pad_ids(&tg_refs, pad, &self.device)?;
        let sources: Vec<&MelSpectrogram> = batch.iter().map(|e| e.source).collect();
        let (x, src_lengths) = self.batch_sources(&sources)?;
        let memory = self.acoustic_encode(&x, &src_lengths, ctx)?;
        let (logits, ctc_states) = self.decode_states(&ids, &memory, ctx)?;
        let l = ids.dim(1)?;
        let valid = crate::nnet::length_mask(&lengths, l, self.dtype, &self.device)?;
        let ce = smoothed_cross_entropy(&logits, &tgt, &valid, self.cfg.label_smoothing)?;

        let token_accuracy = {
            let pred: Vec<Vec<u32>> = logits.argmax(D::Minus1)?.to_vec2()?;
            let (mut hit, mut n) = (0usize, 0usize);
            for (b, t) in targets.iter().enumerate() {
                for (j, &u) in t.iter().enumerate() {
                    hit += (pred[b][j] == u) as usize;
                    n += 1;
                }
            }
            hit as f64 / n as f64
        };

        let ctc = if self.cfg.ctc_weight > 0.0 {
            let lp = log_softmax(&self.ctc_head.forward(&self.ctc_norm.forward(&ctc_states)?)?)?;
            let mut terms = Vec::new();
            for (b, ex) in batch.iter().enumerate() {
                if ex.chars.is_empty() {
                    continue;
                }
                if let Some(&c) = ex.chars.iter().find(|&&c| c == 0 || c as usize >= self.n_chars()) {
                    return Err(Error::InvalidInput(format!("char id {c} outside [1, {})", self.n_chars())));
                }
                let row = lp.i(b)?.narrow(0, 0, lengths[b])?;
                let loss = ctc_loss(&row, ex.chars)?;
                if loss.to_dtype(DType::F64)?.to_scalar::<f64>()?.is_finite() {
                    terms.push((loss / ex.chars.len() as f64)?);
                }
            }
            if terms.is_empty() {
                Tensor::zeros((), self.dtype, &self.device)?
            } else {
                (Tensor::stack(&terms, 0)?.sum_all()? / terms.len() as f64)?
            }
        } else {
            Tensor::zeros((), self.dtype, &self.device)?
        };
        let total = if self.cfg.ctc_weight > 0.0 { (&ce + (&ctc * self.cfg.ctc_weight)?)? } else { ce.clone() };
        Ok(S2utLoss { ce, ctc, total, token_accuracy })
    }

    fn step_log_probs(&self, prefixes: &[Vec<u32>], memory: &Memory) -> Result<Vec<Vec<f64>>> {
        let refs: Vec<&[u32]> = prefixes.iter().map(|p| p.as_slice()).collect();
        let (ids, lengths) = pad_ids(&refs, self.cfg.pad(), &self.device)?;
        let (logits, _) = self.decode_states(&ids, memory, &Ctx::eval())?;
        let mut out = Vec::with_capacity(prefixes.len());
        for (b, &l) in lengths.iter().enumerate() {
            let mut row: Vec<f64> = logits.i((b, l - 1))?.to_dtype(DType::F64)?.to_vec1()?;
            // pad and bos are never emitted
            row[self.cfg.pad() as usize] = f64::NEG_INFINITY;
            row[self.cfg.bos() as usize] = f64::NEG_INFINITY;
            let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
            out.push(row.iter().map(|v| v - lse).collect());
        }
        Ok(out)
    }

    fn memory_row(memory: &Memory, b: usize, copies: usize) -> Result<Memory> {
        let states = memory.states.narrow(0, b, 1)?;
        let lens = vec![memory.pad.lengths[b]; copies];
        let t = states.dim(1)?;
        Ok(Memory {
            states: states.repeat((copies, 1, 1))?,
            pad: Padding::new(&lens, t, states.dtype(), states.device())?,
        })
    }

    /// Greedy decoding of a batch of sources.
    pub fn translate_greedy(&self, sources: &[&MelSpectrogram], max_len: usize) -> Result<Vec<TranslationHypothesis>> {
        let (x, lengths) = self.batch_sources(sources)?;
        let memory = self.acoustic_encode(&x, &lengths, &Ctx::eval())?;
        self.greedy_from_memory(&memory, max_len)
    }

    fn greedy_from_memory(&self, memory: &Memory, max_len: usize) -> Result<Vec<TranslationHypothesis>> {
        let b = memory.states.dim(0)?;
        let eos = self.cfg.eos();
        let mut prefixes: Vec<Vec<u32>> = vec![vec![self.cfg.bos()]; b];
        let mut scores = vec![0.0f64; b];
        let mut done = vec![false; b];
        for _ in 0..max_len {
            let active: Vec<usize> = (0..b).filter(|&i| !done[i]).collect();
            if active.is_empty() {
                break;
            }
            let sub = if active.len() == b {
                Memory { states: memory.states.clone(), pad: memory.pad.clone() }
            } else {
                let idx = Tensor::new(active.iter().map(|&i| i as u32).collect::<Vec<_>>(), &self.device)?;
                let lens: Vec<usize> = active.iter().map(|&i| memory.pad.lengths[i]).collect();
                let states = memory.states.index_select(&idx, 0)?;
                let t = states.dim(1)?;
                Memory { pad: Padding::new(&lens, t, self.dtype, &self.device)?, states }
            };
            let pf: Vec<Vec<u32>> = active.iter().map(|&i| prefixes[i].clone()).collect();
            let lp = self.step_log_probs(&pf, &sub)?;
            for (row, &i) in lp.iter().zip(&active) {
                let (best, score) = argmax(row);
                scores[i] += score;
                prefixes[i].push(best as u32);
                if best as u32 == eos {
                    done[i] = true;
                }
            }
        }
        Ok((0..b).map(|i| finish(&prefixes[i], scores[i], eos)).collect())
    }

    /// Beam search for one source; the greedy hypothesis always competes in the final ranking.
    pub fn translate_beam(&self, source: &MelSpectrogram, width: usize, max_len: usize) -> Result<TranslationHypothesis> {
        if width == 0 {
            return Err(Error::InvalidConfig("beam width must be >= 1".into()));
        }
        let (x, lengths) = self.batch_sources(&[source])?;
        let memory = self.acoustic_encode(&x, &lengths, &Ctx::eval())?;
        let greedy = self.greedy_from_memory(&memory, max_len)?.remove(0);
        let eos = self.cfg.eos();
        let mut beams: Vec<(Vec<u32>, f64)> = vec![(vec![self.cfg.bos()], 0.0)];
        let mut finished: Vec<(Vec<u32>, f64)> = Vec::new();
        for _ in 0..max_len {
            if beams.is_empty() {
                break;
            }
            let mem = Self::memory_row(&memory, 0, beams.len())?;
            let prefixes: Vec<Vec<u32>> = beams.iter().map(|b| b.0.clone()).collect();
            let lp = self.step_log_probs(&prefixes, &mem)?;
            let mut cands: Vec<(usize, u32, f64)> = Vec::new();
            for (bi, row) in lp.iter().enumerate() {
                for (tok, &v) in row.iter().enumerate() {
                    if v.is_finite() {
                        cands.push((bi, tok as u32, beams[bi].1 + v));
                    }
                }
            }
            // all candidates share a length, so ranking by total equals ranking by mean
            cands.sort_by(|a, b| b.2.total_cmp(&a.2).then(a.0.cmp(&b.0)).then(a.1.cmp(&b.1)));
            let mut next = Vec::with_capacity(width);
            for (bi, tok, s) in cands.into_iter().take(width) {
                let mut p = beams[bi].0.clone();
                p.push(tok);
                if tok == eos {
                    finished.push((p, s));
                } else {
                    next.push((p, s));
                }
            }
            beams = next;
        }
        let mut best = greedy;
        let pool = finished.iter().map(|(p, s)| finish(p, *s, eos)).chain(beams.iter().map(|(p, s)| finish(p, *s, eos)));
        for h in pool {
            if h.score > best.score + 1e-12 {
                best = h;
            }
        }
        Ok(best)
    }

    pub fn translate(&self, source: &MelSpectrogram, mode: DecodeMode, max_len: usize) -> Result<TranslationHypothesis> {
        match mode {
            DecodeMode::Greedy => Ok(self.translate_greedy(&[source], max_len)?.remove(0)),
            DecodeMode::Beam(w) => self.translate_beam(source, w, max_len),
        }
    }
}

fn argmax(row: &[f64]) -> (usize, f64) {
    let mut best = (0, f64::NEG_INFINITY);
    for (i, &v) in row.iter().enumerate() {
        if v > best.1 {
            best = (i, v);
        }
    }
    best
}

fn finish(prefix: &[u32], score: f64, eos: u32) -> TranslationHypothesis {
    let body = &prefix[1..];
    let (units, truncated) = match body.last() {
        Some(&u) if u == eos => (body[..body.len() - 1].to_vec(), false),
        _ => (body.to_vec(), true),
    };
    TranslationHypothesis { units: UnitSequence(units), score: score / body.len().max(1) as f64, truncated }
}

/// Label-smoothed cross-entropy averaged over valid positions.
///
/// The target distribution is `(1 - eps) * onehot + eps / V`.
pub fn smoothed_cross_entropy(logits: &Tensor, targets: &Tensor, valid: &Tensor, eps: f64) -> Result<Tensor> {
    let v = logits.dim(D::Minus1)?;
    let lp = log_softmax(logits)?;
    let nll = lp.gather(&targets.unsqueeze(D::Minus1)?, D::Minus1)?.squeeze(D::Minus1)?.neg()?;
    let uniform = (lp.sum(D::Minus1)?.neg()? / v as f64)?;
    let per_tok = ((nll * (1.0 - eps))? + (uniform * eps)?)?;
    Ok((per_tok.mul(valid)?.sum_all()? / valid.sum_all()?)?)
}

/// Entropy of the smoothed target distribution, the minimum of [`smoothed_cross_entropy`].
pub fn smoothing_floor(v: usize, eps: f64) -> f64 {
    let on = 1.0 - eps + eps / v as f64;
    let off = eps / v as f64;
    let mut h = -on * on.ln();
    if off > 0.0 {
        h -= (v - 1) as f64 * off * off.ln();
    }
    h
}

/// Loads an external `[T x D]` feature matrix (same binary layout as mel files).
pub fn load_external_features(path: &Path, frame_seconds: f64) -> Result<MelSpectrogram> {
    let mut m = read_mel_file(path)?;
    m.hop_seconds = frame_seconds;
    Ok(m)
}

/// `id<TAB>score<TAB>u1 u2 ...` per line.
pub fn write_hypotheses(path: &Path, rows: &[(String, TranslationHypothesis)]) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    for (id, h) in rows {
        let units: Vec<String> = h.units.0.iter().map(|u| u.to_string()).collect();
        writeln!(f, "{id}\t{:.6}\t{}", h.score, units.join(" "))?;
    }
    f.flush()?;
    Ok(())
}

pub fn read_hypotheses(path: &Path) -> Result<Vec<(String, f64, UnitSequence)>> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let mut out = Vec::new();
    for (i, line) in std::io::BufReader::new(std::fs::File::open(path)?).lines().enumerate() {
        let line = line?;
        if line.is_empty() {
            continue;
        }
        let err = |msg: String| Error::Parse { path: path.to_path_buf(), line: i + 1, msg };
        let mut cols = line.splitn(3, '\t');
        let id = cols.next().unwrap_or_default().to_string();
        let score = cols.next().ok_or_else(|| err("missing score".into()))?.parse::<f64>().map_err(|e| err(e.to_string()))?;
        let units = cols
            .next()
            .unwrap_or("")
            .split_whitespace()
            .map(|t| t.parse::<u32>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| err(e.to_string()))?;
        out.push((id, score, UnitSequence(units)));
    }
    Ok(out)
}

/// `1 - sum(edit distance) / sum(reference length)` over a corpus.
pub fn unit_accuracy(pairs: &[(&[u32], &[u32])]) -> f64 {
    let (mut errs, mut total) = (0usize, 0usize);
    for (hyp, reference) in pairs {
        errs += edit_distance(hyp, reference);
        total += reference.len();
    }
    if total == 0 {
        return if errs == 0 { 1.0 } else { 0.0 };
    }
    1.0 - errs as f64 / total as f64
}

/// Levenshtein distance with unit costs.
pub fn edit_distance<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for (i, x) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = (prev[j] + (x != y) as usize).min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nnet::{grad_check, Adam, AdamConfig, Init};
    use candle_core::Var;

    fn tiny() -> S2utConfig {
        S2utConfig {
            n_units: 5,
            input_dim: 4,
            encoder_blocks: 1,
            decoder_blocks: 2,
            hidden: 8,
            heads: 2,
            encoder_kernel: 3,
            ffn_mult: 2,
            dropout: 0.0,
            subsample: 1,
            ctc_layer: 1,
            ctc_weight: 0.3,
            label_smoothing: 0.1,
        }
    }

    fn src(t: usize, seed: u64) -> MelSpectrogram {
        let v = ParamStore::new(DType::F32, seed).get("s.x", &[t * 4], Init::Normal(1.0)).unwrap();
        MelSpectrogram::new(v.to_vec1().unwrap(), t, 4, 0.02).unwrap()
    }

    #[test]
    fn config_rules() {
        assert_eq!(S2utConfig::default().unit_vocab(), 103);
        assert!(S2utConfig { ctc_layer: 0, ..tiny() }.validate().is_err());
        assert!(S2utConfig { ctc_layer: 3, ..tiny() }.validate().is_err());
        assert!(S2utConfig { subsample: 3, ..tiny() }.validate().is_err());
    }

    #[test]
    fn encoder_length_law() {
        for s in [1usize, 2] {
            let mut ps = ParamStore::new(DType::F32, 0);
            let m = S2ut::new(&mut ps, &S2utConfig { subsample: s, ..tiny() }, 3).unwrap();
            for t in [1usize, 6, 7] {
                let (x, l) = m.batch_sources(&[&src(t, 1)]).unwrap();
                let mem = m.acoustic_encode(&x, &l, &Ctx::eval()).unwrap();
                assert_eq!(mem.states.dims(), &[1, t.div_ceil(s), 8]);
            }
        }
    }

    #[test]
    fn external_features_bypass_mel() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("feat.bin");
        let feats = MelSpectrogram::new((0..9 * 12).map(|i| (i as f32).sin()).collect(), 9, 12, 0.02).unwrap();
        crate::audio_dsp::write_mel_file(&p, &feats).unwrap();
        let loaded = load_external_features(&p, 0.02).unwrap();
        let mut ps = ParamStore::new(DType::F32, 0);
        let m = S2ut::new(&mut ps, &S2utConfig { input_dim: 12, hidden: 512, heads: 8, ..tiny() }, 3).unwrap();
        let (x, l) = m.batch_sources(&[&loaded]).unwrap();
        assert_eq!(m.acoustic_encode(&x, &l, &Ctx::eval()).unwrap().states.dims(), &[1, 9, 512]);
    }

    #[test]
    fn smoothing_floor_is_attained() {
        let (v, eps) = (103usize, 0.1);
        let target = 7u32;
        let q: Vec<f64> = (0..v).map(|k| if k == target as usize { 1.0 - eps + eps / v as f64 } else { eps / v as f64 }).collect();
        let logits = Tensor::new(q.iter().map(|p| p.ln()).collect::<Vec<_>>(), &Device::Cpu).unwrap().reshape((1, 1, v)).unwrap();
        let t = Tensor::new(&[[target]], &Device::Cpu).unwrap();
        let valid = Tensor::ones((1, 1), DType::F64, &Device::Cpu).unwrap();
        let ce = smoothed_cross_entropy(&logits, &t, &valid, eps).unwrap().to_scalar::<f64>().unwrap();
        // oracle: direct entropy sum
        let h: f64 = -q.iter().map(|p| p * p.ln()).sum::<f64>();
        assert!((ce - h).abs() < 1e-12);
        assert!((smoothing_floor(v, eps) - h).abs() < 1e-12);
        // any other distribution scores higher
        let sharp = (logits * 3.0).unwrap();
        assert!(smoothed_cross_entropy(&sharp, &t, &valid, eps).unwrap().to_scalar::<f64>().unwrap() > h);
    }

    #[test]
    fn ctc_weight_zero_gives_pure_ce() {
        let mut ps = ParamStore::new(DType::F64, 0);
        let m = S2ut::new(&mut ps, &S2utConfig { ctc_weight: 0.0, ..tiny() }, 3).unwrap();
        let s = src(6, 1).clone();
        let s = MelSpectrogram { data: s.data.clone(), ..s };
        let batch = [S2utExample { source: &s, units: &[1, 2, 3], chars: &[1, 2] }];
        let l = m.loss(&batch, &Ctx::eval()).unwrap();
        assert_eq!(l.total.to_scalar::<f64>().unwrap(), l.ce.to_scalar::<f64>().unwrap());
    }

    #[test]
    fn unknown_chars_are_listed() {
        let v = CharVocab::from_transcripts([&["ba".to_string(), "de".to_string()][..]]);
        assert_eq!(v.symbols, vec![BLANK_SYMBOL, "ba", "de"]);
        assert_eq!(v.encode(&["de".into(), "ba".into()]).unwrap(), vec![2, 1]);
        let e = v.encode(&["zz".into(), "ba".into(), "qq".into()]).unwrap_err().to_string();
        assert!(e.contains("zz") && e.contains("qq"), "{e}");
    }

    #[test]
    fn padding_content_does_not_change_loss() {
        let mut ps = ParamStore::new(DType::F64, 0);
        let m = S2ut::new(&mut ps, &tiny(), 3).unwrap();
        let a = src(5, 1);
        let b = src(8, 2);
        let batch = [
            S2utExample { source: &a, units: &[1, 2], chars: &[1] },
            S2utExample { source: &b, units: &[0, 1, 2, 3, 4], chars: &[1, 2] },
        ];
        let l1 = m.loss(&batch, &Ctx::eval()).unwrap().total.to_scalar::<f64>().unwrap();
        // the batch tensors pad row 0; compare with row 0 run alone plus row 1 alone
        let l_a = m.loss(&batch[..1], &Ctx::eval()).unwrap();
        let l_b = m.loss(&batch[1..], &Ctx::eval()).unwrap();
        // CE is a token-weighted mean: (3 * ce_a + 6 * ce_b) / 9
        let ce_joint = m.loss(&batch, &Ctx::eval()).unwrap().ce.to_scalar::<f64>().unwrap();
        let ce_mix = (3.0 * l_a.ce.to_scalar::<f64>().unwrap() + 6.0 * l_b.ce.to_scalar::<f64>().unwrap()) / 9.0;
        assert!((ce_joint - ce_mix).abs() < 1e-7, "{ce_joint} vs {ce_mix}");
        let ctc_mix = (l_a.ctc.to_scalar::<f64>().unwrap() + l_b.ctc.to_scalar::<f64>().unwrap()) / 2.0;
        assert!((l1 - (ce_mix + 0.3 * ctc_mix)).abs() < 1e-7);
    }

    #[test]
    fn memorises_and_decodes() {
        let mut ps = ParamStore::new(DType::F32, 3);
        let cfg = S2utConfig { hidden: 16, heads: 2, ..tiny() };
        let m = S2ut::new(&mut ps, &cfg, 3).unwrap();
        let sources: Vec<MelSpectrogram> = (0..4).map(|i| src(6 + i, 10 + i as u64)).collect();
        let targets: Vec<Vec<u32>> = vec![vec![1, 2, 3], vec![4, 4, 0], vec![2, 2, 2, 1], vec![0, 3]];
        let chars: Vec<Vec<u32>> = vec![vec![1], vec![2], vec![1, 2], vec![2, 1]];
        let batch: Vec<S2utExample> = (0..4).map(|i| S2utExample { source: &sources[i], units: &targets[i], chars: &chars[i] }).collect();
        let mut opt = Adam::new(AdamConfig { lr: 5e-3, warmup: 10, ..Default::default() }).unwrap();
        let first = m.loss(&batch, &Ctx::eval()).unwrap().total.to_scalar::<f32>().unwrap();
        for _ in 0..150 {
            let l = m.loss(&batch, &Ctx::train(0)).unwrap();
            opt.step(&ps, &l.total.backward().unwrap()).unwrap();
        }
        let last = m.loss(&batch, &Ctx::eval()).unwrap();
        assert!(last.total.to_scalar::<f32>().unwrap() < first);
        assert_eq!(last.token_accuracy, 1.0);
        let refs: Vec<&MelSpectrogram> = sources.iter().collect();
        let hyps = m.translate_greedy(&refs, 20).unwrap();
        for (h, t) in hyps.iter().zip(&targets) {
            assert_eq!(&h.units.0, t);
            assert!(!h.truncated);
        }
        for (s, h) in sources.iter().zip(&hyps) {
            let b1 = m.translate_beam(s, 1, 20).unwrap();
            assert_eq!(&b1, h);
            let b4 = m.translate_beam(s, 4, 20).unwrap();
            assert!(b4.score >= h.score - 1e-9);
            assert!(b4.units.0.iter().all(|&u| u < 5));
        }
    }

    #[test]
    fn rigged_eos_decoder_emits_nothing() {
        let mut ps = ParamStore::new(DType::F64, 0);
        let cfg = tiny();
        let m = S2ut::new(&mut ps, &cfg, 3).unwrap();
        let mut bias = vec![-100.0f64; cfg.unit_vocab()];
        bias[cfg.eos() as usize] = 100.0;
        ps.assign("s2ut_decoder.out.w", &Tensor::zeros((cfg.unit_vocab(), 8), DType::F64, &Device::Cpu).unwrap()).unwrap();
        ps.assign("s2ut_decoder.out.b", &Tensor::new(bias, &Device::Cpu).unwrap()).unwrap();
        let h = m.translate(&src(5, 1), DecodeMode::Greedy, 10).unwrap();
        assert!(h.units.is_empty() && !h.truncated);
        let h = m.translate(&src(5, 1), DecodeMode::Beam(3), 10).unwrap();
        assert!(h.units.is_empty());
    }

    #[test]
    fn truncation_is_flagged() {
        let mut ps = ParamStore::new(DType::F64, 0);
        let cfg = tiny();
        let m = S2ut::new(&mut ps, &cfg, 3).unwrap();
        let mut bias = vec![-100.0f64; cfg.unit_vocab()];
        bias[2] = 100.0;
        ps.assign("s2ut_decoder.out.w", &Tensor::zeros((cfg.unit_vocab(), 8), DType::F64, &Device::Cpu).unwrap()).unwrap();
        ps.assign("s2ut_decoder.out.b", &Tensor::new(bias, &Device::Cpu).unwrap()).unwrap();
        let h = m.translate(&src(5, 1), DecodeMode::Greedy, 4).unwrap();
        assert_eq!(h.units.0, vec![2, 2, 2, 2]);
        assert!(h.truncated);
    }

    #[test]
    fn loss_gradients() {
        let mut ps = ParamStore::new(DType::F64, 5);
        let m = S2ut::new(&mut ps, &S2utConfig { hidden: 4, heads: 2, decoder_blocks: 1, ..tiny() }, 3).unwrap();
        let s = src(3, 1);
        let batch = [S2utExample { source: &s, units: &[1, 2], chars: &[1, 2] }];
        let inputs: Vec<Var> = ps.group(GROUP_CTC).chain(ps.group(GROUP_DECODER)).map(|(_, v)| v.clone()).collect();
        let r = grad_check(|| Ok(m.loss(&batch, &Ctx::eval())?.total), &inputs, 1e-5).unwrap();
        assert!(r.max_rel_error <= 1e-4, "{r:?}");
    }

    #[test]
    fn hypothesis_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("hyp.tsv");
        let rows = vec![
            ("u1".to_string(), TranslationHypothesis { units: UnitSequence(vec![3, 1, 4]), score: -0.25, truncated: false }),
            ("u2".to_string(), TranslationHypothesis { units: UnitSequence(vec![]), score: -1.5, truncated: false }),
        ];
        write_hypotheses(&p, &rows).unwrap();
        assert_eq!(std::fs::read_to_string(&p).unwrap().lines().next().unwrap(), "u1\t-0.250000\t3 1 4");
        let back = read_hypotheses(&p).unwrap();
        assert_eq!(back[0], ("u1".to_string(), -0.25, UnitSequence(vec![3, 1, 4])));
        assert!(back[1].2.is_empty());
    }

    #[test]
    fn edit_distance_cases() {
        assert_eq!(edit_distance(&[1, 2, 3], &[1, 2, 3]), 0);
        assert_eq!(edit_distance(&[1, 3], &[1, 2, 3]), 1);
        assert_eq!(edit_distance::<u32>(&[], &[1, 2]), 2);
        assert_eq!(edit_distance(&[3, 2, 1], &[1, 2, 3]), 2);
        assert!((unit_accuracy(&[(&[1, 2][..], &[1, 2, 3, 4][..])]) - 0.5).abs() < 1e-12);
    }
}
