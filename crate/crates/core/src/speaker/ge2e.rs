//! Compact recurrent speaker encoder trained with the GE2E softmax loss.

use candle_core::{DType, Tensor, D};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nnet::{log_softmax, sigmoid, Init, Linear, ParamStore};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Ge2eConfig {
    pub n_mels: usize,
    pub hidden: usize,
    pub embed: usize,
    pub layers: usize,
    pub min_frames: usize,
}

impl Default for Ge2eConfig {
    fn default() -> Self {
        Self { n_mels: 80, hidden: 256, embed: 256, layers: 3, min_frames: 10 }
    }
}

impl Ge2eConfig {
    pub fn validate(&self) -> Result<()> {
        if [self.n_mels, self.hidden, self.embed, self.layers, self.min_frames].contains(&0) {
            return Err(Error::InvalidConfig(format!("ge2e sizes must be positive: {self:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
struct LstmLayer {
    input: Linear,
    recurrent: Linear,
    hidden: usize,
}

impl LstmLayer {
    /// One step: gates `[i, f, g, o]` from `x_t` and `h_{t-1}`.
    fn step(&self, x_proj: &Tensor, h: &Tensor, c: &Tensor) -> Result<(Tensor, Tensor)> {
        let gates = (x_proj + self.recurrent.forward(h)?)?;
        let n = self.hidden;
        let i = sigmoid(&gates.narrow(1, 0, n)?)?;
        let f = sigmoid(&gates.narrow(1, n, n)?)?;
        let g = gates.narrow(1, 2 * n, n)?.tanh()?;
        let o = sigmoid(&gates.narrow(1, 3 * n, n)?)?;
        let c = ((f * c)? + (i * g)?)?;
        let h = (o * c.tanh()?)?;
        Ok((h, c))
    }
}

/// Stacked LSTM over mel frames; the last valid hidden state is projected
/// and L2-normalised.
#[derive(Debug, Clone)]
pub struct Ge2eEncoder {
    cfg: Ge2eConfig,
    layers: Vec<LstmLayer>,
    proj: Linear,
}

impl Ge2eEncoder {
    pub fn new(ps: &mut ParamStore, name: &str, cfg: &Ge2eConfig) -> Result<Self> {
        cfg.validate()?;
        let mut layers = Vec::with_capacity(cfg.layers);
        for l in 0..cfg.layers {
            let d_in = if l == 0 { cfg.n_mels } else { cfg.hidden };
            let input = Linear::new(ps, &format!("{name}.lstm{l}.ih"), d_in, 4 * cfg.hidden)?;
            // forget-gate bias starts at 1
            let bias: Vec<f64> = (0..4 * cfg.hidden).map(|j| if (cfg.hidden..2 * cfg.hidden).contains(&j) { 1.0 } else { 0.0 }).collect();
            ps.assign(&format!("{name}.lstm{l}.ih.b"), &Tensor::new(bias, ps.device())?)?;
            layers.push(LstmLayer {
                input,
                recurrent: Linear::no_bias(ps, &format!("{name}.lstm{l}.hh"), cfg.hidden, 4 * cfg.hidden)?,
                hidden: cfg.hidden,
            });
        }
        Ok(Self { cfg: cfg.clone(), layers, proj: Linear::new(ps, &format!("{name}.proj"), cfg.hidden, cfg.embed)? })
    }

    pub fn config(&self) -> &Ge2eConfig {
        &self.cfg
    }

    /// `mel`: `[B, T, n_mels]`; returns unit-norm `[B, embed]`.
    pub fn forward(&self, mel: &Tensor, lengths: &[usize]) -> Result<Tensor> {
        let (b, t, f) = mel.dims3()?;
        if f != self.cfg.n_mels || lengths.len() != b {
            return Err(Error::Shape(format!("ge2e expects [B, T, {}] with {b} lengths, got {:?}", self.cfg.n_mels, mel.dims())));
        }
        if let Some(&short) = lengths.iter().find(|&&l| l < self.cfg.min_frames) {
            return Err(Error::InvalidInput(format!(
                "speaker input has {short} frames; the ge2e encoder needs at least {}",
                self.cfg.min_frames
            )));
        }
        let dtype = mel.dtype();
        // fixed input scaling keeps log-mel values near unit range
        let mut seq = ((mel + 5.0)? / 5.0)?;
        for layer in &self.layers {
            let x_proj = layer.input.forward(&seq)?;
            let mut h = Tensor::zeros((b, self.cfg.hidden), dtype, mel.device())?;
            let mut c = h.clone();
            let mut outs = Vec::with_capacity(t);
            for step in 0..t {
                let (h2, c2) = layer.step(&x_proj.narrow(1, step, 1)?.squeeze(1)?, &h, &c)?;
                h = h2;
                c = c2;
                outs.push(h.clone());
            }
            seq = Tensor::stack(&outs, 1)?;
        }
        // select h at position len - 1 for each row
        let mut pick = vec![0f32; b * t];
        for (i, &l) in lengths.iter().enumerate() {
            pick[i * t + l.min(t) - 1] = 1.0;
        }
        let pick = Tensor::from_vec(pick, (b, t, 1), mel.device())?.to_dtype(dtype)?;
        let last = seq.broadcast_mul(&pick)?.sum(1)?;
        l2_normalize(&self.proj.forward(&last)?)
    }
}

/// Row-wise L2 normalisation over the last dimension.
pub fn l2_normalize(x: &Tensor) -> Result<Tensor> {
    let norm = (x.sqr()?.sum_keepdim(D::Minus1)? + 1e-12)?.sqrt()?;
    Ok(x.broadcast_div(&norm)?)
}

/// Learnable GE2E scale `w` and bias `b`, initialised to (10, -5).
pub fn ge2e_scale_bias(ps: &mut ParamStore, name: &str) -> Result<(Tensor, Tensor)> {
    Ok((ps.get(&format!("{name}.w"), &[], Init::Const(10.0))?, ps.get(&format!("{name}.b"), &[], Init::Const(-5.0))?))
}

/// GE2E softmax loss for `[N, M, D]` embeddings (N speakers, M utterances each).
///
/// `S[j,i,k] = w * cos(e_ji, c_k) + b`, where `c_j` excludes `e_ji` itself.
/// Loss is the mean over `(j, i)` of `-S[j,i,j] + logsumexp_k S[j,i,k]`.
pub fn ge2e_loss(embs: &Tensor, w: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (n, m, d) = embs.dims3()?;
    if n < 2 {
        return Err(Error::InvalidInput(format!("ge2e loss needs at least 2 speakers, got {n}")));
    }
    if m < 2 {
        return Err(Error::InvalidInput(format!("ge2e loss needs at least 2 utterances per speaker, got {m}")));
    }
    let dtype = embs.dtype();
    let e = l2_normalize(embs)?;
    let sum = embs.sum(1)?;
    let centroids = l2_normalize(&(&sum / m as f64)?)?;
    let excl = l2_normalize(&(sum.unsqueeze(1)?.broadcast_sub(embs)? / (m - 1) as f64)?)?;
    let sim_all = e.reshape((n * m, d))?.matmul(&centroids.t()?)?.reshape((n, m, n))?;
    let sim_self = e.mul(&excl)?.sum(2)?;
    let eye = Tensor::eye(n, DType::F64, embs.device())?.to_dtype(dtype)?.unsqueeze(1)?;
    let off = (1.0 - &eye)?;
    let sim = sim_all.broadcast_mul(&off)?.add(&sim_self.unsqueeze(2)?.broadcast_mul(&eye)?)?;
    let s = sim.broadcast_mul(w)?.broadcast_add(b)?;
    let own = log_softmax(&s)?.broadcast_mul(&eye)?.sum(2)?;
    Ok(own.mean_all()?.neg()?)
}

/// Equal error rate over scored trials (`true` = same speaker).
///
/// Trials are accepted when `score >= threshold`; the threshold is swept over
/// every observed score (and +inf) and the point where false-reject and
/// false-accept rates are closest gives `(frr + far) / 2`.
pub fn equal_error_rate(trials: &[(f64, bool)]) -> Result<f64> {
    let pos = trials.iter().filter(|t| t.1).count();
    let neg = trials.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::InvalidInput("eer needs both target and non-target trials".into()));
    }
    let mut thresholds: Vec<f64> = trials.iter().map(|t| t.0).collect();
    thresholds.push(f64::INFINITY);
    let mut best = (f64::INFINITY, 1.0);
    for th in thresholds {
        let frr = trials.iter().filter(|t| t.1 && t.0 < th).count() as f64 / pos as f64;
        let far = trials.iter().filter(|t| !t.1 && t.0 >= th).count() as f64 / neg as f64;
        let gap = (frr - far).abs();
        if gap < best.0 {
            best = (gap, (frr + far) / 2.0);
        }
    }
    Ok(best.1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nnet::grad_check;
    use candle_core::{Device, Var};

    fn scalar(x: f64) -> Tensor {
        Tensor::new(x, &Device::Cpu).unwrap()
    }

    #[test]
    fn identical_embeddings_give_ln_n() {
        for n in [2usize, 3, 5] {
            let e = Tensor::ones((n, 3, 4), DType::F64, &Device::Cpu).unwrap();
            let l = ge2e_loss(&e, &scalar(1.0), &scalar(0.0)).unwrap().to_scalar::<f64>().unwrap();
            assert!((l - (n as f64).ln()).abs() < 1e-9, "{l}");
        }
    }

    #[test]
    fn separated_clusters_approach_zero() {
        let mut v = vec![0f64; 3 * 2 * 3];
        for s in 0..3 {
            for u in 0..2 {
                v[(s * 2 + u) * 3 + s] = 1.0;
            }
        }
        let e = Tensor::from_vec(v, (3, 2, 3), &Device::Cpu).unwrap();
        let l = ge2e_loss(&e, &scalar(30.0), &scalar(0.0)).unwrap().to_scalar::<f64>().unwrap();
        assert!(l <= 0.01, "{l}");
    }

    #[test]
    fn needs_two_speakers() {
        let e = Tensor::ones((1, 3, 4), DType::F64, &Device::Cpu).unwrap();
        assert!(ge2e_loss(&e, &scalar(1.0), &scalar(0.0)).is_err());
    }

    #[test]
    fn loss_gradients() {
        let mut ps = ParamStore::new(DType::F64, 3);
        let e = ps.get("g.e", &[2, 3, 4], Init::Normal(1.0)).unwrap();
        let (w, b) = ge2e_scale_bias(&mut ps, "g").unwrap();
        let inputs: Vec<Var> = ps.vars().values().cloned().collect();
        let r = grad_check(|| ge2e_loss(&e, &w, &b), &inputs, 1e-5).unwrap();
        assert!(r.max_rel_error <= 1e-4, "{r:?}");
    }

    #[test]
    fn loss_decreases_under_gradient_steps() {
        let mut ps = ParamStore::new(DType::F64, 9);
        let raw = ps.get("g.e", &[3, 4, 5], Init::Normal(0.3)).unwrap();
        let centres = Tensor::from_vec(
            vec![1.0f64, 0., 0., 0., 0., 0., 1., 0., 0., 0., 0., 0., 1., 0., 0.],
            (3, 1, 5),
            &Device::Cpu,
        )
        .unwrap();
        let var = ps.var("g.e").unwrap().clone();
        let (w, b) = (scalar(10.0), scalar(-5.0));
        let f = || ge2e_loss(&l2_normalize(&raw.broadcast_add(&centres)?)?, &w, &b);
        let mut prev = f().unwrap().to_scalar::<f64>().unwrap();
        for _ in 0..10 {
            let loss = f().unwrap();
            let g = loss.backward().unwrap();
            let step = (g.get(var.as_tensor()).unwrap() * 0.05).unwrap();
            var.set(&(var.as_tensor() - step).unwrap()).unwrap();
            let now = f().unwrap().to_scalar::<f64>().unwrap();
            assert!(now < prev, "{now} !< {prev}");
            prev = now;
        }
    }

    #[test]
    fn encoder_output_is_unit_norm() {
        let cfg = Ge2eConfig { n_mels: 6, hidden: 8, embed: 5, layers: 3, min_frames: 4 };
        let mut ps = ParamStore::new(DType::F32, 0);
        let enc = Ge2eEncoder::new(&mut ps, "ge2e", &cfg).unwrap();
        let x = ps.get("x.mel", &[2, 12, 6], Init::Normal(2.0)).unwrap();
        let e = enc.forward(&x, &[12, 7]).unwrap();
        for row in e.to_vec2::<f32>().unwrap() {
            let n: f32 = row.iter().map(|v| v * v).sum::<f32>().sqrt();
            assert!((n - 1.0).abs() < 1e-6);
        }
        let again = enc.forward(&x, &[12, 7]).unwrap().to_vec2::<f32>().unwrap();
        assert_eq!(e.to_vec2::<f32>().unwrap(), again);
        // padded row equals the same row run alone
        let alone = enc.forward(&x.narrow(0, 1, 1).unwrap().narrow(1, 0, 7).unwrap(), &[7]).unwrap();
        let d: f32 = alone.to_vec2::<f32>().unwrap()[0].iter().zip(&again[1]).map(|(a, b)| (a - b).abs()).sum();
        assert!(d < 1e-5);
        assert!(enc.forward(&x, &[12, 3]).is_err());
    }

    #[test]
    fn eer_extremes() {
        let perfect = [(0.9, true), (0.8, true), (0.1, false), (0.2, false)];
        assert_eq!(equal_error_rate(&perfect).unwrap(), 0.0);
        let inverted = [(0.1, true), (0.2, true), (0.9, false), (0.8, false)];
        assert!(equal_error_rate(&inverted).unwrap() >= 0.5);
    }
}
