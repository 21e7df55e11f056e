//! Connectionist temporal classification loss, blank label 0.
//!
//! The forward (alpha) and backward (beta) recursions run in log space over the
//! blank-extended label sequence. [`ctc_loss`] wraps them as a differentiable
//! tensor op whose gradient w.r.t. the input log-probabilities is
//! `-exp(logsumexp_{s: l'_s = k}(alpha_t(s) + beta_t(s)) - log_probs[t, k] + loss)`.

use candle_core::{CpuStorage, CustomOp1, DType, Layout, Shape, Tensor};

use crate::error::{Error, Result};

pub const BLANK: u32 = 0;

fn log_add(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let m = a.max(b);
    m + ((a - m).exp() + (b - m).exp()).ln()
}

fn extended(targets: &[u32]) -> Vec<u32> {
    let mut l = Vec::with_capacity(2 * targets.len() + 1);
    l.push(BLANK);
    for &t in targets {
        l.push(t);
        l.push(BLANK);
    }
    l
}

/// Minimum frames needed to emit `targets` (repeats need a blank in between).
pub fn min_frames(targets: &[u32]) -> usize {
    targets.len() + targets.windows(2).filter(|w| w[0] == w[1]).count()
}

fn alphas(lp: &[f64], v: usize, t_len: usize, ext: &[u32]) -> Vec<f64> {
    let s_len = ext.len();
    let mut a = vec![f64::NEG_INFINITY; t_len * s_len];
    a[0] = lp[ext[0] as usize];
    if s_len > 1 {
        a[1] = lp[ext[1] as usize];
    }
    for t in 1..t_len {
        for s in 0..s_len {
            let mut acc = a[(t - 1) * s_len + s];
            if s >= 1 {
                acc = log_add(acc, a[(t - 1) * s_len + s - 1]);
            }
            if s >= 2 && ext[s] != BLANK && ext[s] != ext[s - 2] {
                acc = log_add(acc, a[(t - 1) * s_len + s - 2]);
            }
            a[t * s_len + s] = acc + lp[t * v + ext[s] as usize];
        }
    }
    a
}

fn betas(lp: &[f64], v: usize, t_len: usize, ext: &[u32]) -> Vec<f64> {
    let s_len = ext.len();
    let mut b = vec![f64::NEG_INFINITY; t_len * s_len];
    let last = t_len - 1;
    b[last * s_len + s_len - 1] = lp[last * v + ext[s_len - 1] as usize];
    if s_len > 1 {
        b[last * s_len + s_len - 2] = lp[last * v + ext[s_len - 2] as usize];
    }
    for t in (0..last).rev() {
        for s in 0..s_len {
            let mut acc = b[(t + 1) * s_len + s];
            if s + 1 < s_len {
                acc = log_add(acc, b[(t + 1) * s_len + s + 1]);
            }
            if s + 2 < s_len && ext[s] != BLANK && ext[s] != ext[s + 2] {
                acc = log_add(acc, b[(t + 1) * s_len + s + 2]);
            }
            b[t * s_len + s] = acc + lp[t * v + ext[s] as usize];
        }
    }
    b
}

fn check(lp: &[f64], v: usize, targets: &[u32]) -> Result<usize> {
    if v < 2 || lp.len() % v != 0 || lp.is_empty() {
        return Err(Error::Shape(format!("ctc: {} values do not form [T x {v}] with T >= 1", lp.len())));
    }
    if let Some(t) = targets.iter().find(|&&t| t == BLANK || t as usize >= v) {
        return Err(Error::InvalidInput(format!("ctc target label {t} must be in 1..{v}")));
    }
    Ok(lp.len() / v)
}

/// `-log p(targets | log_probs)` for row-major `[T x V]` log-probabilities.
///
/// Returns `+inf` when `T` is shorter than the minimum alignment length.
pub fn ctc_loss_value(log_probs: &[f64], v: usize, targets: &[u32]) -> Result<f64> {
    let t_len = check(log_probs, v, targets)?;
    if min_frames(targets) > t_len {
        return Ok(f64::INFINITY);
    }
    let ext = extended(targets);
    let a = alphas(log_probs, v, t_len, &ext);
    let s_len = ext.len();
    let mut total = a[(t_len - 1) * s_len + s_len - 1];
    if s_len > 1 {
        total = log_add(total, a[(t_len - 1) * s_len + s_len - 2]);
    }
    Ok(-total)
}

/// Loss and its gradient w.r.t. every log-probability entry. Infinite losses get a zero gradient.
pub fn ctc_loss_and_grad(log_probs: &[f64], v: usize, targets: &[u32]) -> Result<(f64, Vec<f64>)> {
    let t_len = check(log_probs, v, targets)?;
    let loss = ctc_loss_value(log_probs, v, targets)?;
    let mut grad = vec![0.0; log_probs.len()];
    if !loss.is_finite() {
        return Ok((loss, grad));
    }
    let ext = extended(targets);
    let s_len = ext.len();
    let a = alphas(log_probs, v, t_len, &ext);
    let b = betas(log_probs, v, t_len, &ext);
    let mut occupancy = vec![f64::NEG_INFINITY; v];
    for t in 0..t_len {
        occupancy.iter_mut().for_each(|o| *o = f64::NEG_INFINITY);
        for s in 0..s_len {
            let k = ext[s] as usize;
            occupancy[k] = log_add(occupancy[k], a[t * s_len + s] + b[t * s_len + s]);
        }
        for k in 0..v {
            if occupancy[k] > f64::NEG_INFINITY {
                grad[t * v + k] = -(occupancy[k] - log_probs[t * v + k] + loss).exp();
            }
        }
    }
    Ok((loss, grad))
}

struct CtcOp {
    targets: Vec<u32>,
}

impl CustomOp1 for CtcOp {
    fn name(&self) -> &'static str {
        "ctc-loss"
    }

    fn cpu_fwd(&self, storage: &CpuStorage, layout: &Layout) -> candle_core::Result<(CpuStorage, Shape)> {
        let (_t, v) = layout.shape().dims2()?;
        let values: Vec<f64> = match storage {
            CpuStorage::F64(d) => gather(d, layout)?,
            CpuStorage::F32(d) => gather(d, layout)?.into_iter().map(|x: f32| x as f64).collect(),
            _ => candle_core::bail!("ctc-loss supports f32/f64 only"),
        };
        let loss = ctc_loss_value(&values, v, &self.targets).map_err(|e| candle_core::Error::Msg(e.to_string()))?;
        let out = match storage {
            CpuStorage::F64(_) => CpuStorage::F64(vec![loss]),
            _ => CpuStorage::F32(vec![loss as f32]),
        };
        Ok((out, Shape::from(())))
    }

    fn bwd(&self, arg: &Tensor, _res: &Tensor, grad_res: &Tensor) -> candle_core::Result<Option<Tensor>> {
        let (t, v) = arg.dims2()?;
        let values: Vec<f64> = arg.to_dtype(DType::F64)?.flatten_all()?.to_vec1()?;
        let (_, grad) = ctc_loss_and_grad(&values, v, &self.targets).map_err(|e| candle_core::Error::Msg(e.to_string()))?;
        let g = Tensor::from_vec(grad, (t, v), arg.device())?.to_dtype(arg.dtype())?;
        Ok(Some(g.broadcast_mul(grad_res)?))
    }
}

fn gather<T: Copy>(data: &[T], layout: &Layout) -> candle_core::Result<Vec<T>> {
    match layout.contiguous_offsets() {
        Some((a, b)) => Ok(data[a..b].to_vec()),
        None => candle_core::bail!("ctc-loss needs a contiguous input"),
    }
}

/// Differentiable CTC loss on `[T, V]` log-probabilities (scalar output).
pub fn ctc_loss(log_probs: &Tensor, targets: &[u32]) -> Result<Tensor> {
    if log_probs.rank() != 2 {
        return Err(Error::Shape(format!("ctc expects [T, V], got {:?}", log_probs.dims())));
    }
    Ok(log_probs.contiguous()?.apply_op1(CtcOp { targets: targets.to_vec() })?)
}
