use candle_core::{DType, Device, Tensor};

use crate::error::{Error, Result};

/// Pads row-major `[T_i x dim]` sequences with zeros into `[B, T_max, dim]`.
pub fn pad_frames(seqs: &[&[f32]], dim: usize, dtype: DType, device: &Device) -> Result<(Tensor, Vec<usize>)> {
    if seqs.is_empty() || dim == 0 {
        return Err(Error::Shape("pad_frames: empty batch".into()));
    }
    let mut lengths = Vec::with_capacity(seqs.len());
    for s in seqs {
        if s.len() % dim != 0 {
            return Err(Error::Shape(format!("pad_frames: {} values not a multiple of {dim}", s.len())));
        }
        lengths.push(s.len() / dim);
    }
    let t_max = lengths.iter().copied().max().unwrap_or(0).max(1);
    let mut out = vec![0f32; seqs.len() * t_max * dim];
    for (b, s) in seqs.iter().enumerate() {
        out[b * t_max * dim..b * t_max * dim + s.len()].copy_from_slice(s);
    }
    let t = Tensor::from_vec(out, (seqs.len(), t_max, dim), device)?.to_dtype(dtype)?;
    Ok((t, lengths))
}

/// Pads id sequences with `pad` into a `[B, T_max]` u32 tensor.
pub fn pad_ids(seqs: &[&[u32]], pad: u32, device: &Device) -> Result<(Tensor, Vec<usize>)> {
    if seqs.is_empty() {
        return Err(Error::Shape("pad_ids: empty batch".into()));
    }
    let lengths: Vec<usize> = seqs.iter().map(|s| s.len()).collect();
    let t_max = lengths.iter().copied().max().unwrap_or(0).max(1);
    let mut out = vec![pad; seqs.len() * t_max];
    for (b, s) in seqs.iter().enumerate() {
        out[b * t_max..b * t_max + s.len()].copy_from_slice(s);
    }
    Ok((Tensor::from_vec(out, (seqs.len(), t_max), device)?, lengths))
}
