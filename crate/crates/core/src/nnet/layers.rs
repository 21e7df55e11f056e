use candle_core::{DType, Device, IndexOp, Tensor, D};

use super::params::{Init, ParamStore};
use crate::error::{Error, Result};

/// `y = x W^T + b` over the last dimension.
#[derive(Debug, Clone)]
pub struct Linear {
    pub weight: Tensor,
    pub bias: Option<Tensor>,
}

impl Linear {
    pub fn new(ps: &mut ParamStore, name: &str, d_in: usize, d_out: usize) -> Result<Self> {
        let bound = 1.0 / (d_in as f64).sqrt();
        let weight = ps.get(&format!("{name}.w"), &[d_out, d_in], Init::Uniform(bound))?;
        let bias = Some(ps.get(&format!("{name}.b"), &[d_out], Init::Uniform(bound))?);
        Ok(Self { weight, bias })
    }

    pub fn no_bias(ps: &mut ParamStore, name: &str, d_in: usize, d_out: usize) -> Result<Self> {
        let bound = 1.0 / (d_in as f64).sqrt();
        let weight = ps.get(&format!("{name}.w"), &[d_out, d_in], Init::Uniform(bound))?;
        Ok(Self { weight, bias: None })
    }

    pub fn d_in(&self) -> usize {
        self.weight.dims()[1]
    }

    pub fn d_out(&self) -> usize {
        self.weight.dims()[0]
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let d = x.dim(D::Minus1)?;
        if d != self.d_in() {
            return Err(Error::Shape(format!("linear expects last dim {}, got {:?}", self.d_in(), x.dims())));
        }
        let wt = self.weight.t()?;
        let y = match x.rank() {
            1 => x.unsqueeze(0)?.matmul(&wt)?.squeeze(0)?,
            2 => x.matmul(&wt)?,
            _ => x.broadcast_matmul(&wt)?,
        };
        Ok(match &self.bias {
            Some(b) => y.broadcast_add(b)?,
            None => y,
        })
    }
}

/// Layer normalisation over the last dimension, built from differentiable primitives.
#[derive(Debug, Clone)]
pub struct LayerNorm {
    pub gamma: Tensor,
    pub beta: Tensor,
    eps: f64,
}

impl LayerNorm {
    pub fn new(ps: &mut ParamStore, name: &str, dim: usize) -> Result<Self> {
        Ok(Self {
            gamma: ps.get(&format!("{name}.g"), &[dim], Init::Const(1.0))?,
            beta: ps.get(&format!("{name}.b"), &[dim], Init::Const(0.0))?,
            eps: 1e-5,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let mean = x.mean_keepdim(D::Minus1)?;
        let centered = x.broadcast_sub(&mean)?;
        let var = centered.sqr()?.mean_keepdim(D::Minus1)?;
        let normed = centered.broadcast_div(&(var + self.eps)?.sqrt()?)?;
        Ok(normed.broadcast_mul(&self.gamma)?.broadcast_add(&self.beta)?)
    }
}

#[derive(Debug, Clone)]
pub struct Embedding {
    pub table: Tensor,
}

impl Embedding {
    pub fn new(ps: &mut ParamStore, name: &str, n: usize, dim: usize) -> Result<Self> {
        Ok(Self { table: ps.get(&format!("{name}.table"), &[n, dim], Init::Normal((dim as f64).powf(-0.5)))? })
    }

    pub fn len(&self) -> usize {
        self.table.dims()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// `ids` of any shape; output appends the embedding dimension.
    pub fn forward(&self, ids: &Tensor) -> Result<Tensor> {
        let mut out_dims = ids.dims().to_vec();
        out_dims.push(self.table.dim(1)?);
        let flat = ids.flatten_all()?;
        Ok(self.table.index_select(&flat, 0)?.reshape(out_dims)?)
    }
}

/// Dense 1-D convolution on `[B, C, T]` with "same" zero padding (odd kernels).
#[derive(Debug, Clone)]
pub struct Conv1d {
    pub weight: Tensor,
    pub bias: Tensor,
    pub dilation: usize,
}

impl Conv1d {
    pub fn new(ps: &mut ParamStore, name: &str, c_in: usize, c_out: usize, kernel: usize, dilation: usize) -> Result<Self> {
        if kernel % 2 == 0 {
            return Err(Error::InvalidConfig(format!("{name}: kernel {kernel} must be odd")));
        }
        let bound = 1.0 / ((c_in * kernel) as f64).sqrt();
        Ok(Self {
            weight: ps.get(&format!("{name}.w"), &[c_out, c_in, kernel], Init::Uniform(bound))?,
            bias: ps.get(&format!("{name}.b"), &[c_out], Init::Uniform(bound))?,
            dilation,
        })
    }

    pub fn kernel(&self) -> usize {
        self.weight.dims()[2]
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let pad = (self.kernel() - 1) / 2 * self.dilation;
        let y = x.conv1d(&self.weight, pad, 1, self.dilation, 1)?;
        Ok(y.broadcast_add(&self.bias.reshape((1, (), 1))?)?)
    }
}

/// Per-channel 1-D convolution on `[B, T, C]` (time-major), "same" zero padding.
///
/// Written as a sum of shifted slices so that it stays differentiable.
#[derive(Debug, Clone)]
pub struct DepthwiseConv1d {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl DepthwiseConv1d {
    pub fn new(ps: &mut ParamStore, name: &str, channels: usize, kernel: usize) -> Result<Self> {
        if kernel % 2 == 0 {
            return Err(Error::InvalidConfig(format!("{name}: kernel {kernel} must be odd")));
        }
        let bound = 1.0 / (kernel as f64).sqrt();
        Ok(Self {
            weight: ps.get(&format!("{name}.w"), &[kernel, channels], Init::Uniform(bound))?,
            bias: ps.get(&format!("{name}.b"), &[channels], Init::Uniform(bound))?,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let (_b, t, _c) = x.dims3()?;
        let k = self.weight.dim(0)?;
        let half = (k - 1) / 2;
        let padded = x.pad_with_zeros(1, half, half)?;
        let mut acc: Option<Tensor> = None;
        for i in 0..k {
            let term = padded.narrow(1, i, t)?.broadcast_mul(&self.weight.i(i)?)?;
            acc = Some(match acc {
                Some(a) => (a + term)?,
                None => term,
            });
        }
        Ok(acc.expect("kernel >= 1").broadcast_add(&self.bias)?)
    }
}

/// Parameter-free sinusoidal position table `[len, dim]`.
pub fn sinusoidal_positions(len: usize, dim: usize, dtype: DType, device: &Device) -> Result<Tensor> {
    let mut v = vec![0.0f64; len * dim];
    let half = dim / 2;
    for p in 0..len {
        for i in 0..half {
            let rate = 10000f64.powf(-(i as f64) / half.max(1) as f64);
            v[p * dim + i] = (p as f64 * rate).sin();
            v[p * dim + half + i] = (p as f64 * rate).cos();
        }
    }
    Ok(Tensor::from_vec(v, (len, dim), device)?.to_dtype(dtype)?)
}

/// `[B, T]` validity mask (1 for real positions, 0 for padding) from lengths.
pub fn length_mask(lengths: &[usize], max_len: usize, dtype: DType, device: &Device) -> Result<Tensor> {
    let mut v = vec![0.0f64; lengths.len() * max_len];
    for (b, &l) in lengths.iter().enumerate() {
        for t in 0..l.min(max_len) {
            v[b * max_len + t] = 1.0;
        }
    }
    Ok(Tensor::from_vec(v, (lengths.len(), max_len), device)?.to_dtype(dtype)?)
}

pub(crate) const MASK_VALUE: f64 = -1e9;

/// Additive attention bias `[B, 1, 1, Tk]` hiding padded keys.
pub fn key_padding_bias(lengths: &[usize], tk: usize, dtype: DType, device: &Device) -> Result<Tensor> {
    let mut v = vec![0.0f64; lengths.len() * tk];
    for (b, &l) in lengths.iter().enumerate() {
        for t in l.min(tk)..tk {
            v[b * tk + t] = MASK_VALUE;
        }
    }
    Ok(Tensor::from_vec(v, (lengths.len(), 1, 1, tk), device)?.to_dtype(dtype)?)
}

/// Additive causal bias `[1, 1, T, T]`: position `i` sees keys `0..=i`.
pub fn causal_bias(t: usize, dtype: DType, device: &Device) -> Result<Tensor> {
    let v: Vec<f64> = (0..t * t).map(|idx| if idx % t > idx / t { MASK_VALUE } else { 0.0 }).collect();
    Ok(Tensor::from_vec(v, (1, 1, t, t), device)?.to_dtype(dtype)?)
}

pub fn relu(x: &Tensor) -> Result<Tensor> {
    Ok(x.relu()?)
}

pub fn silu(x: &Tensor) -> Result<Tensor> {
    Ok(x.silu()?)
}

pub fn sigmoid(x: &Tensor) -> Result<Tensor> {
    Ok(candle_nn::ops::sigmoid(x)?)
}

pub fn log_softmax(x: &Tensor) -> Result<Tensor> {
    Ok(candle_nn::ops::log_softmax(x, D::Minus1)?)
}

pub fn softmax(x: &Tensor) -> Result<Tensor> {
    Ok(candle_nn::ops::softmax(x, D::Minus1)?)
}

/// Splits the last dimension in two halves `a, b` and returns `a * sigmoid(b)`.
pub fn glu(x: &Tensor) -> Result<Tensor> {
    let d = x.dim(D::Minus1)?;
    let a = x.narrow(D::Minus1, 0, d / 2)?;
    let b = x.narrow(D::Minus1, d / 2, d / 2)?;
    Ok(a.mul(&sigmoid(&b)?)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_shapes() {
        let mut ps = ParamStore::new(DType::F64, 0);
        let l = Linear::new(&mut ps, "x.l", 4, 3).unwrap();
        let x = Tensor::zeros((2, 5, 4), DType::F64, &Device::Cpu).unwrap();
        assert_eq!(l.forward(&x).unwrap().dims(), &[2, 5, 3]);
        let v = Tensor::zeros(4, DType::F64, &Device::Cpu).unwrap();
        assert_eq!(l.forward(&v).unwrap().dims(), &[3]);
        let bad = Tensor::zeros((2, 5), DType::F64, &Device::Cpu).unwrap();
        assert!(matches!(l.forward(&bad), Err(Error::Shape(_))));
    }

    #[test]
    fn depthwise_matches_direct_sum() {
        let mut ps = ParamStore::new(DType::F64, 1);
        let conv = DepthwiseConv1d::new(&mut ps, "x.dw", 2, 3).unwrap();
        let data: Vec<f64> = (0..10).map(|i| i as f64 * 0.3 - 1.0).collect();
        let x = Tensor::from_vec(data.clone(), (1, 5, 2), &Device::Cpu).unwrap();
        let y = conv.forward(&x).unwrap().to_vec3::<f64>().unwrap();
        let w = conv.weight.to_vec2::<f64>().unwrap();
        let b = conv.bias.to_vec1::<f64>().unwrap();
        for t in 0..5 {
            for c in 0..2 {
                let mut want = b[c];
                for k in 0..3 {
                    let src = t as isize + k as isize - 1;
                    if (0..5).contains(&src) {
                        want += w[k][c] * data[src as usize * 2 + c];
                    }
                }
                assert!((y[0][t][c] - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn layer_norm_normalises() {
        let mut ps = ParamStore::new(DType::F64, 0);
        let ln = LayerNorm::new(&mut ps, "x.ln", 4).unwrap();
        let x = Tensor::new(&[[1.0f64, 2.0, 3.0, 10.0]], &Device::Cpu).unwrap();
        let y = ln.forward(&x).unwrap().to_vec2::<f64>().unwrap();
        let mean: f64 = y[0].iter().sum::<f64>() / 4.0;
        let var: f64 = y[0].iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 4.0;
        assert!(mean.abs() < 1e-12);
        assert!((var - 1.0).abs() < 1e-4);
    }

    #[test]
    fn causal_bias_layout() {
        let b = causal_bias(3, DType::F64, &Device::Cpu).unwrap().squeeze(0).unwrap().squeeze(0).unwrap();
        let v = b.to_vec2::<f64>().unwrap();
        assert_eq!(v[0][1], MASK_VALUE);
        assert_eq!(v[1][0], 0.0);
        assert_eq!(v[2][2], 0.0);
    }
}
