//! Speaker identity: the trainable adapter, a GE2E recurrent encoder, cosine
//! scoring, projection into model space, and embedding files.

mod adapter;
mod ge2e;

use std::io::{BufRead, Write};
use std::path::Path;

use candle_core::Tensor;
use serde::{Deserialize, Serialize};

pub use adapter::{AdapterConfig, SpeakerAdapter};
pub use ge2e::{equal_error_rate, ge2e_loss, ge2e_scale_bias, l2_normalize, Ge2eConfig, Ge2eEncoder};

use crate::error::{Error, Result};
use crate::nnet::{Linear, ParamStore};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmbeddingSource {
    Adapter,
    Ge2e,
    External,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpeakerEmbedding {
    pub vector: Vec<f32>,
    pub source: EmbeddingSource,
}

impl SpeakerEmbedding {
    pub fn new(vector: Vec<f32>, source: EmbeddingSource) -> Result<Self> {
        if vector.is_empty() || vector.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("speaker embedding must be non-empty and finite".into()));
        }
        if vector.iter().all(|&v| v == 0.0) {
            return Err(Error::InvalidInput("speaker embedding has zero norm".into()));
        }
        Ok(Self { vector, source })
    }

    /// Splits a `[B, D]` tensor into embeddings.
    pub fn from_rows(t: &Tensor, source: EmbeddingSource) -> Result<Vec<Self>> {
        let rows = t.to_dtype(candle_core::DType::F32)?.to_vec2::<f32>()?;
        rows.into_iter().map(|r| Self::new(r, source)).collect()
    }

    pub fn dim(&self) -> usize {
        self.vector.len()
    }
}

/// Cosine similarity in `[-1, 1]`, computed in f64.
pub fn cosine(a: &[f32], b: &[f32]) -> Result<f64> {
    if a.len() != b.len() || a.is_empty() {
        return Err(Error::Shape(format!("cosine of vectors with dims {} and {}", a.len(), b.len())));
    }
    let (mut ab, mut aa, mut bb) = (0f64, 0f64, 0f64);
    for (&x, &y) in a.iter().zip(b) {
        let (x, y) = (x as f64, y as f64);
        ab += x * y;
        aa += x * x;
        bb += y * y;
    }
    if aa == 0.0 || bb == 0.0 {
        return Err(Error::InvalidInput("cosine of a zero vector".into()));
    }
    Ok((ab / (aa.sqrt() * bb.sqrt())).clamp(-1.0, 1.0))
}

/// Single affine map from embedding space to the model hidden size.
#[derive(Debug, Clone)]
pub struct SpeakerProjection {
    pub linear: Linear,
}

impl SpeakerProjection {
    pub fn new(ps: &mut ParamStore, name: &str, embed_dim: usize, hidden: usize) -> Result<Self> {
        Ok(Self { linear: Linear::new(ps, name, embed_dim, hidden)? })
    }

    /// `[B, D] -> [B, hidden]` (or `[D] -> [hidden]`).
    pub fn forward(&self, e: &Tensor) -> Result<Tensor> {
        self.linear.forward(e)
    }
}

/// Writes `id v1 v2 ...` lines.
pub fn write_embedding_file(rows: &[(String, SpeakerEmbedding)], path: &Path) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    for (id, e) in rows {
        write!(f, "{id}")?;
        for v in &e.vector {
            write!(f, " {v}")?;
        }
        writeln!(f)?;
    }
    f.flush()?;
    Ok(())
}

/// Reads `id v1 v2 ...` lines (e.g. produced by an external speaker toolkit).
pub fn read_embedding_file(path: &Path, source: EmbeddingSource) -> Result<Vec<(String, SpeakerEmbedding)>> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let f = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut out = Vec::new();
    let mut dim = None;
    for (i, line) in f.lines().enumerate() {
        let line = line?;
        let parse_err = |msg: String| Error::Parse { path: path.to_path_buf(), line: i + 1, msg };
        let mut parts = line.split_whitespace();
        let Some(id) = parts.next() else { continue };
        let vector = parts.map(|p| p.parse::<f32>()).collect::<std::result::Result<Vec<_>, _>>().map_err(|e| parse_err(e.to_string()))?;
        if *dim.get_or_insert(vector.len()) != vector.len() {
            return Err(parse_err(format!("expected {} values, found {}", dim.unwrap_or(0), vector.len())));
        }
        let e = SpeakerEmbedding::new(vector, source).map_err(|e| parse_err(e.to_string()))?;
        out.push((id.to_string(), e));
    }
    Ok(out)
}
