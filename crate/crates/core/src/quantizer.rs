//! K-means codebooks over acoustic frames and frame-to-unit encoding.
//!
//! The default features are the 80-dim log-mel frames of [`crate::audio_dsp`];
//! any other frame features can be clustered as long as the `feature_tag` is
//! set consistently, and [`encode`] refuses features whose tag differs.

use std::io::{BufRead, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::audio_dsp::MelSpectrogram;
use crate::error::{invalid, Error, Result};

pub const LOG_MEL_TAG: &str = "logmel80";

/// Row-major frame matrix `[n x dim]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Frames<'a> {
    pub data: &'a [f32],
    pub dim: usize,
    pub tag: &'a str,
}

impl<'a> Frames<'a> {
    pub fn new(data: &'a [f32], dim: usize, tag: &'a str) -> Result<Self> {
        if dim == 0 || data.len() % dim != 0 {
            return Err(Error::Shape(format!("{} values do not form rows of width {dim}", data.len())));
        }
        Ok(Self { data, dim, tag })
    }

    pub fn from_mel(m: &'a MelSpectrogram) -> Self {
        Self { data: &m.data, dim: m.n_mels, tag: LOG_MEL_TAG }
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn row(&self, i: usize) -> &'a [f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Codebook {
    /// `[k x dim]`, row-major.
    pub centroids: Vec<f32>,
    pub k: usize,
    pub dim: usize,
    pub feature_tag: String,
}

impl Codebook {
    pub fn centroid(&self, i: usize) -> &[f32] {
        &self.centroids[i * self.dim..(i + 1) * self.dim]
    }

    /// Nearest centroid by squared Euclidean distance; ties go to the lowest index.
    pub fn nearest(&self, x: &[f32]) -> (usize, f64) {
        let mut best = (0, f64::INFINITY);
        for k in 0..self.k {
            let d = sq_dist(x, self.centroid(k));
            if d < best.1 {
                best = (k, d);
            }
        }
        best
    }

    /// Header `[u32 k][u32 dim][u32 tag_len][tag utf-8]`, then `k * dim` f32, little-endian.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut b = Vec::with_capacity(12 + self.feature_tag.len() + self.centroids.len() * 4);
        b.extend_from_slice(&(self.k as u32).to_le_bytes());
        b.extend_from_slice(&(self.dim as u32).to_le_bytes());
        b.extend_from_slice(&(self.feature_tag.len() as u32).to_le_bytes());
        b.extend_from_slice(self.feature_tag.as_bytes());
        for v in &self.centroids {
            b.extend_from_slice(&v.to_le_bytes());
        }
        if let Some(dir) = path.as_ref().parent() {
            std::fs::create_dir_all(dir)?;
        }
        std::fs::write(path, b)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        if !path.exists() {
            return Err(Error::MissingFile(path.to_path_buf()));
        }
        let b = std::fs::read(path)?;
        let u32_at = |o: usize| -> Result<usize> {
            b.get(o..o + 4)
                .map(|s| u32::from_le_bytes(s.try_into().unwrap()) as usize)
                .ok_or_else(|| Error::InvalidInput(format!("{}: truncated codebook header", path.display())))
        };
        let (k, dim, tag_len) = (u32_at(0)?, u32_at(4)?, u32_at(8)?);
        let tag_end = 12 + tag_len;
        let tag = b
            .get(12..tag_end)
            .and_then(|s| std::str::from_utf8(s).ok())
            .ok_or_else(|| Error::InvalidInput(format!("{}: bad feature tag", path.display())))?;
        if b.len() != tag_end + k * dim * 4 {
            return invalid(format!("{}: codebook body size mismatch", path.display()));
        }
        let centroids = b[tag_end..].chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
        Ok(Self { centroids, k, dim, feature_tag: tag.to_string() })
    }
}

/// Discrete content units, one per frame (never run-length reduced in the pipeline).
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct UnitSequence(pub Vec<u32>);

impl UnitSequence {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn validate(&self, k: usize) -> Result<()> {
        if let Some(u) = self.0.iter().find(|&&u| u as usize >= k) {
            return invalid(format!("unit {u} outside [0, {k})"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct KMeansConfig {
    pub k: usize,
    pub max_iters: usize,
    /// Stop once the relative inertia improvement falls below this.
    pub tol: f64,
    pub seed: u64,
}

impl Default for KMeansConfig {
    fn default() -> Self {
        Self { k: 100, max_iters: 50, tol: 1e-6, seed: 0 }
    }
}

#[derive(Debug, Clone)]
pub struct KMeansFit {
    pub codebook: Codebook,
    /// Inertia after each assignment step, in order.
    pub inertia: Vec<f64>,
    pub assignments: Vec<u32>,
}

fn sq_dist(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(&x, &y)| {
        let d = x as f64 - y as f64;
        d * d
    }).sum()
}

/// Lloyd's algorithm from a k-means++ start.
///
/// A cluster left empty after an update is re-seeded at the point farthest from
/// its current centroid. Sums run in index order, so results depend only on the seed.
pub fn fit_kmeans(frames: &Frames<'_>, cfg: &KMeansConfig) -> Result<KMeansFit> {
    let n = frames.len();
    let dim = frames.dim;
    if cfg.k < 2 {
        return invalid("k must be >= 2");
    }
    if n < cfg.k {
        return invalid(format!("need at least k={} frames, got {n}", cfg.k));
    }
    if frames.data.iter().any(|v| !v.is_finite()) {
        return invalid("non-finite frame value");
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut cb = Codebook { centroids: Vec::with_capacity(cfg.k * dim), k: 0, dim, feature_tag: frames.tag.to_string() };

    // k-means++ seeding
    let first = rng.random_range(0..n);
    cb.centroids.extend_from_slice(frames.row(first));
    cb.k = 1;
    let mut d2: Vec<f64> = (0..n).map(|i| sq_dist(frames.row(i), frames.row(first))).collect();
    while cb.k < cfg.k {
        let total: f64 = d2.iter().sum();
        let pick = if total <= 0.0 {
            // All remaining mass is zero: take the first point not yet a centroid.
            (0..n).find(|&i| (0..cb.k).all(|c| sq_dist(frames.row(i), cb.centroid(c)) > 0.0)).unwrap_or(0)
        } else {
            let mut target = rng.random_range(0.0..total);
            let mut chosen = n - 1;
            for (i, &w) in d2.iter().enumerate() {
                if target < w {
                    chosen = i;
                    break;
                }
                target -= w;
            }
            chosen
        };
        cb.centroids.extend_from_slice(frames.row(pick));
        let new = cb.k;
        cb.k += 1;
        for (i, d) in d2.iter_mut().enumerate() {
            *d = d.min(sq_dist(frames.row(i), cb.centroid(new)));
        }
    }

    let mut assign = vec![0u32; n];
    let mut dist = vec![0.0f64; n];
    let mut inertia = Vec::new();
    for iter in 0..cfg.max_iters.max(1) {
        let mut total = 0.0;
        for i in 0..n {
            let (k, d) = cb.nearest(frames.row(i));
            assign[i] = k as u32;
            dist[i] = d;
            total += d;
        }
        inertia.push(total);
        if iter > 0 {
            let prev = inertia[iter - 1];
            if prev <= 0.0 || (prev - total) / prev < cfg.tol {
                break;
            }
        }
        if iter + 1 == cfg.max_iters {
            break;
        }
        // Update step.
        let mut sums = vec![0.0f64; cfg.k * dim];
        let mut counts = vec![0usize; cfg.k];
        for i in 0..n {
            let k = assign[i] as usize;
            counts[k] += 1;
            for (s, &v) in sums[k * dim..(k + 1) * dim].iter_mut().zip(frames.row(i)) {
                *s += v as f64;
            }
        }
        let mut taken = vec![false; n];
        for k in 0..cfg.k {
            if counts[k] > 0 {
                for j in 0..dim {
                    cb.centroids[k * dim + j] = (sums[k * dim + j] / counts[k] as f64) as f32;
                }
            }
        }
        for k in 0..cfg.k {
            if counts[k] == 0 {
                let far = (0..n)
                    .filter(|&i| !taken[i])
                    .max_by(|&a, &b| dist[a].partial_cmp(&dist[b]).unwrap().then(b.cmp(&a)))
                    .expect("n >= k");
                taken[far] = true;
                dist[far] = 0.0;
                cb.centroids[k * dim..(k + 1) * dim].copy_from_slice(frames.row(far));
            }
        }
    }
    Ok(KMeansFit { codebook: cb, inertia, assignments: assign })
}

/// Nearest-centroid unit per frame.
pub fn encode(frames: &Frames<'_>, cb: &Codebook) -> Result<UnitSequence> {
    if frames.dim != cb.dim {
        return Err(Error::Shape(format!("frame dim {} but codebook dim {}", frames.dim, cb.dim)));
    }
    if frames.tag != cb.feature_tag {
        return invalid(format!("feature tag {:?} does not match codebook tag {:?}", frames.tag, cb.feature_tag));
    }
    Ok(UnitSequence((0..frames.len()).map(|t| cb.nearest(frames.row(t)).0 as u32).collect()))
}

/// Collapses maximal runs: `[5,5,5,2,2,9]` becomes `([5,2,9], [3,2,1])`.
pub fn run_length_collapse(u: &UnitSequence) -> (Vec<u32>, Vec<usize>) {
    let mut units = Vec::new();
    let mut durations: Vec<usize> = Vec::new();
    for &x in &u.0 {
        match units.last() {
            Some(&last) if last == x => *durations.last_mut().unwrap() += 1,
            _ => {
                units.push(x);
                durations.push(1);
            }
        }
    }
    (units, durations)
}

pub fn expand_runs(units: &[u32], durations: &[usize]) -> UnitSequence {
    UnitSequence(units.iter().zip(durations).flat_map(|(&u, &d)| std::iter::repeat_n(u, d)).collect())
}

/// One line per utterance: `id u1 u2 ...`.
pub fn write_unit_file(path: impl AsRef<Path>, rows: &[(String, UnitSequence)]) -> Result<()> {
    if let Some(dir) = path.as_ref().parent() {
        std::fs::create_dir_all(dir)?;
    }
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    for (id, units) in rows {
        write!(w, "{id}")?;
        for u in &units.0 {
            write!(w, " {u}")?;
        }
        writeln!(w)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_unit_file(path: impl AsRef<Path>) -> Result<Vec<(String, UnitSequence)>> {
    let path = path.as_ref();
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let mut out = Vec::new();
    for (i, line) in std::io::BufReader::new(std::fs::File::open(path)?).lines().enumerate() {
        let line = line?;
        let mut it = line.split_whitespace();
        let Some(id) = it.next() else { continue };
        let units = it
            .map(|t| t.parse::<u32>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::Parse { path: path.to_path_buf(), line: i + 1, msg: e.to_string() })?;
        out.push((id.to_string(), UnitSequence(units)));
    }
    Ok(out)
}
