use super::Waveform;
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct F0Config {
    pub frame_seconds: f64,
    pub hop_seconds: f64,
    pub fmin: f64,
    pub fmax: f64,
    /// Minimum normalized autocorrelation for a frame to count as voiced.
    pub voicing_threshold: f64,
}

impl Default for F0Config {
    fn default() -> Self {
        Self { frame_seconds: 0.040, hop_seconds: 0.020, fmin: 60.0, fmax: 400.0, voicing_threshold: 0.5 }
    }
}

/// Frame-wise F0 by normalized autocorrelation with parabolic peak interpolation.
///
/// Returns one entry per hop (`ceil(len / hop)`, frame `t` centered on `t * hop`);
/// `None` marks unvoiced frames.
pub fn f0_autocorr(w: &Waveform, cfg: &F0Config) -> Result<Vec<Option<f64>>> {
    let rate = w.rate as f64;
    if !(cfg.fmin > 0.0 && cfg.fmin < cfg.fmax && cfg.fmax < rate / 2.0) {
        return Err(Error::InvalidConfig(format!(
            "need 0 < fmin < fmax < rate/2, got fmin={} fmax={} rate={rate}",
            cfg.fmin, cfg.fmax
        )));
    }
    if cfg.frame_seconds < 2.0 / cfg.fmin {
        return Err(Error::InvalidConfig(format!(
            "frame of {} s is shorter than two periods of fmin ({} s)",
            cfg.frame_seconds,
            2.0 / cfg.fmin
        )));
    }
    let frame = (cfg.frame_seconds * rate).round() as usize;
    let hop = ((cfg.hop_seconds * rate).round() as usize).max(1);
    let min_lag = (rate / cfg.fmax).floor().max(1.0) as usize;
    let max_lag = (rate / cfg.fmin).ceil() as usize;
    let n = w.samples.len();
    let n_frames = n.div_ceil(hop);

    let mut out = Vec::with_capacity(n_frames);
    let mut buf = vec![0.0f64; frame];
    for t in 0..n_frames {
        let start = (t * hop) as isize - (frame / 2) as isize;
        for (i, b) in buf.iter_mut().enumerate() {
            let j = start + i as isize;
            *b = if j >= 0 && (j as usize) < n { w.samples[j as usize] as f64 } else { 0.0 };
        }
        let mean = buf.iter().sum::<f64>() / frame as f64;
        buf.iter_mut().for_each(|b| *b -= mean);
        out.push(frame_f0(&buf, min_lag, max_lag.min(frame - 2), rate, cfg.voicing_threshold));
    }
    Ok(out)
}

fn frame_f0(x: &[f64], min_lag: usize, max_lag: usize, rate: f64, threshold: f64) -> Option<f64> {
    let energy: f64 = x.iter().map(|v| v * v).sum();
    if energy < 1e-8 * x.len() as f64 || min_lag >= max_lag {
        return None;
    }
    // Normalized cross-correlation between the frame and its lagged copy.
    let ncc = |lag: usize| -> f64 {
        let (a, b) = (&x[..x.len() - lag], &x[lag..]);
        let dot: f64 = a.iter().zip(b).map(|(p, q)| p * q).sum();
        let ea: f64 = a.iter().map(|v| v * v).sum();
        let eb: f64 = b.iter().map(|v| v * v).sum();
        if ea <= 0.0 || eb <= 0.0 {
            0.0
        } else {
            dot / (ea * eb).sqrt()
        }
    };
    let r: Vec<f64> = (min_lag - 1..=max_lag + 1).map(ncc).collect();
    let at = |lag: usize| r[lag + 1 - min_lag];
    let best = (min_lag..=max_lag).map(at).fold(f64::MIN, f64::max);
    if best < threshold {
        return None;
    }
    // Smallest local peak close to the global best, which suppresses sub-octave picks.
    let lag = (min_lag..=max_lag)
        .find(|&l| at(l) >= 0.9 * best && at(l) >= at(l - 1) && at(l) >= at(l + 1))?;
    let (a, b, c) = (at(lag - 1), at(lag), at(lag + 1));
    let denom = a - 2.0 * b + c;
    let shift = if denom.abs() > 1e-12 { (0.5 * (a - c) / denom).clamp(-0.5, 0.5) } else { 0.0 };
    Some(rate / (lag as f64 + shift))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn median(mut v: Vec<f64>) -> f64 {
        v.sort_by(|a, b| a.partial_cmp(b).unwrap());
        v[v.len() / 2]
    }

    #[test]
    fn sawtooth_200hz() {
        let samples = (0..16000).map(|i| (((i as f64 * 200.0 / 16000.0) % 1.0) * 2.0 - 1.0) as f32 * 0.5).collect();
        let f0 = f0_autocorr(&Waveform::new(samples, 16000).unwrap(), &F0Config::default()).unwrap();
        assert_eq!(f0.len(), 50);
        let voiced: Vec<f64> = f0.into_iter().flatten().collect();
        assert!(voiced.len() > 40);
        let med = median(voiced);
        assert!((med - 200.0).abs() <= 3.0, "median {med}");
    }

    #[test]
    fn white_noise_mostly_unvoiced() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let samples = (0..16000).map(|_| rng.random_range(-0.5f32..0.5)).collect();
        let f0 = f0_autocorr(&Waveform::new(samples, 16000).unwrap(), &F0Config::default()).unwrap();
        let unvoiced = f0.iter().filter(|v| v.is_none()).count();
        assert!(unvoiced as f64 >= 0.8 * f0.len() as f64, "{unvoiced}/{}", f0.len());
    }

    #[test]
    fn silence_unvoiced() {
        let f0 = f0_autocorr(&Waveform::new(vec![0.0; 8000], 16000).unwrap(), &F0Config::default()).unwrap();
        assert!(f0.iter().all(Option::is_none));
    }

    #[test]
    fn short_frame_rejected() {
        let cfg = F0Config { frame_seconds: 0.02, ..F0Config::default() };
        let w = Waveform::new(vec![0.0; 100], 16000).unwrap();
        assert!(matches!(f0_autocorr(&w, &cfg), Err(Error::InvalidConfig(_))));
    }
}
