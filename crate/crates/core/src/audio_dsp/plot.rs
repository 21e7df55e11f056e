use std::path::Path;

use image::{Rgb, RgbImage};

use super::{hz_to_mel, MelConfig, MelSpectrogram};
use crate::error::{Error, Result};

/// Pixels per frame and per mel channel.
pub const CELL: u32 = 3;

const STOPS: [[f64; 3]; 5] = [
    [0.0, 0.0, 4.0],
    [81.0, 18.0, 124.0],
    [183.0, 55.0, 121.0],
    [252.0, 137.0, 97.0],
    [252.0, 253.0, 191.0],
];

fn colormap(v: f64) -> Rgb<u8> {
    let x = v.clamp(0.0, 1.0) * (STOPS.len() - 1) as f64;
    let i = (x.floor() as usize).min(STOPS.len() - 2);
    let f = x - i as f64;
    let c = |k: usize| (STOPS[i][k] + f * (STOPS[i + 1][k] - STOPS[i][k])).round() as u8;
    Rgb([c(0), c(1), c(2)])
}

/// Fractional mel-channel index whose filter peaks at `hz`.
pub fn mel_channel_of(hz: f64, cfg: &MelConfig) -> f64 {
    let (lo, hi) = (hz_to_mel(cfg.fmin), hz_to_mel(cfg.fmax));
    (hz_to_mel(hz) - lo) / (hi - lo) * (cfg.n_mels + 1) as f64 - 1.0
}

/// Mel image, low frequencies at the bottom, with an optional F0 track drawn in cyan.
///
/// `f0` has one entry per mel frame (extra entries are ignored); unvoiced frames break the line.
pub fn render_mel(m: &MelSpectrogram, cfg: &MelConfig, f0: Option<&[Option<f64>]>) -> Result<RgbImage> {
    if m.n_frames == 0 || m.n_mels != cfg.n_mels {
        return Err(Error::InvalidInput(format!("cannot plot {} frames of {} channels with n_mels {}", m.n_frames, m.n_mels, cfg.n_mels)));
    }
    let (w, h) = (m.n_frames as u32 * CELL, m.n_mels as u32 * CELL);
    let (lo, hi) = m.data.iter().fold((f32::INFINITY, f32::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    let span = (hi - lo).max(1e-6) as f64;
    let mut img = RgbImage::new(w, h);
    for (x, y, px) in img.enumerate_pixels_mut() {
        let (t, c) = ((x / CELL) as usize, m.n_mels - 1 - (y / CELL) as usize);
        *px = colormap((m.frame(t)[c] - lo) as f64 / span);
    }
    if let Some(f0) = f0 {
        let row = |hz: f64| {
            let c = mel_channel_of(hz, cfg).clamp(0.0, (m.n_mels - 1) as f64);
            h as f64 - 1.0 - (c + 0.5) * CELL as f64
        };
        let mut prev: Option<(f64, f64)> = None;
        for (t, v) in f0.iter().take(m.n_frames).enumerate() {
            let Some(hz) = *v else {
                prev = None;
                continue;
            };
            let p = ((t as f64 + 0.5) * CELL as f64, row(hz));
            let from = prev.unwrap_or(p);
            let steps = ((p.0 - from.0).abs().max((p.1 - from.1).abs()).ceil() as usize).max(1);
            for s in 0..=steps {
                let a = s as f64 / steps as f64;
                let (x, y) = (from.0 + a * (p.0 - from.0), from.1 + a * (p.1 - from.1));
                for dy in -1i64..=1 {
                    let yy = y.round() as i64 + dy;
                    if (0..h as i64).contains(&yy) && (x as u32) < w {
                        img.put_pixel(x as u32, yy as u32, Rgb([0, 255, 255]));
                    }
                }
            }
            prev = Some(p);
        }
    }
    Ok(img)
}

pub fn save_mel_png(path: impl AsRef<Path>, m: &MelSpectrogram, cfg: &MelConfig, f0: Option<&[Option<f64>]>) -> Result<()> {
    let path = path.as_ref();
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    render_mel(m, cfg, f0)?.save_with_format(path, image::ImageFormat::Png)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::audio_dsp::{mel_spectrogram, Waveform};

    #[test]
    fn channel_of_filter_peaks() {
        let cfg = MelConfig::default();
        let fb = crate::audio_dsp::MelFilterbank::new(&cfg);
        for (c, hz) in fb.center_frequencies().into_iter().enumerate() {
            assert!((mel_channel_of(hz, &cfg) - c as f64).abs() < 1e-9);
        }
    }

    #[test]
    fn image_size_and_track() {
        let cfg = MelConfig::default();
        let w = Waveform::new((0..8000).map(|i| (i as f32 * 0.05).sin()).collect(), 16000).unwrap();
        let m = mel_spectrogram(&w, &cfg).unwrap();
        let f0 = vec![Some(200.0); m.n_frames];
        let img = render_mel(&m, &cfg, Some(&f0)).unwrap();
        assert_eq!(img.dimensions(), (m.n_frames as u32 * CELL, 80 * CELL));
        let cyan = img.pixels().filter(|p| p.0 == [0, 255, 255]).count();
        assert!(cyan >= m.n_frames * CELL as usize);
        assert!(render_mel(&m, &MelConfig { n_mels: 40, ..cfg }, None).is_err());
    }
}
