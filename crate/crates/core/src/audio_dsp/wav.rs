use std::path::Path;

use crate::error::{invalid, Error, Result};

/// Mono audio with samples nominally in `[-1, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    pub samples: Vec<f32>,
    pub rate: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f32>, rate: u32) -> Result<Self> {
        let w = Self { samples, rate };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<()> {
        if self.rate == 0 {
            return invalid("sample rate must be positive");
        }
        if let Some(i) = self.samples.iter().position(|s| !s.is_finite()) {
            return invalid(format!("non-finite sample at index {i}"));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_seconds(&self) -> f64 {
        self.samples.len() as f64 / self.rate as f64
    }

    pub fn rms(&self) -> f64 {
        if self.samples.is_empty() {
            return 0.0;
        }
        let sum: f64 = self.samples.iter().map(|&s| (s as f64) * (s as f64)).sum();
        (sum / self.samples.len() as f64).sqrt()
    }
}

/// Writes 16-bit PCM mono.
pub fn write_wav(path: impl AsRef<Path>, w: &Waveform) -> Result<()> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: w.rate,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    if let Some(dir) = path.as_ref().parent() {
        std::fs::create_dir_all(dir)?;
    }
    let mut writer = hound::WavWriter::create(path, spec)?;
    for &s in &w.samples {
        let q = (s.clamp(-1.0, 1.0) * i16::MAX as f32).round() as i16;
        writer.write_sample(q)?;
    }
    writer.finalize()?;
    Ok(())
}

/// Reads a PCM or float WAV file; multi-channel input is averaged to mono.
pub fn read_wav(path: impl AsRef<Path>) -> Result<Waveform> {
    let path = path.as_ref();
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let mut reader = hound::WavReader::open(path)?;
    let spec = reader.spec();
    let channels = spec.channels.max(1) as usize;
    let interleaved: Vec<f32> = match spec.sample_format {
        hound::SampleFormat::Int => {
            let scale = (1i64 << (spec.bits_per_sample - 1)) as f32;
            reader
                .samples::<i32>()
                .map(|s| s.map(|v| v as f32 / scale))
                .collect::<std::result::Result<_, _>>()?
        }
        hound::SampleFormat::Float => reader.samples::<f32>().collect::<std::result::Result<_, _>>()?,
    };
    let samples = interleaved
        .chunks(channels)
        .map(|c| c.iter().sum::<f32>() / channels as f32)
        .collect();
    Waveform::new(samples, spec.sample_rate)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn wav_round_trip_quantizes_to_16_bit() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.wav");
        let w = Waveform::new(vec![0.0, 0.5, -0.5, 1.0, -1.0], 16000).unwrap();
        write_wav(&path, &w).unwrap();
        let r = read_wav(&path).unwrap();
        assert_eq!(r.rate, 16000);
        for (a, b) in w.samples.iter().zip(&r.samples) {
            assert!((a - b).abs() < 1.0 / 16000.0);
        }
    }

    #[test]
    fn rejects_non_finite() {
        assert!(Waveform::new(vec![0.0, f32::NAN], 16000).is_err());
        assert!(Waveform::new(vec![0.0], 0).is_err());
    }

    #[test]
    fn missing_file_is_reported() {
        let err = read_wav("/nonexistent/x.wav").unwrap_err();
        assert_eq!(err.category(), "missing-file");
    }
}
