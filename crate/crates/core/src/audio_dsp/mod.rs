//! Waveform I/O, log-mel analysis, Griffin-Lim inversion and autocorrelation pitch.
//!
//! Every function here is pure: identical inputs give bit-identical outputs.

mod griffin_lim;
mod mel;
mod pitch;
mod plot;
mod wav;

pub use griffin_lim::{griffin_lim, griffin_lim_with, GriffinLimConfig};
pub use mel::{
    hz_to_mel, mel_spectrogram, mel_to_hz, read_mel_file, write_mel_file, MelConfig, MelFilterbank, MelSpectrogram,
};
pub use pitch::{f0_autocorr, F0Config};
pub use plot::{mel_channel_of, render_mel, save_mel_png};
pub use wav::{read_wav, write_wav, Waveform};

/// Index into `0..n` with mirror reflection at both ends (no edge repeat).
///
/// Folds indices of any magnitude, so padding wider than the signal is well defined.
pub(crate) fn reflect_index(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let mut j = i.rem_euclid(period);
    if j >= n as isize {
        j = period - j;
    }
    j as usize
}

/// Periodic Hann window of length `win`, zero-padded and centered in `n_fft`.
pub(crate) fn padded_hann(win: usize, n_fft: usize) -> Vec<f64> {
    let mut out = vec![0.0; n_fft];
    let offset = (n_fft - win) / 2;
    for i in 0..win {
        let phase = 2.0 * std::f64::consts::PI * i as f64 / win as f64;
        out[offset + i] = 0.5 - 0.5 * phase.cos();
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reflect_folds_like_numpy_reflect() {
        let n = 4;
        let got: Vec<usize> = (-5..9).map(|i| reflect_index(i, n)).collect();
        // numpy.pad(range(4), 5, mode="reflect") on the left, then continues
        assert_eq!(got, vec![1, 2, 3, 2, 1, 0, 1, 2, 3, 2, 1, 0, 1, 2]);
        assert_eq!(reflect_index(-100, 1), 0);
    }

    #[test]
    fn hann_is_centered() {
        let w = padded_hann(4, 8);
        assert_eq!(w[0], 0.0);
        assert_eq!(w[1], 0.0);
        assert_eq!(w[2], 0.0);
        assert!((w[4] - 1.0).abs() < 1e-12);
    }
}
