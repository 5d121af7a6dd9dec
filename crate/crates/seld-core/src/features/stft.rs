//! Short-time Fourier transform: 1024-point periodic Hann, hop 600,
//! center-padded so the frame count is `ceil(L / hop)`.

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use std::sync::Arc;

pub const FFT_SIZE: usize = 1024;
pub const HOP: usize = 600;
pub const N_BINS: usize = FFT_SIZE / 2 + 1;

/// One channel's complex spectra, frame-major: `[n_frames][N_BINS]`.
pub type Spectrogram = Vec<Vec<Complex<f64>>>;

pub struct Stft {
    fft: Arc<dyn Fft<f64>>,
    window: Vec<f64>,
}

impl Default for Stft {
    fn default() -> Self {
        Self::new()
    }
}

impl Stft {
    pub fn new() -> Self {
        let mut planner = FftPlanner::new();
        let fft = planner.plan_fft_forward(FFT_SIZE);
        // periodic Hann
        let window = (0..FFT_SIZE)
            .map(|i| 0.5 - 0.5 * (std::f64::consts::TAU * i as f64 / FFT_SIZE as f64).cos())
            .collect();
        Stft { fft, window }
    }

    pub fn n_frames(len: usize) -> usize {
        len.div_ceil(HOP).max(1)
    }

    /// Transforms one channel. Frame `t` is centered at sample `t * HOP`.
    pub fn transform(&self, samples: &[f32]) -> Spectrogram {
        let n_frames = Self::n_frames(samples.len());
        let half = FFT_SIZE / 2;
        let padded_len = samples.len() + FFT_SIZE;
        let mut padded = vec![0.0f64; padded_len];
        for (i, &s) in samples.iter().enumerate() {
            padded[half + i] = s as f64;
        }
        let mut frames = Vec::with_capacity(n_frames);
        let mut buf = vec![Complex::new(0.0, 0.0); FFT_SIZE];
        for t in 0..n_frames {
            let start = t * HOP;
            for i in 0..FFT_SIZE {
                buf[i] = Complex::new(padded[start + i] * self.window[i], 0.0);
            }
            self.fft.process(&mut buf);
            frames.push(buf[..N_BINS].to_vec());
        }
        frames
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::SAMPLE_RATE;

    #[test]
    fn frame_count_law() {
        assert_eq!(Stft::n_frames(96000), 160);
        assert_eq!(Stft::n_frames(600), 1);
        assert_eq!(Stft::n_frames(601), 2);
        assert_eq!(Stft::n_frames(1), 1);
        assert_eq!(Stft::n_frames(0), 1); // shorter than a hop: one zero-padded frame
        for l in [1usize, 599, 600, 1234, 24000, 96000, 100001] {
            assert_eq!(Stft::n_frames(l), l.div_ceil(600).max(1));
        }
    }

    #[test]
    fn zero_signal_gives_zero_spectra() {
        let stft = Stft::new();
        let frames = stft.transform(&vec![0.0f32; 4800]);
        assert_eq!(frames.len(), 8);
        for f in &frames {
            assert_eq!(f.len(), N_BINS);
            assert!(f.iter().all(|c| c.norm() == 0.0));
        }
    }

    #[test]
    fn bin_centered_sine_concentrates_energy() {
        let stft = Stft::new();
        let k = 40usize;
        let freq = k as f64 * SAMPLE_RATE as f64 / FFT_SIZE as f64;
        let samples: Vec<f32> = (0..24000)
            .map(|i| (std::f64::consts::TAU * freq * i as f64 / SAMPLE_RATE as f64).sin() as f32)
            .collect();
        let frames = stft.transform(&samples);
        let mid = &frames[frames.len() / 2];
        let peak = mid[k].norm();
        assert!(peak > 0.0);
        for (j, c) in mid.iter().enumerate() {
            if j.abs_diff(k) >= 2 {
                let rel_db = 20.0 * (c.norm() / peak).log10();
                assert!(rel_db < -30.0, "bin {j} at {rel_db:.1} dB relative to bin {k}");
            }
        }
    }

    #[test]
    fn middle_frame_matches_direct_dft() {
        // independent oracle: plain O(N^2) DFT of one windowed frame
        let stft = Stft::new();
        let samples: Vec<f32> =
            (0..12000).map(|i| ((i as f64 * 0.021).sin() * 0.7 + (i as f64 * 0.173).cos() * 0.2) as f32).collect();
        let frames = stft.transform(&samples);
        let t = 10usize;
        // rebuild the windowed frame the implementation should have seen
        let half = FFT_SIZE / 2;
        let mut frame = vec![0.0f64; FFT_SIZE];
        for i in 0..FFT_SIZE {
            let src = (t * HOP + i) as isize - half as isize;
            if src >= 0 && (src as usize) < samples.len() {
                frame[i] = samples[src as usize] as f64;
            }
        }
        let window: Vec<f64> = (0..FFT_SIZE)
            .map(|i| 0.5 - 0.5 * (std::f64::consts::TAU * i as f64 / FFT_SIZE as f64).cos())
            .collect();
        for k in [0usize, 1, 17, 100, 256, 512] {
            let mut re = 0.0f64;
            let mut im = 0.0f64;
            for i in 0..FFT_SIZE {
                let phase = -std::f64::consts::TAU * k as f64 * i as f64 / FFT_SIZE as f64;
                let v = frame[i] * window[i];
                re += v * phase.cos();
                im += v * phase.sin();
            }
            let got = frames[t][k];
            assert!(
                (got.re - re).abs() < 1e-8 && (got.im - im).abs() < 1e-8,
                "bin {k}: fft ({}, {}) vs dft ({re}, {im})",
                got.re,
                got.im
            );
        }
    }
}
