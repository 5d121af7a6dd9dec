//! Triangular mel filterbank.

use serde::{Deserialize, Serialize};

use crate::diffcore::Array;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum MelScale {
    #[default]
    Htk,
    Slaney,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum FilterNorm {
    /// Triangles peak at 1.
    #[default]
    UnitPeak,
    /// Triangles scaled by 2 / bandwidth (area-style normalization).
    Area,
}

pub fn hz_to_mel(f: f64, scale: MelScale) -> f64 {
    match scale {
        MelScale::Htk => 2595.0 * (1.0 + f / 700.0).log10(),
        MelScale::Slaney => {
            let f_sp = 200.0 / 3.0;
            let min_log_hz = 1000.0;
            let min_log_mel = min_log_hz / f_sp;
            let logstep = (6.4f64).ln() / 27.0;
            if f >= min_log_hz {
                min_log_mel + (f / min_log_hz).ln() / logstep
            } else {
                f / f_sp
            }
        }
    }
}

pub fn mel_to_hz(m: f64, scale: MelScale) -> f64 {
    match scale {
        MelScale::Htk => 700.0 * (10f64.powf(m / 2595.0) - 1.0),
        MelScale::Slaney => {
            let f_sp = 200.0 / 3.0;
            let min_log_hz = 1000.0;
            let min_log_mel = min_log_hz / f_sp;
            let logstep = (6.4f64).ln() / 27.0;
            if m >= min_log_mel {
                min_log_hz * (logstep * (m - min_log_mel)).exp()
            } else {
                f_sp * m
            }
        }
    }
}

/// Builds the filter matrix, shape `[n_bins, n_mels]` (column per filter).
///
/// Filters narrower than the bin spacing would otherwise sample to all-zero
/// columns; those fall back to unit weight on the bin nearest the filter
/// center so every filter responds to a flat spectrum.
pub fn mel_filterbank(
    n_mels: usize,
    sample_rate: f64,
    n_bins: usize,
    f_lo: f64,
    f_hi: f64,
    scale: MelScale,
    norm: FilterNorm,
) -> MelBank {
    let n_fft = (n_bins - 1) * 2;
    let bin_hz = sample_rate / n_fft as f64;
    let m_lo = hz_to_mel(f_lo, scale);
    let m_hi = hz_to_mel(f_hi, scale);
    let edges: Vec<f64> = (0..n_mels + 2)
        .map(|i| mel_to_hz(m_lo + (m_hi - m_lo) * i as f64 / (n_mels + 1) as f64, scale))
        .collect();
    let mut weights = Array::<f64>::zeros(&[n_bins, n_mels]);
    for m in 0..n_mels {
        let (lo, center, hi) = (edges[m], edges[m + 1], edges[m + 2]);
        let gain = match norm {
            FilterNorm::UnitPeak => 1.0,
            FilterNorm::Area => 2.0 / (hi - lo),
        };
        let mut any = false;
        for b in 0..n_bins {
            let f = b as f64 * bin_hz;
            let w = if f > lo && f < center {
                (f - lo) / (center - lo)
            } else if f == center {
                1.0
            } else if f > center && f < hi {
                (hi - f) / (hi - center)
            } else {
                0.0
            };
            if w > 0.0 {
                weights.data[b * n_mels + m] = w * gain;
                any = true;
            }
        }
        if !any {
            let nearest = (center / bin_hz).round().min((n_bins - 1) as f64) as usize;
            weights.data[nearest * n_mels + m] = gain;
        }
    }
    MelBank { weights, centers: edges[1..=n_mels].to_vec() }
}

pub struct MelBank {
    /// `[n_bins, n_mels]`, nonnegative.
    pub weights: Array<f64>,
    /// Filter center frequencies in Hz, strictly increasing.
    pub centers: Vec<f64>,
}

impl MelBank {
    pub fn n_bins(&self) -> usize {
        self.weights.shape[0]
    }

    pub fn n_mels(&self) -> usize {
        self.weights.shape[1]
    }

    /// Projects one power spectrum (`n_bins`) into mel space (`n_mels`).
    pub fn project(&self, power: &[f64], out: &mut [f64]) {
        let n_mels = self.n_mels();
        debug_assert_eq!(power.len(), self.n_bins());
        debug_assert_eq!(out.len(), n_mels);
        out.fill(0.0);
        for (b, &p) in power.iter().enumerate() {
            if p == 0.0 {
                continue;
            }
            let row = &self.weights.data[b * n_mels..(b + 1) * n_mels];
            for (o, &w) in out.iter_mut().zip(row) {
                if w != 0.0 {
                    *o += p * w;
                }
            }
        }
    }
}
