//! Branch input features: log-mel spectrograms (SED) and log-mel +
//! mel-space intensity vectors (DoA), with dataset-level standardization,
//! a per-clip cache and the feature-space form of the rotation group.

mod mel;
mod stft;

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{FoaClip, RotationElement, SAMPLE_RATE, SEGMENT_SAMPLES};
use crate::diffcore::Array;
use crate::error::{Result, SeldError};
use crate::util::fnv1a64;

pub use mel::{hz_to_mel, mel_filterbank, mel_to_hz, FilterNorm, MelBank, MelScale};
pub use stft::{Stft, FFT_SIZE, HOP, N_BINS};

/// Output frames for a 4 s segment: 96000 / 600.
pub const SEGMENT_STFT_FRAMES: usize = SEGMENT_SAMPLES / HOP;

const LOG_EPS: f64 = 1e-10;
const INTENSITY_EPS: f64 = 1e-8;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FeatureConfig {
    pub n_mels: usize,
    pub mel_scale: MelScale,
    pub filter_norm: FilterNorm,
    pub f_lo: f64,
    pub f_hi: f64,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        FeatureConfig {
            n_mels: 256,
            mel_scale: MelScale::Htk,
            filter_norm: FilterNorm::UnitPeak,
            f_lo: 0.0,
            f_hi: 12000.0,
        }
    }
}

impl FeatureConfig {
    pub fn hash(&self) -> u64 {
        let text = toml::to_string(self).expect("feature config serializes");
        fnv1a64(text.as_bytes())
    }
}

/// Per-branch input stacks for one 4 s clip.
///
/// `sed_input`: `[4, T, n_mels]` log-mel per FOA channel.
/// `doa_input`: `[7, T, n_mels]` = 4 log-mel + 3 intensity channels.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureClip {
    pub sed_input: Array<f32>,
    pub doa_input: Array<f32>,
}

impl FeatureClip {
    pub fn n_frames(&self) -> usize {
        self.sed_input.shape[1]
    }

    pub fn n_mels(&self) -> usize {
        self.sed_input.shape[2]
    }
}

pub struct FeatureExtractor {
    pub config: FeatureConfig,
    stft: Stft,
    bank: MelBank,
}

impl FeatureExtractor {
    pub fn new(config: FeatureConfig) -> Self {
        let bank = mel_filterbank(
            config.n_mels,
            SAMPLE_RATE as f64,
            N_BINS,
            config.f_lo,
            config.f_hi,
            config.mel_scale,
            config.filter_norm,
        );
        FeatureExtractor { config, stft: Stft::new(), bank }
    }

    pub fn bank(&self) -> &MelBank {
        &self.bank
    }

    /// Log-mel of all 4 channels: `[4, T, n_mels]`, floored at -100 dB.
    fn logmel(&self, specs: &[stft::Spectrogram; 4]) -> Vec<Vec<f64>> {
        let n_mels = self.config.n_mels;
        let t_frames = specs[0].len();
        let mut out = vec![vec![0.0f64; t_frames * n_mels]; 4];
        let mut power = vec![0.0f64; N_BINS];
        let mut melbuf = vec![0.0f64; n_mels];
        for c in 0..4 {
            for (t, frame) in specs[c].iter().enumerate() {
                for (b, z) in frame.iter().enumerate() {
                    power[b] = z.re * z.re + z.im * z.im;
                }
                self.bank.project(&power, &mut melbuf);
                for (m, &p) in melbuf.iter().enumerate() {
                    out[c][t * n_mels + m] = 10.0 * (p + LOG_EPS).log10();
                }
            }
        }
        out
    }

    /// Mel-space acoustic intensity: per TF bin
    /// `I = Re{ conj(W) . [X, Y, Z] }`, projected through the mel bank and
    /// normalized per (t, mel) to at most unit length.
    fn foa_intensity(&self, specs: &[stft::Spectrogram; 4]) -> Vec<Vec<f64>> {
        let n_mels = self.config.n_mels;
        let t_frames = specs[0].len();
        let mut out = vec![vec![0.0f64; t_frames * n_mels]; 3];
        let mut bins = vec![0.0f64; N_BINS];
        let mut mel = vec![vec![0.0f64; n_mels]; 3];
        for t in 0..t_frames {
            for comp in 0..3 {
                let w = &specs[0][t];
                let v = &specs[comp + 1][t];
                for b in 0..N_BINS {
                    // Re{conj(W) * V}
                    bins[b] = w[b].re * v[b].re + w[b].im * v[b].im;
                }
                self.bank.project(&bins, &mut mel[comp]);
            }
            for m in 0..n_mels {
                let (ix, iy, iz) = (mel[0][m], mel[1][m], mel[2][m]);
                let norm = (ix * ix + iy * iy + iz * iz).sqrt() + INTENSITY_EPS;
                out[0][t * n_mels + m] = ix / norm;
                out[1][t * n_mels + m] = iy / norm;
                out[2][t * n_mels + m] = iz / norm;
            }
        }
        out
    }

    /// Unstandardized features for a clip of any length.
    pub fn featurize_raw(&self, clip: &FoaClip) -> FeatureClip {
        let specs: [stft::Spectrogram; 4] = [
            self.stft.transform(&clip.channels[0]),
            self.stft.transform(&clip.channels[1]),
            self.stft.transform(&clip.channels[2]),
            self.stft.transform(&clip.channels[3]),
        ];
        let n_mels = self.config.n_mels;
        let t_frames = specs[0].len();
        let logmel = self.logmel(&specs);
        let intensity = self.foa_intensity(&specs);
        let mut sed = Vec::with_capacity(4 * t_frames * n_mels);
        for ch in &logmel {
            sed.extend(ch.iter().map(|&v| v as f32));
        }
        let mut doa = sed.clone();
        for ch in &intensity {
            doa.extend(ch.iter().map(|&v| v as f32));
        }
        FeatureClip {
            sed_input: Array { data: sed, shape: vec![4, t_frames, n_mels] },
            doa_input: Array { data: doa, shape: vec![7, t_frames, n_mels] },
        }
    }

    /// Standardized features for one exact 4 s segment.
    pub fn featurize_clip(&self, clip: &FoaClip, stats: &FeatureStats) -> Result<FeatureClip> {
        if clip.n_samples() != SEGMENT_SAMPLES {
            return Err(SeldError::Format(format!(
                "featurize_clip expects a 4 s segment ({SEGMENT_SAMPLES} samples), got {}",
                clip.n_samples()
            )));
        }
        let mut feat = self.featurize_raw(clip);
        stats.apply(&mut feat);
        Ok(feat)
    }
}

// ── standardization ─────────────────────────────────────────────────

/// Per-channel mean/std over the training split (7 channels: 4 log-mel +
/// 3 intensity). The SED stack shares the first four.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    pub config_hash: u64,
}

pub const STATS_MAGIC: &[u8; 8] = b"SELDSTA1";

impl FeatureStats {
    /// Identity stats (mean 0, std 1) for pipelines that skip standardization.
    pub fn identity(n_channels: usize, config_hash: u64) -> Self {
        FeatureStats { mean: vec![0.0; n_channels], std: vec![1.0; n_channels], config_hash }
    }

    pub fn apply(&self, feat: &mut FeatureClip) {
        let per = feat.n_frames() * feat.n_mels();
        for c in 0..feat.sed_input.shape[0] {
            let (m, s) = (self.mean[c], self.std[c]);
            for v in &mut feat.sed_input.data[c * per..(c + 1) * per] {
                *v = ((*v as f64 - m) / s) as f32;
            }
        }
        for c in 0..feat.doa_input.shape[0] {
            let (m, s) = (self.mean[c], self.std[c]);
            for v in &mut feat.doa_input.data[c * per..(c + 1) * per] {
                *v = ((*v as f64 - m) / s) as f32;
            }
        }
    }

    /// Inverse of `apply` on a single value (used by the feature-space
    /// rotation in the training loader).
    pub fn unstandardize(&self, channel: usize, v: f32) -> f32 {
        (v as f64 * self.std[channel] + self.mean[channel]) as f32
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir).map_err(|e| SeldError::io(dir.display().to_string(), e))?;
        }
        let f = File::create(path).map_err(|e| SeldError::io(path.display().to_string(), e))?;
        let mut w = BufWriter::new(f);
        let io = |e| SeldError::io(path.display().to_string(), e);
        w.write_all(STATS_MAGIC).map_err(io)?;
        w.write_all(&self.config_hash.to_le_bytes()).map_err(io)?;
        w.write_all(&(self.mean.len() as u32).to_le_bytes()).map_err(io)?;
        for &v in &self.mean {
            w.write_all(&v.to_le_bytes()).map_err(io)?;
        }
        for &v in &self.std {
            w.write_all(&v.to_le_bytes()).map_err(io)?;
        }
        w.flush().map_err(io)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let f = File::open(path).map_err(|e| SeldError::io(path.display().to_string(), e))?;
        let mut r = BufReader::new(f);
        let io = |e| SeldError::io(path.display().to_string(), e);
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic).map_err(io)?;
        if &magic != STATS_MAGIC {
            return Err(SeldError::Format(format!("{}: not a stats file", path.display())));
        }
        let mut b8 = [0u8; 8];
        r.read_exact(&mut b8).map_err(io)?;
        let config_hash = u64::from_le_bytes(b8);
        let mut b4 = [0u8; 4];
        r.read_exact(&mut b4).map_err(io)?;
        let n = u32::from_le_bytes(b4) as usize;
        let mut mean = Vec::with_capacity(n);
        let mut std = Vec::with_capacity(n);
        for _ in 0..n {
            r.read_exact(&mut b8).map_err(io)?;
            mean.push(f64::from_le_bytes(b8));
        }
        for _ in 0..n {
            r.read_exact(&mut b8).map_err(io)?;
            std.push(f64::from_le_bytes(b8));
        }
        Ok(FeatureStats { mean, std, config_hash })
    }
}

/// Streaming accumulator for dataset-level statistics.
#[derive(Clone, Debug)]
pub struct StatsAccum {
    sum: Vec<f64>,
    sum_sq: Vec<f64>,
    count: Vec<u64>,
}

impl StatsAccum {
    pub fn new(n_channels: usize) -> Self {
        StatsAccum { sum: vec![0.0; n_channels], sum_sq: vec![0.0; n_channels], count: vec![0; n_channels] }
    }

    pub fn add(&mut self, feat: &FeatureClip) {
        let per = feat.n_frames() * feat.n_mels();
        for c in 0..feat.doa_input.shape[0] {
            for &v in &feat.doa_input.data[c * per..(c + 1) * per] {
                let v = v as f64;
                self.sum[c] += v;
                self.sum_sq[c] += v * v;
                self.count[c] += 1;
            }
        }
    }

    pub fn finish(&self, config_hash: u64) -> FeatureStats {
        let n = self.sum.len();
        let mut mean = vec![0.0; n];
        let mut std = vec![1.0; n];
        for c in 0..n {
            if self.count[c] == 0 {
                continue;
            }
            let m = self.sum[c] / self.count[c] as f64;
            let var = (self.sum_sq[c] / self.count[c] as f64 - m * m).max(0.0);
            mean[c] = m;
            std[c] = var.sqrt().max(1e-6);
        }
        FeatureStats { mean, std, config_hash }
    }
}

// ── feature-space rotation ──────────────────────────────────────────

/// Applies a rotation-group element directly to (raw) features: log-mel
/// channels permute (power is sign-blind), intensity channels transform as
/// a Cartesian vector. Bit-identical to featurizing the rotated audio.
pub fn rotate_features(feat: &FeatureClip, elem: RotationElement) -> FeatureClip {
    let per = feat.n_frames() * feat.n_mels();
    let swap_xy = elem.quarter_turns % 2 == 1;
    let ch_slice = |arr: &Array<f32>, c: usize| arr.data[c * per..(c + 1) * per].to_vec();

    // log-mel part: [W, X, Y, Z] with X/Y swapped on odd quarter turns
    let logmel_order: [usize; 4] = if swap_xy { [0, 2, 1, 3] } else { [0, 1, 2, 3] };
    let mut sed = Vec::with_capacity(4 * per);
    for &c in &logmel_order {
        sed.extend_from_slice(&feat.sed_input.data[c * per..(c + 1) * per]);
    }

    // intensity part transforms like (x, y, z)
    let mut ix = ch_slice(&feat.doa_input, 4);
    let mut iy = ch_slice(&feat.doa_input, 5);
    let mut iz = ch_slice(&feat.doa_input, 6);
    if elem.reflect {
        for v in &mut iy {
            *v = -*v;
        }
    }
    for _ in 0..elem.quarter_turns {
        let nx: Vec<f32> = iy.iter().map(|&v| -v).collect();
        iy = ix;
        ix = nx;
    }
    if elem.flip_elevation {
        for v in &mut iz {
            *v = -*v;
        }
    }

    let mut doa = Vec::with_capacity(7 * per);
    for &c in &logmel_order {
        doa.extend_from_slice(&feat.doa_input.data[c * per..(c + 1) * per]);
    }
    doa.extend_from_slice(&ix);
    doa.extend_from_slice(&iy);
    doa.extend_from_slice(&iz);

    FeatureClip {
        sed_input: Array { data: sed, shape: feat.sed_input.shape.clone() },
        doa_input: Array { data: doa, shape: feat.doa_input.shape.clone() },
    }
}

// ── feature cache ───────────────────────────────────────────────────

pub const FEAT_MAGIC: &[u8; 8] = b"SELDFEA1";

/// Writes raw (unstandardized) segment features for one source clip.
pub fn write_feature_cache(
    path: &Path,
    clip_id: &str,
    config_hash: u64,
    segments: &[FeatureClip],
) -> Result<()> {
    let f = File::create(path).map_err(|e| SeldError::io(path.display().to_string(), e))?;
    let mut w = BufWriter::new(f);
    let io = |e| SeldError::io(path.display().to_string(), e);
    w.write_all(FEAT_MAGIC).map_err(io)?;
    w.write_all(&config_hash.to_le_bytes()).map_err(io)?;
    w.write_all(&(clip_id.len() as u16).to_le_bytes()).map_err(io)?;
    w.write_all(clip_id.as_bytes()).map_err(io)?;
    w.write_all(&(segments.len() as u32).to_le_bytes()).map_err(io)?;
    for seg in segments {
        w.write_all(&(seg.n_frames() as u32).to_le_bytes()).map_err(io)?;
        w.write_all(&(seg.n_mels() as u32).to_le_bytes()).map_err(io)?;
        for &v in &seg.sed_input.data {
            w.write_all(&v.to_le_bytes()).map_err(io)?;
        }
        for &v in &seg.doa_input.data {
            w.write_all(&v.to_le_bytes()).map_err(io)?;
        }
    }
    w.flush().map_err(io)
}

pub fn read_feature_cache(path: &Path, expect_hash: u64) -> Result<(String, Vec<FeatureClip>)> {
    let f = File::open(path).map_err(|e| SeldError::io(path.display().to_string(), e))?;
    let mut r = BufReader::new(f);
    let io = |e| SeldError::io(path.display().to_string(), e);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic).map_err(io)?;
    if &magic != FEAT_MAGIC {
        return Err(SeldError::Format(format!("{}: not a feature cache", path.display())));
    }
    let mut b8 = [0u8; 8];
    r.read_exact(&mut b8).map_err(io)?;
    let hash = u64::from_le_bytes(b8);
    if hash != expect_hash {
        return Err(SeldError::Format(format!(
            "{}: feature cache was built with a different feature config (hash {hash:#x}, expected {expect_hash:#x}); re-run featurize",
            path.display()
        )));
    }
    let mut b2 = [0u8; 2];
    r.read_exact(&mut b2).map_err(io)?;
    let id_len = u16::from_le_bytes(b2) as usize;
    let mut id = vec![0u8; id_len];
    r.read_exact(&mut id).map_err(io)?;
    let clip_id = String::from_utf8(id)
        .map_err(|_| SeldError::Format(format!("{}: clip id is not UTF-8", path.display())))?;
    let mut b4 = [0u8; 4];
    r.read_exact(&mut b4).map_err(io)?;
    let n_segments = u32::from_le_bytes(b4) as usize;
    let mut segments = Vec::with_capacity(n_segments);
    for _ in 0..n_segments {
        r.read_exact(&mut b4).map_err(io)?;
        let t = u32::from_le_bytes(b4) as usize;
        r.read_exact(&mut b4).map_err(io)?;
        let m = u32::from_le_bytes(b4) as usize;
        let mut read_arr = |c: usize| -> Result<Array<f32>> {
            let mut data = Vec::with_capacity(c * t * m);
            let mut buf = [0u8; 4];
            for _ in 0..c * t * m {
                r.read_exact(&mut buf).map_err(|e| SeldError::io(path.display().to_string(), e))?;
                data.push(f32::from_le_bytes(buf));
            }
            Array::new(data, &[c, t, m])
        };
        let sed_input = read_arr(4)?;
        let doa_input = read_arr(7)?;
        segments.push(FeatureClip { sed_input, doa_input });
    }
    Ok((clip_id, segments))
}
