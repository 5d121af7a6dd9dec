//! Spatial and spectral augmentations.
//!
//! The rotation group has 16 elements: azimuth rotation by k*90 degrees,
//! optional azimuth reflection (Y -> -Y) and optional elevation flip
//! (Z -> -Z). All of them are signed channel permutations, so the audio
//! transform is exact and commutes with FOA encoding on the integer-degree
//! label grid.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::diffcore::Array;
use crate::util::wrap_az_deg;

use super::FoaClip;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RotationElement {
    /// Azimuth reflection applied first (az -> -az).
    pub reflect: bool,
    /// Quarter turns of azimuth rotation (0..4), applied second.
    pub quarter_turns: u8,
    /// Elevation flip applied last (el -> -el).
    pub flip_elevation: bool,
}

impl RotationElement {
    pub const IDENTITY: RotationElement =
        RotationElement { reflect: false, quarter_turns: 0, flip_elevation: false };

    pub fn all() -> Vec<RotationElement> {
        let mut v = Vec::with_capacity(16);
        for &reflect in &[false, true] {
            for quarter_turns in 0..4u8 {
                for &flip_elevation in &[false, true] {
                    v.push(RotationElement { reflect, quarter_turns, flip_elevation });
                }
            }
        }
        v
    }

    pub fn transform_angles(&self, azimuth: i64, elevation: i64) -> (i64, i64) {
        let az = if self.reflect { -azimuth } else { azimuth };
        let az = wrap_az_deg(az + 90 * self.quarter_turns as i64);
        let el = if self.flip_elevation { -elevation } else { elevation };
        (az, el)
    }

    /// Transforms a direction given as a Cartesian vector (exact signed
    /// channel permutation, matching `transform_angles` on the grid).
    pub fn transform_vec(&self, v: [f64; 3]) -> [f64; 3] {
        let mut x = v[0];
        let mut y = if self.reflect { -v[1] } else { v[1] };
        for _ in 0..self.quarter_turns {
            let (nx, ny) = (-y, x);
            x = nx;
            y = ny;
        }
        let z = if self.flip_elevation { -v[2] } else { v[2] };
        [x, y, z]
    }
}

/// Applies one group element to audio and labels.
pub fn rotate_foa_augment(clip: &FoaClip, elem: RotationElement) -> FoaClip {
    let w = clip.channels[0].clone();
    let mut x = clip.channels[1].clone();
    let mut y: Vec<f32> = if elem.reflect {
        clip.channels[2].iter().map(|&v| -v).collect()
    } else {
        clip.channels[2].clone()
    };
    for _ in 0..elem.quarter_turns {
        let nx: Vec<f32> = y.iter().map(|&v| -v).collect();
        y = x;
        x = nx;
    }
    let z: Vec<f32> = if elem.flip_elevation {
        clip.channels[3].iter().map(|&v| -v).collect()
    } else {
        clip.channels[3].clone()
    };
    let labels = clip
        .labels
        .iter()
        .map(|r| {
            let (azimuth, elevation) = elem.transform_angles(r.azimuth, r.elevation);
            super::labels::LabelRow { azimuth, elevation, ..*r }
        })
        .collect();
    FoaClip { channels: [w, x, y, z], labels, n_label_frames: clip.n_label_frames }
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct SpecAugmentCfg {
    pub n_time_masks: usize,
    pub n_freq_masks: usize,
    pub max_time_width: usize,
    pub max_freq_width: usize,
}

impl Default for SpecAugmentCfg {
    fn default() -> Self {
        SpecAugmentCfg { n_time_masks: 2, n_freq_masks: 2, max_time_width: 8, max_freq_width: 32 }
    }
}

/// Zeroes random time and frequency bands, identically across both feature
/// stacks (`[C,T,F]` each). Masked cells become 0, the post-standardization
/// mean; unmasked cells are untouched.
pub fn spec_augment(
    sed: &mut Array<f32>,
    doa: &mut Array<f32>,
    cfg: &SpecAugmentCfg,
    rng: &mut ChaCha8Rng,
) {
    let (t, f) = (sed.shape[1], sed.shape[2]);
    debug_assert_eq!(doa.shape[1], t);
    debug_assert_eq!(doa.shape[2], f);
    let mut time_spans = Vec::new();
    for _ in 0..cfg.n_time_masks {
        let w = rng.random_range(0..=cfg.max_time_width.min(t));
        let start = if w < t { rng.random_range(0..=t - w) } else { 0 };
        time_spans.push((start, w));
    }
    let mut freq_spans = Vec::new();
    for _ in 0..cfg.n_freq_masks {
        let w = rng.random_range(0..=cfg.max_freq_width.min(f));
        let start = if w < f { rng.random_range(0..=f - w) } else { 0 };
        freq_spans.push((start, w));
    }
    for arr in [sed, doa] {
        let c = arr.shape[0];
        for ch in 0..c {
            for &(start, w) in &time_spans {
                for ti in start..start + w {
                    arr.data[(ch * t + ti) * f..(ch * t + ti + 1) * f].fill(0.0);
                }
            }
            for &(start, w) in &freq_spans {
                for ti in 0..t {
                    arr.data[(ch * t + ti) * f + start..(ch * t + ti) * f + start + w].fill(0.0);
                }
            }
        }
    }
}
