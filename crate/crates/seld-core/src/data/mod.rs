//! Dataset generation, file layout and segmentation.
//!
//! Directory layout:
//!
//! ```text
//! <root>/
//!   manifest.toml           generation provenance
//!   foa/<split>/<clip>.wav          4-ch 24 kHz 16-bit PCM
//!   metadata/<split>/<clip>.csv     frame,class,track,azimuth,elevation
//!   features/<split>/<clip>.feat    raw feature cache (features module)
//!   stats/feature_stats.bin         per-channel standardization sidecar
//! ```

pub mod augment;
pub mod labels;
pub mod synth;
mod wav;

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Result, SeldError};

pub use augment::{rotate_foa_augment, spec_augment, RotationElement, SpecAugmentCfg};
pub use labels::{read_label_csv, write_label_csv, LabelRow};
pub use synth::{foa_encode, synth_clip, SceneSpec, SynthReport};
pub use wav::{read_foa_wav, write_foa_wav};

pub const SAMPLE_RATE: usize = 24000;
/// Label grid: one row per 100 ms.
pub const SAMPLES_PER_LABEL_FRAME: usize = 2400;
pub const SEGMENT_SECS: usize = 4;
pub const SEGMENT_SAMPLES: usize = SEGMENT_SECS * SAMPLE_RATE;
pub const SEGMENT_LABEL_FRAMES: usize = SEGMENT_SECS * 10;

/// A 4-channel FOA waveform with its frame-level labels.
#[derive(Clone, Debug)]
pub struct FoaClip {
    pub channels: [Vec<f32>; 4],
    pub labels: Vec<LabelRow>,
    pub n_label_frames: usize,
}

impl FoaClip {
    pub fn n_samples(&self) -> usize {
        self.channels[0].len()
    }
}

/// Non-overlapping 4 s windows; the final remainder is zero-padded.
pub fn segment_clips(clip: &FoaClip) -> Vec<FoaClip> {
    let n = clip.n_samples();
    let n_segments = n.div_ceil(SEGMENT_SAMPLES).max(1);
    let mut out = Vec::with_capacity(n_segments);
    for s in 0..n_segments {
        let start = s * SEGMENT_SAMPLES;
        let end = (start + SEGMENT_SAMPLES).min(n);
        let mut channels: [Vec<f32>; 4] = Default::default();
        for c in 0..4 {
            let mut buf = clip.channels[c][start..end].to_vec();
            buf.resize(SEGMENT_SAMPLES, 0.0);
            channels[c] = buf;
        }
        let frame_lo = s * SEGMENT_LABEL_FRAMES;
        let frame_hi = frame_lo + SEGMENT_LABEL_FRAMES;
        let labels = clip
            .labels
            .iter()
            .filter(|r| r.frame >= frame_lo && r.frame < frame_hi)
            .map(|r| LabelRow { frame: r.frame - frame_lo, ..*r })
            .collect();
        out.push(FoaClip { channels, labels, n_label_frames: SEGMENT_LABEL_FRAMES });
    }
    out
}

/// Paths inside a dataset directory.
#[derive(Clone, Debug)]
pub struct DatasetPaths {
    pub root: PathBuf,
}

impl DatasetPaths {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        DatasetPaths { root: root.into() }
    }

    pub fn foa_dir(&self, split: &str) -> PathBuf {
        self.root.join("foa").join(split)
    }

    pub fn metadata_dir(&self, split: &str) -> PathBuf {
        self.root.join("metadata").join(split)
    }

    pub fn features_dir(&self, split: &str) -> PathBuf {
        self.root.join("features").join(split)
    }

    pub fn stats_path(&self) -> PathBuf {
        self.root.join("stats").join("feature_stats.bin")
    }

    pub fn manifest_path(&self) -> PathBuf {
        self.root.join("manifest.toml")
    }

    pub fn wav_path(&self, split: &str, clip: &str) -> PathBuf {
        self.foa_dir(split).join(format!("{clip}.wav"))
    }

    pub fn labels_path(&self, split: &str, clip: &str) -> PathBuf {
        self.metadata_dir(split).join(format!("{clip}.csv"))
    }

    pub fn feature_path(&self, split: &str, clip: &str) -> PathBuf {
        self.features_dir(split).join(format!("{clip}.feat"))
    }

    /// Sorted clip stems present in a split.
    pub fn list_clips(&self, split: &str) -> Result<Vec<String>> {
        let dir = self.foa_dir(split);
        let rd = fs::read_dir(&dir).map_err(|e| SeldError::io(dir.display().to_string(), e))?;
        let mut clips = Vec::new();
        for entry in rd {
            let entry = entry.map_err(|e| SeldError::io(dir.display().to_string(), e))?;
            let path = entry.path();
            if path.extension().and_then(|e| e.to_str()) == Some("wav") {
                if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
                    clips.push(stem.to_string());
                }
            }
        }
        clips.sort();
        Ok(clips)
    }

    pub fn load_clip(&self, split: &str, clip: &str) -> Result<FoaClip> {
        let channels = read_foa_wav(&self.wav_path(split, clip))?;
        let labels = read_label_csv(&self.labels_path(split, clip))?;
        let n_label_frames = channels[0].len().div_ceil(SAMPLES_PER_LABEL_FRAME);
        Ok(FoaClip { channels, labels, n_label_frames })
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SplitEntry {
    pub name: String,
    pub n_clips: usize,
    pub spec: SceneSpec,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub splits: Vec<SplitEntry>,
}

impl Manifest {
    pub fn save(&self, path: &Path) -> Result<()> {
        let text = toml::to_string_pretty(self)
            .map_err(|e| SeldError::Format(format!("manifest serialization: {e}")))?;
        fs::write(path, text).map_err(|e| SeldError::io(path.display().to_string(), e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text =
            fs::read_to_string(path).map_err(|e| SeldError::io(path.display().to_string(), e))?;
        toml::from_str(&text).map_err(|e| SeldError::Format(format!("{}: {e}", path.display())))
    }
}

/// Generates one split of a dataset: wav + label CSV per clip.
pub fn synth_scene(spec: &SceneSpec, paths: &DatasetPaths, split: &str) -> Result<SynthReport> {
    let foa = paths.foa_dir(split);
    let meta = paths.metadata_dir(split);
    fs::create_dir_all(&foa).map_err(|e| SeldError::io(foa.display().to_string(), e))?;
    fs::create_dir_all(&meta).map_err(|e| SeldError::io(meta.display().to_string(), e))?;
    let mut report = SynthReport::default();
    // splits draw from disjoint clip-index ranges of the same seed stream
    let base = crate::util::fnv1a64(split.as_bytes());
    for i in 0..spec.n_clips {
        let clip = synth_clip(spec, base.wrapping_add(i as u64), &mut report);
        let name = format!("clip{i:04}");
        write_foa_wav(&paths.wav_path(split, &name), &clip.channels)?;
        write_label_csv(&paths.labels_path(split, &name), &clip.labels)?;
        report.n_clips += 1;
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn clip_of_secs(secs: f64, labels: Vec<LabelRow>) -> FoaClip {
        let n = (secs * SAMPLE_RATE as f64) as usize;
        let mut channels: [Vec<f32>; 4] = Default::default();
        for (ci, ch) in channels.iter_mut().enumerate() {
            *ch = (0..n).map(|i| ((i + ci) as f32 * 0.001).sin()).collect();
        }
        FoaClip { channels, labels, n_label_frames: (secs * 10.0).round() as usize }
    }

    #[test]
    fn sixty_second_clip_gives_15_segments() {
        let clip = clip_of_secs(60.0, vec![]);
        assert_eq!(segment_clips(&clip).len(), 15);
    }

    #[test]
    fn five_second_clip_pads_second_segment() {
        let rows = vec![
            LabelRow { frame: 5, class: 1, track: 0, azimuth: 0, elevation: 0 },
            LabelRow { frame: 45, class: 2, track: 0, azimuth: 10, elevation: 5 },
        ];
        let clip = clip_of_secs(5.0, rows);
        let segs = segment_clips(&clip);
        assert_eq!(segs.len(), 2);
        assert_eq!(segs[0].n_samples(), SEGMENT_SAMPLES);
        assert_eq!(segs[1].n_samples(), SEGMENT_SAMPLES);
        // last 3 s of the second segment are silence
        assert!(segs[1].channels[0][SAMPLE_RATE..].iter().all(|&v| v == 0.0));
        // labels fall in the right segments, re-based
        assert_eq!(segs[0].labels.len(), 1);
        assert_eq!(segs[0].labels[0].frame, 5);
        assert_eq!(segs[1].labels.len(), 1);
        assert_eq!(segs[1].labels[0].frame, 5); // 45 - 40
    }

    #[test]
    fn synth_scene_is_deterministic_on_disk() {
        let spec = SceneSpec { n_clips: 2, clip_secs: 3.0, event_rate: 0.8, ..Default::default() };
        let d1 = tempfile::tempdir().unwrap();
        let d2 = tempfile::tempdir().unwrap();
        let p1 = DatasetPaths::new(d1.path());
        let p2 = DatasetPaths::new(d2.path());
        synth_scene(&spec, &p1, "train").unwrap();
        synth_scene(&spec, &p2, "train").unwrap();
        for clip in p1.list_clips("train").unwrap() {
            let a = fs::read(p1.wav_path("train", &clip)).unwrap();
            let b = fs::read(p2.wav_path("train", &clip)).unwrap();
            assert_eq!(a, b, "wav bytes differ for {clip}");
            let a = fs::read(p1.labels_path("train", &clip)).unwrap();
            let b = fs::read(p2.labels_path("train", &clip)).unwrap();
            assert_eq!(a, b, "label bytes differ for {clip}");
        }
    }

    #[test]
    fn manifest_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("manifest.toml");
        let m = Manifest {
            format_version: 1,
            splits: vec![SplitEntry {
                name: "train".into(),
                n_clips: 4,
                spec: SceneSpec::default(),
            }],
        };
        m.save(&path).unwrap();
        let back = Manifest::load(&path).unwrap();
        assert_eq!(back.splits[0].spec, SceneSpec::default());
    }
}
