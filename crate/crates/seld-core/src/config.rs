//! Hierarchical run configuration.
//!
//! One TOML document with sections `dataset`, `features`, `model`, `loss`,
//! `train`, `eval`. Every field has a default; unknown keys are rejected.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{SceneSpec, SpecAugmentCfg};
use crate::error::{Result, SeldError};
use crate::features::FeatureConfig;
use crate::model::ModelConfig;
use crate::util::fnv1a64;

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetConfig {
    pub train: SceneSpec,
    pub test: SceneSpec,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig {
            train: SceneSpec::default(),
            test: SceneSpec { n_clips: 4, seed: 2, ..SceneSpec::default() },
        }
    }
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq, Eq, Default)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    #[default]
    Tpit,
    Cpit,
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct LossConfig {
    pub kind: LossKind,
    /// Weight on the DoA term (the printed loss sums the two terms).
    pub beta: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig { kind: LossKind::Tpit, beta: 1.0 }
    }
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq, Eq, Default)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    #[default]
    F32,
    F64,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub lr_phase1: f64,
    pub lr_phase2: f64,
    pub epochs_phase1: usize,
    pub epochs_phase2: usize,
    /// Scales total epochs for desk runs, preserving the 9:1 phase ratio.
    pub epoch_scale: f64,
    pub batch_size: usize,
    pub seed: u64,
    pub n_trials: usize,
    pub grad_clip: f64,
    pub precision: Precision,
    pub augment_rotate: bool,
    pub augment_spec: bool,
    pub spec_augment: SpecAugmentCfg,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
            lr_phase1: 0.0005,
            lr_phase2: 0.00005,
            epochs_phase1: 90,
            epochs_phase2: 10,
            epoch_scale: 1.0,
            batch_size: 32,
            seed: 1,
            n_trials: 1,
            grad_clip: 5.0,
            precision: Precision::F32,
            augment_rotate: false,
            augment_spec: false,
            spec_augment: SpecAugmentCfg::default(),
        }
    }
}

impl TrainConfig {
    pub fn total_epochs(&self) -> usize {
        ((self.epochs_phase1 + self.epochs_phase2) as f64 * self.epoch_scale).round().max(1.0)
            as usize
    }

    /// Two-phase step schedule; the boundary preserves the phase ratio under
    /// `epoch_scale`. Exactly two values are ever returned.
    pub fn lr_schedule(&self, epoch: usize) -> f64 {
        let total = self.total_epochs();
        let boundary = total * self.epochs_phase1 / (self.epochs_phase1 + self.epochs_phase2).max(1);
        if epoch < boundary {
            self.lr_phase1
        } else {
            self.lr_phase2
        }
    }
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    /// Binarization threshold on class probabilities.
    pub sed_threshold: f64,
    /// Angular threshold for a localized true positive, degrees.
    pub distance_threshold_deg: f64,
    /// Label frames per evaluation segment (10 = 1 s protocol).
    pub segment_frames: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig { sed_threshold: 0.5, distance_threshold_deg: 20.0, segment_frames: 10 }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq, Default)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub dataset: DatasetConfig,
    pub features: FeatureConfig,
    pub model: ModelConfig,
    pub loss: LossConfig,
    pub train: TrainConfig,
    pub eval: EvalConfig,
}

impl RunConfig {
    pub fn from_str(text: &str) -> Result<Self> {
        let cfg: RunConfig =
            toml::from_str(text).map_err(|e| SeldError::Config(format!("bad config: {e}")))?;
        cfg.model.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| SeldError::io(path.display().to_string(), e))?;
        Self::from_str(&text)
            .map_err(|e| SeldError::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn hash(&self) -> u64 {
        fnv1a64(self.to_toml().as_bytes())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_identically() {
        let cfg = RunConfig::default();
        let text = cfg.to_toml();
        let reparsed = RunConfig::from_str(&text).unwrap();
        assert_eq!(reparsed, cfg);
        // parse -> serialize -> parse yields an identical document
        assert_eq!(reparsed.to_toml(), text);
    }

    #[test]
    fn empty_document_is_all_defaults() {
        let cfg = RunConfig::from_str("").unwrap();
        assert_eq!(cfg, RunConfig::default());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err = RunConfig::from_str("[train]\nlearning_rate = 0.1\n").unwrap_err();
        assert!(err.to_string().contains("learning_rate") || err.to_string().contains("unknown"));
        assert!(RunConfig::from_str("[typo_section]\nx = 1\n").is_err());
    }

    #[test]
    fn partial_overrides_keep_other_defaults() {
        let cfg = RunConfig::from_str("[model]\nwidth_divisor = 8\nmhsa_heads = 2\n").unwrap();
        assert_eq!(cfg.model.width_divisor, 8);
        assert_eq!(cfg.model.n_classes, 14);
        assert_eq!(cfg.train.batch_size, 32);
    }

    #[test]
    fn lr_schedule_boundary() {
        let t = TrainConfig::default();
        assert_eq!(t.lr_schedule(0), 0.0005);
        assert_eq!(t.lr_schedule(89), 0.0005);
        assert_eq!(t.lr_schedule(90), 0.00005);
        assert_eq!(t.lr_schedule(99), 0.00005);
        let scaled = TrainConfig { epoch_scale: 0.1, ..Default::default() };
        assert_eq!(scaled.total_epochs(), 10);
        assert_eq!(scaled.lr_schedule(8), 0.0005);
        assert_eq!(scaled.lr_schedule(9), 0.00005);
        // only two distinct values, ratio preserved
        let values: std::collections::BTreeSet<u64> =
            (0..scaled.total_epochs()).map(|e| scaled.lr_schedule(e).to_bits()).collect();
        assert_eq!(values.len(), 2);
    }

    #[test]
    fn invalid_model_config_is_rejected_at_load() {
        assert!(RunConfig::from_str("[model]\nwidth_divisor = 7\n").is_err());
    }
}
