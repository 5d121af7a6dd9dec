//! Dataset preparation: feature-cache building and segment loading.

use std::fs;

use crate::data::{segment_clips, DatasetPaths, LabelRow, SEGMENT_LABEL_FRAMES};
use crate::error::{Result, SeldError};
use crate::features::{
    read_feature_cache, write_feature_cache, FeatureClip, FeatureExtractor, FeatureStats,
    StatsAccum,
};

/// One 4 s training/eval unit: raw (unstandardized) features plus its
/// segment-rebased label rows.
#[derive(Clone, Debug)]
pub struct SegmentItem {
    pub clip: String,
    pub segment: usize,
    pub features: FeatureClip,
    pub rows: Vec<LabelRow>,
}

fn rows_for_segment(rows: &[LabelRow], segment: usize) -> Vec<LabelRow> {
    let lo = segment * SEGMENT_LABEL_FRAMES;
    let hi = lo + SEGMENT_LABEL_FRAMES;
    rows.iter()
        .filter(|r| r.frame >= lo && r.frame < hi)
        .map(|r| LabelRow { frame: r.frame - lo, ..*r })
        .collect()
}

/// Builds the raw feature cache for the given splits and the train-split
/// standardization sidecar. Returns the stats.
pub fn featurize_dataset(
    paths: &DatasetPaths,
    extractor: &FeatureExtractor,
    splits: &[&str],
) -> Result<FeatureStats> {
    let hash = extractor.config.hash();
    let mut accum = StatsAccum::new(7);
    for &split in splits {
        let dir = paths.features_dir(split);
        fs::create_dir_all(&dir).map_err(|e| SeldError::io(dir.display().to_string(), e))?;
        for clip in paths.list_clips(split)? {
            let foa = paths.load_clip(split, &clip)?;
            let segments = segment_clips(&foa);
            let feats: Vec<FeatureClip> =
                segments.iter().map(|s| extractor.featurize_raw(s)).collect();
            if split == "train" {
                for f in &feats {
                    accum.add(f);
                }
            }
            write_feature_cache(&paths.feature_path(split, &clip), &clip, hash, &feats)?;
        }
    }
    let stats = accum.finish(hash);
    stats.save(&paths.stats_path())?;
    Ok(stats)
}

/// Loads a split from the feature cache.
pub fn load_split(
    paths: &DatasetPaths,
    extractor: &FeatureExtractor,
    split: &str,
) -> Result<Vec<SegmentItem>> {
    let hash = extractor.config.hash();
    let mut items = Vec::new();
    for clip in paths.list_clips(split)? {
        let cache = paths.feature_path(split, &clip);
        if !cache.exists() {
            return Err(SeldError::Config(format!(
                "feature cache missing for {split}/{clip}; run `seld featurize` first"
            )));
        }
        let (clip_id, feats) = read_feature_cache(&cache, hash)?;
        if clip_id != clip {
            return Err(SeldError::Format(format!(
                "{}: cache holds clip id {clip_id}, expected {clip}",
                cache.display()
            )));
        }
        let rows = crate::data::read_label_csv(&paths.labels_path(split, &clip))?;
        for (si, features) in feats.into_iter().enumerate() {
            items.push(SegmentItem {
                clip: clip.clone(),
                segment: si,
                features,
                rows: rows_for_segment(&rows, si),
            });
        }
    }
    Ok(items)
}

/// Loads the stats sidecar and verifies it matches the feature config.
pub fn load_stats(paths: &DatasetPaths, extractor: &FeatureExtractor) -> Result<FeatureStats> {
    let stats = FeatureStats::load(&paths.stats_path()).map_err(|e| {
        SeldError::Config(format!("feature stats missing ({e}); run `seld featurize` first"))
    })?;
    if stats.config_hash != extractor.config.hash() {
        return Err(SeldError::Config(
            "feature stats were built with a different feature config; re-run featurize".into(),
        ));
    }
    Ok(stats)
}
