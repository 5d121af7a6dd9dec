//! Optimization loop: AdamW, two-phase learning rate, batched 4 s segments,
//! per-epoch evaluation, checkpointing, resumable run state, multi-trial
//! averaging and the parameter-sharing ablation sweep.

mod adamw;
mod dataset;

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::{LossKind, Precision, RunConfig};
use crate::data::{spec_augment, DatasetPaths, LabelRow, RotationElement};
use crate::diffcore::{Checkpoint, Element, Tape};
use crate::error::{Result, SeldError};
use crate::features::{rotate_features, FeatureClip, FeatureExtractor, FeatureStats};
use crate::losses::{labels_to_frames, pit_loss, seldnet_loss, FrameLabel, PitMode};
use crate::metrics::{rows_to_frames, seld_scores, FrameEvents, ScoreOptions, SeldScores};
use crate::model::{
    decode_seldnet, decode_trackwise, extract_prediction, ClipPrediction, DecodedEvent, Einv2,
    ForwardCtx, ModelConfig, OutputFormat, PsMode,
};

pub use adamw::AdamW;
pub use dataset::{featurize_dataset, load_split, load_stats, SegmentItem};

const MAX_CONSECUTIVE_BAD_STEPS: usize = 10;

// re-exported so callers see one namespace for augmentation plumbing
pub use crate::data::SpecAugmentCfg;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum OracleMode {
    #[default]
    None,
    /// Ground-truth event classes, predicted DoAs (DoA-only protocol).
    Sed,
    /// Predicted event classes, ground-truth DoAs where available
    /// (SED-only protocol).
    Doa,
}

#[derive(Clone, Copy, Debug)]
pub struct EpochStats {
    pub epoch: usize,
    pub loss: f64,
    pub scores: SeldScores,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub history: Vec<EpochStats>,
    pub run_dir: PathBuf,
    /// Scores of the best-by-ER epoch.
    pub best: SeldScores,
    /// Scores of the final epoch.
    pub last: SeldScores,
}

pub fn history_header() -> &'static str {
    "epoch,loss,er,f,le,lr\n"
}

pub fn history_line(e: &EpochStats) -> String {
    format!(
        "{},{:.6},{:.6},{:.6},{:.6},{:.6}\n",
        e.epoch, e.loss, e.scores.er, e.scores.f, e.scores.le, e.scores.lr
    )
}

fn fisher_yates(order: &mut [usize], rng: &mut ChaCha8Rng) {
    for i in (1..order.len()).rev() {
        let j = rng.random_range(0..=i);
        order.swap(i, j);
    }
}

fn clip_global_norm<E: Element>(grads: &mut [(usize, Vec<E>)], clip: f64) {
    if clip <= 0.0 {
        return;
    }
    let mut norm_sq = 0.0f64;
    for (_, g) in grads.iter() {
        for v in g {
            let x = v.to_f64();
            norm_sq += x * x;
        }
    }
    let norm = norm_sq.sqrt();
    if norm > clip {
        let factor = E::from_f64(clip / norm);
        for (_, g) in grads.iter_mut() {
            for v in g {
                *v *= factor;
            }
        }
    }
}

/// Applies training-time augmentation to one item, returning standardized
/// features and the (possibly rotated) label rows.
fn augment_item(
    item: &SegmentItem,
    cfg: &RunConfig,
    stats: &FeatureStats,
    rng: &mut ChaCha8Rng,
) -> (FeatureClip, Vec<LabelRow>) {
    let mut feat = item.features.clone();
    let mut rows = item.rows.clone();
    if cfg.train.augment_rotate {
        let all = RotationElement::all();
        let elem = all[rng.random_range(0..all.len())];
        feat = rotate_features(&feat, elem);
        for r in &mut rows {
            let (az, el) = elem.transform_angles(r.azimuth, r.elevation);
            r.azimuth = az;
            r.elevation = el;
        }
    }
    stats.apply(&mut feat);
    if cfg.train.augment_spec {
        let (mut sed, mut doa) = (feat.sed_input, feat.doa_input);
        spec_augment(&mut sed, &mut doa, &cfg.train.spec_augment, rng);
        feat = FeatureClip { sed_input: sed, doa_input: doa };
    }
    (feat, rows)
}

// ── evaluation ──────────────────────────────────────────────────────

fn oracle_doa_events(
    events: Vec<DecodedEvent>,
    rows: &[LabelRow],
) -> Vec<DecodedEvent> {
    let mut used = vec![false; rows.len()];
    events
        .into_iter()
        .map(|mut e| {
            if let Some((ri, r)) = rows
                .iter()
                .enumerate()
                .find(|(ri, r)| !used[*ri] && r.frame == e.frame && r.class == e.class)
            {
                used[ri] = true;
                e.azimuth = r.azimuth as f64;
                e.elevation = r.elevation as f64;
                e.degenerate_doa = false;
            }
            e
        })
        .collect()
}

fn oracle_sed_events(pred: &ClipPrediction, rows: &[LabelRow]) -> Vec<DecodedEvent> {
    let mut out = Vec::new();
    for r in rows {
        let (azimuth, elevation) = match pred {
            ClipPrediction::Trackwise(p) => {
                let m = p.doa.shape[1];
                // nearest predicted track direction for this reference
                let target = crate::util::unit_vec_deg(r.azimuth, r.elevation);
                let mut best = (0usize, f64::INFINITY);
                for track in 0..m {
                    let d = &p.doa.data[(r.frame * m + track) * 3..(r.frame * m + track + 1) * 3];
                    let dist = crate::metrics::angular_distance(
                        [d[0] as f64, d[1] as f64, d[2] as f64],
                        target,
                    );
                    if dist < best.1 {
                        best = (track, dist);
                    }
                }
                let d = &p.doa.data[(r.frame * m + best.0) * 3..(r.frame * m + best.0 + 1) * 3];
                crate::util::vec_to_angles([d[0] as f64, d[1] as f64, d[2] as f64])
            }
            ClipPrediction::Seldnet(p) => {
                let k = p.sed.shape[1];
                let d = &p.doa.data[(r.frame * k + r.class) * 3..(r.frame * k + r.class + 1) * 3];
                crate::util::vec_to_angles([d[0] as f64, d[1] as f64, d[2] as f64])
            }
        };
        out.push(DecodedEvent {
            frame: r.frame,
            track: r.track,
            class: r.class,
            azimuth,
            elevation,
            degenerate_doa: false,
        });
    }
    out
}

/// Runs eval-mode forward passes over a split and scores them.
pub fn evaluate_model<E: Element>(
    model: &mut Einv2<E>,
    items: &[SegmentItem],
    stats: &FeatureStats,
    cfg: &RunConfig,
    oracle: OracleMode,
) -> Result<(SeldScores, Vec<FrameEvents>, Vec<FrameEvents>)> {
    let frames_per_item = crate::data::SEGMENT_LABEL_FRAMES;
    let total = items.len() * frames_per_item;
    let mut pred_frames = vec![FrameEvents::default(); total];
    let mut ref_frames = vec![FrameEvents::default(); total];
    let batch = cfg.train.batch_size.max(1);
    for (chunk_idx, chunk) in items.chunks(batch).enumerate() {
        let feats: Vec<FeatureClip> = chunk
            .iter()
            .map(|it| {
                let mut f = it.features.clone();
                stats.apply(&mut f);
                f
            })
            .collect();
        let refs: Vec<&FeatureClip> = feats.iter().collect();
        let mut tape = Tape::<E>::new();
        let (si, di) = Einv2::<E>::batch_to_tape(&mut tape, &refs)?;
        let pass = model.forward(&mut tape, si, di, ForwardCtx::eval())?;
        for (i, item) in chunk.iter().enumerate() {
            let global = chunk_idx * batch + i;
            let offset = global * frames_per_item;
            let pred = extract_prediction(&tape, &pass.output, i);
            let mut events = match &pred {
                ClipPrediction::Trackwise(p) => decode_trackwise(p, cfg.eval.sed_threshold),
                ClipPrediction::Seldnet(p) => decode_seldnet(p, cfg.eval.sed_threshold),
            };
            match oracle {
                OracleMode::None => {}
                OracleMode::Doa => events = oracle_doa_events(events, &item.rows),
                OracleMode::Sed => events = oracle_sed_events(&pred, &item.rows),
            }
            crate::model::decode::events_to_frames(&events, offset, &mut pred_frames);
            for (fi, fe) in rows_to_frames(&item.rows, frames_per_item).into_iter().enumerate() {
                ref_frames[offset + fi] = fe;
            }
        }
    }
    let scores = seld_scores(
        &pred_frames,
        &ref_frames,
        &ScoreOptions {
            threshold_deg: cfg.eval.distance_threshold_deg,
            segment_frames: cfg.eval.segment_frames,
        },
    );
    Ok((scores, pred_frames, ref_frames))
}

// ── run state ───────────────────────────────────────────────────────

/// Model checkpoint with the frozen config and the feature stats embedded,
/// so downstream inference needs no dataset directory.
fn model_checkpoint<E: Element>(
    model: &Einv2<E>,
    cfg_text: &str,
    cfg_hash: u64,
    stats: &FeatureStats,
) -> Checkpoint {
    let mut ckpt = Checkpoint::from_params(&model.params, cfg_text.to_string(), cfg_hash);
    push_stats(&mut ckpt, stats);
    ckpt
}

fn push_stats(ckpt: &mut Checkpoint, stats: &FeatureStats) {
    let n = stats.mean.len();
    ckpt.push_array(
        "::stats.mean",
        &crate::diffcore::Array::<f64> { data: stats.mean.clone(), shape: vec![n] },
    );
    ckpt.push_array(
        "::stats.std",
        &crate::diffcore::Array::<f64> { data: stats.std.clone(), shape: vec![n] },
    );
}

/// Feature stats embedded in a checkpoint, if present.
pub fn checkpoint_stats(ckpt: &Checkpoint, config_hash: u64) -> Option<FeatureStats> {
    let mean = ckpt.get("::stats.mean")?.as_array::<f64>().ok()?;
    let std = ckpt.get("::stats.std")?.as_array::<f64>().ok()?;
    Some(FeatureStats { mean: mean.data, std: std.data, config_hash })
}

fn save_run_state<E: Element>(
    path: &Path,
    model: &Einv2<E>,
    opt: &AdamW<E>,
    rng: &ChaCha8Rng,
    next_epoch: usize,
    best_er: f64,
    cfg_text: &str,
    cfg_hash: u64,
) -> Result<()> {
    let mut ckpt = Checkpoint::from_params(&model.params, cfg_text.to_string(), cfg_hash);
    for (idx, m, v) in opt.export() {
        let name = &model.params.get(idx).name;
        ckpt.push_array(&format!("::optim.m.{name}"), &crate::diffcore::Array::<E> {
            data: m,
            shape: model.params.get(idx).value.shape.clone(),
        });
        ckpt.push_array(&format!("::optim.v.{name}"), &crate::diffcore::Array::<E> {
            data: v,
            shape: model.params.get(idx).value.shape.clone(),
        });
    }
    let mut meta = Vec::new();
    meta.extend_from_slice(&opt.step_count().to_le_bytes());
    meta.extend_from_slice(&(next_epoch as u64).to_le_bytes());
    meta.extend_from_slice(&best_er.to_le_bytes());
    meta.extend_from_slice(&rng.get_seed());
    meta.extend_from_slice(&rng.get_word_pos().to_le_bytes());
    ckpt.push_bytes("::meta", meta);
    ckpt.save(path)
}

fn load_run_state<E: Element>(
    path: &Path,
    model: &mut Einv2<E>,
    opt: &mut AdamW<E>,
) -> Result<(ChaCha8Rng, usize, f64)> {
    let ckpt = Checkpoint::load(path)?;
    ckpt.load_into(&mut model.params)?;
    let meta = ckpt
        .get("::meta")
        .ok_or_else(|| SeldError::Format("run state has no ::meta entry".into()))?
        .as_bytes()?;
    if meta.len() != 8 + 8 + 8 + 32 + 16 {
        return Err(SeldError::Format("run state ::meta has unexpected size".into()));
    }
    let step_count = u64::from_le_bytes(meta[0..8].try_into().unwrap());
    let next_epoch = u64::from_le_bytes(meta[8..16].try_into().unwrap()) as usize;
    let best_er = f64::from_le_bytes(meta[16..24].try_into().unwrap());
    let seed: [u8; 32] = meta[24..56].try_into().unwrap();
    let word_pos = u128::from_le_bytes(meta[56..72].try_into().unwrap());
    let mut slots = Vec::new();
    for i in 0..model.params.len() {
        let name = &model.params.get(i).name;
        if let (Some(m), Some(v)) =
            (ckpt.get(&format!("::optim.m.{name}")), ckpt.get(&format!("::optim.v.{name}")))
        {
            slots.push((i, m.as_array::<E>()?.data, v.as_array::<E>()?.data));
        }
    }
    opt.import(step_count, slots);
    let mut rng = ChaCha8Rng::from_seed(seed);
    rng.set_word_pos(word_pos);
    Ok((rng, next_epoch, best_er))
}

// ── the loop ────────────────────────────────────────────────────────

/// Trains one model. `seed` overrides `cfg.train.seed` (used by trials);
/// `resume` continues from a saved run state, appending to the history.
pub fn train_loop<E: Element>(
    cfg: &RunConfig,
    paths: &DatasetPaths,
    run_dir: &Path,
    seed: u64,
    resume: Option<&Path>,
) -> Result<TrainOutcome> {
    fs::create_dir_all(run_dir).map_err(|e| SeldError::io(run_dir.display().to_string(), e))?;
    let extractor = FeatureExtractor::new(cfg.features);
    let stats = load_stats(paths, &extractor)?;
    let train_items = load_split(paths, &extractor, "train")?;
    if train_items.is_empty() {
        return Err(SeldError::Config("training split is empty".into()));
    }
    let test_items = load_split(paths, &extractor, "test")?;
    if test_items.is_empty() {
        return Err(SeldError::Config("test split is empty".into()));
    }

    let mut used = cfg.clone();
    used.train.seed = seed;
    let used_text = used.to_toml();
    let used_hash = used.hash();
    fs::write(run_dir.join("config.used"), &used_text)
        .map_err(|e| SeldError::io(run_dir.display().to_string(), e))?;

    let mut model: Einv2<E> = Einv2::new(cfg.model, seed)?;
    let mut opt: AdamW<E> = AdamW::new(&cfg.train, model.params.len());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut start_epoch = 0usize;
    let mut best_er = f64::INFINITY;
    if let Some(state) = resume {
        let (r, e, b) = load_run_state(state, &mut model, &mut opt)?;
        rng = r;
        start_epoch = e;
        best_er = b;
    }

    let history_path = run_dir.join("history.csv");
    if resume.is_none() {
        fs::write(&history_path, history_header())
            .map_err(|e| SeldError::io(history_path.display().to_string(), e))?;
    }

    let n_tracks = cfg.model.n_tracks;
    let total_epochs = cfg.train.total_epochs();
    let mut history = Vec::new();
    let mut consecutive_bad = 0usize;
    for epoch in start_epoch..total_epochs {
        let lr = cfg.train.lr_schedule(epoch);
        let mut order: Vec<usize> = (0..train_items.len()).collect();
        fisher_yates(&mut order, &mut rng);
        let mut loss_sum = 0.0f64;
        let mut n_steps = 0usize;
        for chunk in order.chunks(cfg.train.batch_size.max(1)) {
            let mut feats = Vec::with_capacity(chunk.len());
            let mut labels: Vec<Vec<FrameLabel>> = Vec::with_capacity(chunk.len());
            for &idx in chunk {
                let (f, rows) = augment_item(&train_items[idx], cfg, &stats, &mut rng);
                labels.push(labels_to_frames(&rows, crate::data::SEGMENT_LABEL_FRAMES, n_tracks));
                feats.push(f);
            }
            let refs: Vec<&FeatureClip> = feats.iter().collect();
            let mut tape = Tape::<E>::new();
            let (si, di) = Einv2::<E>::batch_to_tape(&mut tape, &refs)?;
            let pass = model.forward(&mut tape, si, di, ForwardCtx::train())?;
            let loss_id = match pass.output {
                crate::model::Prediction::Trackwise { sed, doa } => {
                    let mode = match cfg.loss.kind {
                        LossKind::Tpit => PitMode::Frame,
                        LossKind::Cpit => PitMode::Chunk,
                    };
                    pit_loss(&mut tape, sed, doa, &labels, cfg.loss.beta, mode)?.loss
                }
                crate::model::Prediction::Seldnet { sed, doa } => {
                    seldnet_loss(&mut tape, sed, doa, &labels, cfg.loss.beta)?
                }
            };
            let loss_val = tape.scalar(loss_id).to_f64();
            if !loss_val.is_finite() {
                consecutive_bad += 1;
                eprintln!("warning: non-finite loss at epoch {epoch}, skipping step ({consecutive_bad} consecutive)");
                if consecutive_bad >= MAX_CONSECUTIVE_BAD_STEPS {
                    return Err(SeldError::Numeric(format!(
                        "{MAX_CONSECUTIVE_BAD_STEPS} consecutive non-finite losses"
                    )));
                }
                continue;
            }
            tape.backward(loss_id)?;
            let mut grads: Vec<(usize, Vec<E>)> = Vec::with_capacity(pass.leaves.len());
            let mut finite = true;
            for &(idx, leaf) in &pass.leaves {
                match tape.grad(leaf) {
                    Some(g) => {
                        if !g.iter().all(|v| v.is_finite()) {
                            finite = false;
                            break;
                        }
                        grads.push((idx, g.to_vec()));
                    }
                    None => {
                        grads.push((idx, vec![E::ZERO; model.params.get(idx).value.numel()]))
                    }
                }
            }
            if !finite {
                consecutive_bad += 1;
                eprintln!("warning: non-finite gradient at epoch {epoch}, skipping step ({consecutive_bad} consecutive)");
                if consecutive_bad >= MAX_CONSECUTIVE_BAD_STEPS {
                    return Err(SeldError::Numeric(format!(
                        "{MAX_CONSECUTIVE_BAD_STEPS} consecutive non-finite gradients"
                    )));
                }
                continue;
            }
            clip_global_norm(&mut grads, cfg.train.grad_clip);
            opt.step(&mut model.params, &grads, lr)?;
            consecutive_bad = 0;
            loss_sum += loss_val;
            n_steps += 1;
        }

        let (scores, _, _) = evaluate_model(&mut model, &test_items, &stats, cfg, OracleMode::None)?;
        let stats_row =
            EpochStats { epoch, loss: loss_sum / n_steps.max(1) as f64, scores };
        let mut f = fs::OpenOptions::new()
            .append(true)
            .open(&history_path)
            .map_err(|e| SeldError::io(history_path.display().to_string(), e))?;
        f.write_all(history_line(&stats_row).as_bytes())
            .map_err(|e| SeldError::io(history_path.display().to_string(), e))?;
        history.push(stats_row);

        let ckpt = model_checkpoint(&model, &used_text, used_hash, &stats);
        ckpt.save(&run_dir.join("ckpt_last"))?;
        if scores.er < best_er {
            best_er = scores.er;
            ckpt.save(&run_dir.join("ckpt_best"))?;
        }
        save_run_state(
            &run_dir.join("state_last"),
            &model,
            &opt,
            &rng,
            epoch + 1,
            best_er,
            &used_text,
            used_hash,
        )?;
    }

    let best = history
        .iter()
        .min_by(|a, b| a.scores.er.partial_cmp(&b.scores.er).unwrap())
        .map(|e| e.scores)
        .unwrap_or_default();
    let last = history.last().map(|e| e.scores).unwrap_or_default();
    Ok(TrainOutcome { history, run_dir: run_dir.to_path_buf(), best, last })
}

/// Precision-dispatching wrapper.
pub fn train(
    cfg: &RunConfig,
    paths: &DatasetPaths,
    run_dir: &Path,
    seed: u64,
    resume: Option<&Path>,
) -> Result<TrainOutcome> {
    match cfg.train.precision {
        Precision::F32 => train_loop::<f32>(cfg, paths, run_dir, seed, resume),
        Precision::F64 => train_loop::<f64>(cfg, paths, run_dir, seed, resume),
    }
}

// ── checkpoint evaluation ───────────────────────────────────────────

fn eval_ckpt_typed<E: Element>(
    ckpt: &Checkpoint,
    cfg: &RunConfig,
    paths: &DatasetPaths,
    split: &str,
    oracle: OracleMode,
) -> Result<(SeldScores, Vec<FrameEvents>, Vec<FrameEvents>)> {
    let mut model: Einv2<E> = Einv2::new(cfg.model, 0)?;
    ckpt.load_into(&mut model.params)?;
    let extractor = FeatureExtractor::new(cfg.features);
    let stats = match checkpoint_stats(ckpt, extractor.config.hash()) {
        Some(s) => s,
        None => load_stats(paths, &extractor)?,
    };
    let items = load_split(paths, &extractor, split)?;
    evaluate_model(&mut model, &items, &stats, cfg, oracle)
}

/// Loads a checkpoint (with its embedded config), verifies any supplied
/// config hash, and scores the given split.
pub fn evaluate_checkpoint(
    ckpt_path: &Path,
    paths: &DatasetPaths,
    split: &str,
    expect_cfg: Option<&RunConfig>,
    oracle: OracleMode,
) -> Result<(RunConfig, SeldScores, Vec<FrameEvents>, Vec<FrameEvents>)> {
    let ckpt = Checkpoint::load(ckpt_path)?;
    let cfg = RunConfig::from_str(&ckpt.config_text)
        .map_err(|e| SeldError::Format(format!("checkpoint embeds an invalid config: {e}")))?;
    if let Some(expected) = expect_cfg {
        if expected.hash() != ckpt.config_hash {
            return Err(SeldError::Config(format!(
                "checkpoint config hash {:#x} does not match the supplied config {:#x}; refusing to evaluate",
                ckpt.config_hash,
                expected.hash()
            )));
        }
    }
    let (scores, pf, rf) = match cfg.train.precision {
        Precision::F32 => eval_ckpt_typed::<f32>(&ckpt, &cfg, paths, split, oracle)?,
        Precision::F64 => eval_ckpt_typed::<f64>(&ckpt, &cfg, paths, split, oracle)?,
    };
    Ok((cfg, scores, pf, rf))
}

// ── standalone inference ────────────────────────────────────────────

enum ModelImpl {
    F32(Einv2<f32>),
    F64(Einv2<f64>),
}

/// A checkpoint loaded for inference: model weights, feature extractor and
/// standardization stats, self-contained.
pub struct LoadedModel {
    pub config: RunConfig,
    extractor: FeatureExtractor,
    stats: FeatureStats,
    model: ModelImpl,
}

impl LoadedModel {
    pub fn load(ckpt_path: &Path) -> Result<Self> {
        let ckpt = Checkpoint::load(ckpt_path)?;
        let config = RunConfig::from_str(&ckpt.config_text)
            .map_err(|e| SeldError::Format(format!("checkpoint embeds an invalid config: {e}")))?;
        let extractor = FeatureExtractor::new(config.features);
        let stats = checkpoint_stats(&ckpt, extractor.config.hash()).ok_or_else(|| {
            SeldError::Format(
                "checkpoint has no embedded feature stats; re-train to regenerate".into(),
            )
        })?;
        let model = match config.train.precision {
            Precision::F32 => {
                let mut m: Einv2<f32> = Einv2::new(config.model, 0)?;
                ckpt.load_into(&mut m.params)?;
                ModelImpl::F32(m)
            }
            Precision::F64 => {
                let mut m: Einv2<f64> = Einv2::new(config.model, 0)?;
                ckpt.load_into(&mut m.params)?;
                ModelImpl::F64(m)
            }
        };
        Ok(LoadedModel { config, extractor, stats, model })
    }

    fn infer_segment_typed<E: Element>(
        model: &mut Einv2<E>,
        feat: &FeatureClip,
        threshold: f64,
    ) -> Result<Vec<DecodedEvent>> {
        let mut tape = Tape::<E>::new();
        let (si, di) = Einv2::<E>::batch_to_tape(&mut tape, &[feat])?;
        let pass = model.forward(&mut tape, si, di, ForwardCtx::eval())?;
        let pred = extract_prediction(&tape, &pass.output, 0);
        Ok(match &pred {
            ClipPrediction::Trackwise(p) => decode_trackwise(p, threshold),
            ClipPrediction::Seldnet(p) => decode_seldnet(p, threshold),
        })
    }

    /// Segments a clip of any length, runs eval-mode forwards, and returns
    /// decoded events with absolute frame indices (padding trimmed).
    pub fn infer_clip(&mut self, clip: &crate::data::FoaClip) -> Result<Vec<DecodedEvent>> {
        let threshold = self.config.eval.sed_threshold;
        let n_frames = clip.n_samples().div_ceil(crate::data::SAMPLES_PER_LABEL_FRAME);
        let mut out = Vec::new();
        for (si, seg) in crate::data::segment_clips(clip).iter().enumerate() {
            let feat = self.extractor.featurize_clip(seg, &self.stats)?;
            let events = match &mut self.model {
                ModelImpl::F32(m) => Self::infer_segment_typed(m, &feat, threshold)?,
                ModelImpl::F64(m) => Self::infer_segment_typed(m, &feat, threshold)?,
            };
            let offset = si * crate::data::SEGMENT_LABEL_FRAMES;
            out.extend(events.into_iter().map(|mut e| {
                e.frame += offset;
                e
            }));
        }
        out.retain(|e| e.frame < n_frames);
        Ok(out)
    }
}

// ── trials and sweep ────────────────────────────────────────────────

#[derive(Clone, Debug)]
pub struct TrialsOutcome {
    pub outcomes: Vec<TrainOutcome>,
    pub summary_text: String,
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len().max(1) as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

fn summarize(rows: &[(&str, Vec<f64>)]) -> String {
    let mut out = String::new();
    for (name, values) in rows {
        let (m, s) = mean_std(values);
        out.push_str(&format!("{name} {m:.4} \u{b1} {s:.4}\n"));
    }
    out
}

/// Runs `n_trials` independent seeds and writes `trials_summary`
/// (mean +/- population std for best- and last-checkpoint metrics).
pub fn run_trials(cfg: &RunConfig, paths: &DatasetPaths, out_dir: &Path) -> Result<TrialsOutcome> {
    fs::create_dir_all(out_dir).map_err(|e| SeldError::io(out_dir.display().to_string(), e))?;
    let n = cfg.train.n_trials.max(1);
    let mut outcomes = Vec::with_capacity(n);
    for t in 0..n {
        let run_dir = out_dir.join(format!("trial{t}"));
        let outcome = train(cfg, paths, &run_dir, cfg.train.seed + t as u64, None)?;
        outcomes.push(outcome);
    }
    let collect = |f: &dyn Fn(&TrainOutcome) -> f64| -> Vec<f64> {
        outcomes.iter().map(f).collect()
    };
    let mut summary_text = format!("n_trials {n}\n");
    summary_text.push_str(&summarize(&[
        ("best.ER", collect(&|o| o.best.er)),
        ("best.F", collect(&|o| o.best.f)),
        ("best.LE", collect(&|o| o.best.le)),
        ("best.LR", collect(&|o| o.best.lr)),
        ("last.ER", collect(&|o| o.last.er)),
        ("last.F", collect(&|o| o.last.f)),
        ("last.LE", collect(&|o| o.last.le)),
        ("last.LR", collect(&|o| o.last.lr)),
    ]));
    fs::write(out_dir.join("trials_summary"), &summary_text)
        .map_err(|e| SeldError::io(out_dir.display().to_string(), e))?;
    Ok(TrialsOutcome { outcomes, summary_text })
}

#[derive(Clone, Debug)]
pub struct SweepRow {
    pub ps_mode: PsMode,
    pub output_format: OutputFormat,
    pub mean: SeldScores,
    pub std_er: f64,
    pub std_f: f64,
    pub std_le: f64,
    pub std_lr: f64,
}

#[derive(Clone, Debug)]
pub struct SweepOutcome {
    pub rows: Vec<SweepRow>,
    pub report_text: String,
}

fn mode_name(m: PsMode) -> &'static str {
    match m {
        PsMode::None => "none",
        PsMode::Hard => "hard",
        PsMode::Soft => "soft",
    }
}

fn format_name(f: OutputFormat) -> &'static str {
    match f {
        OutputFormat::Trackwise => "trackwise",
        OutputFormat::Seldnet => "seldnet",
    }
}

/// The parameter-sharing ablation: every ps_mode x output_format combination
/// from one base config, each over `n_trials` seeds. Emits a six-row table
/// (mean +/- std of the best-checkpoint metrics).
pub fn run_sweep(cfg: &RunConfig, paths: &DatasetPaths, out_dir: &Path) -> Result<SweepOutcome> {
    fs::create_dir_all(out_dir).map_err(|e| SeldError::io(out_dir.display().to_string(), e))?;
    let mut rows = Vec::new();
    let mut report = String::from(
        "ps_mode format    ER              F               LE              LR\n",
    );
    for ps_mode in [PsMode::None, PsMode::Hard, PsMode::Soft] {
        for output_format in [OutputFormat::Seldnet, OutputFormat::Trackwise] {
            let mut combo_cfg = cfg.clone();
            combo_cfg.model = ModelConfig { ps_mode, output_format, ..cfg.model };
            let combo_dir =
                out_dir.join(format!("{}_{}", mode_name(ps_mode), format_name(output_format)));
            let trials = run_trials(&combo_cfg, paths, &combo_dir)?;
            let vals = |f: &dyn Fn(&TrainOutcome) -> f64| -> Vec<f64> {
                trials.outcomes.iter().map(f).collect()
            };
            let (er_m, er_s) = mean_std(&vals(&|o| o.best.er));
            let (f_m, f_s) = mean_std(&vals(&|o| o.best.f));
            let (le_m, le_s) = mean_std(&vals(&|o| o.best.le));
            let (lr_m, lr_s) = mean_std(&vals(&|o| o.best.lr));
            report.push_str(&format!(
                "{:<7} {:<9} {:.3} \u{b1} {:.3}   {:.3} \u{b1} {:.3}   {:>5.1} \u{b1} {:<5.1} {:.3} \u{b1} {:.3}\n",
                mode_name(ps_mode),
                format_name(output_format),
                er_m, er_s, f_m, f_s, le_m, le_s, lr_m, lr_s
            ));
            rows.push(SweepRow {
                ps_mode,
                output_format,
                mean: SeldScores { er: er_m, f: f_m, le: le_m, lr: lr_m, ..Default::default() },
                std_er: er_s,
                std_f: f_s,
                std_le: le_s,
                std_lr: lr_s,
            });
        }
    }
    fs::write(out_dir.join("sweep_report.txt"), &report)
        .map_err(|e| SeldError::io(out_dir.display().to_string(), e))?;
    Ok(SweepOutcome { rows, report_text: report })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{synth_scene, SceneSpec};

    fn tiny_cfg() -> RunConfig {
        let mut cfg = RunConfig::default();
        cfg.model = ModelConfig { width_divisor: 8, mhsa_heads: 2, mhsa_layers: 1, ..ModelConfig::tiny() };
        cfg.train.batch_size = 2;
        cfg.train.epochs_phase1 = 2;
        cfg.train.epochs_phase2 = 1;
        cfg.train.epoch_scale = 1.0;
        cfg.dataset.train = SceneSpec { n_clips: 2, clip_secs: 4.0, event_rate: 0.5, ..Default::default() };
        cfg.dataset.test = SceneSpec { n_clips: 1, clip_secs: 4.0, event_rate: 0.5, seed: 5, ..Default::default() };
        cfg
    }

    fn prepare(dir: &Path, cfg: &RunConfig) -> DatasetPaths {
        let paths = DatasetPaths::new(dir);
        synth_scene(&cfg.dataset.train, &paths, "train").unwrap();
        synth_scene(&cfg.dataset.test, &paths, "test").unwrap();
        let extractor = FeatureExtractor::new(cfg.features);
        featurize_dataset(&paths, &extractor, &["train", "test"]).unwrap();
        paths
    }

    #[test]
    fn smoke_train_writes_run_artifacts() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = tiny_cfg();
        let paths = prepare(dir.path(), &cfg);
        let run_dir = dir.path().join("run");
        let outcome = train(&cfg, &paths, &run_dir, 3, None).unwrap();
        assert_eq!(outcome.history.len(), 3);
        assert!(outcome.history.iter().all(|e| e.loss.is_finite()));
        for f in ["config.used", "history.csv", "ckpt_last", "ckpt_best", "state_last"] {
            assert!(run_dir.join(f).exists(), "missing {f}");
        }
        let hist = fs::read_to_string(run_dir.join("history.csv")).unwrap();
        assert!(hist.starts_with("epoch,loss,er,f,le,lr"));
        assert_eq!(hist.lines().count(), 4); // header + 3 epochs
    }

    #[test]
    fn identical_seeds_give_identical_history() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = tiny_cfg();
        let paths = prepare(dir.path(), &cfg);
        train(&cfg, &paths, &dir.path().join("a"), 11, None).unwrap();
        train(&cfg, &paths, &dir.path().join("b"), 11, None).unwrap();
        let a = fs::read(dir.path().join("a/history.csv")).unwrap();
        let b = fs::read(dir.path().join("b/history.csv")).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn resume_matches_uninterrupted_run() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = tiny_cfg();
        cfg.train.precision = Precision::F64; // bit-exactness check
        let paths = prepare(dir.path(), &cfg);

        // 3 epochs straight
        let full = train(&cfg, &paths, &dir.path().join("full"), 7, None).unwrap();

        // 2 epochs (same lr-phase prefix as the full run), then resume
        let mut short_cfg = cfg.clone();
        short_cfg.train.epochs_phase1 = 2;
        short_cfg.train.epochs_phase2 = 0;
        let part_dir = dir.path().join("part");
        train(&short_cfg, &paths, &part_dir, 7, None).unwrap();
        let resumed =
            train(&cfg, &paths, &part_dir, 7, Some(&part_dir.join("state_last"))).unwrap();

        // the resumed epoch must equal epoch 3 of the straight run bit-for-bit
        let last_full = full.history.last().unwrap();
        let last_resumed = resumed.history.last().unwrap();
        assert_eq!(last_full.loss.to_bits(), last_resumed.loss.to_bits());
        assert_eq!(last_full.scores.er.to_bits(), last_resumed.scores.er.to_bits());
        assert_eq!(last_full.scores.le.to_bits(), last_resumed.scores.le.to_bits());
    }

    #[test]
    fn checkpoint_eval_refuses_mismatched_config() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = tiny_cfg();
        let paths = prepare(dir.path(), &cfg);
        let run_dir = dir.path().join("run");
        train(&cfg, &paths, &run_dir, 3, None).unwrap();
        // same config accepted
        let mut expected = cfg.clone();
        expected.train.seed = 3; // train() records the effective seed
        let (_, scores, _, _) = evaluate_checkpoint(
            &run_dir.join("ckpt_last"),
            &paths,
            "test",
            Some(&expected),
            OracleMode::None,
        )
        .unwrap();
        assert!(scores.er.is_finite());
        // different model config refused
        let mut other = expected.clone();
        other.model.mhsa_layers = 2;
        let err = evaluate_checkpoint(
            &run_dir.join("ckpt_last"),
            &paths,
            "test",
            Some(&other),
            OracleMode::None,
        )
        .unwrap_err();
        assert!(err.to_string().contains("hash"));
    }

    #[test]
    fn checkpoint_eval_is_repeatable() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = tiny_cfg();
        let paths = prepare(dir.path(), &cfg);
        let run_dir = dir.path().join("run");
        train(&cfg, &paths, &run_dir, 5, None).unwrap();
        let (_, s1, _, _) =
            evaluate_checkpoint(&run_dir.join("ckpt_last"), &paths, "test", None, OracleMode::None)
                .unwrap();
        let (_, s2, _, _) =
            evaluate_checkpoint(&run_dir.join("ckpt_last"), &paths, "test", None, OracleMode::None)
                .unwrap();
        assert_eq!(s1, s2);
    }
}
