//! The `seld` command: one entry point for the whole pipeline.
//!
//! Subcommands: `synth`, `featurize`, `train`, `eval`, `infer`, `gradcheck`,
//! `sweep`. All are batch operations with exit code 0 on success and a
//! single-line diagnostic on failure. `SELD_DATA_ROOT` supplies the default
//! `--data` directory.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::config::RunConfig;
use crate::data::{
    read_label_csv, synth_scene, DatasetPaths, FoaClip, Manifest, SplitEntry,
    SAMPLES_PER_LABEL_FRAME,
};
use crate::error::{Result, SeldError};
use crate::features::FeatureExtractor;
use crate::metrics::{rows_to_frames, seld_scores, write_report, ScoreOptions, SeldScores};
use crate::model::{OutputFormat, PsMode};
use crate::trainer::{self, OracleMode};

pub const DATA_ROOT_ENV: &str = "SELD_DATA_ROOT";

#[derive(Parser)]
#[command(
    name = "seld",
    version,
    about = "Trackwise polyphonic sound event localization and detection"
)]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum FormatArg {
    Trackwise,
    Seldnet,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum PsModeArg {
    None,
    Hard,
    Soft,
}

#[derive(Args)]
struct DataArg {
    /// Dataset root directory (default: $SELD_DATA_ROOT)
    #[arg(long)]
    data: Option<PathBuf>,
}

impl DataArg {
    fn resolve(&self) -> Result<DatasetPaths> {
        let root = match &self.data {
            Some(p) => p.clone(),
            None => std::env::var_os(DATA_ROOT_ENV)
                .map(PathBuf::from)
                .ok_or_else(|| {
                    SeldError::Config(format!("--data not given and {DATA_ROOT_ENV} not set"))
                })?,
        };
        Ok(DatasetPaths::new(root))
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic FOA dataset (train + test splits)
    Synth {
        /// Run config TOML (dataset section drives generation)
        #[arg(long)]
        config: Option<PathBuf>,
        /// Output dataset directory
        #[arg(long)]
        out: PathBuf,
        /// Override the generation seed for both splits
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Build the feature cache and the standardization sidecar
    Featurize {
        #[command(flatten)]
        data: DataArg,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Train a model and write the run directory
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        #[command(flatten)]
        data: DataArg,
        /// Run directory (created if missing)
        #[arg(long)]
        out: PathBuf,
        /// Override train.seed
        #[arg(long)]
        seed: Option<u64>,
        /// Resume from a saved run state file
        #[arg(long)]
        resume: Option<PathBuf>,
        /// Override the output format
        #[arg(long)]
        format: Option<FormatArg>,
        /// Override the parameter-sharing mode
        #[arg(long)]
        ps_mode: Option<PsModeArg>,
        /// Train all n_trials seeds and write a trials summary
        #[arg(long)]
        trials: bool,
    },
    /// Score a checkpoint or a directory of prediction CSVs against a split
    Eval {
        /// Checkpoint to evaluate
        #[arg(long, conflicts_with = "pred")]
        ckpt: Option<PathBuf>,
        /// Directory of prediction CSVs (one per clip, label format)
        #[arg(long)]
        pred: Option<PathBuf>,
        #[command(flatten)]
        data: DataArg,
        #[arg(long, default_value = "test")]
        split: String,
        /// Config to verify the checkpoint hash against
        #[arg(long)]
        config: Option<PathBuf>,
        /// Write a metrics report file
        #[arg(long)]
        out: Option<PathBuf>,
        /// Supply ground-truth event classes (DoA-only protocol)
        #[arg(long, conflicts_with = "oracle_doa")]
        oracle_sed: bool,
        /// Supply ground-truth DoAs (SED-only protocol)
        #[arg(long)]
        oracle_doa: bool,
        /// Score at the raw 100 ms grid instead of 1 s segments
        #[arg(long)]
        frame_level: bool,
    },
    /// Run a checkpoint over a wav file and write a prediction CSV
    Infer {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        wav: PathBuf,
        /// Output CSV path (label format)
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the finite-difference gradient verification suite
    Gradcheck,
    /// Ablation sweep: ps_mode x output_format from one config
    Sweep {
        #[arg(long)]
        config: Option<PathBuf>,
        #[command(flatten)]
        data: DataArg,
        #[arg(long)]
        out: PathBuf,
    },
}

fn load_config(path: &Option<PathBuf>) -> Result<RunConfig> {
    match path {
        Some(p) => RunConfig::load(p),
        None => Ok(RunConfig::default()),
    }
}

fn print_scores(scores: &SeldScores) {
    println!("metric  value");
    println!("ER      {:.3}", scores.er);
    println!("F       {:.3}", scores.f);
    println!("LE      {:.1}", scores.le);
    println!("LR      {:.3}", scores.lr);
    if scores.undefined {
        println!("note    some ratios had empty denominators (sentinel values reported)");
    }
}

pub fn run() -> Result<()> {
    let cli = Cli::parse();
    match cli.command {
        Command::Synth { config, out, seed } => {
            let mut cfg = load_config(&config)?;
            if let Some(s) = seed {
                cfg.dataset.train.seed = s;
                cfg.dataset.test.seed = s.wrapping_add(1);
            }
            let paths = DatasetPaths::new(&out);
            let train_report = synth_scene(&cfg.dataset.train, &paths, "train")?;
            let test_report = synth_scene(&cfg.dataset.test, &paths, "test")?;
            for (split, report) in [("train", &train_report), ("test", &test_report)] {
                if report.overloaded() {
                    eprintln!(
                        "warning: {split}: event rate infeasible under the polyphony cap; \
                         {} events thinned",
                        report.n_thinned
                    );
                }
            }
            Manifest {
                format_version: 1,
                splits: vec![
                    SplitEntry {
                        name: "train".into(),
                        n_clips: train_report.n_clips,
                        spec: cfg.dataset.train.clone(),
                    },
                    SplitEntry {
                        name: "test".into(),
                        n_clips: test_report.n_clips,
                        spec: cfg.dataset.test.clone(),
                    },
                ],
            }
            .save(&paths.manifest_path())?;
            println!(
                "synthesized train: {} clips / {} events, test: {} clips / {} events -> {}",
                train_report.n_clips,
                train_report.n_events,
                test_report.n_clips,
                test_report.n_events,
                out.display()
            );
            Ok(())
        }
        Command::Featurize { data, config } => {
            let cfg = load_config(&config)?;
            let paths = data.resolve()?;
            let extractor = FeatureExtractor::new(cfg.features);
            let stats = trainer::featurize_dataset(&paths, &extractor, &["train", "test"])?;
            println!(
                "featurized train+test; stats over {} channels written to {}",
                stats.mean.len(),
                paths.stats_path().display()
            );
            Ok(())
        }
        Command::Train { config, data, out, seed, resume, format, ps_mode, trials } => {
            let mut cfg = load_config(&config)?;
            if let Some(f) = format {
                cfg.model.output_format = match f {
                    FormatArg::Trackwise => OutputFormat::Trackwise,
                    FormatArg::Seldnet => OutputFormat::Seldnet,
                };
            }
            if let Some(m) = ps_mode {
                cfg.model.ps_mode = match m {
                    PsModeArg::None => PsMode::None,
                    PsModeArg::Hard => PsMode::Hard,
                    PsModeArg::Soft => PsMode::Soft,
                };
            }
            if let Some(s) = seed {
                cfg.train.seed = s;
            }
            let paths = data.resolve()?;
            if trials {
                let outcome = trainer::run_trials(&cfg, &paths, &out)?;
                print!("{}", outcome.summary_text);
                println!("trials written to {}", out.display());
            } else {
                let outcome = trainer::train(&cfg, &paths, &out, cfg.train.seed, resume.as_deref())?;
                let last = outcome.history.last().expect("at least one epoch");
                println!(
                    "trained {} epochs; final loss {:.4}; test ER {:.3} F {:.3} LE {:.1} LR {:.3}",
                    outcome.history.len(),
                    last.loss,
                    last.scores.er,
                    last.scores.f,
                    last.scores.le,
                    last.scores.lr
                );
                println!("run directory: {}", out.display());
            }
            Ok(())
        }
        Command::Eval {
            ckpt,
            pred,
            data,
            split,
            config,
            out,
            oracle_sed,
            oracle_doa,
            frame_level,
        } => {
            let paths = data.resolve()?;
            let oracle = if oracle_sed {
                OracleMode::Sed
            } else if oracle_doa {
                OracleMode::Doa
            } else {
                OracleMode::None
            };
            let scores = match (&ckpt, &pred) {
                (Some(ckpt_path), None) => {
                    let expect = match &config {
                        Some(p) => Some(RunConfig::load(p)?),
                        None => None,
                    };
                    let (mut cfg, scores, pf, rf) = trainer::evaluate_checkpoint(
                        ckpt_path,
                        &paths,
                        &split,
                        expect.as_ref(),
                        oracle,
                    )?;
                    if frame_level {
                        cfg.eval.segment_frames = 1;
                        seld_scores(
                            &pf,
                            &rf,
                            &ScoreOptions {
                                threshold_deg: cfg.eval.distance_threshold_deg,
                                segment_frames: 1,
                            },
                        )
                    } else {
                        scores
                    }
                }
                (None, Some(pred_dir)) => {
                    let cfg = load_config(&config)?;
                    let segment_frames = if frame_level { 1 } else { cfg.eval.segment_frames };
                    score_prediction_csvs(&paths, &split, pred_dir, &ScoreOptions {
                        threshold_deg: cfg.eval.distance_threshold_deg,
                        segment_frames,
                    })?
                }
                _ => {
                    return Err(SeldError::Config(
                        "eval needs exactly one of --ckpt or --pred".into(),
                    ))
                }
            };
            print_scores(&scores);
            if let Some(path) = out {
                write_report(&path, &scores)?;
                println!("report written to {}", path.display());
            }
            Ok(())
        }
        Command::Infer { ckpt, wav, out } => {
            let n_events = infer_wav(&ckpt, &wav, &out)?;
            println!("wrote {n_events} events to {}", out.display());
            Ok(())
        }
        Command::Gradcheck => {
            let entries = crate::gradsuite::run_gradsuite()?;
            print!("{}", crate::gradsuite::format_gradsuite(&entries));
            if entries.iter().all(|e| e.passed()) {
                Ok(())
            } else {
                Err(SeldError::Numeric("gradient checks failed".into()))
            }
        }
        Command::Sweep { config, data, out } => {
            let cfg = load_config(&config)?;
            let paths = data.resolve()?;
            let outcome = trainer::run_sweep(&cfg, &paths, &out)?;
            print!("{}", outcome.report_text);
            println!("sweep report written to {}", out.join("sweep_report.txt").display());
            Ok(())
        }
    }
}

/// Scores a directory of prediction CSVs (label format, one per clip)
/// against a split's references.
fn score_prediction_csvs(
    paths: &DatasetPaths,
    split: &str,
    pred_dir: &Path,
    opts: &ScoreOptions,
) -> Result<SeldScores> {
    let clips = paths.list_clips(split)?;
    if clips.is_empty() {
        return Err(SeldError::Config(format!("split {split} has no clips")));
    }
    let mut all_pred = Vec::new();
    let mut all_ref = Vec::new();
    for clip in &clips {
        let ref_rows = read_label_csv(&paths.labels_path(split, clip))?;
        let pred_path = pred_dir.join(format!("{clip}.csv"));
        let pred_rows = if pred_path.exists() { read_label_csv(&pred_path)? } else { vec![] };
        // clip length from the wav header
        let reader = hound::WavReader::open(paths.wav_path(split, clip))
            .map_err(|e| SeldError::Format(format!("{clip}: {e}")))?;
        let n_samples = reader.duration() as usize;
        let n_frames = n_samples.div_ceil(SAMPLES_PER_LABEL_FRAME);
        all_pred.extend(rows_to_frames(&pred_rows, n_frames));
        all_ref.extend(rows_to_frames(&ref_rows, n_frames));
    }
    Ok(seld_scores(&all_pred, &all_ref, opts))
}

/// Runs a checkpoint over one FOA wav and writes its prediction CSV.
fn infer_wav(ckpt_path: &Path, wav: &Path, out: &Path) -> Result<usize> {
    let mut model = trainer::LoadedModel::load(ckpt_path)?;
    let channels = crate::data::read_foa_wav(wav)?;
    let n_label_frames = channels[0].len().div_ceil(SAMPLES_PER_LABEL_FRAME);
    let clip = FoaClip { channels, labels: vec![], n_label_frames };
    let events = model.infer_clip(&clip)?;
    let rows = crate::model::decode::events_to_rows(&events, 0);
    crate::data::write_label_csv(out, &rows)?;
    Ok(rows.len())
}
