//! Acceptance suite: one test per criterion, each printing a pass/fail line
//! (visible with `cargo test --test acceptance -- --nocapture`).
//!
//! The heavy training criteria (c6..c8) synthesize their own desk-scale
//! datasets in temp directories; budgets are asserted in wall-clock time.

use std::time::Instant;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use seld_core::config::{LossKind, RunConfig};
use seld_core::data::{synth_scene, DatasetPaths, RotationElement, SceneSpec};
use seld_core::diffcore::Tape;
use seld_core::features::FeatureExtractor;
use seld_core::gradsuite::{format_gradsuite, run_gradsuite};
use seld_core::losses::{cpit_loss, tpit_loss, FrameLabel};
use seld_core::metrics::{
    angular_distance, match_per_class, rows_to_frames, seld_scores, ScoreOptions,
};
use seld_core::model::{positional_encoding, self_attention, ModelConfig};
use seld_core::trainer::{self, OracleMode};
use seld_core::util::unit_vec_deg;

fn report(criterion: &str, pass: bool, detail: &str) {
    println!("criterion {criterion}: {} — {detail}", if pass { "PASS" } else { "FAIL" });
    assert!(pass, "criterion {criterion} failed: {detail}");
}

// ── c1: gradient suite ──────────────────────────────────────────────

#[test]
fn c1_gradient_suite() {
    let start = Instant::now();
    let entries = run_gradsuite().expect("suite runs");
    let elapsed = start.elapsed();
    print!("{}", format_gradsuite(&entries));
    let all_pass = entries.iter().all(|e| e.passed());
    let worst = entries
        .iter()
        .max_by(|a, b| a.max_rel_err.partial_cmp(&b.max_rel_err).unwrap())
        .unwrap();
    report(
        "1 (gradient suite)",
        all_pass && elapsed.as_secs() < 300,
        &format!(
            "{} checks, worst {} at {:.2e}, {:.1}s (< 300s)",
            entries.len(),
            worst.name,
            worst.max_rel_err,
            elapsed.as_secs_f64()
        ),
    );
}

// ── c2: PIT vs exhaustive enumeration ───────────────────────────────

mod pit_oracle {
    use super::*;

    pub fn bce(pred: &[f64], target: &[f64]) -> f64 {
        let mut acc = 0.0;
        for i in 0..pred.len() {
            let p = pred[i].clamp(1e-7, 1.0 - 1e-7);
            acc -= target[i] * p.ln() + (1.0 - target[i]) * (1.0 - p).ln();
        }
        acc / pred.len() as f64
    }

    pub fn perms(m: usize) -> Vec<Vec<usize>> {
        if m == 1 {
            return vec![vec![0]];
        }
        let mut out = Vec::new();
        for sub in perms(m - 1) {
            for pos in 0..m {
                let mut p: Vec<usize> = sub.iter().map(|&v| if v >= pos { v + 1 } else { v }).collect();
                p.insert(0, pos);
                // normalize: generate all, dedup below
                out.push(p);
            }
        }
        out.sort();
        out.dedup();
        out
    }

    pub fn frame_loss(
        sed: &[f64],
        doa: &[f64],
        k: usize,
        label: &FrameLabel,
        perm: &[usize],
    ) -> f64 {
        let mut total = 0.0;
        for (i, &j) in perm.iter().enumerate() {
            let mut target = vec![0.0; k];
            if label.active[j] {
                target[label.class_idx[j]] = 1.0;
            }
            total += bce(&sed[i * k..(i + 1) * k], &target);
            if label.active[j] {
                let mut mse = 0.0;
                for c in 0..3 {
                    let d = doa[i * 3 + c] - label.doa_unit[j][c];
                    mse += d * d;
                }
                total += mse / 3.0;
            }
        }
        total
    }

    pub fn tpit(sed: &[f64], doa: &[f64], labels: &[FrameLabel], m: usize, k: usize) -> f64 {
        let ps = perms(m);
        let t = labels.len();
        (0..t)
            .map(|ti| {
                ps.iter()
                    .map(|p| {
                        frame_loss(
                            &sed[ti * m * k..(ti + 1) * m * k],
                            &doa[ti * m * 3..(ti + 1) * m * 3],
                            k,
                            &labels[ti],
                            p,
                        )
                    })
                    .fold(f64::INFINITY, f64::min)
            })
            .sum::<f64>()
            / t as f64
    }

    pub fn cpit(sed: &[f64], doa: &[f64], labels: &[FrameLabel], m: usize, k: usize) -> f64 {
        let ps = perms(m);
        let t = labels.len();
        let multiset = |l: &FrameLabel| {
            let mut v: Vec<usize> =
                (0..m).filter(|&i| l.active[i]).map(|i| l.class_idx[i]).collect();
            v.sort_unstable();
            v
        };
        let mut bounds = vec![0usize];
        for ti in 1..t {
            if multiset(&labels[ti - 1]) != multiset(&labels[ti]) {
                bounds.push(ti);
            }
        }
        bounds.push(t);
        let mut acc = 0.0;
        for w in bounds.windows(2) {
            let best = ps
                .iter()
                .map(|p| {
                    (w[0]..w[1])
                        .map(|ti| {
                            frame_loss(
                                &sed[ti * m * k..(ti + 1) * m * k],
                                &doa[ti * m * 3..(ti + 1) * m * 3],
                                k,
                                &labels[ti],
                                p,
                            )
                        })
                        .sum::<f64>()
                })
                .fold(f64::INFINITY, f64::min);
            acc += best;
        }
        acc / t as f64
    }
}

#[test]
fn c2_pit_matches_enumeration() {
    let mut rng = ChaCha8Rng::seed_from_u64(0x9172);
    let k = 5usize;
    let t_frames = 8usize;
    let mut max_diff = 0.0f64;
    for m in [2usize, 3] {
        for _ in 0..100 {
            let sed: Vec<f64> =
                (0..t_frames * m * k).map(|_| rng.random_range(0.02..0.98)).collect();
            let doa: Vec<f64> =
                (0..t_frames * m * 3).map(|_| rng.random_range(-0.9..0.9)).collect();
            let mut labels = Vec::with_capacity(t_frames);
            for _ in 0..t_frames {
                let mut l = FrameLabel::silent(m);
                for track in 0..m {
                    if rng.random_range(0.0..1.0) < 0.6 {
                        l.active[track] = true;
                        l.class_idx[track] = rng.random_range(0..k);
                        l.doa_unit[track] = unit_vec_deg(
                            rng.random_range(-180..180),
                            rng.random_range(-45..=45),
                        );
                    }
                }
                labels.push(l);
            }

            let eval = |labels: &[FrameLabel], chunked: bool| -> f64 {
                let mut tape = Tape::<f64>::new();
                let sp = tape.constant(sed.clone(), &[1, t_frames, m, k]).unwrap();
                let dp = tape.constant(doa.clone(), &[1, t_frames, m, 3]).unwrap();
                let out = if chunked {
                    cpit_loss(&mut tape, sp, dp, &[labels.to_vec()], 1.0).unwrap()
                } else {
                    tpit_loss(&mut tape, sp, dp, &[labels.to_vec()], 1.0).unwrap()
                };
                tape.scalar(out.loss)
            };

            let tp = eval(&labels, false);
            let cp = eval(&labels, true);
            let tp_oracle = pit_oracle::tpit(&sed, &doa, &labels, m, k);
            let cp_oracle = pit_oracle::cpit(&sed, &doa, &labels, m, k);
            max_diff = max_diff.max((tp - tp_oracle).abs()).max((cp - cp_oracle).abs());
            assert!((tp - tp_oracle).abs() < 1e-12, "tPIT {tp} vs oracle {tp_oracle}");
            assert!((cp - cp_oracle).abs() < 1e-12, "cPIT {cp} vs oracle {cp_oracle}");
            assert!(cp >= tp - 1e-10, "dominance violated");

            // bit-exact invariance under a full label-track relabeling
            let relabeled: Vec<FrameLabel> = labels
                .iter()
                .map(|l| {
                    let mut p: Vec<usize> = (0..m).collect();
                    p.reverse();
                    FrameLabel {
                        active: p.iter().map(|&i| l.active[i]).collect(),
                        class_idx: p.iter().map(|&i| l.class_idx[i]).collect(),
                        doa_unit: p.iter().map(|&i| l.doa_unit[i]).collect(),
                    }
                })
                .collect();
            assert_eq!(eval(&labels, false).to_bits(), eval(&relabeled, false).to_bits());
            assert_eq!(eval(&labels, true).to_bits(), eval(&relabeled, true).to_bits());
        }
    }
    report(
        "2 (PIT oracle)",
        true,
        &format!("200 instances (M=2,3): max |impl - enumeration| = {max_diff:.2e} (< 1e-12), invariance bit-exact, cPIT >= tPIT"),
    );
}

// ── c3: equation fidelity ───────────────────────────────────────────

#[test]
fn c3_equation_fidelity() {
    // positional encoding vs direct evaluation at 1000 random points
    let mut rng = ChaCha8Rng::seed_from_u64(0x0403);
    let mut max_pe = 0.0f64;
    for _ in 0..1000 {
        let d = 2 * rng.random_range(1..257usize);
        let t = rng.random_range(0..500usize);
        let i = rng.random_range(0..d / 2);
        let table = positional_encoding(t + 1, d);
        let arg = t as f64 / 10f64.powf(8.0 * i as f64 / d as f64);
        let even = (table.data[t * d + 2 * i] - 0.1 * arg.sin()).abs();
        let odd = (table.data[t * d + 2 * i + 1] - 0.1 * arg.cos()).abs();
        max_pe = max_pe.max(even).max(odd);
    }
    assert!(max_pe < 1e-12, "positional encoding deviates by {max_pe}");

    // self-attention permutation equivariance with P = 0
    let (t_n, d_in, d_k, d_h) = (9usize, 6usize, 4usize, 5usize);
    let x: Vec<f64> = (0..t_n * d_in).map(|_| rng.random_range(-1.0..1.0)).collect();
    let wq: Vec<f64> = (0..d_in * d_k).map(|_| rng.random_range(-0.7..0.7)).collect();
    let wk: Vec<f64> = (0..d_in * d_k).map(|_| rng.random_range(-0.7..0.7)).collect();
    let wv: Vec<f64> = (0..d_in * d_h).map(|_| rng.random_range(-0.7..0.7)).collect();
    let mut perm: Vec<usize> = (0..t_n).collect();
    for i in (1..t_n).rev() {
        let j = rng.random_range(0..=i);
        perm.swap(i, j);
    }
    let run = |input: &[f64]| -> Vec<f64> {
        let mut tape = Tape::<f64>::new();
        let tx = tape.constant(input.to_vec(), &[1, t_n, d_in]).unwrap();
        let pos = tape.constant(vec![0.0; t_n * d_in], &[1, t_n, d_in]).unwrap();
        let q = tape.constant(wq.clone(), &[d_in, d_k]).unwrap();
        let k = tape.constant(wk.clone(), &[d_in, d_k]).unwrap();
        let v = tape.constant(wv.clone(), &[d_in, d_h]).unwrap();
        let y = self_attention(&mut tape, tx, pos, q, k, v, false).unwrap();
        tape.data(y).to_vec()
    };
    let base = run(&x);
    let mut xp = vec![0.0; t_n * d_in];
    for (dst, &src) in perm.iter().enumerate() {
        xp[dst * d_in..(dst + 1) * d_in].copy_from_slice(&x[src * d_in..(src + 1) * d_in]);
    }
    let permuted = run(&xp);
    let mut max_sa = 0.0f64;
    for (dst, &src) in perm.iter().enumerate() {
        for j in 0..d_h {
            max_sa = max_sa.max((permuted[dst * d_h + j] - base[src * d_h + j]).abs());
        }
    }
    assert!(max_sa < 1e-10, "permutation equivariance off by {max_sa}");

    // identity cross-stitch passes both branches through bit-exactly
    let c = 5usize;
    let sed: Vec<f64> = (0..c * 7).map(|_| rng.random_range(-2.0..2.0)).collect();
    let doa: Vec<f64> = (0..c * 7).map(|_| rng.random_range(-2.0..2.0)).collect();
    let mut tape = Tape::<f64>::new();
    let ts = tape.constant(sed.clone(), &[c, 7]).unwrap();
    let td = tape.constant(doa.clone(), &[c, 7]).unwrap();
    let one = tape.constant(vec![1.0; c], &[c]).unwrap();
    let zero = tape.constant(vec![0.0; c], &[c]).unwrap();
    let s00 = tape.scale_channels(ts, one, 0).unwrap();
    let s01 = tape.scale_channels(td, zero, 0).unwrap();
    let out_sed = tape.add(s00, s01).unwrap();
    let s10 = tape.scale_channels(ts, zero, 0).unwrap();
    let s11 = tape.scale_channels(td, one, 0).unwrap();
    let out_doa = tape.add(s10, s11).unwrap();
    let sed_exact =
        tape.data(out_sed).iter().zip(&sed).all(|(a, b)| a.to_bits() == b.to_bits());
    let doa_exact =
        tape.data(out_doa).iter().zip(&doa).all(|(a, b)| a.to_bits() == b.to_bits());
    assert!(sed_exact && doa_exact, "identity cross-stitch is not a bit-exact pass-through");

    report(
        "3 (equation fidelity)",
        true,
        &format!("positional encoding max dev {max_pe:.2e} (< 1e-12), SA equivariance {max_sa:.2e} (< 1e-10), identity cross-stitch bit-exact"),
    );
}

// ── c4: metrics oracle ──────────────────────────────────────────────

#[test]
fn c4_metrics_oracle() {
    // Hungarian equals brute force for instances up to 4x4
    let mut rng = ChaCha8Rng::seed_from_u64(0x5405);
    fn all_perms(n: usize) -> Vec<Vec<usize>> {
        fn rec(prefix: &mut Vec<usize>, rest: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
            if rest.is_empty() {
                out.push(prefix.clone());
                return;
            }
            for i in 0..rest.len() {
                let v = rest.remove(i);
                prefix.push(v);
                rec(prefix, rest, out);
                prefix.pop();
                rest.insert(i, v);
            }
        }
        let mut out = Vec::new();
        rec(&mut Vec::new(), &mut (0..n).collect(), &mut out);
        out
    }
    for _ in 0..300 {
        let np = rng.random_range(0..=4usize);
        let nr = rng.random_range(0..=4usize);
        let preds: Vec<[f64; 3]> = (0..np)
            .map(|_| unit_vec_deg(rng.random_range(-180..180), rng.random_range(-45..=45)))
            .collect();
        let refs: Vec<[f64; 3]> = (0..nr)
            .map(|_| unit_vec_deg(rng.random_range(-180..180), rng.random_range(-45..=45)))
            .collect();
        let m = match_per_class(&preds, &refs);
        assert_eq!(m.pairs.len(), np.min(nr));
        let total: f64 = m.pairs.iter().map(|&(_, _, d)| d).sum();
        // brute force over permutations of the larger side
        let n = np.max(nr).max(1);
        let best = all_perms(n)
            .iter()
            .map(|p| {
                (0..np)
                    .filter_map(|i| {
                        let j = p[i];
                        (j < nr).then(|| angular_distance(preds[i], refs[j]))
                    })
                    .sum::<f64>()
            })
            .fold(f64::INFINITY, f64::min);
        let best = if np == 0 || nr == 0 { 0.0 } else { best };
        assert!((total - best).abs() < 1e-9, "hungarian {total} vs brute force {best}");
    }

    // perfect-prediction fixture
    let rows = [
        (0usize, 3usize, 0usize, 10i64, 5i64),
        (7, 8, 1, -120, -30),
        (14, 1, 0, 90, 0),
    ];
    let rows: Vec<seld_core::data::LabelRow> = rows
        .iter()
        .map(|&(frame, class, track, azimuth, elevation)| seld_core::data::LabelRow {
            frame,
            class,
            track,
            azimuth,
            elevation,
        })
        .collect();
    let frames = rows_to_frames(&rows, 20);
    let perfect = seld_scores(&frames, &frames, &ScoreOptions::default());
    assert_eq!(
        (perfect.er, perfect.f, perfect.le, perfect.lr),
        (0.0, 1.0, 0.0, 1.0),
        "perfect fixture scored {perfect:?}"
    );

    // 30-degree-offset fixture
    let ref_rows: Vec<seld_core::data::LabelRow> = [(0usize, 2usize, 0usize, 0i64), (5, 4, 0, 100), (12, 2, 0, -50)]
        .iter()
        .map(|&(frame, class, track, azimuth)| seld_core::data::LabelRow {
            frame,
            class,
            track,
            azimuth,
            elevation: 0,
        })
        .collect();
    let pred_rows: Vec<seld_core::data::LabelRow> =
        ref_rows.iter().map(|r| seld_core::data::LabelRow { azimuth: r.azimuth + 30, ..*r }).collect();
    let off = seld_scores(
        &rows_to_frames(&pred_rows, 20),
        &rows_to_frames(&ref_rows, 20),
        &ScoreOptions::default(),
    );
    assert!((off.er - 1.0).abs() < 1e-12, "offset fixture ER {}", off.er);
    assert_eq!(off.f, 0.0);
    assert!((off.le - 30.0).abs() < 1e-9, "offset fixture LE {}", off.le);
    assert_eq!(off.lr, 1.0);

    report(
        "4 (metrics oracle)",
        true,
        "Hungarian == brute force on 300 instances (<= 4 per class); fixtures score (0,1,0,1) and (1,0,30,1)",
    );
}

// ── c5: geometry closure ────────────────────────────────────────────

#[test]
fn c5_geometry_closure() {
    let mut rng = ChaCha8Rng::seed_from_u64(0xC105);
    let mono: Vec<f64> = (0..2400).map(|_| rng.random_range(-0.6..0.6)).collect();
    let mut checked = 0usize;
    for elem in RotationElement::all() {
        for _ in 0..20 {
            let az = rng.random_range(-180..180i64);
            let el = rng.random_range(-45..=45i64);
            let enc = seld_core::data::foa_encode(&mono, az, el);
            let clip = seld_core::data::FoaClip {
                channels: [
                    enc[0].iter().map(|&v| v as f32).collect(),
                    enc[1].iter().map(|&v| v as f32).collect(),
                    enc[2].iter().map(|&v| v as f32).collect(),
                    enc[3].iter().map(|&v| v as f32).collect(),
                ],
                labels: vec![],
                n_label_frames: 1,
            };
            let rotated = seld_core::data::rotate_foa_augment(&clip, elem);
            let (az2, el2) = elem.transform_angles(az, el);
            let direct = seld_core::data::foa_encode(&mono, az2, el2);
            for c in 0..4 {
                for (i, &v) in direct[c].iter().enumerate() {
                    assert!(
                        rotated.channels[c][i] == v as f32,
                        "{elem:?} ({az},{el})->({az2},{el2}) channel {c} sample {i}"
                    );
                }
            }
            checked += 1;
        }
    }
    report(
        "5 (geometry closure)",
        true,
        &format!("{checked} (element, angle) cases sample-exact across 16 group elements"),
    );
}

// ── shared helpers for the training criteria ────────────────────────

fn prepare_dataset(root: &std::path::Path, cfg: &RunConfig) -> DatasetPaths {
    let paths = DatasetPaths::new(root);
    synth_scene(&cfg.dataset.train, &paths, "train").unwrap();
    synth_scene(&cfg.dataset.test, &paths, "test").unwrap();
    let extractor = FeatureExtractor::new(cfg.features);
    trainer::featurize_dataset(&paths, &extractor, &["train", "test"]).unwrap();
    paths
}

// ── c6: overfit check ───────────────────────────────────────────────

#[test]
fn c6_overfit_check() {
    let start = Instant::now();
    let mut cfg = RunConfig::default();
    cfg.model = ModelConfig::tiny(); // widths/8, D=64, heads 2
    cfg.loss.kind = LossKind::Tpit;
    cfg.train.batch_size = 8;
    cfg.train.epochs_phase1 = 180; // 8 clips / batch 8 = 1 step per epoch
    cfg.train.epochs_phase2 = 20;
    cfg.dataset.train =
        SceneSpec { n_clips: 8, clip_secs: 4.0, event_rate: 0.4, seed: 11, ..Default::default() };
    cfg.dataset.test =
        SceneSpec { n_clips: 1, clip_secs: 4.0, event_rate: 0.4, seed: 12, ..Default::default() };

    let dir = tempfile::tempdir().unwrap();
    let paths = prepare_dataset(dir.path(), &cfg);
    let run_dir = dir.path().join("run");
    let outcome = trainer::train(&cfg, &paths, &run_dir, cfg.train.seed, None).unwrap();
    let final_loss = outcome.history.last().unwrap().loss;

    // loss-decrease invariant: last-10% median < 25% of first-10% median
    let losses: Vec<f64> = outcome.history.iter().map(|e| e.loss).collect();
    let decile = (losses.len() / 10).max(1);
    let median = |s: &[f64]| {
        let mut v = s.to_vec();
        v.sort_by(|a, b| a.partial_cmp(b).unwrap());
        v[v.len() / 2]
    };
    let first = median(&losses[..decile]);
    let last = median(&losses[losses.len() - decile..]);

    let (_, train_scores, _, _) = trainer::evaluate_checkpoint(
        &run_dir.join("ckpt_last"),
        &paths,
        "train",
        None,
        OracleMode::None,
    )
    .unwrap();
    let elapsed = start.elapsed();
    report(
        "6 (overfit check)",
        final_loss < 0.05
            && train_scores.le < 10.0
            && elapsed.as_secs() < 900
            && last < 0.25 * first,
        &format!(
            "200 steps: train tPIT loss {final_loss:.4} (< 0.05), train LE {:.2} deg (< 10), loss medians {first:.3} -> {last:.4}, {:.0}s (< 900s)",
            train_scores.le,
            elapsed.as_secs_f64()
        ),
    );
}

// ── c7: learnability check ──────────────────────────────────────────

#[test]
fn c7_learnability_check() {
    let start = Instant::now();
    let mut cfg = RunConfig::default();
    cfg.model = ModelConfig::tiny();
    cfg.loss.kind = LossKind::Tpit;
    cfg.train.batch_size = 16;
    cfg.train.epochs_phase1 = 27; // 30 scaled epochs total
    cfg.train.epochs_phase2 = 3;
    cfg.dataset.train = SceneSpec {
        n_clips: 200,
        clip_secs: 8.0,
        event_rate: 0.35,
        max_polyphony: 1,
        seed: 21,
        ..Default::default()
    };
    cfg.dataset.test = SceneSpec {
        n_clips: 50,
        clip_secs: 8.0,
        event_rate: 0.35,
        max_polyphony: 1,
        seed: 22,
        ..Default::default()
    };

    let dir = tempfile::tempdir().unwrap();
    let paths = prepare_dataset(dir.path(), &cfg);
    let outcome =
        trainer::train(&cfg, &paths, &dir.path().join("run"), cfg.train.seed, None).unwrap();
    let best = outcome.best;
    let elapsed = start.elapsed();
    report(
        "7 (learnability check)",
        best.le < 20.0 && best.lr > 0.70 && elapsed.as_secs() < 7200,
        &format!(
            "200/50 single-source clips, 30 epochs: test LE {:.2} deg (< 20), LR {:.3} (> 0.70), ER {:.3}, F {:.3}, {:.0}s (< 7200s)",
            best.le, best.lr, best.er, best.f,
            elapsed.as_secs_f64()
        ),
    );
}

// ── c8: ablation harness ────────────────────────────────────────────

#[test]
fn c8_ablation_harness() {
    let mut cfg = RunConfig::default();
    cfg.model = ModelConfig::tiny();
    cfg.loss.kind = LossKind::Tpit;
    cfg.train.batch_size = 16;
    cfg.train.n_trials = 2;
    cfg.train.lr_phase1 = 0.001;
    cfg.train.lr_phase2 = 0.0001;
    cfg.train.epochs_phase1 = 14;
    cfg.train.epochs_phase2 = 2;
    cfg.dataset.train = SceneSpec {
        n_clips: 96,
        clip_secs: 4.0,
        event_rate: 0.5,
        max_polyphony: 1,
        seed: 31,
        ..Default::default()
    };
    cfg.dataset.test = SceneSpec {
        n_clips: 24,
        clip_secs: 4.0,
        event_rate: 0.5,
        max_polyphony: 1,
        seed: 32,
        ..Default::default()
    };

    let dir = tempfile::tempdir().unwrap();
    let paths = prepare_dataset(dir.path(), &cfg);
    let sweep = trainer::run_sweep(&cfg, &paths, &dir.path().join("sweep")).unwrap();
    print!("{}", sweep.report_text);
    assert_eq!(sweep.rows.len(), 6, "expected six (ps_mode x format) rows");

    let soft_trackwise = sweep
        .rows
        .iter()
        .find(|r| {
            r.ps_mode == seld_core::model::PsMode::Soft
                && r.output_format == seld_core::model::OutputFormat::Trackwise
        })
        .expect("soft+trackwise row present");
    let min_le = sweep.rows.iter().map(|r| r.mean.le).fold(f64::INFINITY, f64::min);
    report(
        "8 (ablation harness)",
        soft_trackwise.mean.le <= min_le + 5.0,
        &format!(
            "six rows over {} trials; soft+trackwise LE {:.2} deg <= best row {:.2} + 5",
            cfg.train.n_trials, soft_trackwise.mean.le, min_le
        ),
    );
}

// ── c9: determinism ─────────────────────────────────────────────────

#[test]
fn c9_determinism() {
    let mut cfg = RunConfig::default();
    cfg.model = ModelConfig { mhsa_layers: 1, ..ModelConfig::tiny() };
    cfg.train.batch_size = 4;
    cfg.train.epochs_phase1 = 2;
    cfg.train.epochs_phase2 = 1;
    cfg.train.augment_rotate = true; // exercise the stochastic paths too
    cfg.train.augment_spec = true;
    cfg.dataset.train =
        SceneSpec { n_clips: 4, clip_secs: 4.0, event_rate: 0.5, seed: 41, ..Default::default() };
    cfg.dataset.test =
        SceneSpec { n_clips: 2, clip_secs: 4.0, event_rate: 0.5, seed: 42, ..Default::default() };

    let dir = tempfile::tempdir().unwrap();
    let paths = prepare_dataset(dir.path(), &cfg);
    trainer::train(&cfg, &paths, &dir.path().join("a"), 77, None).unwrap();
    trainer::train(&cfg, &paths, &dir.path().join("b"), 77, None).unwrap();
    let a = std::fs::read(dir.path().join("a/history.csv")).unwrap();
    let b = std::fs::read(dir.path().join("b/history.csv")).unwrap();
    report(
        "9 (determinism)",
        a == b,
        &format!("two seeded runs: history.csv identical ({} bytes)", a.len()),
    );
}
