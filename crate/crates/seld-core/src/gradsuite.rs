//! Named finite-difference verification suite: every tensor primitive, the
//! cross-stitch unit, an MHSA layer, the PIT loss and the full tiny-config
//! network loss, each checked in double precision.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::diffcore::{grad_check_multi, ParamStore, Tape, TensorId, DEFAULT_H};
use crate::error::Result;
use crate::losses::{pit_loss, FrameLabel, PitMode};
use crate::model::{
    positional_encoding, Einv2, ForwardCtx, MhsaLayer, MhsaSettings, ModelConfig, Prediction,
};

#[derive(Clone, Debug)]
pub struct GradCheckEntry {
    pub name: String,
    pub max_rel_err: f64,
    pub threshold: f64,
}

impl GradCheckEntry {
    pub fn passed(&self) -> bool {
        self.max_rel_err < self.threshold
    }
}

/// Threshold for smooth ops; kinked ops (relu, max-pool) and the composite
/// checks use the coarser bound.
const SMOOTH: f64 = 1e-6;
const KINKED: f64 = 1e-4;
const REPEATS: usize = 5;

fn rand_vec(rng: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(lo..hi)).collect()
}

/// Random values bounded away from zero (relu-kink resampling).
fn rand_vec_off_zero(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n)
        .map(|_| loop {
            let v: f64 = rng.random_range(-1.0..1.0);
            if v.abs() >= 1e-3 {
                break v;
            }
        })
        .collect()
}

/// Probes all output coordinates by reducing with a fixed random weight.
fn weighted_sum(tape: &mut Tape<f64>, out: TensorId, rng: &mut ChaCha8Rng) -> Result<TensorId> {
    let w = rand_vec(rng, tape.numel(out), 0.5, 1.5);
    let shape = tape.shape(out).to_vec();
    let wc = tape.constant(w, &shape)?;
    let prod = tape.mul(out, wc)?;
    Ok(tape.sum_all(prod))
}

fn check_op<F>(name: &str, threshold: f64, mut run: F) -> Result<GradCheckEntry>
where
    F: FnMut(&mut ChaCha8Rng) -> Result<f64>,
{
    let mut rng = ChaCha8Rng::seed_from_u64(0x5E1D ^ crate::util::fnv1a64(name.as_bytes()));
    let mut max_err = 0.0f64;
    for _ in 0..REPEATS {
        max_err = max_err.max(run(&mut rng)?);
    }
    Ok(GradCheckEntry { name: name.to_string(), max_rel_err: max_err, threshold })
}

pub fn run_gradsuite() -> Result<Vec<GradCheckEntry>> {
    let mut entries = Vec::new();

    entries.push(check_op("matmul", SMOOTH, |rng| {
        let a = rand_vec(rng, 12, -1.0, 1.0);
        let b = rand_vec(rng, 8, -1.0, 1.0);
        let probe = ChaCha8Rng::seed_from_u64(1);
        grad_check_multi(
            |t, ids| {
                let y = t.matmul(ids[0], ids[1])?;
                weighted_sum(t, y, &mut probe.clone())
            },
            &[(&a, &[3, 4][..]), (&b, &[4, 2][..])],
            DEFAULT_H,
            None,
        )
    })?);

    entries.push(check_op("conv2d", SMOOTH, |rng| {
        let x = rand_vec(rng, 2 * 4 * 5, -1.0, 1.0);
        let w = rand_vec(rng, 3 * 2 * 9, -0.5, 0.5);
        let b = rand_vec(rng, 3, -0.5, 0.5);
        let probe = ChaCha8Rng::seed_from_u64(2);
        grad_check_multi(
            |t, ids| {
                let y = t.conv2d(ids[0], ids[1], ids[2])?;
                weighted_sum(t, y, &mut probe.clone())
            },
            &[(&x, &[2, 4, 5][..]), (&w, &[3, 2, 3, 3][..]), (&b, &[3][..])],
            DEFAULT_H,
            None,
        )
    })?);

    entries.push(check_op("batchnorm2d", SMOOTH, |rng| {
        let x = rand_vec(rng, 2 * 2 * 3 * 4, -2.0, 2.0);
        let g = rand_vec(rng, 2, 0.5, 1.5);
        let b = rand_vec(rng, 2, -0.5, 0.5);
        let probe = ChaCha8Rng::seed_from_u64(3);
        grad_check_multi(
            |t, ids| {
                let mut rm = vec![0.0; 2];
                let mut rv = vec![1.0; 2];
                let y = t.batchnorm2d(ids[0], ids[1], ids[2], &mut rm, &mut rv, true, false, 0.1, 1e-5)?;
                weighted_sum(t, y, &mut probe.clone())
            },
            &[(&x, &[2, 2, 3, 4][..]), (&g, &[2][..]), (&b, &[2][..])],
            DEFAULT_H,
            None,
        )
    })?);

    entries.push(check_op("relu", KINKED, |rng| {
        let x = rand_vec_off_zero(rng, 24);
        let probe = ChaCha8Rng::seed_from_u64(4);
        grad_check_multi(
            |t, ids| {
                let y = t.relu(ids[0]);
                weighted_sum(t, y, &mut probe.clone())
            },
            &[(&x, &[4, 6][..])],
            DEFAULT_H,
            None,
        )
    })?);

    entries.push(check_op("sigmoid", SMOOTH, |rng| {
        let x = rand_vec(rng, 20, -3.0, 3.0);
        let probe = ChaCha8Rng::seed_from_u64(5);
        grad_check_multi(
            |t, ids| {
                let y = t.sigmoid(ids[0]);
                weighted_sum(t, y, &mut probe.clone())
            },
            &[(&x, &[20][..])],
            DEFAULT_H,
            None,
        )
    })?);

    entries.push(check_op("tanh", SMOOTH, |rng| {
        let x = rand_vec(rng, 20, -3.0, 3.0);
        let probe = ChaCha8Rng::seed_from_u64(6);
        grad_check_multi(
            |t, ids| {
                let y = t.tanh(ids[0]);
                weighted_sum(t, y, &mut probe.clone())
            },
            &[(&x, &[20][..])],
            DEFAULT_H,
            None,
        )
    })?);

    entries.push(check_op("softmax", SMOOTH, |rng| {
        let x = rand_vec(rng, 18, -2.0, 2.0);
        let probe = ChaCha8Rng::seed_from_u64(7);
        grad_check_multi(
            |t, ids| {
                let y = t.softmax_last(ids[0])?;
                weighted_sum(t, y, &mut probe.clone())
            },
            &[(&x, &[3, 6][..])],
            DEFAULT_H,
            None,
        )
    })?);

    entries.push(check_op("avg_pool2d", SMOOTH, |rng| {
        let x = rand_vec(rng, 2 * 4 * 6, -1.0, 1.0);
        let probe = ChaCha8Rng::seed_from_u64(8);
        grad_check_multi(
            |t, ids| {
                let y = t.avg_pool2d(ids[0], 2, 2)?;
                weighted_sum(t, y, &mut probe.clone())
            },
            &[(&x, &[2, 4, 6][..])],
            DEFAULT_H,
            None,
        )
    })?);

    entries.push(check_op("max_pool2d", KINKED, |rng| {
        // ensure clear gaps inside every pooling window so the argmax is
        // stable under the probe step
        let x: Vec<f64> = loop {
            let cand = rand_vec(rng, 2 * 4 * 6, -1.0, 1.0);
            let mut ok = true;
            for c in 0..2 {
                for ti in 0..2 {
                    for fi in 0..3 {
                        let mut vals = Vec::new();
                        for dt in 0..2 {
                            for df in 0..2 {
                                vals.push(cand[c * 24 + (ti * 2 + dt) * 6 + fi * 2 + df]);
                            }
                        }
                        vals.sort_by(|a, b| b.partial_cmp(a).unwrap());
                        if vals[0] - vals[1] < 1e-3 {
                            ok = false;
                        }
                    }
                }
            }
            if ok {
                break cand;
            }
        };
        let probe = ChaCha8Rng::seed_from_u64(9);
        grad_check_multi(
            |t, ids| {
                let y = t.max_pool2d(ids[0], 2, 2)?;
                weighted_sum(t, y, &mut probe.clone())
            },
            &[(&x, &[2, 4, 6][..])],
            DEFAULT_H,
            None,
        )
    })?);

    entries.push(check_op("linear", SMOOTH, |rng| {
        let x = rand_vec(rng, 3 * 4, -1.0, 1.0);
        let w = rand_vec(rng, 4 * 5, -0.5, 0.5);
        let b = rand_vec(rng, 5, -0.5, 0.5);
        let probe = ChaCha8Rng::seed_from_u64(10);
        grad_check_multi(
            |t, ids| {
                let y = t.linear(ids[0], ids[1], ids[2])?;
                weighted_sum(t, y, &mut probe.clone())
            },
            &[(&x, &[3, 4][..]), (&w, &[4, 5][..]), (&b, &[5][..])],
            DEFAULT_H,
            None,
        )
    })?);

    entries.push(check_op("layer_norm", SMOOTH, |rng| {
        let x = rand_vec(rng, 3 * 6, -2.0, 2.0);
        let g = rand_vec(rng, 6, 0.5, 1.5);
        let b = rand_vec(rng, 6, -0.5, 0.5);
        let probe = ChaCha8Rng::seed_from_u64(11);
        grad_check_multi(
            |t, ids| {
                let y = t.layer_norm_last(ids[0], ids[1], ids[2], 1e-5)?;
                weighted_sum(t, y, &mut probe.clone())
            },
            &[(&x, &[3, 6][..]), (&g, &[6][..]), (&b, &[6][..])],
            DEFAULT_H,
            None,
        )
    })?);

    entries.push(check_op("cross_stitch", SMOOTH, |rng| {
        // out_sed = a00 (.) sed + a01 (.) doa; out_doa symmetric
        let c = 3usize;
        let sed = rand_vec(rng, c * 4, -1.0, 1.0);
        let doa = rand_vec(rng, c * 4, -1.0, 1.0);
        let a00 = rand_vec(rng, c, 0.5, 1.0);
        let a01 = rand_vec(rng, c, 0.0, 0.5);
        let a10 = rand_vec(rng, c, 0.0, 0.5);
        let a11 = rand_vec(rng, c, 0.5, 1.0);
        let probe = ChaCha8Rng::seed_from_u64(12);
        grad_check_multi(
            |t, ids| {
                let s00 = t.scale_channels(ids[0], ids[2], 0)?;
                let s01 = t.scale_channels(ids[1], ids[3], 0)?;
                let new_sed = t.add(s00, s01)?;
                let s10 = t.scale_channels(ids[0], ids[4], 0)?;
                let s11 = t.scale_channels(ids[1], ids[5], 0)?;
                let new_doa = t.add(s10, s11)?;
                let both = t.concat_last(&[new_sed, new_doa])?;
                weighted_sum(t, both, &mut probe.clone())
            },
            &[
                (&sed, &[c, 4][..]),
                (&doa, &[c, 4][..]),
                (&a00, &[c][..]),
                (&a01, &[c][..]),
                (&a10, &[c][..]),
                (&a11, &[c][..]),
            ],
            DEFAULT_H,
            None,
        )
    })?);

    entries.push(check_op("mhsa", KINKED, |rng| {
        let (t_frames, d) = (4usize, 8usize);
        let mut store: ParamStore<f64> = ParamStore::new(rng.random::<u64>());
        let settings = MhsaSettings { dim: d, heads: 2, scaled_logits: false, stabilizers: true };
        let layer = MhsaLayer::register(&mut store, "g", settings)?;
        let x = rand_vec(rng, t_frames * d, -1.0, 1.0);
        let pos = positional_encoding(t_frames, d);
        // gather param values as grad-check inputs
        let names: Vec<String> = store.iter().map(|p| p.name.clone()).collect();
        let param_data: Vec<(Vec<f64>, Vec<usize>)> = store
            .iter()
            .map(|p| (p.value.data.clone(), p.value.shape.clone()))
            .collect();
        let x_shape = [1, t_frames, d];
        let mut inputs: Vec<(&[f64], &[usize])> = vec![(&x, &x_shape[..])];
        for (d_, s_) in &param_data {
            inputs.push((d_, s_));
        }
        let probe = ChaCha8Rng::seed_from_u64(13);
        grad_check_multi(
            |t, ids| {
                let pos_id = t.constant_f64(&pos.data, &[1, t_frames, d])?;
                let id_map: std::collections::HashMap<String, TensorId> =
                    names.iter().cloned().zip(ids[1..].iter().copied()).collect();
                let lookup = |n: &str| id_map[n];
                let y = layer.forward(t, &store, &lookup, ids[0], pos_id)?;
                weighted_sum(t, y, &mut probe.clone())
            },
            &inputs,
            DEFAULT_H,
            None,
        )
    })?);

    entries.push(check_op("tpit_loss", KINKED, |rng| {
        let (t_frames, m, k) = (3usize, 2usize, 4usize);
        let sed = rand_vec(rng, t_frames * m * k, 0.05, 0.95);
        let doa = rand_vec(rng, t_frames * m * 3, -0.8, 0.8);
        let mut labels = Vec::new();
        for _ in 0..t_frames {
            let mut l = FrameLabel::silent(m);
            for track in 0..m {
                if rng.random_range(0.0..1.0) < 0.7 {
                    l.active[track] = true;
                    l.class_idx[track] = rng.random_range(0..k);
                    l.doa_unit[track] = crate::util::unit_vec_deg(
                        rng.random_range(-180..180),
                        rng.random_range(-45..=45),
                    );
                }
            }
            labels.push(l);
        }
        grad_check_multi(
            |t, ids| {
                Ok(pit_loss(t, ids[0], ids[1], &[labels.clone()], 1.0, PitMode::Frame)?.loss)
            },
            &[(&sed, &[1, t_frames, m, k][..]), (&doa, &[1, t_frames, m, 3][..])],
            DEFAULT_H,
            None,
        )
    })?);

    entries.push(full_model_check()?);

    Ok(entries)
}

/// Finite differences through the whole tiny-config network + tPIT loss,
/// over a deterministic sample of parameter coordinates.
fn full_model_check() -> Result<GradCheckEntry> {
    let config = ModelConfig { mhsa_layers: 1, ..ModelConfig::tiny() };
    let seed = 0xE1172u64;
    let (t_in, f_in) = (8usize, 16usize);
    let t_out = t_in / 4;
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let sed_in = rand_vec(&mut rng, 4 * t_in * f_in, -1.0, 1.0);
    let doa_in = rand_vec(&mut rng, 7 * t_in * f_in, -1.0, 1.0);
    let mut labels = Vec::new();
    for _ in 0..t_out {
        let mut l = FrameLabel::silent(config.n_tracks);
        l.active[0] = true;
        l.class_idx[0] = rng.random_range(0..config.n_classes);
        l.doa_unit[0] =
            crate::util::unit_vec_deg(rng.random_range(-180..180), rng.random_range(-45..=45));
        labels.push(l);
    }

    // template model enumerates trainable parameter metadata
    let template: Einv2<f64> = Einv2::new(config, seed)?;
    let meta: Vec<(String, Vec<f64>, Vec<usize>)> = template
        .params
        .iter()
        .filter(|p| p.trainable)
        .map(|p| (p.name.clone(), p.value.data.clone(), p.value.shape.clone()))
        .collect();
    let total: usize = meta.iter().map(|(_, d, _)| d.len()).sum();
    // deterministic spread of ~128 coordinates across all parameters
    let n_coords = 128usize.min(total);
    let coords: Vec<usize> = (0..n_coords).map(|i| i * total / n_coords).collect();

    let loss_fn = build_model_loss(config, seed, &sed_in, &doa_in, labels);
    let err = grad_check_param_leaves(loss_fn, &meta, &coords)?;
    Ok(GradCheckEntry { name: "einv2_tiny_loss".into(), max_rel_err: err, threshold: KINKED })
}

type ModelLossFn = Box<dyn Fn(&mut Tape<f64>, &[TensorId], &[String]) -> Result<TensorId>>;

fn build_model_loss(
    config: ModelConfig,
    seed: u64,
    sed_in: &[f64],
    doa_in: &[f64],
    labels: Vec<FrameLabel>,
) -> ModelLossFn {
    let sed_in = sed_in.to_vec();
    let doa_in = doa_in.to_vec();
    let t_in = 8usize;
    let f_in = 16usize;
    Box::new(move |tape, ids, names| {
        let mut model: Einv2<f64> = Einv2::new(config, seed)?;
        // run the forward with the supplied leaves standing in for params
        let si = tape.constant(sed_in.clone(), &[1, 4, t_in, f_in])?;
        let di = tape.constant(doa_in.clone(), &[1, 7, t_in, f_in])?;
        let pass = model.forward_with_leaves(tape, si, di, ForwardCtx::frozen_train(), names, ids)?;
        match pass.output {
            Prediction::Trackwise { sed, doa } => {
                Ok(pit_loss(tape, sed, doa, &[labels.clone()], 1.0, PitMode::Frame)?.loss)
            }
            Prediction::Seldnet { .. } => unreachable!(),
        }
    })
}

fn grad_check_param_leaves(
    f: ModelLossFn,
    meta: &[(String, Vec<f64>, Vec<usize>)],
    coords: &[usize],
) -> Result<f64> {
    let names: Vec<String> = meta.iter().map(|(n, _, _)| n.clone()).collect();
    let eval = |datas: &[Vec<f64>], want_grad: bool| -> Result<(f64, Vec<Vec<f64>>)> {
        let mut tape = Tape::<f64>::new();
        let mut ids = Vec::new();
        for (d, (_, _, shape)) in datas.iter().zip(meta) {
            ids.push(tape.leaf(d.clone(), shape, want_grad)?);
        }
        let out = f(&mut tape, &ids, &names)?;
        let val = tape.scalar(out);
        let mut grads = Vec::new();
        if want_grad {
            tape.backward(out)?;
            for &id in &ids {
                grads.push(
                    tape.grad(id).map(|g| g.to_vec()).unwrap_or_else(|| vec![0.0; tape.numel(id)]),
                );
            }
        }
        Ok((val, grads))
    };
    let base: Vec<Vec<f64>> = meta.iter().map(|(_, d, _)| d.clone()).collect();
    let (_, analytic) = eval(&base, true)?;
    let mut max_err = 0.0f64;
    for &flat in coords {
        let mut rem = flat;
        let mut which = 0usize;
        while rem >= base[which].len() {
            rem -= base[which].len();
            which += 1;
        }
        let h = DEFAULT_H;
        let mut plus = base.clone();
        plus[which][rem] += h;
        let mut minus = base.clone();
        minus[which][rem] -= h;
        let (fp, _) = eval(&plus, false)?;
        let (fm, _) = eval(&minus, false)?;
        let numeric = (fp - fm) / (2.0 * h);
        max_err = max_err.max(crate::diffcore::rel_err(analytic[which][rem], numeric));
    }
    Ok(max_err)
}

pub fn format_gradsuite(entries: &[GradCheckEntry]) -> String {
    let mut out = String::from("check               max_rel_err   threshold  status\n");
    for e in entries {
        out.push_str(&format!(
            "{:<19} {:<13.3e} {:<10.0e} {}\n",
            e.name,
            e.max_rel_err,
            e.threshold,
            if e.passed() { "pass" } else { "FAIL" }
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn primitive_checks_pass() {
        // the full suite (with the model check) runs in the acceptance
        // tests; here just the cheapest primitives as a smoke check
        let entries = run_gradsuite().unwrap();
        for e in &entries {
            assert!(e.passed(), "{} failed: {:.3e} >= {:.0e}", e.name, e.max_rel_err, e.threshold);
        }
    }
}
