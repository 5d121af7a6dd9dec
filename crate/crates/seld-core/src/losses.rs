//! Per-track losses and their permutation-invariant combination.
//!
//! Track order in the labels is arbitrary; the loss assigns label tracks to
//! prediction tracks per frame (tPIT) or per chunk (cPIT) by exhaustive
//! minimization, then backpropagates through the selected assignment only.
//! Selection happens on plain values; the returned loss is an ordinary graph
//! composition of the aligned targets, so gradients come from the tape.

use crate::data::LabelRow;
use crate::diffcore::{Element, Tape, TensorId};
use crate::error::{Result, SeldError};
use crate::util::unit_vec_deg;

const BCE_CLAMP: f64 = 1e-7;
/// Enumeration guard: beyond this track count a Hungarian path would be
/// required, which nothing in this artifact needs.
pub const MAX_ENUM_TRACKS: usize = 6;

/// Ground truth for one output frame across `M` tracks.
#[derive(Clone, Debug, PartialEq)]
pub struct FrameLabel {
    pub active: Vec<bool>,
    pub class_idx: Vec<usize>,
    pub doa_unit: Vec<[f64; 3]>,
}

impl FrameLabel {
    pub fn silent(n_tracks: usize) -> Self {
        FrameLabel {
            active: vec![false; n_tracks],
            class_idx: vec![0; n_tracks],
            doa_unit: vec![[0.0; 3]; n_tracks],
        }
    }

    pub fn n_tracks(&self) -> usize {
        self.active.len()
    }

    /// Sorted multiset of active classes; chunk boundaries key off this so
    /// they are invariant to track relabeling.
    fn class_multiset(&self) -> Vec<usize> {
        let mut v: Vec<usize> = (0..self.n_tracks())
            .filter(|&m| self.active[m])
            .map(|m| self.class_idx[m])
            .collect();
        v.sort_unstable();
        v
    }
}

/// Expands label rows into per-frame track labels.
pub fn labels_to_frames(rows: &[LabelRow], n_frames: usize, n_tracks: usize) -> Vec<FrameLabel> {
    let mut frames = vec![FrameLabel::silent(n_tracks); n_frames];
    for r in rows {
        if r.frame >= n_frames || r.track >= n_tracks {
            continue;
        }
        let f = &mut frames[r.frame];
        f.active[r.track] = true;
        f.class_idx[r.track] = r.class;
        f.doa_unit[r.track] = unit_vec_deg(r.azimuth, r.elevation);
    }
    frames
}

/// A maximal span of frames with an unchanged set of active events, plus the
/// label-track permutation chosen for it.
#[derive(Clone, Debug, PartialEq)]
pub struct Chunk {
    pub start: usize,
    pub end: usize,
    pub permutation: Vec<usize>,
}

/// Splits a clip at every frame where the multiset of active classes
/// changes. An empty clip is one silent chunk.
pub fn chunk_segmentation(labels: &[FrameLabel]) -> Vec<Chunk> {
    let n_tracks = labels.first().map(|l| l.n_tracks()).unwrap_or(0);
    let identity: Vec<usize> = (0..n_tracks).collect();
    if labels.is_empty() {
        return vec![Chunk { start: 0, end: 0, permutation: identity }];
    }
    let mut chunks = Vec::new();
    let mut start = 0usize;
    let mut current = labels[0].class_multiset();
    for (t, l) in labels.iter().enumerate().skip(1) {
        let ms = l.class_multiset();
        if ms != current {
            chunks.push(Chunk { start, end: t, permutation: identity.clone() });
            start = t;
            current = ms;
        }
    }
    chunks.push(Chunk { start, end: labels.len(), permutation: identity });
    chunks
}

/// Mean binary cross-entropy over the class vector, predictions clamped to
/// `[1e-7, 1 - 1e-7]` inside the logs.
pub fn sed_loss_value(pred: &[f64], target: &[f64]) -> f64 {
    debug_assert_eq!(pred.len(), target.len());
    let mut s = 0.0;
    for (&p, &t) in pred.iter().zip(target) {
        s += -(t * p.max(BCE_CLAMP).ln() + (1.0 - t) * (1.0 - p).max(BCE_CLAMP).ln());
    }
    s / pred.len() as f64
}

/// Mean squared error over the 3 DoA components, zero for inactive targets.
pub fn doa_loss_value(pred: &[f64; 3], target: &[f64; 3], active: bool) -> f64 {
    if !active {
        return 0.0;
    }
    let mut s = 0.0;
    for c in 0..3 {
        let d = pred[c] - target[c];
        s += d * d;
    }
    s / 3.0
}

pub(crate) fn permutations_lex(m: usize) -> Vec<Vec<usize>> {
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
    rec(&mut Vec::new(), &mut (0..m).collect(), &mut out);
    out
}

/// One batch item's predictions viewed as f64 slices.
struct PredView<'a, E: Element> {
    sed: &'a [E],
    doa: &'a [E],
    m: usize,
    k: usize,
}

impl<E: Element> PredView<'_, E> {
    fn sed_row(&self, t: usize, track: usize) -> Vec<f64> {
        let base = (t * self.m + track) * self.k;
        self.sed[base..base + self.k].iter().map(|v| v.to_f64()).collect()
    }

    fn doa_row(&self, t: usize, track: usize) -> [f64; 3] {
        let base = (t * self.m + track) * 3;
        [self.doa[base].to_f64(), self.doa[base + 1].to_f64(), self.doa[base + 2].to_f64()]
    }

    /// Loss of assigning prediction track `i` to label track `j` at frame `t`.
    fn pair_loss(&self, t: usize, i: usize, j: usize, label: &FrameLabel, beta: f64) -> f64 {
        let mut target = vec![0.0f64; self.k];
        if label.active[j] {
            target[label.class_idx[j]] = 1.0;
        }
        let sed = sed_loss_value(&self.sed_row(t, i), &target);
        let doa = doa_loss_value(&self.doa_row(t, i), &label.doa_unit[j], label.active[j]);
        sed + beta * doa
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PitMode {
    Frame,
    Chunk,
}

pub struct PitOutcome {
    pub loss: TensorId,
    /// Chosen assignment per batch item (one chunk per frame in tPIT).
    pub chunks: Vec<Vec<Chunk>>,
}

fn check_pred_shapes<E: Element>(
    tape: &Tape<E>,
    sed_pred: TensorId,
    doa_pred: TensorId,
) -> Result<(usize, usize, usize, usize)> {
    let ss = tape.shape(sed_pred).to_vec();
    let ds = tape.shape(doa_pred).to_vec();
    if ss.len() != 4 || ds.len() != 4 || ds[3] != 3 {
        return Err(SeldError::Shape(format!(
            "expected sed [N,T,M,K] and doa [N,T,M,3], got {ss:?} and {ds:?}"
        )));
    }
    if ss[..3] != ds[..3] {
        return Err(SeldError::Shape(format!("sed/doa leading dims disagree: {ss:?} vs {ds:?}")));
    }
    Ok((ss[0], ss[1], ss[2], ss[3]))
}

/// Builds the PIT loss on the tape.
///
/// `labels[n][t]` is the frame label for batch item `n`. Assignments minimize
/// the summed per-track loss per frame (`PitMode::Frame`) or per chunk
/// (`PitMode::Chunk`); ties go to the lexicographically first permutation.
pub fn pit_loss<E: Element>(
    tape: &mut Tape<E>,
    sed_pred: TensorId,
    doa_pred: TensorId,
    labels: &[Vec<FrameLabel>],
    beta: f64,
    mode: PitMode,
) -> Result<PitOutcome> {
    let (n, t_frames, m, k) = check_pred_shapes(tape, sed_pred, doa_pred)?;
    if labels.len() != n || labels.iter().any(|l| l.len() != t_frames) {
        return Err(SeldError::Shape(format!(
            "labels shape does not match predictions [N={n}, T={t_frames}]"
        )));
    }
    if m > MAX_ENUM_TRACKS {
        return Err(SeldError::Contract(format!(
            "permutation enumeration is capped at {MAX_ENUM_TRACKS} tracks, got {m}"
        )));
    }
    let perms = permutations_lex(m);

    // choose assignments from values
    let mut all_chunks: Vec<Vec<Chunk>> = Vec::with_capacity(n);
    for bi in 0..n {
        let view = PredView {
            sed: &tape.data(sed_pred)[bi * t_frames * m * k..(bi + 1) * t_frames * m * k],
            doa: &tape.data(doa_pred)[bi * t_frames * m * 3..(bi + 1) * t_frames * m * 3],
            m,
            k,
        };
        let spans: Vec<(usize, usize)> = match mode {
            PitMode::Frame => (0..t_frames).map(|t| (t, t + 1)).collect(),
            PitMode::Chunk => {
                chunk_segmentation(&labels[bi]).into_iter().map(|c| (c.start, c.end)).collect()
            }
        };
        let mut chunks = Vec::with_capacity(spans.len());
        for (start, end) in spans {
            let mut best = f64::INFINITY;
            let mut best_perm = &perms[0];
            for perm in &perms {
                let mut total = 0.0;
                for t in start..end {
                    for (i, &j) in perm.iter().enumerate() {
                        total += view.pair_loss(t, i, j, &labels[bi][t], beta);
                    }
                }
                if total < best {
                    best = total;
                    best_perm = perm;
                }
            }
            chunks.push(Chunk { start, end, permutation: best_perm.clone() });
        }
        all_chunks.push(chunks);
    }

    // aligned constant targets under the chosen assignment
    let mut sed_target = vec![0.0f64; n * t_frames * m * k];
    let mut one_minus = vec![1.0f64; n * t_frames * m * k];
    let mut doa_target = vec![0.0f64; n * t_frames * m * 3];
    let mut mask = vec![0.0f64; n * t_frames * m];
    for (bi, chunks) in all_chunks.iter().enumerate() {
        for chunk in chunks {
            for t in chunk.start..chunk.end {
                let label = &labels[bi][t];
                for (i, &j) in chunk.permutation.iter().enumerate() {
                    if !label.active[j] {
                        continue;
                    }
                    let sbase = ((bi * t_frames + t) * m + i) * k + label.class_idx[j];
                    sed_target[sbase] = 1.0;
                    one_minus[sbase] = 0.0;
                    let dbase = ((bi * t_frames + t) * m + i) * 3;
                    for c in 0..3 {
                        doa_target[dbase + c] = label.doa_unit[j][c];
                    }
                    mask[(bi * t_frames + t) * m + i] = 1.0;
                }
            }
        }
    }

    let sed_shape = [n, t_frames, m, k];
    let doa_shape = [n, t_frames, m, 3];
    let t_const = tape.constant_f64(&sed_target, &sed_shape)?;
    let omt_const = tape.constant_f64(&one_minus, &sed_shape)?;
    let doa_const = tape.constant_f64(&doa_target, &doa_shape)?;
    let mask_const = tape.constant_f64(&mask, &[n, t_frames, m])?;

    // BCE: -(t ln p + (1-t) ln (1-p)), mean over K
    let ln_p = tape.ln_clamped(sed_pred, BCE_CLAMP);
    let neg_p = tape.scale(sed_pred, -1.0);
    let one_m_p = tape.add_scalar(neg_p, 1.0);
    let ln_1mp = tape.ln_clamped(one_m_p, BCE_CLAMP);
    let a = tape.mul(t_const, ln_p)?;
    let b = tape.mul(omt_const, ln_1mp)?;
    let ab = tape.add(a, b)?;
    let bce = tape.scale(ab, -1.0);
    let bce_track = tape.mean_last(bce)?; // [N,T,M]

    // masked MSE over the 3 components
    let diff = tape.sub(doa_pred, doa_const)?;
    let sq = tape.mul(diff, diff)?;
    let mse_raw = tape.mean_last(sq)?; // [N,T,M]
    let mse_track = tape.mul(mse_raw, mask_const)?;
    let mse_weighted = tape.scale(mse_track, beta);

    let per_track = tape.add(bce_track, mse_weighted)?;
    let per_frame = tape.sum_last(per_track)?; // [N,T]
    let loss = tape.mean_all(per_frame);
    Ok(PitOutcome { loss, chunks: all_chunks })
}

pub fn tpit_loss<E: Element>(
    tape: &mut Tape<E>,
    sed_pred: TensorId,
    doa_pred: TensorId,
    labels: &[Vec<FrameLabel>],
    beta: f64,
) -> Result<PitOutcome> {
    pit_loss(tape, sed_pred, doa_pred, labels, beta, PitMode::Frame)
}

pub fn cpit_loss<E: Element>(
    tape: &mut Tape<E>,
    sed_pred: TensorId,
    doa_pred: TensorId,
    labels: &[Vec<FrameLabel>],
    beta: f64,
) -> Result<PitOutcome> {
    pit_loss(tape, sed_pred, doa_pred, labels, beta, PitMode::Chunk)
}

/// Loss for the class-indexed output format: BCE on `[N,T,K]` multi-hot
/// activity, MSE on `[N,T,K,3]` DoA masked to active classes. Homogeneous
/// overlap collapses to one slot per class (first track wins).
pub fn seldnet_loss<E: Element>(
    tape: &mut Tape<E>,
    sed_pred: TensorId,
    doa_pred: TensorId,
    labels: &[Vec<FrameLabel>],
    beta: f64,
) -> Result<TensorId> {
    let ss = tape.shape(sed_pred).to_vec();
    let ds = tape.shape(doa_pred).to_vec();
    if ss.len() != 3 || ds.len() != 4 || ds[3] != 3 || ss[..] != ds[..3] {
        return Err(SeldError::Shape(format!(
            "expected sed [N,T,K] and doa [N,T,K,3], got {ss:?} and {ds:?}"
        )));
    }
    let (n, t_frames, k) = (ss[0], ss[1], ss[2]);
    if labels.len() != n || labels.iter().any(|l| l.len() != t_frames) {
        return Err(SeldError::Shape("labels shape does not match predictions".into()));
    }
    let mut sed_target = vec![0.0f64; n * t_frames * k];
    let mut one_minus = vec![1.0f64; n * t_frames * k];
    let mut doa_target = vec![0.0f64; n * t_frames * k * 3];
    let mut mask = vec![0.0f64; n * t_frames * k];
    for bi in 0..n {
        for (t, label) in labels[bi].iter().enumerate() {
            for m in 0..label.n_tracks() {
                if !label.active[m] {
                    continue;
                }
                let c = label.class_idx[m];
                let sbase = (bi * t_frames + t) * k + c;
                if mask[sbase] != 0.0 {
                    continue; // homogeneous overlap: one DoA slot per class
                }
                sed_target[sbase] = 1.0;
                one_minus[sbase] = 0.0;
                mask[sbase] = 1.0;
                for ci in 0..3 {
                    doa_target[sbase * 3 + ci] = label.doa_unit[m][ci];
                }
            }
        }
    }
    let t_const = tape.constant_f64(&sed_target, &[n, t_frames, k])?;
    let omt_const = tape.constant_f64(&one_minus, &[n, t_frames, k])?;
    let doa_const = tape.constant_f64(&doa_target, &[n, t_frames, k, 3])?;
    let mask_const = tape.constant_f64(&mask, &[n, t_frames, k])?;

    let ln_p = tape.ln_clamped(sed_pred, BCE_CLAMP);
    let neg_p = tape.scale(sed_pred, -1.0);
    let one_m_p = tape.add_scalar(neg_p, 1.0);
    let ln_1mp = tape.ln_clamped(one_m_p, BCE_CLAMP);
    let a = tape.mul(t_const, ln_p)?;
    let b = tape.mul(omt_const, ln_1mp)?;
    let ab = tape.add(a, b)?;
    let bce = tape.scale(ab, -1.0);
    let bce_frame = tape.mean_last(bce)?; // [N,T]

    let diff = tape.sub(doa_pred, doa_const)?;
    let sq = tape.mul(diff, diff)?;
    let mse_raw = tape.mean_last(sq)?; // [N,T,K]
    let mse_masked = tape.mul(mse_raw, mask_const)?;
    let mse_frame = tape.sum_last(mse_masked)?; // [N,T]
    let mse_weighted = tape.scale(mse_frame, beta);

    let per_frame = tape.add(bce_frame, mse_weighted)?;
    Ok(tape.mean_all(per_frame))
}
