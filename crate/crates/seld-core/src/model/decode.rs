//! Prediction decoding: probabilities + raw DoA vectors -> event lists.

use crate::data::LabelRow;
use crate::metrics::{FrameEvents, ScoredEvent};
use crate::util::vec_to_angles;

use super::{SeldnetPrediction, TrackPrediction};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DecodedEvent {
    pub frame: usize,
    pub track: usize,
    pub class: usize,
    pub azimuth: f64,
    pub elevation: f64,
    /// DoA vector had (near-)zero norm; direction defaulted to (0, 0).
    pub degenerate_doa: bool,
}

fn doa_to_angles(v: [f64; 3]) -> (f64, f64, bool) {
    let norm = ((v[0] * v[0] + v[1] * v[1]) + v[2] * v[2]).sqrt();
    if norm < 1e-9 {
        return (0.0, 0.0, true);
    }
    let (az, el) = vec_to_angles(v);
    (az, el, false)
}

/// Per track per frame: argmax class, emitted iff its probability clears the
/// threshold. Two tracks may emit the same class at different directions.
pub fn decode_trackwise(pred: &TrackPrediction, threshold: f64) -> Vec<DecodedEvent> {
    let (t_frames, m, k) = (pred.sed.shape[0], pred.sed.shape[1], pred.sed.shape[2]);
    let mut events = Vec::new();
    for t in 0..t_frames {
        for track in 0..m {
            let row = &pred.sed.data[(t * m + track) * k..(t * m + track + 1) * k];
            let (mut best, mut best_p) = (0usize, row[0]);
            for (c, &p) in row.iter().enumerate().skip(1) {
                if p > best_p {
                    best = c;
                    best_p = p;
                }
            }
            if (best_p as f64) < threshold {
                continue;
            }
            let d = &pred.doa.data[(t * m + track) * 3..(t * m + track + 1) * 3];
            let (azimuth, elevation, degenerate_doa) =
                doa_to_angles([d[0] as f64, d[1] as f64, d[2] as f64]);
            events.push(DecodedEvent { frame: t, track, class: best, azimuth, elevation, degenerate_doa });
        }
    }
    events
}

/// Every class above threshold emits one event with its own DoA; homogeneous
/// overlap is not representable in this format.
pub fn decode_seldnet(pred: &SeldnetPrediction, threshold: f64) -> Vec<DecodedEvent> {
    let (t_frames, k) = (pred.sed.shape[0], pred.sed.shape[1]);
    let mut events = Vec::new();
    for t in 0..t_frames {
        for class in 0..k {
            let p = pred.sed.data[t * k + class] as f64;
            if p < threshold {
                continue;
            }
            let d = &pred.doa.data[(t * k + class) * 3..(t * k + class + 1) * 3];
            let (azimuth, elevation, degenerate_doa) =
                doa_to_angles([d[0] as f64, d[1] as f64, d[2] as f64]);
            events.push(DecodedEvent {
                frame: t,
                track: 0,
                class,
                azimuth,
                elevation,
                degenerate_doa,
            });
        }
    }
    events
}

/// Events -> scorer frames, with an optional frame offset (segment base).
pub fn events_to_frames(events: &[DecodedEvent], offset: usize, frames: &mut [FrameEvents]) {
    for e in events {
        let f = offset + e.frame;
        if f < frames.len() {
            frames[f].events.push(ScoredEvent {
                class: e.class,
                track: e.track,
                doa: crate::util::unit_vec_deg(e.azimuth.round() as i64, e.elevation.round() as i64),
            });
        }
    }
}

/// Events -> label CSV rows (integer-degree grid).
pub fn events_to_rows(events: &[DecodedEvent], offset: usize) -> Vec<LabelRow> {
    events
        .iter()
        .map(|e| LabelRow {
            frame: offset + e.frame,
            class: e.class,
            track: e.track,
            azimuth: crate::util::wrap_az_deg(e.azimuth.round() as i64),
            elevation: e.elevation.round().clamp(-90.0, 90.0) as i64,
        })
        .collect()
}
