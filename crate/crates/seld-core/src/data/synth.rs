//! Synthetic FOA scene generation with exact labels.
//!
//! Each class has a distinct deterministic signature (harmonic stack plus a
//! band of filtered noise) so detection is learnable; events are placed by a
//! Poisson process, rejected when they would exceed the polyphony cap, and
//! statically encoded at an integer-degree direction.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::util::cos_sin_deg;

use super::labels::LabelRow;
use super::{FoaClip, SAMPLES_PER_LABEL_FRAME, SAMPLE_RATE};

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct SceneSpec {
    pub n_clips: usize,
    pub clip_secs: f64,
    pub n_classes: usize,
    pub max_polyphony: usize,
    /// Expected event onsets per second (Poisson).
    pub event_rate: f64,
    pub event_dur_range: (f64, f64),
    pub snr_db_range: (f64, f64),
    pub azimuth_range: (i64, i64),
    pub elevation_range: (i64, i64),
    pub seed: u64,
}

impl Default for SceneSpec {
    fn default() -> Self {
        SceneSpec {
            n_clips: 16,
            clip_secs: 60.0,
            n_classes: 14,
            max_polyphony: 2,
            event_rate: 0.3,
            event_dur_range: (0.5, 4.0),
            snr_db_range: (10.0, 30.0),
            azimuth_range: (-180, 180),
            elevation_range: (-45, 45),
            seed: 1,
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct PlacedEvent {
    pub class: usize,
    pub track: usize,
    pub onset_frame: usize,
    pub n_frames: usize,
    pub azimuth: i64,
    pub elevation: i64,
    pub amplitude: f64,
}

#[derive(Clone, Copy, Debug, Default)]
pub struct SynthReport {
    pub n_clips: usize,
    pub n_events: usize,
    /// Events rejected because they would exceed the polyphony cap.
    pub n_thinned: usize,
}

impl SynthReport {
    /// High rejection pressure means the requested rate is infeasible under
    /// the polyphony cap; callers should warn and accept the thinning.
    pub fn overloaded(&self) -> bool {
        self.n_thinned > self.n_events.max(1)
    }
}

/// Fundamental of class `k`'s harmonic stack.
pub fn class_f0(class: usize) -> f64 {
    220.0 * 2f64.powf(class as f64 / 7.0)
}

/// Center of class `k`'s noise band.
pub fn class_noise_center(class: usize) -> f64 {
    500.0 + 400.0 * class as f64
}

/// Per-clip RNG stream: independent of other clips, stable across runs.
pub fn clip_rng(seed: u64, clip_idx: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(clip_idx))
}

/// Mono signature for one event: harmonic tones + band-limited noise,
/// peak-normalized, with 10 ms raised-cosine fades.
fn class_signature(class: usize, n_samples: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let f0 = class_f0(class);
    let fc = class_noise_center(class);
    let nyquist = SAMPLE_RATE as f64 / 2.0;
    let mut sig = vec![0.0f64; n_samples];

    // harmonic stack, amplitudes 1/h
    let mut stack_peak = 0.0;
    for h in 1..=4usize {
        let f = f0 * h as f64;
        if f >= nyquist {
            break;
        }
        let phase: f64 = rng.random_range(0.0..std::f64::consts::TAU);
        let amp = 1.0 / h as f64;
        stack_peak += amp;
        let w = std::f64::consts::TAU * f / SAMPLE_RATE as f64;
        for (i, s) in sig.iter_mut().enumerate() {
            *s += amp * (w * i as f64 + phase).sin();
        }
    }

    // band noise: one-pole low-passed white noise heterodyned to fc
    let normal = Normal::new(0.0, 1.0).expect("valid normal");
    let mut lp = 0.0f64;
    let alpha = 0.05;
    let wc = std::f64::consts::TAU * fc.min(nyquist * 0.9) / SAMPLE_RATE as f64;
    let phase: f64 = rng.random_range(0.0..std::f64::consts::TAU);
    let noise_gain = 0.4 * stack_peak.max(1.0);
    for (i, s) in sig.iter_mut().enumerate() {
        lp += alpha * (normal.sample(rng) - lp);
        *s += noise_gain * lp * (wc * i as f64 + phase).sin();
    }

    // peak-normalize and apply fades
    let peak = sig.iter().fold(0.0f64, |m, &v| m.max(v.abs()));
    if peak > 0.0 {
        for s in &mut sig {
            *s /= peak;
        }
    }
    let fade = (SAMPLE_RATE / 100).min(n_samples / 2); // 10 ms
    for i in 0..fade {
        let g = 0.5 - 0.5 * (std::f64::consts::PI * i as f64 / fade as f64).cos();
        sig[i] *= g;
        sig[n_samples - 1 - i] *= g;
    }
    sig
}

/// SN3D/ACN first-order encoding of a static source:
/// W = s, X = s cos(az) cos(el), Y = s sin(az) cos(el), Z = s sin(el).
///
/// Gains come from the exact integer-degree trig, so the rotation group of
/// the augmentation module commutes with encoding sample-exactly.
pub fn foa_encode(mono: &[f64], azimuth: i64, elevation: i64) -> [Vec<f64>; 4] {
    let (ca, sa) = cos_sin_deg(azimuth);
    let (ce, se) = cos_sin_deg(elevation);
    let gx = ca * ce;
    let gy = sa * ce;
    let gz = se;
    let mut out: [Vec<f64>; 4] = [
        Vec::with_capacity(mono.len()),
        Vec::with_capacity(mono.len()),
        Vec::with_capacity(mono.len()),
        Vec::with_capacity(mono.len()),
    ];
    for &s in mono {
        out[0].push(s);
        out[1].push(s * gx);
        out[2].push(s * gy);
        out[3].push(s * gz);
    }
    out
}

/// Places events for one clip without rendering audio.
pub fn place_events(spec: &SceneSpec, rng: &mut ChaCha8Rng, report: &mut SynthReport) -> Vec<PlacedEvent> {
    let clip_frames = (spec.clip_secs * 10.0).round() as usize;
    let mut events: Vec<PlacedEvent> = Vec::new();
    if spec.event_rate <= 0.0 {
        return events;
    }
    let min_frames = ((spec.event_dur_range.0 * 10.0).round() as usize).max(1);
    let max_frames = ((spec.event_dur_range.1 * 10.0).round() as usize).max(min_frames);
    let mut occupancy = vec![0usize; clip_frames];
    let mut t = 0.0f64;
    loop {
        let u: f64 = rng.random::<f64>();
        t += -(1.0 - u).ln() / spec.event_rate;
        let onset_frame = (t * 10.0).floor() as usize;
        if onset_frame + min_frames > clip_frames {
            break;
        }
        let dur: f64 = rng.random_range(spec.event_dur_range.0..=spec.event_dur_range.1);
        let n_frames =
            (((dur * 10.0).round() as usize).clamp(min_frames, max_frames)).min(clip_frames - onset_frame);
        let class = rng.random_range(0..spec.n_classes);
        let azimuth = rng.random_range(spec.azimuth_range.0..spec.azimuth_range.1);
        let elevation = rng.random_range(spec.elevation_range.0..=spec.elevation_range.1);
        let amplitude = rng.random_range(0.25..0.5);

        // first-free-track assignment; full tracks mean the polyphony cap
        // would be broken, so the event is thinned
        let span = onset_frame..onset_frame + n_frames;
        let track = (0..spec.max_polyphony).find(|&m| {
            !events.iter().any(|e| {
                e.track == m
                    && e.onset_frame < span.end
                    && span.start < e.onset_frame + e.n_frames
            })
        });
        let Some(track) = track else {
            report.n_thinned += 1;
            continue;
        };
        debug_assert!(span.clone().all(|fi| occupancy[fi] < spec.max_polyphony));
        for fi in span {
            occupancy[fi] += 1;
        }
        events.push(PlacedEvent { class, track, onset_frame, n_frames, azimuth, elevation, amplitude });
        report.n_events += 1;
    }
    events
}

/// Renders one clip deterministically from `(spec.seed, clip_idx)`.
pub fn synth_clip(spec: &SceneSpec, clip_idx: u64, report: &mut SynthReport) -> FoaClip {
    let mut rng = clip_rng(spec.seed, clip_idx);
    let clip_frames = (spec.clip_secs * 10.0).round() as usize;
    let clip_samples = clip_frames * SAMPLES_PER_LABEL_FRAME;
    let snr_db: f64 = rng.random_range(spec.snr_db_range.0..=spec.snr_db_range.1);

    let events = place_events(spec, &mut rng, report);

    let mut ch = [
        vec![0.0f64; clip_samples],
        vec![0.0f64; clip_samples],
        vec![0.0f64; clip_samples],
        vec![0.0f64; clip_samples],
    ];
    for ev in &events {
        let n = ev.n_frames * SAMPLES_PER_LABEL_FRAME;
        let sig = class_signature(ev.class, n, &mut rng);
        let enc = foa_encode(&sig, ev.azimuth, ev.elevation);
        let base = ev.onset_frame * SAMPLES_PER_LABEL_FRAME;
        for c in 0..4 {
            for (i, &v) in enc[c].iter().enumerate() {
                ch[c][base + i] += v * ev.amplitude;
            }
        }
    }

    // diffuse noise on W only, scaled to the drawn SNR vs the active signal
    let mut sum_sq = 0.0f64;
    let mut n_active = 0usize;
    for ev in &events {
        let base = ev.onset_frame * SAMPLES_PER_LABEL_FRAME;
        let n = ev.n_frames * SAMPLES_PER_LABEL_FRAME;
        for i in base..base + n {
            sum_sq += ch[0][i] * ch[0][i];
            n_active += 1;
        }
    }
    if n_active > 0 && sum_sq > 0.0 {
        let rms = (sum_sq / n_active as f64).sqrt();
        let noise_std = rms * 10f64.powf(-snr_db / 20.0);
        let normal = Normal::new(0.0, noise_std).expect("valid normal");
        for w in &mut ch[0] {
            *w += normal.sample(&mut rng);
        }
    }

    let mut labels = Vec::new();
    for ev in &events {
        for fi in ev.onset_frame..ev.onset_frame + ev.n_frames {
            labels.push(LabelRow {
                frame: fi,
                class: ev.class,
                track: ev.track,
                azimuth: ev.azimuth,
                elevation: ev.elevation,
            });
        }
    }
    labels.sort_by_key(|r| (r.frame, r.track));

    let channels = [
        ch[0].iter().map(|&v| v as f32).collect(),
        ch[1].iter().map(|&v| v as f32).collect(),
        ch[2].iter().map(|&v| v as f32).collect(),
        ch[3].iter().map(|&v| v as f32).collect(),
    ];
    FoaClip { channels, labels, n_label_frames: clip_frames }
}
