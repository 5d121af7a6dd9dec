//! The dual-branch trackwise network.
//!
//! Two VGG-style conv encoders (SED on log-mel, DoA on log-mel + intensity)
//! with optional cross-stitch units between blocks, global average pooling
//! over frequency, per-track per-task MHSA stacks with cross-stitch between
//! task pairs, and trackwise sigmoid/tanh heads. Parameter sharing is
//! selectable: `none` (separate stacks), `hard` (one shared trunk), `soft`
//! (separate stacks + cross-stitch). A class-indexed (`seldnet`) head layout
//! is available for format comparisons.

mod attention;
pub mod decode;

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::diffcore::{Array, Element, InitSpec, ParamStore, Tape, TensorId};
use crate::error::{Result, SeldError};
use crate::features::FeatureClip;
use crate::util::fnv1a64;

pub use attention::{positional_encoding, self_attention, MhsaLayer, MhsaSettings};
pub use decode::{decode_seldnet, decode_trackwise, DecodedEvent};

pub const BASE_WIDTHS: [usize; 4] = [64, 128, 256, 512];
pub const POOLING: [(usize, usize); 4] = [(2, 2), (2, 2), (1, 2), (1, 2)];
/// Total time pooling: output frames = input frames / 4.
pub const TIME_POOL: usize = 4;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum PsMode {
    None,
    Hard,
    #[default]
    Soft,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum OutputFormat {
    #[default]
    Trackwise,
    Seldnet,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub n_classes: usize,
    pub n_tracks: usize,
    pub ps_mode: PsMode,
    pub output_format: OutputFormat,
    /// Scales the Table-layout widths [64,128,256,512] and the attention dim
    /// down for desk-scale models.
    pub width_divisor: usize,
    pub mhsa_layers: usize,
    pub mhsa_heads: usize,
    /// Conventional 1/sqrt(Dk) attention-logit scaling (off reproduces the
    /// printed form).
    pub scaled_logits: bool,
    /// Residual + layer norm around each MHSA layer.
    pub mhsa_stabilizers: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            n_classes: 14,
            n_tracks: 2,
            ps_mode: PsMode::Soft,
            output_format: OutputFormat::Trackwise,
            width_divisor: 1,
            mhsa_layers: 2,
            mhsa_heads: 8,
            scaled_logits: false,
            mhsa_stabilizers: true,
        }
    }
}

impl ModelConfig {
    pub fn tiny() -> Self {
        ModelConfig { width_divisor: 8, mhsa_heads: 2, ..Default::default() }
    }

    pub fn widths(&self) -> [usize; 4] {
        BASE_WIDTHS.map(|w| w / self.width_divisor)
    }

    /// Attention model dim = final conv width.
    pub fn model_dim(&self) -> usize {
        self.widths()[3]
    }

    pub fn head_dim(&self) -> usize {
        self.model_dim() / self.mhsa_heads
    }

    pub fn validate(&self) -> Result<()> {
        if self.width_divisor == 0 || BASE_WIDTHS[0] % self.width_divisor != 0 {
            return Err(SeldError::Config(format!(
                "width_divisor {} must divide {}",
                self.width_divisor, BASE_WIDTHS[0]
            )));
        }
        if self.mhsa_heads == 0 || self.model_dim() % self.mhsa_heads != 0 {
            return Err(SeldError::Config(format!(
                "model dim {} not divisible by {} heads",
                self.model_dim(),
                self.mhsa_heads
            )));
        }
        if self.n_tracks == 0 || self.n_tracks > crate::losses::MAX_ENUM_TRACKS {
            return Err(SeldError::Config(format!("n_tracks {} out of range", self.n_tracks)));
        }
        if self.n_classes == 0 || self.mhsa_layers == 0 {
            return Err(SeldError::Config("n_classes and mhsa_layers must be positive".into()));
        }
        Ok(())
    }

    pub fn hash(&self) -> u64 {
        let text = toml::to_string(self).expect("model config serializes");
        fnv1a64(text.as_bytes())
    }

    fn mhsa_settings(&self) -> MhsaSettings {
        MhsaSettings {
            dim: self.model_dim(),
            heads: self.mhsa_heads,
            scaled_logits: self.scaled_logits,
            stabilizers: self.mhsa_stabilizers,
        }
    }
}

// ── building blocks ─────────────────────────────────────────────────

const BN_MOMENTUM: f64 = 0.1;
const BN_EPS: f64 = 1e-5;

struct ConvBlock {
    prefix: String,
    pool: (usize, usize),
}

impl ConvBlock {
    fn register<E: Element>(
        store: &mut ParamStore<E>,
        prefix: &str,
        c_in: usize,
        c_out: usize,
        pool: (usize, usize),
    ) -> Result<Self> {
        for (i, cin) in [(1usize, c_in), (2, c_out)] {
            store.register(
                &format!("{prefix}.conv{i}.weight"),
                &[c_out, cin, 3, 3],
                InitSpec::UniformFanIn { fan_in: cin * 9 },
                true,
            )?;
            store.register(&format!("{prefix}.conv{i}.bias"), &[c_out], InitSpec::Constant(0.0), true)?;
            store.register(&format!("{prefix}.bn{i}.gamma"), &[c_out], InitSpec::Constant(1.0), true)?;
            store.register(&format!("{prefix}.bn{i}.beta"), &[c_out], InitSpec::Constant(0.0), true)?;
            store.register(
                &format!("{prefix}.bn{i}.running_mean"),
                &[c_out],
                InitSpec::Constant(0.0),
                false,
            )?;
            store.register(
                &format!("{prefix}.bn{i}.running_var"),
                &[c_out],
                InitSpec::Constant(1.0),
                false,
            )?;
        }
        Ok(ConvBlock { prefix: prefix.to_string(), pool })
    }

    fn forward<E: Element>(
        &self,
        tape: &mut Tape<E>,
        store: &mut ParamStore<E>,
        ids: &HashMap<String, TensorId>,
        x: TensorId,
        ctx: ForwardCtx,
    ) -> Result<TensorId> {
        let mut y = x;
        for i in [1usize, 2] {
            let w = ids[&format!("{}.conv{i}.weight", self.prefix)];
            let b = ids[&format!("{}.conv{i}.bias", self.prefix)];
            y = tape.conv2d(y, w, b)?;
            let gamma = ids[&format!("{}.bn{i}.gamma", self.prefix)];
            let beta = ids[&format!("{}.bn{i}.beta", self.prefix)];
            let rm_idx = store
                .lookup(&format!("{}.bn{i}.running_mean", self.prefix))
                .expect("registered");
            let rv_idx = store
                .lookup(&format!("{}.bn{i}.running_var", self.prefix))
                .expect("registered");
            let mut rm = store.get(rm_idx).value.data.clone();
            let mut rv = store.get(rv_idx).value.data.clone();
            let update = ctx.training && ctx.update_running;
            y = tape.batchnorm2d(
                y,
                gamma,
                beta,
                &mut rm,
                &mut rv,
                ctx.training,
                update,
                BN_MOMENTUM,
                BN_EPS,
            )?;
            if update {
                store.get_mut(rm_idx).value.data = rm;
                store.get_mut(rv_idx).value.data = rv;
            }
            y = tape.relu(y);
        }
        tape.avg_pool2d(y, self.pool.0, self.pool.1)
    }
}

struct CrossStitch {
    prefix: String,
}

impl CrossStitch {
    fn register<E: Element>(store: &mut ParamStore<E>, prefix: &str, channels: usize) -> Result<Self> {
        // near-identity with weak sharing
        store.register(&format!("{prefix}.a00"), &[channels], InitSpec::Constant(0.9), true)?;
        store.register(&format!("{prefix}.a01"), &[channels], InitSpec::Constant(0.1), true)?;
        store.register(&format!("{prefix}.a10"), &[channels], InitSpec::Constant(0.1), true)?;
        store.register(&format!("{prefix}.a11"), &[channels], InitSpec::Constant(0.9), true)?;
        Ok(CrossStitch { prefix: prefix.to_string() })
    }

    /// Per channel c: `sed' = a00[c] sed + a01[c] doa`,
    /// `doa' = a10[c] sed + a11[c] doa`. `axis` locates the channel dim.
    fn forward<E: Element>(
        &self,
        tape: &mut Tape<E>,
        ids: &HashMap<String, TensorId>,
        x_sed: TensorId,
        x_doa: TensorId,
        axis: usize,
    ) -> Result<(TensorId, TensorId)> {
        let a00 = ids[&format!("{}.a00", self.prefix)];
        let a01 = ids[&format!("{}.a01", self.prefix)];
        let a10 = ids[&format!("{}.a10", self.prefix)];
        let a11 = ids[&format!("{}.a11", self.prefix)];
        let s00 = tape.scale_channels(x_sed, a00, axis)?;
        let s01 = tape.scale_channels(x_doa, a01, axis)?;
        let new_sed = tape.add(s00, s01)?;
        let s10 = tape.scale_channels(x_sed, a10, axis)?;
        let s11 = tape.scale_channels(x_doa, a11, axis)?;
        let new_doa = tape.add(s10, s11)?;
        Ok((new_sed, new_doa))
    }
}

// ── the model ───────────────────────────────────────────────────────

#[derive(Clone, Copy, Debug)]
pub struct ForwardCtx {
    pub training: bool,
    /// Fold batch statistics into the running stats (off during gradient
    /// checks so repeated forwards see identical state).
    pub update_running: bool,
}

impl ForwardCtx {
    pub fn train() -> Self {
        ForwardCtx { training: true, update_running: true }
    }

    pub fn eval() -> Self {
        ForwardCtx { training: false, update_running: false }
    }

    pub fn frozen_train() -> Self {
        ForwardCtx { training: true, update_running: false }
    }
}

/// Graph-side prediction ids.
pub enum Prediction {
    /// sed `[N,T,M,K]`, doa `[N,T,M,3]`.
    Trackwise { sed: TensorId, doa: TensorId },
    /// sed `[N,T,K]`, doa `[N,T,K,3]`.
    Seldnet { sed: TensorId, doa: TensorId },
}

pub struct ForwardPass {
    pub output: Prediction,
    /// (param index, leaf id) for every trainable parameter, in store order.
    pub leaves: Vec<(usize, TensorId)>,
}

enum TaskStreams {
    /// `[track][task]` MHSA stacks + per-track cross-stitch.
    Trackwise {
        stacks: Vec<[Vec<MhsaLayer>; 2]>,
        cross: Vec<Option<CrossStitch>>,
    },
    /// `[task]` stacks + one cross-stitch.
    Seldnet { stacks: [Vec<MhsaLayer>; 2], cross: Option<CrossStitch> },
}

pub struct Einv2<E: Element> {
    pub config: ModelConfig,
    pub params: ParamStore<E>,
    branches: Vec<(String, Vec<ConvBlock>)>,
    conv_cross: Vec<CrossStitch>,
    streams: TaskStreams,
}

impl<E: Element> Einv2<E> {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut params = ParamStore::new(seed);
        let widths = config.widths();

        let branch_specs: Vec<(&str, usize)> = match config.ps_mode {
            PsMode::Hard => vec![("trunk", 7)],
            _ => vec![("sed", 4), ("doa", 7)],
        };
        let mut branches = Vec::new();
        for (name, in_ch) in &branch_specs {
            let mut blocks = Vec::new();
            let mut c_in = *in_ch;
            for (i, (&w, &pool)) in widths.iter().zip(POOLING.iter()).enumerate() {
                blocks.push(ConvBlock::register(
                    &mut params,
                    &format!("{name}.block{}", i + 1),
                    c_in,
                    w,
                    pool,
                )?);
                c_in = w;
            }
            branches.push((name.to_string(), blocks));
        }
        // cross-stitch after blocks 1..3 (none after the last block)
        let mut conv_cross = Vec::new();
        if config.ps_mode == PsMode::Soft {
            for (i, &w) in widths.iter().take(3).enumerate() {
                conv_cross.push(CrossStitch::register(&mut params, &format!("cs{}", i + 1), w)?);
            }
        }

        let d = config.model_dim();
        let settings = config.mhsa_settings();
        let streams = match config.output_format {
            OutputFormat::Trackwise => {
                let mut stacks = Vec::new();
                let mut cross = Vec::new();
                for m in 0..config.n_tracks {
                    let mut per_task: [Vec<MhsaLayer>; 2] = [Vec::new(), Vec::new()];
                    for (ti, task) in ["sed", "doa"].iter().enumerate() {
                        for l in 0..config.mhsa_layers {
                            per_task[ti].push(MhsaLayer::register(
                                &mut params,
                                &format!("track{m}.{task}.mhsa{l}"),
                                settings,
                            )?);
                        }
                    }
                    stacks.push(per_task);
                    cross.push(if config.ps_mode == PsMode::Soft {
                        Some(CrossStitch::register(&mut params, &format!("track{m}.cs"), d)?)
                    } else {
                        None
                    });
                    params.register(
                        &format!("track{m}.sed.head.weight"),
                        &[d, config.n_classes],
                        InitSpec::UniformFanIn { fan_in: d },
                        true,
                    )?;
                    params.register(
                        &format!("track{m}.sed.head.bias"),
                        &[config.n_classes],
                        InitSpec::Constant(0.0),
                        true,
                    )?;
                    params.register(
                        &format!("track{m}.doa.head.weight"),
                        &[d, 3],
                        InitSpec::UniformFanIn { fan_in: d },
                        true,
                    )?;
                    params.register(
                        &format!("track{m}.doa.head.bias"),
                        &[3],
                        InitSpec::Constant(0.0),
                        true,
                    )?;
                }
                TaskStreams::Trackwise { stacks, cross }
            }
            OutputFormat::Seldnet => {
                let mut stacks: [Vec<MhsaLayer>; 2] = [Vec::new(), Vec::new()];
                for (ti, task) in ["sed", "doa"].iter().enumerate() {
                    for l in 0..config.mhsa_layers {
                        stacks[ti].push(MhsaLayer::register(
                            &mut params,
                            &format!("{task}.mhsa{l}"),
                            settings,
                        )?);
                    }
                }
                let cross = if config.ps_mode == PsMode::Soft {
                    Some(CrossStitch::register(&mut params, "cs_mhsa", d)?)
                } else {
                    None
                };
                params.register(
                    "sed.head.weight",
                    &[d, config.n_classes],
                    InitSpec::UniformFanIn { fan_in: d },
                    true,
                )?;
                params.register("sed.head.bias", &[config.n_classes], InitSpec::Constant(0.0), true)?;
                params.register(
                    "doa.head.weight",
                    &[d, 3 * config.n_classes],
                    InitSpec::UniformFanIn { fan_in: d },
                    true,
                )?;
                params.register(
                    "doa.head.bias",
                    &[3 * config.n_classes],
                    InitSpec::Constant(0.0),
                    true,
                )?;
                TaskStreams::Seldnet { stacks, cross }
            }
        };

        Ok(Einv2 { config, params, branches, conv_cross, streams })
    }

    /// Stacks a feature batch onto the tape as two constant inputs.
    pub fn batch_to_tape(
        tape: &mut Tape<E>,
        batch: &[&FeatureClip],
    ) -> Result<(TensorId, TensorId)> {
        if batch.is_empty() {
            return Err(SeldError::Config("empty feature batch".into()));
        }
        let (t, f) = (batch[0].n_frames(), batch[0].n_mels());
        let mut sed = Vec::with_capacity(batch.len() * 4 * t * f);
        let mut doa = Vec::with_capacity(batch.len() * 7 * t * f);
        for clip in batch {
            if clip.n_frames() != t || clip.n_mels() != f {
                return Err(SeldError::Shape("feature batch has mixed shapes".into()));
            }
            sed.extend(clip.sed_input.data.iter().map(|&v| E::from_f64(v as f64)));
            doa.extend(clip.doa_input.data.iter().map(|&v| E::from_f64(v as f64)));
        }
        let n = batch.len();
        let sed_id = tape.leaf(sed, &[n, 4, t, f], false)?;
        let doa_id = tape.leaf(doa, &[n, 7, t, f], false)?;
        Ok((sed_id, doa_id))
    }

    fn conv_stack(
        &self,
        which: usize,
        tape: &mut Tape<E>,
        store: &mut ParamStore<E>,
        ids: &HashMap<String, TensorId>,
        x: TensorId,
        ctx: ForwardCtx,
    ) -> Result<TensorId> {
        let mut y = x;
        for block in &self.branches[which].1 {
            y = block.forward(tape, store, ids, y, ctx)?;
        }
        Ok(y)
    }

    /// `[N,C,T,F] -> [N,T,C]`: average over frequency, time-major sequence.
    fn to_sequence(tape: &mut Tape<E>, x: TensorId) -> Result<TensorId> {
        let pooled = tape.mean_last(x)?; // [N,C,T]
        tape.transpose_last2(pooled) // [N,T,C]
    }

    pub fn forward(
        &mut self,
        tape: &mut Tape<E>,
        sed_input: TensorId,
        doa_input: TensorId,
        ctx: ForwardCtx,
    ) -> Result<ForwardPass> {
        let mut ids = HashMap::new();
        let mut leaves = Vec::new();
        for i in 0..self.params.len() {
            if !self.params.get(i).trainable {
                continue;
            }
            let id = self.params.leaf(tape, i)?;
            ids.insert(self.params.get(i).name.clone(), id);
            leaves.push((i, id));
        }
        self.forward_core(tape, sed_input, doa_input, ctx, ids, leaves)
    }

    /// Forward with externally supplied parameter leaves (the
    /// finite-difference harness perturbs them as graph inputs).
    pub fn forward_with_leaves(
        &mut self,
        tape: &mut Tape<E>,
        sed_input: TensorId,
        doa_input: TensorId,
        ctx: ForwardCtx,
        names: &[String],
        leaf_ids: &[TensorId],
    ) -> Result<ForwardPass> {
        let mut ids = HashMap::new();
        let mut leaves = Vec::new();
        for (name, &id) in names.iter().zip(leaf_ids) {
            let idx = self
                .params
                .lookup(name)
                .ok_or_else(|| SeldError::Config(format!("unknown parameter {name}")))?;
            ids.insert(name.clone(), id);
            leaves.push((idx, id));
        }
        for i in 0..self.params.len() {
            let p = self.params.get(i);
            if p.trainable && !ids.contains_key(&p.name) {
                return Err(SeldError::Config(format!("no leaf supplied for parameter {}", p.name)));
            }
        }
        self.forward_core(tape, sed_input, doa_input, ctx, ids, leaves)
    }

    fn forward_core(
        &mut self,
        tape: &mut Tape<E>,
        sed_input: TensorId,
        doa_input: TensorId,
        ctx: ForwardCtx,
        ids: HashMap<String, TensorId>,
        leaves: Vec<(usize, TensorId)>,
    ) -> Result<ForwardPass> {
        let ss = tape.shape(sed_input).to_vec();
        let ds = tape.shape(doa_input).to_vec();
        if ss.len() != 4 || ds.len() != 4 || ss[1] != 4 || ds[1] != 7 || ss[0] != ds[0] {
            return Err(SeldError::Shape(format!(
                "expected inputs [N,4,T,F] and [N,7,T,F], got {ss:?} and {ds:?}"
            )));
        }
        let (n, t_in, f_in) = (ss[0], ss[2], ss[3]);
        if ss[2..] != ds[2..] {
            return Err(SeldError::Shape("branch inputs disagree on [T,F]".into()));
        }
        let (tp, fp) = POOLING.iter().fold((1, 1), |(a, b), &(x, y)| (a * x, b * y));
        if t_in % tp != 0 || f_in % fp != 0 {
            return Err(SeldError::Shape(format!(
                "input [T={t_in}, F={f_in}] not divisible by the pooling schedule ({tp}x{fp})"
            )));
        }

        let mut store = std::mem::replace(&mut self.params, ParamStore::new(0));
        let build = (|| -> Result<ForwardPass> {
            // conv encoders
            let (sed_seq, doa_seq) = match self.config.ps_mode {
                PsMode::Hard => {
                    let y = self.conv_stack(0, tape, &mut store, &ids, doa_input, ctx)?;
                    let seq = Self::to_sequence(tape, y)?;
                    (seq, seq)
                }
                PsMode::None => {
                    let s = self.conv_stack(0, tape, &mut store, &ids, sed_input, ctx)?;
                    let d = self.conv_stack(1, tape, &mut store, &ids, doa_input, ctx)?;
                    (Self::to_sequence(tape, s)?, Self::to_sequence(tape, d)?)
                }
                PsMode::Soft => {
                    let mut s = sed_input;
                    let mut d = doa_input;
                    for i in 0..4 {
                        s = self.branches[0].1[i].forward(tape, &mut store, &ids, s, ctx)?;
                        d = self.branches[1].1[i].forward(tape, &mut store, &ids, d, ctx)?;
                        if i < 3 {
                            let (ns, nd) = self.conv_cross[i].forward(tape, &ids, s, d, 1)?;
                            s = ns;
                            d = nd;
                        }
                    }
                    (Self::to_sequence(tape, s)?, Self::to_sequence(tape, d)?)
                }
            };

            let t_out = t_in / tp;
            let d_model = self.config.model_dim();
            let pos_arr = positional_encoding(t_out, d_model);
            let mut pos_batch = Vec::with_capacity(n * t_out * d_model);
            for _ in 0..n {
                pos_batch.extend(pos_arr.data.iter().map(|&v| E::from_f64(v)));
            }
            let pos = tape.leaf(pos_batch, &[n, t_out, d_model], false)?;

            let lookup = |name: &str| -> TensorId { ids[name] };
            let output = match &self.streams {
                TaskStreams::Trackwise { stacks, cross } => {
                    let k = self.config.n_classes;
                    let mut sed_parts = Vec::new();
                    let mut doa_parts = Vec::new();
                    for m in 0..self.config.n_tracks {
                        let mut s = sed_seq;
                        let mut d = doa_seq;
                        for layer in &stacks[m][0] {
                            s = layer.forward(tape, &store, &lookup, s, pos)?;
                        }
                        for layer in &stacks[m][1] {
                            d = layer.forward(tape, &store, &lookup, d, pos)?;
                        }
                        if let Some(cs) = &cross[m] {
                            let (ns, nd) = cs.forward(tape, &ids, s, d, 2)?;
                            s = ns;
                            d = nd;
                        }
                        let sw = ids[&format!("track{m}.sed.head.weight")];
                        let sb = ids[&format!("track{m}.sed.head.bias")];
                        let sl = tape.linear(s, sw, sb)?;
                        sed_parts.push(tape.sigmoid(sl));
                        let dw = ids[&format!("track{m}.doa.head.weight")];
                        let db = ids[&format!("track{m}.doa.head.bias")];
                        let dl = tape.linear(d, dw, db)?;
                        doa_parts.push(tape.tanh(dl));
                    }
                    let sed_cat = tape.concat_last(&sed_parts)?; // [N,T,M*K]
                    let doa_cat = tape.concat_last(&doa_parts)?; // [N,T,M*3]
                    let m = self.config.n_tracks;
                    let sed = tape.reshape(sed_cat, &[n, t_out, m, k])?;
                    let doa = tape.reshape(doa_cat, &[n, t_out, m, 3])?;
                    Prediction::Trackwise { sed, doa }
                }
                TaskStreams::Seldnet { stacks, cross } => {
                    let k = self.config.n_classes;
                    let mut s = sed_seq;
                    let mut d = doa_seq;
                    for layer in &stacks[0] {
                        s = layer.forward(tape, &store, &lookup, s, pos)?;
                    }
                    for layer in &stacks[1] {
                        d = layer.forward(tape, &store, &lookup, d, pos)?;
                    }
                    if let Some(cs) = cross {
                        let (ns, nd) = cs.forward(tape, &ids, s, d, 2)?;
                        s = ns;
                        d = nd;
                    }
                    let sl = tape.linear(s, ids["sed.head.weight"], ids["sed.head.bias"])?;
                    let sed = tape.sigmoid(sl);
                    let dl = tape.linear(d, ids["doa.head.weight"], ids["doa.head.bias"])?;
                    let dt = tape.tanh(dl);
                    let doa = tape.reshape(dt, &[n, t_out, k, 3])?;
                    Prediction::Seldnet { sed, doa }
                }
            };
            Ok(ForwardPass { output, leaves })
        })();
        self.params = store;
        build
    }
}

// ── plain prediction values ─────────────────────────────────────────

/// Per-frame per-track predictions for one clip: sed `[T,M,K]`, doa `[T,M,3]`.
#[derive(Clone, Debug, PartialEq)]
pub struct TrackPrediction {
    pub sed: Array<f32>,
    pub doa: Array<f32>,
}

/// Class-indexed predictions: sed `[T,K]`, doa `[T,K,3]`.
#[derive(Clone, Debug, PartialEq)]
pub struct SeldnetPrediction {
    pub sed: Array<f32>,
    pub doa: Array<f32>,
}

/// Decoded per-clip prediction in either format.
#[derive(Clone, Debug, PartialEq)]
pub enum ClipPrediction {
    Trackwise(TrackPrediction),
    Seldnet(SeldnetPrediction),
}

/// Extracts one batch item's predictions from the tape.
pub fn extract_prediction<E: Element>(
    tape: &Tape<E>,
    pred: &Prediction,
    batch_index: usize,
) -> ClipPrediction {
    let slice_item = |id: TensorId| -> Array<f32> {
        let shape = tape.shape(id);
        let per: usize = shape[1..].iter().product();
        let data: Vec<f32> = tape.data(id)[batch_index * per..(batch_index + 1) * per]
            .iter()
            .map(|v| v.to_f64() as f32)
            .collect();
        Array { data, shape: shape[1..].to_vec() }
    };
    match pred {
        Prediction::Trackwise { sed, doa } => ClipPrediction::Trackwise(TrackPrediction {
            sed: slice_item(*sed),
            doa: slice_item(*doa),
        }),
        Prediction::Seldnet { sed, doa } => ClipPrediction::Seldnet(SeldnetPrediction {
            sed: slice_item(*sed),
            doa: slice_item(*doa),
        }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_features(rng: &mut ChaCha8Rng, t: usize, f: usize) -> FeatureClip {
        let sed: Vec<f32> = (0..4 * t * f).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mut doa = sed.clone();
        doa.extend((0..3 * t * f).map(|_| rng.random_range(-1.0f32..1.0)));
        FeatureClip {
            sed_input: Array { data: sed, shape: vec![4, t, f] },
            doa_input: Array { data: doa, shape: vec![7, t, f] },
        }
    }

    fn forward_tiny(
        config: ModelConfig,
        seed: u64,
        feat: &FeatureClip,
        ctx: ForwardCtx,
    ) -> (Vec<f64>, Vec<f64>, Vec<usize>, Vec<usize>) {
        let mut model: Einv2<f64> = Einv2::new(config, seed).unwrap();
        let mut tape = Tape::<f64>::new();
        let (si, di) = Einv2::<f64>::batch_to_tape(&mut tape, &[feat]).unwrap();
        let pass = model.forward(&mut tape, si, di, ctx).unwrap();
        match pass.output {
            Prediction::Trackwise { sed, doa } | Prediction::Seldnet { sed, doa } => (
                tape.data(sed).to_vec(),
                tape.data(doa).to_vec(),
                tape.shape(sed).to_vec(),
                tape.shape(doa).to_vec(),
            ),
        }
    }

    #[test]
    fn tiny_trackwise_shapes_and_ranges() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let feat = random_features(&mut rng, 160, 256);
        let cfg = ModelConfig::tiny();
        let (sed, doa, ss, ds) = forward_tiny(cfg, 7, &feat, ForwardCtx::eval());
        assert_eq!(ss, vec![1, 40, 2, 14]);
        assert_eq!(ds, vec![1, 40, 2, 3]);
        assert!(sed.iter().all(|&v| v > 0.0 && v < 1.0));
        assert!(doa.iter().all(|&v| v > -1.0 && v < 1.0));
    }

    #[test]
    fn tiny_seldnet_shapes() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let feat = random_features(&mut rng, 160, 256);
        let cfg = ModelConfig {
            output_format: OutputFormat::Seldnet,
            ps_mode: PsMode::Soft,
            ..ModelConfig::tiny()
        };
        let (_, _, ss, ds) = forward_tiny(cfg, 8, &feat, ForwardCtx::eval());
        assert_eq!(ss, vec![1, 40, 14]);
        assert_eq!(ds, vec![1, 40, 14, 3]);
    }

    #[test]
    fn hard_mode_shares_one_trunk() {
        let cfg = ModelConfig { ps_mode: PsMode::Hard, ..ModelConfig::tiny() };
        let model: Einv2<f64> = Einv2::new(cfg, 3).unwrap();
        assert!(model.params.lookup("trunk.block1.conv1.weight").is_some());
        assert!(model.params.lookup("sed.block1.conv1.weight").is_none());
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let feat = random_features(&mut rng, 32, 16);
        let (_, _, ss, _) = forward_tiny(cfg, 3, &feat, ForwardCtx::eval());
        assert_eq!(ss, vec![1, 8, 2, 14]);
    }

    #[test]
    fn conv_shape_law_holds_for_divisors() {
        // [4,160,256] -> block1 [w,80,128] -> ... -> [w4,40,16]
        for divisor in [1usize, 4, 8] {
            let cfg = ModelConfig { width_divisor: divisor, mhsa_heads: 2, ..Default::default() };
            let widths = cfg.widths();
            let mut store: ParamStore<f64> = ParamStore::new(1);
            let mut blocks = Vec::new();
            let mut c_in = 4usize;
            for (i, (&w, &pool)) in widths.iter().zip(POOLING.iter()).enumerate() {
                blocks.push(ConvBlock::register(&mut store, &format!("b{i}"), c_in, w, pool).unwrap());
                c_in = w;
            }
            let mut tape = Tape::<f64>::new();
            let mut ids = HashMap::new();
            for i in 0..store.len() {
                if store.get(i).trainable {
                    let id = store.leaf(&mut tape, i).unwrap();
                    ids.insert(store.get(i).name.clone(), id);
                }
            }
            // small T to keep divisor-1 affordable; F=256 as in the table
            let (t, f) = (16usize, 256usize);
            let mut x = tape.constant(vec![0.1; 4 * t * f], &[1, 4, t, f]).unwrap();
            let expect_tf = [(t / 2, f / 2), (t / 4, f / 4), (t / 4, f / 8), (t / 4, f / 16)];
            for (i, block) in blocks.iter().enumerate() {
                x = block.forward(&mut tape, &mut store, &ids, x, ForwardCtx::eval()).unwrap();
                assert_eq!(
                    tape.shape(x),
                    &[1, widths[i], expect_tf[i].0, expect_tf[i].1],
                    "divisor {divisor} block {}",
                    i + 1
                );
            }
        }
    }

    #[test]
    fn zero_weights_and_beta_give_zero_output() {
        let mut store: ParamStore<f64> = ParamStore::new(5);
        let block = ConvBlock::register(&mut store, "z", 2, 3, (2, 2)).unwrap();
        for p in store.iter_mut() {
            if p.trainable && !p.name.contains("gamma") {
                p.value.data.fill(0.0);
            }
        }
        let mut tape = Tape::<f64>::new();
        let mut ids = HashMap::new();
        for i in 0..store.len() {
            if store.get(i).trainable {
                let id = store.leaf(&mut tape, i).unwrap();
                ids.insert(store.get(i).name.clone(), id);
            }
        }
        let x = tape.constant(vec![0.7; 2 * 4 * 4], &[1, 2, 4, 4]).unwrap();
        let y = block.forward(&mut tape, &mut store, &ids, x, ForwardCtx::eval()).unwrap();
        assert!(tape.data(y).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn cross_stitch_identity_is_bit_exact_pass_through() {
        let mut store: ParamStore<f64> = ParamStore::new(6);
        let cs = CrossStitch::register(&mut store, "cs", 3).unwrap();
        // freeze to exact identity
        for (name, v) in [("cs.a00", 1.0), ("cs.a01", 0.0), ("cs.a10", 0.0), ("cs.a11", 1.0)] {
            let idx = store.lookup(name).unwrap();
            store.get_mut(idx).value.data.fill(v);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let a: Vec<f64> = (0..3 * 4).map(|_| rng.random_range(0.1..1.0)).collect();
        let b: Vec<f64> = (0..3 * 4).map(|_| rng.random_range(0.1..1.0)).collect();
        let mut tape = Tape::<f64>::new();
        let mut ids = HashMap::new();
        for i in 0..store.len() {
            let id = store.leaf(&mut tape, i).unwrap();
            ids.insert(store.get(i).name.clone(), id);
        }
        let ta = tape.constant(a.clone(), &[3, 4]).unwrap();
        let tb = tape.constant(b.clone(), &[3, 4]).unwrap();
        let (oa, ob) = cs.forward(&mut tape, &ids, ta, tb, 0).unwrap();
        assert!(tape.data(oa).iter().zip(&a).all(|(x, y)| x.to_bits() == y.to_bits()));
        assert!(tape.data(ob).iter().zip(&b).all(|(x, y)| x.to_bits() == y.to_bits()));
    }

    #[test]
    fn cross_stitch_swap_and_mix() {
        let mut store: ParamStore<f64> = ParamStore::new(8);
        let cs = CrossStitch::register(&mut store, "m", 2).unwrap();
        let mut set = |name: &str, v: f64| {
            let idx = store.lookup(name).unwrap();
            store.get_mut(idx).value.data.fill(v);
        };
        // full swap
        set("m.a00", 0.0);
        set("m.a01", 1.0);
        set("m.a10", 1.0);
        set("m.a11", 0.0);
        let mut tape = Tape::<f64>::new();
        let mut ids = HashMap::new();
        for i in 0..store.len() {
            let id = store.leaf(&mut tape, i).unwrap();
            ids.insert(store.get(i).name.clone(), id);
        }
        let ta = tape.constant(vec![2.0; 6], &[2, 3]).unwrap();
        let tb = tape.constant(vec![4.0; 6], &[2, 3]).unwrap();
        let (oa, ob) = cs.forward(&mut tape, &ids, ta, tb, 0).unwrap();
        assert!(tape.data(oa).iter().all(|&v| v == 4.0));
        assert!(tape.data(ob).iter().all(|&v| v == 2.0));

        // 0.9/0.1 mix of constants 2 and 4
        let mut store2: ParamStore<f64> = ParamStore::new(9);
        let cs2 = CrossStitch::register(&mut store2, "m", 2).unwrap();
        let mut tape2 = Tape::<f64>::new();
        let mut ids2 = HashMap::new();
        for i in 0..store2.len() {
            let id = store2.leaf(&mut tape2, i).unwrap();
            ids2.insert(store2.get(i).name.clone(), id);
        }
        let ta = tape2.constant(vec![2.0; 6], &[2, 3]).unwrap();
        let tb = tape2.constant(vec![4.0; 6], &[2, 3]).unwrap();
        let (oa, ob) = cs2.forward(&mut tape2, &ids2, ta, tb, 0).unwrap();
        assert!(tape2.data(oa).iter().all(|&v| (v - 2.2).abs() < 1e-12));
        assert!(tape2.data(ob).iter().all(|&v| (v - 3.8).abs() < 1e-12));
    }

    #[test]
    fn cross_stitch_is_linear_in_each_input() {
        // cs(a*x + b*y, z) = a*cs(x, z) + b*cs(y, z) + (1 - a - b)*cs(0, z),
        // checked against the defining per-channel formula directly
        let mut store: ParamStore<f64> = ParamStore::new(10);
        let cs = CrossStitch::register(&mut store, "l", 2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let x: Vec<f64> = (0..8).map(|_| rng.random_range(-1.0..1.0)).collect();
        let y: Vec<f64> = (0..8).map(|_| rng.random_range(-1.0..1.0)).collect();
        let z: Vec<f64> = (0..8).map(|_| rng.random_range(-1.0..1.0)).collect();
        let (a, b) = (0.37, -1.21);
        let run = |sed: Vec<f64>, doa: Vec<f64>| -> (Vec<f64>, Vec<f64>) {
            let mut tape = Tape::<f64>::new();
            let mut ids = HashMap::new();
            for i in 0..store.len() {
                let id = store.leaf(&mut tape, i).unwrap();
                ids.insert(store.get(i).name.clone(), id);
            }
            let ts = tape.constant(sed, &[2, 4]).unwrap();
            let td = tape.constant(doa, &[2, 4]).unwrap();
            let (os, od) = cs.forward(&mut tape, &ids, ts, td, 0).unwrap();
            (tape.data(os).to_vec(), tape.data(od).to_vec())
        };
        let mixed: Vec<f64> = x.iter().zip(&y).map(|(&u, &v)| a * u + b * v).collect();
        let (s1, d1) = run(mixed, z.clone());
        for i in 0..8 {
            let sed_direct = 0.9 * (a * x[i] + b * y[i]) + 0.1 * z[i];
            assert!((s1[i] - sed_direct).abs() < 1e-10);
            let doa_direct = 0.1 * (a * x[i] + b * y[i]) + 0.9 * z[i];
            assert!((d1[i] - doa_direct).abs() < 1e-10);
        }
    }

    #[test]
    fn soft_with_identity_alpha_equals_none_mode() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let feat = random_features(&mut rng, 32, 16);
        let seed = 77u64;
        let cfg_none = ModelConfig { ps_mode: PsMode::None, ..ModelConfig::tiny() };
        let cfg_soft = ModelConfig { ps_mode: PsMode::Soft, ..ModelConfig::tiny() };

        let mut m_none: Einv2<f64> = Einv2::new(cfg_none, seed).unwrap();
        let mut m_soft: Einv2<f64> = Einv2::new(cfg_soft, seed).unwrap();
        // freeze every cross-stitch to the exact identity
        for p in m_soft.params.iter_mut() {
            if p.name.contains(".a00") || p.name.contains(".a11") {
                p.value.data.fill(1.0);
            } else if p.name.contains(".a01") || p.name.contains(".a10") {
                p.value.data.fill(0.0);
            }
        }
        let run = |model: &mut Einv2<f64>| -> (Vec<f64>, Vec<f64>) {
            let mut tape = Tape::<f64>::new();
            let (si, di) = Einv2::<f64>::batch_to_tape(&mut tape, &[&feat]).unwrap();
            let pass = model.forward(&mut tape, si, di, ForwardCtx::eval()).unwrap();
            match pass.output {
                Prediction::Trackwise { sed, doa } | Prediction::Seldnet { sed, doa } => {
                    (tape.data(sed).to_vec(), tape.data(doa).to_vec())
                }
            }
        };
        let (s_none, d_none) = run(&mut m_none);
        let (s_soft, d_soft) = run(&mut m_soft);
        assert!(
            s_none.iter().zip(&s_soft).all(|(a, b)| a.to_bits() == b.to_bits()),
            "sed outputs differ between none and identity-soft"
        );
        assert!(d_none.iter().zip(&d_soft).all(|(a, b)| a.to_bits() == b.to_bits()));
    }

    #[test]
    fn forward_rejects_bad_shapes() {
        let cfg = ModelConfig::tiny();
        let mut model: Einv2<f64> = Einv2::new(cfg, 1).unwrap();
        let mut tape = Tape::<f64>::new();
        let si = tape.constant(vec![0.0; 4 * 30 * 16], &[1, 4, 30, 16]).unwrap();
        let di = tape.constant(vec![0.0; 7 * 30 * 16], &[1, 7, 30, 16]).unwrap();
        // T=30 not divisible by 4
        assert!(model.forward(&mut tape, si, di, ForwardCtx::eval()).is_err());
    }

    #[test]
    fn batchnorm_running_stats_update_only_in_training() {
        let cfg = ModelConfig::tiny();
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let feat = random_features(&mut rng, 16, 16);
        let mut model: Einv2<f64> = Einv2::new(cfg, 5).unwrap();
        let rm_idx = model.params.lookup("sed.block1.bn1.running_mean").unwrap();
        let before = model.params.get(rm_idx).value.data.clone();
        let mut tape = Tape::<f64>::new();
        let (si, di) = Einv2::<f64>::batch_to_tape(&mut tape, &[&feat]).unwrap();
        model.forward(&mut tape, si, di, ForwardCtx::eval()).unwrap();
        assert_eq!(model.params.get(rm_idx).value.data, before, "eval must not touch stats");
        let mut tape = Tape::<f64>::new();
        let (si, di) = Einv2::<f64>::batch_to_tape(&mut tape, &[&feat]).unwrap();
        model.forward(&mut tape, si, di, ForwardCtx::train()).unwrap();
        assert_ne!(model.params.get(rm_idx).value.data, before, "training must update stats");
    }
}
