//! Positional encoding and multi-head self-attention.

use crate::diffcore::{Array, Element, InitSpec, ParamStore, Tape, TensorId};
use crate::error::{Result, SeldError};

/// Fixed absolute positional encoding:
/// `P[t, 2i] = 0.1 sin(t / 10^(8i/D))`, `P[t, 2i+1] = 0.1 cos(t / 10^(8i/D))`.
pub fn positional_encoding(t_frames: usize, dim: usize) -> Array<f64> {
    let mut data = vec![0.0f64; t_frames * dim];
    for t in 0..t_frames {
        for j in 0..dim {
            let i = (j / 2) as f64;
            let arg = t as f64 / 10f64.powf(8.0 * i / dim as f64);
            data[t * dim + j] = 0.1 * if j % 2 == 0 { arg.sin() } else { arg.cos() };
        }
    }
    Array { data, shape: vec![t_frames, dim] }
}

/// Single-head self-attention as printed: the positional encoding enters the
/// query/key path only, the value path sees the raw input, and the logits
/// are unscaled unless `scaled_logits` is set.
///
/// `x`: `[N, T, D_in]`, `pos`: `[N, T, D_in]` (constant), weights
/// `wq, wk: [D_in, D_k]`, `wv: [D_in, D_h]`. Output `[N, T, D_h]`.
#[allow(clippy::too_many_arguments)]
pub fn self_attention<E: Element>(
    tape: &mut Tape<E>,
    x: TensorId,
    pos: TensorId,
    wq: TensorId,
    wk: TensorId,
    wv: TensorId,
    scaled_logits: bool,
) -> Result<TensorId> {
    let xp = tape.add(x, pos)?;
    let q = tape.matmul(xp, wq)?; // [N,T,Dk]
    let k = tape.matmul(xp, wk)?; // [N,T,Dk]
    let kt = tape.transpose_last2(k)?; // [N,Dk,T]
    let mut logits = tape.matmul(q, kt)?; // [N,T,T]
    if scaled_logits {
        let dk = *tape.shape(wq).last().unwrap();
        logits = tape.scale(logits, 1.0 / (dk as f64).sqrt());
    }
    let attn = tape.softmax_last(logits)?;
    let v = tape.matmul(x, wv)?; // [N,T,Dh]
    tape.matmul(attn, v)
}

#[derive(Clone, Copy, Debug)]
pub struct MhsaSettings {
    pub dim: usize,
    pub heads: usize,
    pub scaled_logits: bool,
    /// Residual connection + layer normalization around each MHSA layer.
    /// The printed equations omit them; unit tests can switch them off.
    pub stabilizers: bool,
}

/// One MHSA layer: `N_h` heads of `D/N_h`, concatenated and projected.
pub struct MhsaLayer {
    prefix: String,
    heads: usize,
    settings: MhsaSettings,
}

impl MhsaLayer {
    pub fn register<E: Element>(
        store: &mut ParamStore<E>,
        prefix: &str,
        settings: MhsaSettings,
    ) -> Result<Self> {
        let d = settings.dim;
        if settings.heads == 0 || d % settings.heads != 0 {
            return Err(SeldError::Config(format!(
                "attention dim {d} is not divisible by {} heads",
                settings.heads
            )));
        }
        let dh = d / settings.heads;
        for h in 0..settings.heads {
            for w in ["wq", "wk"] {
                store.register(
                    &format!("{prefix}.head{h}.{w}"),
                    &[d, dh],
                    InitSpec::UniformFanIn { fan_in: d },
                    true,
                )?;
            }
            store.register(
                &format!("{prefix}.head{h}.wv"),
                &[d, dh],
                InitSpec::UniformFanIn { fan_in: d },
                true,
            )?;
        }
        store.register(&format!("{prefix}.wout"), &[d, d], InitSpec::UniformFanIn { fan_in: d }, true)?;
        store.register(&format!("{prefix}.bout"), &[d], InitSpec::Constant(0.0), true)?;
        if settings.stabilizers {
            store.register(&format!("{prefix}.ln_gamma"), &[d], InitSpec::Constant(1.0), true)?;
            store.register(&format!("{prefix}.ln_beta"), &[d], InitSpec::Constant(0.0), true)?;
        }
        Ok(MhsaLayer { prefix: prefix.to_string(), heads: settings.heads, settings })
    }

    pub fn forward<E: Element>(
        &self,
        tape: &mut Tape<E>,
        store: &ParamStore<E>,
        leaves: &dyn Fn(&str) -> TensorId,
        x: TensorId,
        pos: TensorId,
    ) -> Result<TensorId> {
        let _ = store;
        let mut head_outs = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let wq = leaves(&format!("{}.head{h}.wq", self.prefix));
            let wk = leaves(&format!("{}.head{h}.wk", self.prefix));
            let wv = leaves(&format!("{}.head{h}.wv", self.prefix));
            head_outs.push(self_attention(tape, x, pos, wq, wk, wv, self.settings.scaled_logits)?);
        }
        let concat = tape.concat_last(&head_outs)?;
        let wout = leaves(&format!("{}.wout", self.prefix));
        let bout = leaves(&format!("{}.bout", self.prefix));
        let proj = tape.linear(concat, wout, bout)?;
        if self.settings.stabilizers {
            let residual = tape.add(x, proj)?;
            let gamma = leaves(&format!("{}.ln_gamma", self.prefix));
            let beta = leaves(&format!("{}.ln_beta", self.prefix));
            tape.layer_norm_last(residual, gamma, beta, 1e-5)
        } else {
            Ok(proj)
        }
    }
}
