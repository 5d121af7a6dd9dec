//! Reverse-mode tape.
//!
//! Every forward op appends one record holding the output value, the input
//! ids and whatever intermediates its backward step needs. Records only ever
//! reference earlier records, so a single reverse sweep is a reverse
//! topological traversal; `backward_visits` counts processed records so the
//! single-visit property is testable.

use super::element::Element;
use super::ops;
use crate::error::{Result, SeldError};

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub struct TensorId(pub(crate) usize);

pub(crate) enum Op<E> {
    Leaf,
    Matmul { a: TensorId, b: TensorId },
    Conv2d { x: TensorId, w: TensorId, b: TensorId },
    BatchNorm {
        x: TensorId,
        gamma: TensorId,
        beta: TensorId,
        mean: Vec<E>,
        inv_std: Vec<E>,
        training: bool,
    },
    Relu { x: TensorId },
    Sigmoid { x: TensorId },
    Tanh { x: TensorId },
    SoftmaxLast { x: TensorId },
    AvgPool { x: TensorId, pt: usize, pf: usize },
    MaxPool { x: TensorId, argmax: Vec<u32> },
    AddBiasLast { x: TensorId, b: TensorId },
    Add { a: TensorId, b: TensorId },
    Sub { a: TensorId, b: TensorId },
    Mul { a: TensorId, b: TensorId },
    Scale { x: TensorId, c: E },
    AddScalar { x: TensorId },
    LnClamped { x: TensorId, lo: E },
    ScaleChannels { x: TensorId, s: TensorId, axis: usize },
    MeanLast { x: TensorId },
    SumLast { x: TensorId },
    MeanAll { x: TensorId },
    SumAll { x: TensorId },
    TransposeLast2 { x: TensorId },
    ConcatLast { parts: Vec<TensorId> },
    LayerNormLast { x: TensorId, gamma: TensorId, beta: TensorId, mean: Vec<E>, inv_std: Vec<E> },
    Reshape { x: TensorId },
}

pub struct Tape<E: Element> {
    datas: Vec<Vec<E>>,
    shapes: Vec<Vec<usize>>,
    ops: Vec<Op<E>>,
    requires_grad: Vec<bool>,
    grads: Vec<Option<Vec<E>>>,
    backward_visits: usize,
}

impl<E: Element> Default for Tape<E> {
    fn default() -> Self {
        Self::new()
    }
}

impl<E: Element> Tape<E> {
    pub fn new() -> Self {
        Tape {
            datas: Vec::new(),
            shapes: Vec::new(),
            ops: Vec::new(),
            requires_grad: Vec::new(),
            grads: Vec::new(),
            backward_visits: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.ops.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ops.is_empty()
    }

    /// Records processed by the last `backward` call.
    pub fn backward_visits(&self) -> usize {
        self.backward_visits
    }

    pub fn data(&self, id: TensorId) -> &[E] {
        &self.datas[id.0]
    }

    pub fn shape(&self, id: TensorId) -> &[usize] {
        &self.shapes[id.0]
    }

    pub fn numel(&self, id: TensorId) -> usize {
        self.datas[id.0].len()
    }

    pub fn grad(&self, id: TensorId) -> Option<&[E]> {
        self.grads[id.0].as_deref()
    }

    pub fn scalar(&self, id: TensorId) -> E {
        debug_assert_eq!(self.datas[id.0].len(), 1);
        self.datas[id.0][0]
    }

    fn push(&mut self, data: Vec<E>, shape: Vec<usize>, op: Op<E>, rg: bool) -> TensorId {
        debug_assert_eq!(data.len(), shape.iter().product::<usize>());
        self.datas.push(data);
        self.shapes.push(shape);
        self.ops.push(op);
        self.requires_grad.push(rg);
        self.grads.push(None);
        TensorId(self.ops.len() - 1)
    }

    fn rg(&self, id: TensorId) -> bool {
        self.requires_grad[id.0]
    }

    // ── leaves ───────────────────────────────────────────────────────

    pub fn leaf(&mut self, data: Vec<E>, shape: &[usize], requires_grad: bool) -> Result<TensorId> {
        if data.len() != shape.iter().product::<usize>() {
            return Err(SeldError::Shape(format!(
                "leaf data length {} does not match shape {:?}",
                data.len(),
                shape
            )));
        }
        Ok(self.push(data, shape.to_vec(), Op::Leaf, requires_grad))
    }

    /// Non-differentiable input (targets, masks, positional tables).
    pub fn constant(&mut self, data: Vec<E>, shape: &[usize]) -> Result<TensorId> {
        self.leaf(data, shape, false)
    }

    pub fn constant_f64(&mut self, data: &[f64], shape: &[usize]) -> Result<TensorId> {
        self.leaf(data.iter().map(|&v| E::from_f64(v)).collect(), shape, false)
    }

    // ── linear algebra ───────────────────────────────────────────────

    pub fn matmul(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        let plan = ops::matmul_plan(self.shape(a), self.shape(b))?;
        let mut out = vec![E::ZERO; plan.batch * plan.m * plan.n];
        ops::matmul_fwd(&plan, self.data(a), self.data(b), &mut out);
        let shape = plan.out_shape.clone();
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, shape, Op::Matmul { a, b }, rg))
    }

    /// Affine map on the last dimension: `x @ w + b`.
    pub fn linear(&mut self, x: TensorId, w: TensorId, b: TensorId) -> Result<TensorId> {
        let y = self.matmul(x, w)?;
        self.add_bias_last(y, b)
    }

    pub fn add_bias_last(&mut self, x: TensorId, b: TensorId) -> Result<TensorId> {
        let d = *self.shape(x).last().ok_or_else(|| {
            SeldError::Shape("add_bias_last on a scalar".into())
        })?;
        if self.shape(b) != [d] {
            return Err(SeldError::Shape(format!(
                "bias shape {:?} does not match last dim of {:?}",
                self.shape(b),
                self.shape(x)
            )));
        }
        let bias = self.data(b).to_vec();
        let mut out = self.data(x).to_vec();
        for row in out.chunks_exact_mut(d) {
            for (y, &bv) in row.iter_mut().zip(&bias) {
                *y += bv;
            }
        }
        let shape = self.shapes[x.0].clone();
        let rg = self.rg(x) || self.rg(b);
        Ok(self.push(out, shape, Op::AddBiasLast { x, b }, rg))
    }

    /// 3x3 convolution, stride 1, pad 1 (same-size output).
    pub fn conv2d(&mut self, x: TensorId, w: TensorId, b: TensorId) -> Result<TensorId> {
        let (n, cin, t, f) = ops::as_nchw(self.shape(x))?;
        let ws = self.shape(w).to_vec();
        if ws.len() != 4 || ws[2] != 3 || ws[3] != 3 {
            return Err(SeldError::Shape(format!("conv2d expects [Cout,Cin,3,3] weights, got {ws:?}")));
        }
        let (cout, wcin) = (ws[0], ws[1]);
        if wcin != cin {
            return Err(SeldError::Shape(format!(
                "conv2d channel mismatch: input has {cin} channels, weights expect {wcin}"
            )));
        }
        if self.shape(b) != [cout] {
            return Err(SeldError::Shape(format!(
                "conv2d bias shape {:?}, expected [{cout}]",
                self.shape(b)
            )));
        }
        let tf = t * f;
        let mut out = vec![E::ZERO; n * cout * tf];
        let mut cols = vec![E::ZERO; cin * 9 * tf];
        for i in 0..n {
            ops::im2col3x3(&self.data(x)[i * cin * tf..], cin, t, f, &mut cols);
            unsafe {
                E::gemm(
                    cout,
                    cin * 9,
                    tf,
                    E::ONE,
                    self.data(w).as_ptr(),
                    (cin * 9) as isize,
                    1,
                    cols.as_ptr(),
                    tf as isize,
                    1,
                    E::ZERO,
                    out.as_mut_ptr().add(i * cout * tf),
                    tf as isize,
                    1,
                );
            }
        }
        let bias = self.data(b).to_vec();
        for i in 0..n {
            for c in 0..cout {
                let bv = bias[c];
                for v in &mut out[(i * cout + c) * tf..(i * cout + c + 1) * tf] {
                    *v += bv;
                }
            }
        }
        let mut shape = self.shapes[x.0].clone();
        let clen = shape.len();
        shape[clen - 3] = cout;
        let rg = self.rg(x) || self.rg(w) || self.rg(b);
        Ok(self.push(out, shape, Op::Conv2d { x, w, b }, rg))
    }

    /// Per-channel batch normalization over `(N, T, F)`.
    ///
    /// In training mode batch statistics normalize the output and, when
    /// `update_running` is set, fold into the running stats with the given
    /// momentum (running variance uses the unbiased estimate). Eval mode
    /// normalizes with the running stats as constants.
    #[allow(clippy::too_many_arguments)]
    pub fn batchnorm2d(
        &mut self,
        x: TensorId,
        gamma: TensorId,
        beta: TensorId,
        running_mean: &mut [E],
        running_var: &mut [E],
        training: bool,
        update_running: bool,
        momentum: f64,
        eps: f64,
    ) -> Result<TensorId> {
        let (n, c, t, f) = ops::as_nchw(self.shape(x))?;
        if self.shape(gamma) != [c] || self.shape(beta) != [c] || running_mean.len() != c {
            return Err(SeldError::Shape(format!(
                "batchnorm2d parameter shapes do not match {c} channels"
            )));
        }
        let tf = t * f;
        let m = n * tf;
        let eps = E::from_f64(eps);
        let (mut mean, mut inv_std) = (vec![E::ZERO; c], vec![E::ZERO; c]);
        if training {
            let xd = self.data(x);
            for ch in 0..c {
                let mut sum = E::ZERO;
                for i in 0..n {
                    for &v in &xd[(i * c + ch) * tf..(i * c + ch + 1) * tf] {
                        sum += v;
                    }
                }
                let mu = sum / E::from_f64(m as f64);
                let mut var = E::ZERO;
                for i in 0..n {
                    for &v in &xd[(i * c + ch) * tf..(i * c + ch + 1) * tf] {
                        let d = v - mu;
                        var += d * d;
                    }
                }
                var /= E::from_f64(m as f64);
                mean[ch] = mu;
                inv_std[ch] = E::ONE / (var + eps).sqrt();
                if update_running {
                    let mom = E::from_f64(momentum);
                    let unbiased = if m > 1 {
                        var * E::from_f64(m as f64 / (m as f64 - 1.0))
                    } else {
                        var
                    };
                    running_mean[ch] = (E::ONE - mom) * running_mean[ch] + mom * mu;
                    running_var[ch] = (E::ONE - mom) * running_var[ch] + mom * unbiased;
                }
            }
        } else {
            for ch in 0..c {
                mean[ch] = running_mean[ch];
                inv_std[ch] = E::ONE / (running_var[ch] + eps).sqrt();
            }
        }
        let xd = self.data(x);
        let (g, bt) = (self.data(gamma), self.data(beta));
        let mut out = vec![E::ZERO; xd.len()];
        for i in 0..n {
            for ch in 0..c {
                let (mu, is, gv, bv) = (mean[ch], inv_std[ch], g[ch], bt[ch]);
                let base = (i * c + ch) * tf;
                for j in 0..tf {
                    out[base + j] = (xd[base + j] - mu) * is * gv + bv;
                }
            }
        }
        let shape = self.shapes[x.0].clone();
        let rg = self.rg(x) || self.rg(gamma) || self.rg(beta);
        Ok(self.push(out, shape, Op::BatchNorm { x, gamma, beta, mean, inv_std, training }, rg))
    }

    // ── activations ──────────────────────────────────────────────────

    pub fn relu(&mut self, x: TensorId) -> TensorId {
        let out: Vec<E> = self.data(x).iter().map(|&v| v.maximum(E::ZERO)).collect();
        let shape = self.shapes[x.0].clone();
        let rg = self.rg(x);
        self.push(out, shape, Op::Relu { x }, rg)
    }

    pub fn sigmoid(&mut self, x: TensorId) -> TensorId {
        let out: Vec<E> = self.data(x).iter().map(|&v| ops::sigmoid_scalar(v)).collect();
        let shape = self.shapes[x.0].clone();
        let rg = self.rg(x);
        self.push(out, shape, Op::Sigmoid { x }, rg)
    }

    pub fn tanh(&mut self, x: TensorId) -> TensorId {
        let out: Vec<E> = self.data(x).iter().map(|&v| v.tanh()).collect();
        let shape = self.shapes[x.0].clone();
        let rg = self.rg(x);
        self.push(out, shape, Op::Tanh { x }, rg)
    }

    pub fn softmax_last(&mut self, x: TensorId) -> Result<TensorId> {
        let d = *self
            .shape(x)
            .last()
            .ok_or_else(|| SeldError::Shape("softmax on a scalar".into()))?;
        let mut out = vec![E::ZERO; self.numel(x)];
        ops::softmax_rows(self.data(x), d, &mut out);
        let shape = self.shapes[x.0].clone();
        let rg = self.rg(x);
        Ok(self.push(out, shape, Op::SoftmaxLast { x }, rg))
    }

    // ── pooling ──────────────────────────────────────────────────────

    pub fn avg_pool2d(&mut self, x: TensorId, pt: usize, pf: usize) -> Result<TensorId> {
        let (n, c, t, f) = ops::as_nchw(self.shape(x))?;
        if pt == 0 || pf == 0 || t % pt != 0 || f % pf != 0 {
            return Err(SeldError::Shape(format!(
                "pool window {pt}x{pf} does not divide spatial dims {t}x{f}"
            )));
        }
        let (to, fo) = (t / pt, f / pf);
        let xd = self.data(x);
        let mut out = vec![E::ZERO; n * c * to * fo];
        let inv = E::from_f64(1.0 / (pt * pf) as f64);
        for nc in 0..n * c {
            let src = &xd[nc * t * f..(nc + 1) * t * f];
            let dst = &mut out[nc * to * fo..(nc + 1) * to * fo];
            for ti in 0..to {
                for fi in 0..fo {
                    let mut s = E::ZERO;
                    for dt in 0..pt {
                        for df in 0..pf {
                            s += src[(ti * pt + dt) * f + fi * pf + df];
                        }
                    }
                    dst[ti * fo + fi] = s * inv;
                }
            }
        }
        let shape = pooled_shape(self.shape(x), to, fo);
        let rg = self.rg(x);
        Ok(self.push(out, shape, Op::AvgPool { x, pt, pf }, rg))
    }

    pub fn max_pool2d(&mut self, x: TensorId, pt: usize, pf: usize) -> Result<TensorId> {
        let (n, c, t, f) = ops::as_nchw(self.shape(x))?;
        if pt == 0 || pf == 0 || t % pt != 0 || f % pf != 0 {
            return Err(SeldError::Shape(format!(
                "pool window {pt}x{pf} does not divide spatial dims {t}x{f}"
            )));
        }
        let (to, fo) = (t / pt, f / pf);
        let xd = self.data(x);
        let mut out = vec![E::ZERO; n * c * to * fo];
        let mut argmax = vec![0u32; n * c * to * fo];
        for nc in 0..n * c {
            let src_base = nc * t * f;
            for ti in 0..to {
                for fi in 0..fo {
                    let mut best = xd[src_base + ti * pt * f + fi * pf];
                    let mut best_at = src_base + ti * pt * f + fi * pf;
                    for dt in 0..pt {
                        for df in 0..pf {
                            let at = src_base + (ti * pt + dt) * f + fi * pf + df;
                            if xd[at] > best {
                                best = xd[at];
                                best_at = at;
                            }
                        }
                    }
                    out[nc * to * fo + ti * fo + fi] = best;
                    argmax[nc * to * fo + ti * fo + fi] = best_at as u32;
                }
            }
        }
        let shape = pooled_shape(self.shape(x), to, fo);
        let rg = self.rg(x);
        Ok(self.push(out, shape, Op::MaxPool { x, argmax }, rg))
    }

    // ── elementwise ──────────────────────────────────────────────────

    fn same_shape(&self, a: TensorId, b: TensorId, what: &str) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(SeldError::Shape(format!(
                "{what} operands differ: {:?} vs {:?}",
                self.shape(a),
                self.shape(b)
            )));
        }
        Ok(())
    }

    pub fn add(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        self.same_shape(a, b, "add")?;
        let out: Vec<E> =
            self.data(a).iter().zip(self.data(b)).map(|(&x, &y)| x + y).collect();
        let shape = self.shapes[a.0].clone();
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, shape, Op::Add { a, b }, rg))
    }

    pub fn sub(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        self.same_shape(a, b, "sub")?;
        let out: Vec<E> =
            self.data(a).iter().zip(self.data(b)).map(|(&x, &y)| x - y).collect();
        let shape = self.shapes[a.0].clone();
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, shape, Op::Sub { a, b }, rg))
    }

    pub fn mul(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        self.same_shape(a, b, "mul")?;
        let out: Vec<E> =
            self.data(a).iter().zip(self.data(b)).map(|(&x, &y)| x * y).collect();
        let shape = self.shapes[a.0].clone();
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, shape, Op::Mul { a, b }, rg))
    }

    pub fn scale(&mut self, x: TensorId, c: f64) -> TensorId {
        let c = E::from_f64(c);
        let out: Vec<E> = self.data(x).iter().map(|&v| v * c).collect();
        let shape = self.shapes[x.0].clone();
        let rg = self.rg(x);
        self.push(out, shape, Op::Scale { x, c }, rg)
    }

    pub fn add_scalar(&mut self, x: TensorId, c: f64) -> TensorId {
        let c = E::from_f64(c);
        let out: Vec<E> = self.data(x).iter().map(|&v| v + c).collect();
        let shape = self.shapes[x.0].clone();
        let rg = self.rg(x);
        self.push(out, shape, Op::AddScalar { x }, rg)
    }

    /// `ln(max(x, lo))`; gradient is zero on the clamped side.
    pub fn ln_clamped(&mut self, x: TensorId, lo: f64) -> TensorId {
        let lo = E::from_f64(lo);
        let out: Vec<E> = self.data(x).iter().map(|&v| v.maximum(lo).ln()).collect();
        let shape = self.shapes[x.0].clone();
        let rg = self.rg(x);
        self.push(out, shape, Op::LnClamped { x, lo }, rg)
    }

    /// Multiply by a per-channel scalar along `axis` (the cross-stitch
    /// primitive): `out[..., c, ...] = x[..., c, ...] * s[c]`.
    pub fn scale_channels(&mut self, x: TensorId, s: TensorId, axis: usize) -> Result<TensorId> {
        let xs = self.shape(x);
        if axis >= xs.len() {
            return Err(SeldError::Shape(format!("channel axis {axis} out of range for {xs:?}")));
        }
        let c = xs[axis];
        if self.shape(s) != [c] {
            return Err(SeldError::Shape(format!(
                "channel scale shape {:?} does not match axis size {c}",
                self.shape(s)
            )));
        }
        let outer: usize = xs[..axis].iter().product();
        let inner: usize = xs[axis + 1..].iter().product();
        let sd = self.data(s).to_vec();
        let mut out = self.data(x).to_vec();
        for o in 0..outer {
            for ch in 0..c {
                let sv = sd[ch];
                for v in &mut out[(o * c + ch) * inner..(o * c + ch + 1) * inner] {
                    *v *= sv;
                }
            }
        }
        let shape = self.shapes[x.0].clone();
        let rg = self.rg(x) || self.rg(s);
        Ok(self.push(out, shape, Op::ScaleChannels { x, s, axis }, rg))
    }

    // ── reductions / reshapes ────────────────────────────────────────

    pub fn mean_last(&mut self, x: TensorId) -> Result<TensorId> {
        self.reduce_last(x, true)
    }

    pub fn sum_last(&mut self, x: TensorId) -> Result<TensorId> {
        self.reduce_last(x, false)
    }

    fn reduce_last(&mut self, x: TensorId, mean: bool) -> Result<TensorId> {
        let xs = self.shape(x);
        let d = *xs
            .last()
            .ok_or_else(|| SeldError::Shape("reduce_last on a scalar".into()))?;
        let shape: Vec<usize> = xs[..xs.len() - 1].to_vec();
        let inv = if mean { E::from_f64(1.0 / d as f64) } else { E::ONE };
        let out: Vec<E> = self
            .data(x)
            .chunks_exact(d)
            .map(|row| {
                let mut s = E::ZERO;
                for &v in row {
                    s += v;
                }
                s * inv
            })
            .collect();
        let rg = self.rg(x);
        let op = if mean { Op::MeanLast { x } } else { Op::SumLast { x } };
        Ok(self.push(out, shape, op, rg))
    }

    pub fn mean_all(&mut self, x: TensorId) -> TensorId {
        let inv = E::from_f64(1.0 / self.numel(x) as f64);
        let mut s = E::ZERO;
        for &v in self.data(x) {
            s += v;
        }
        let rg = self.rg(x);
        self.push(vec![s * inv], vec![], Op::MeanAll { x }, rg)
    }

    pub fn sum_all(&mut self, x: TensorId) -> TensorId {
        let mut s = E::ZERO;
        for &v in self.data(x) {
            s += v;
        }
        let rg = self.rg(x);
        self.push(vec![s], vec![], Op::SumAll { x }, rg)
    }

    pub fn transpose_last2(&mut self, x: TensorId) -> Result<TensorId> {
        let xs = self.shape(x);
        if xs.len() < 2 {
            return Err(SeldError::Shape(format!("transpose_last2 needs rank >= 2, got {xs:?}")));
        }
        let (a, b) = (xs[xs.len() - 2], xs[xs.len() - 1]);
        let batch: usize = xs[..xs.len() - 2].iter().product();
        let xd = self.data(x);
        let mut out = vec![E::ZERO; xd.len()];
        for i in 0..batch {
            let src = &xd[i * a * b..(i + 1) * a * b];
            let dst = &mut out[i * a * b..(i + 1) * a * b];
            for r in 0..a {
                for c in 0..b {
                    dst[c * a + r] = src[r * b + c];
                }
            }
        }
        let mut shape = xs.to_vec();
        let l = shape.len();
        shape.swap(l - 2, l - 1);
        let rg = self.rg(x);
        Ok(self.push(out, shape, Op::TransposeLast2 { x }, rg))
    }

    pub fn concat_last(&mut self, parts: &[TensorId]) -> Result<TensorId> {
        if parts.is_empty() {
            return Err(SeldError::Shape("concat_last of zero tensors".into()));
        }
        let lead = self.shape(parts[0])[..self.shape(parts[0]).len() - 1].to_vec();
        let mut total = 0usize;
        for &p in parts {
            let ps = self.shape(p);
            if ps.is_empty() || ps[..ps.len() - 1] != lead[..] {
                return Err(SeldError::Shape(format!(
                    "concat_last leading dims differ: {:?} vs {:?}",
                    self.shape(parts[0]),
                    ps
                )));
            }
            total += ps[ps.len() - 1];
        }
        let rows: usize = lead.iter().product();
        let mut out = vec![E::ZERO; rows * total];
        let mut off = 0usize;
        for &p in parts {
            let d = *self.shape(p).last().unwrap();
            let pd = self.data(p);
            for r in 0..rows {
                out[r * total + off..r * total + off + d]
                    .copy_from_slice(&pd[r * d..(r + 1) * d]);
            }
            off += d;
        }
        let mut shape = lead;
        shape.push(total);
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(out, shape, Op::ConcatLast { parts: parts.to_vec() }, rg))
    }

    pub fn layer_norm_last(
        &mut self,
        x: TensorId,
        gamma: TensorId,
        beta: TensorId,
        eps: f64,
    ) -> Result<TensorId> {
        let d = *self
            .shape(x)
            .last()
            .ok_or_else(|| SeldError::Shape("layer_norm on a scalar".into()))?;
        if self.shape(gamma) != [d] || self.shape(beta) != [d] {
            return Err(SeldError::Shape(format!(
                "layer_norm affine shapes do not match feature dim {d}"
            )));
        }
        let rows = self.numel(x) / d;
        let eps = E::from_f64(eps);
        let inv_d = E::from_f64(1.0 / d as f64);
        let (mut mean, mut inv_std) = (vec![E::ZERO; rows], vec![E::ZERO; rows]);
        let xd = self.data(x);
        let (g, bt) = (self.data(gamma), self.data(beta));
        let mut out = vec![E::ZERO; xd.len()];
        for r in 0..rows {
            let row = &xd[r * d..(r + 1) * d];
            let mut mu = E::ZERO;
            for &v in row {
                mu += v;
            }
            mu *= inv_d;
            let mut var = E::ZERO;
            for &v in row {
                let dv = v - mu;
                var += dv * dv;
            }
            var *= inv_d;
            let is = E::ONE / (var + eps).sqrt();
            mean[r] = mu;
            inv_std[r] = is;
            for j in 0..d {
                out[r * d + j] = (row[j] - mu) * is * g[j] + bt[j];
            }
        }
        let shape = self.shapes[x.0].clone();
        let rg = self.rg(x) || self.rg(gamma) || self.rg(beta);
        Ok(self.push(out, shape, Op::LayerNormLast { x, gamma, beta, mean, inv_std }, rg))
    }

    pub fn reshape(&mut self, x: TensorId, shape: &[usize]) -> Result<TensorId> {
        if shape.iter().product::<usize>() != self.numel(x) {
            return Err(SeldError::Shape(format!(
                "reshape {:?} -> {:?} changes element count",
                self.shape(x),
                shape
            )));
        }
        let out = self.data(x).to_vec();
        let rg = self.rg(x);
        Ok(self.push(out, shape.to_vec(), Op::Reshape { x }, rg))
    }

    // ── backward ─────────────────────────────────────────────────────

    fn accum(&mut self, id: TensorId, contribution: &[E]) {
        if !self.requires_grad[id.0] {
            return;
        }
        let slot = &mut self.grads[id.0];
        match slot {
            Some(g) => {
                for (gv, &cv) in g.iter_mut().zip(contribution) {
                    *gv += cv;
                }
            }
            None => *slot = Some(contribution.to_vec()),
        }
    }

    /// Reverse sweep from a scalar loss. Populates `grad` on every
    /// reachable tensor with `requires_grad`.
    pub fn backward(&mut self, loss: TensorId) -> Result<()> {
        if self.numel(loss) != 1 {
            return Err(SeldError::Contract(format!(
                "backward requires a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        for g in &mut self.grads {
            *g = None;
        }
        self.backward_visits = 0;
        self.grads[loss.0] = Some(vec![E::ONE]);
        for i in (0..=loss.0).rev() {
            if matches!(self.ops[i], Op::Leaf) || self.grads[i].is_none() || !self.requires_grad[i]
            {
                continue;
            }
            let gout = self.grads[i].take().expect("grad present");
            self.backward_step(i, &gout);
            self.grads[i] = Some(gout);
            self.backward_visits += 1;
        }
        Ok(())
    }

    fn backward_step(&mut self, i: usize, gout: &[E]) {
        // Ops are split out of self.ops temporarily so input data can be read
        // while input grads are written.
        let op = std::mem::replace(&mut self.ops[i], Op::Leaf);
        match &op {
            Op::Leaf => unreachable!(),
            Op::Matmul { a, b } => {
                let plan = ops::matmul_plan(self.shape(*a), self.shape(*b)).expect("checked");
                if self.rg(*a) {
                    let mut da = vec![E::ZERO; self.numel(*a)];
                    ops::matmul_bwd_a(&plan, gout, self.data(*b), &mut da);
                    self.accum(*a, &da);
                }
                if self.rg(*b) {
                    let mut db = vec![E::ZERO; self.numel(*b)];
                    ops::matmul_bwd_b(&plan, gout, self.data(*a), &mut db);
                    self.accum(*b, &db);
                }
            }
            Op::Conv2d { x, w, b } => self.conv2d_backward(*x, *w, *b, gout),
            Op::BatchNorm { x, gamma, beta, mean, inv_std, training } => {
                self.batchnorm_backward(*x, *gamma, *beta, mean, inv_std, *training, gout)
            }
            Op::Relu { x } => {
                let dx: Vec<E> = self.data(*x)
                    .iter()
                    .zip(gout)
                    .map(|(&v, &g)| if v > E::ZERO { g } else { E::ZERO })
                    .collect();
                self.accum(*x, &dx);
            }
            Op::Sigmoid { x } => {
                let dx: Vec<E> = self.datas[i]
                    .iter()
                    .zip(gout)
                    .map(|(&y, &g)| g * y * (E::ONE - y))
                    .collect();
                self.accum(*x, &dx);
            }
            Op::Tanh { x } => {
                let dx: Vec<E> = self.datas[i]
                    .iter()
                    .zip(gout)
                    .map(|(&y, &g)| g * (E::ONE - y * y))
                    .collect();
                self.accum(*x, &dx);
            }
            Op::SoftmaxLast { x } => {
                let d = *self.shapes[i].last().unwrap();
                let y = &self.datas[i];
                let mut dx = vec![E::ZERO; y.len()];
                for r in 0..y.len() / d {
                    let yr = &y[r * d..(r + 1) * d];
                    let gr = &gout[r * d..(r + 1) * d];
                    let mut dot = E::ZERO;
                    for j in 0..d {
                        dot += yr[j] * gr[j];
                    }
                    for j in 0..d {
                        dx[r * d + j] = yr[j] * (gr[j] - dot);
                    }
                }
                self.accum(*x, &dx);
            }
            Op::AvgPool { x, pt, pf } => {
                let (n, c, t, f) = ops::as_nchw(self.shape(*x)).expect("checked");
                let (to, fo) = (t / pt, f / pf);
                let inv = E::from_f64(1.0 / (pt * pf) as f64);
                let mut dx = vec![E::ZERO; self.numel(*x)];
                for nc in 0..n * c {
                    for ti in 0..to {
                        for fi in 0..fo {
                            let g = gout[nc * to * fo + ti * fo + fi] * inv;
                            for dt in 0..*pt {
                                for df in 0..*pf {
                                    dx[nc * t * f + (ti * pt + dt) * f + fi * pf + df] += g;
                                }
                            }
                        }
                    }
                }
                self.accum(*x, &dx);
            }
            Op::MaxPool { x, argmax } => {
                let mut dx = vec![E::ZERO; self.numel(*x)];
                for (j, &src) in argmax.iter().enumerate() {
                    dx[src as usize] += gout[j];
                }
                self.accum(*x, &dx);
            }
            Op::AddBiasLast { x, b } => {
                self.accum(*x, gout);
                if self.rg(*b) {
                    let d = self.numel(*b);
                    let mut db = vec![E::ZERO; d];
                    for row in gout.chunks_exact(d) {
                        for (dv, &g) in db.iter_mut().zip(row) {
                            *dv += g;
                        }
                    }
                    self.accum(*b, &db);
                }
            }
            Op::Add { a, b } => {
                self.accum(*a, gout);
                self.accum(*b, gout);
            }
            Op::Sub { a, b } => {
                self.accum(*a, gout);
                if self.rg(*b) {
                    let neg: Vec<E> = gout.iter().map(|&g| -g).collect();
                    self.accum(*b, &neg);
                }
            }
            Op::Mul { a, b } => {
                if self.rg(*a) {
                    let da: Vec<E> =
                        gout.iter().zip(self.data(*b)).map(|(&g, &bv)| g * bv).collect();
                    self.accum(*a, &da);
                }
                if self.rg(*b) {
                    let db: Vec<E> =
                        gout.iter().zip(self.data(*a)).map(|(&g, &av)| g * av).collect();
                    self.accum(*b, &db);
                }
            }
            Op::Scale { x, c } => {
                let dx: Vec<E> = gout.iter().map(|&g| g * *c).collect();
                self.accum(*x, &dx);
            }
            Op::AddScalar { x } => self.accum(*x, gout),
            Op::LnClamped { x, lo } => {
                let dx: Vec<E> = self.data(*x)
                    .iter()
                    .zip(gout)
                    .map(|(&v, &g)| if v > *lo { g / v } else { E::ZERO })
                    .collect();
                self.accum(*x, &dx);
            }
            Op::ScaleChannels { x, s, axis } => {
                let xs = self.shape(*x).to_vec();
                let c = xs[*axis];
                let outer: usize = xs[..*axis].iter().product();
                let inner: usize = xs[*axis + 1..].iter().product();
                if self.rg(*x) {
                    let sd = self.data(*s).to_vec();
                    let mut dx = vec![E::ZERO; self.numel(*x)];
                    for o in 0..outer {
                        for ch in 0..c {
                            let sv = sd[ch];
                            let base = (o * c + ch) * inner;
                            for j in 0..inner {
                                dx[base + j] = gout[base + j] * sv;
                            }
                        }
                    }
                    self.accum(*x, &dx);
                }
                if self.rg(*s) {
                    let xd = self.data(*x);
                    let mut ds = vec![E::ZERO; c];
                    for o in 0..outer {
                        for ch in 0..c {
                            let base = (o * c + ch) * inner;
                            let mut acc = E::ZERO;
                            for j in 0..inner {
                                acc += gout[base + j] * xd[base + j];
                            }
                            ds[ch] += acc;
                        }
                    }
                    self.accum(*s, &ds);
                }
            }
            Op::MeanLast { x } | Op::SumLast { x } => {
                let d = self.numel(*x) / self.datas[i].len().max(1);
                let inv = if matches!(op, Op::MeanLast { .. }) {
                    E::from_f64(1.0 / d as f64)
                } else {
                    E::ONE
                };
                let mut dx = vec![E::ZERO; self.numel(*x)];
                for (r, &g) in gout.iter().enumerate() {
                    let gv = g * inv;
                    for v in &mut dx[r * d..(r + 1) * d] {
                        *v = gv;
                    }
                }
                self.accum(*x, &dx);
            }
            Op::MeanAll { x } | Op::SumAll { x } => {
                let n = self.numel(*x);
                let g = gout[0]
                    * if matches!(op, Op::MeanAll { .. }) {
                        E::from_f64(1.0 / n as f64)
                    } else {
                        E::ONE
                    };
                let dx = vec![g; n];
                self.accum(*x, &dx);
            }
            Op::TransposeLast2 { x } => {
                let xs = self.shape(*x).to_vec();
                let (a, b) = (xs[xs.len() - 2], xs[xs.len() - 1]);
                let batch: usize = xs[..xs.len() - 2].iter().product();
                let mut dx = vec![E::ZERO; self.numel(*x)];
                // gout has shape [..., b, a]
                for bi in 0..batch {
                    let src = &gout[bi * a * b..(bi + 1) * a * b];
                    let dst = &mut dx[bi * a * b..(bi + 1) * a * b];
                    for r in 0..b {
                        for c in 0..a {
                            dst[c * b + r] = src[r * a + c];
                        }
                    }
                }
                self.accum(*x, &dx);
            }
            Op::ConcatLast { parts } => {
                let total = *self.shapes[i].last().unwrap();
                let rows = self.datas[i].len() / total;
                let mut off = 0usize;
                for &p in parts {
                    let d = *self.shape(p).last().unwrap();
                    if self.rg(p) {
                        let mut dp = vec![E::ZERO; self.numel(p)];
                        for r in 0..rows {
                            dp[r * d..(r + 1) * d]
                                .copy_from_slice(&gout[r * total + off..r * total + off + d]);
                        }
                        self.accum(p, &dp);
                    }
                    off += d;
                }
            }
            Op::LayerNormLast { x, gamma, beta, mean, inv_std } => {
                let d = *self.shapes[i].last().unwrap();
                let rows = self.numel(*x) / d;
                let xd = self.data(*x);
                let g = self.data(*gamma);
                let inv_d = E::from_f64(1.0 / d as f64);
                let mut dx = vec![E::ZERO; self.numel(*x)];
                let mut dgamma = vec![E::ZERO; d];
                let mut dbeta = vec![E::ZERO; d];
                for r in 0..rows {
                    let (mu, is) = (mean[r], inv_std[r]);
                    let row = &xd[r * d..(r + 1) * d];
                    let grow = &gout[r * d..(r + 1) * d];
                    let mut sum_dxh = E::ZERO;
                    let mut sum_dxh_xh = E::ZERO;
                    for j in 0..d {
                        let xh = (row[j] - mu) * is;
                        let dxh = grow[j] * g[j];
                        sum_dxh += dxh;
                        sum_dxh_xh += dxh * xh;
                        dgamma[j] += grow[j] * xh;
                        dbeta[j] += grow[j];
                    }
                    for j in 0..d {
                        let xh = (row[j] - mu) * is;
                        let dxh = grow[j] * g[j];
                        dx[r * d + j] = is * (dxh - inv_d * sum_dxh - xh * inv_d * sum_dxh_xh);
                    }
                }
                self.accum(*x, &dx);
                self.accum(*gamma, &dgamma);
                self.accum(*beta, &dbeta);
            }
            Op::Reshape { x } => self.accum(*x, gout),
        }
        self.ops[i] = op;
    }

    fn conv2d_backward(&mut self, x: TensorId, w: TensorId, b: TensorId, gout: &[E]) {
        let (n, cin, t, f) = ops::as_nchw(self.shape(x)).expect("checked");
        let cout = self.shape(w)[0];
        let tf = t * f;
        let mut cols = vec![E::ZERO; cin * 9 * tf];
        let need_dw = self.rg(w);
        let need_dx = self.rg(x);
        let mut dw = vec![E::ZERO; self.numel(w)];
        let mut dx = vec![E::ZERO; self.numel(x)];
        let mut dcols = vec![E::ZERO; cin * 9 * tf];
        for i in 0..n {
            if need_dw {
                ops::im2col3x3(&self.data(x)[i * cin * tf..], cin, t, f, &mut cols);
                // dW += dOut_i [cout, tf] @ cols^T [tf, cin*9]
                unsafe {
                    E::gemm(
                        cout,
                        tf,
                        cin * 9,
                        E::ONE,
                        gout.as_ptr().add(i * cout * tf),
                        tf as isize,
                        1,
                        cols.as_ptr(),
                        1,
                        tf as isize,
                        E::ONE,
                        dw.as_mut_ptr(),
                        (cin * 9) as isize,
                        1,
                    );
                }
            }
            if need_dx {
                // dcols = W^T [cin*9, cout] @ dOut_i [cout, tf]
                unsafe {
                    E::gemm(
                        cin * 9,
                        cout,
                        tf,
                        E::ONE,
                        self.data(w).as_ptr(),
                        1,
                        (cin * 9) as isize,
                        gout.as_ptr().add(i * cout * tf),
                        tf as isize,
                        1,
                        E::ZERO,
                        dcols.as_mut_ptr(),
                        tf as isize,
                        1,
                    );
                }
                ops::col2im3x3_add(&dcols, cin, t, f, &mut dx[i * cin * tf..(i + 1) * cin * tf]);
            }
        }
        if need_dw {
            self.accum(w, &dw);
        }
        if need_dx {
            self.accum(x, &dx);
        }
        if self.rg(b) {
            let mut db = vec![E::ZERO; cout];
            for i in 0..n {
                for c in 0..cout {
                    let mut s = E::ZERO;
                    for &g in &gout[(i * cout + c) * tf..(i * cout + c + 1) * tf] {
                        s += g;
                    }
                    db[c] += s;
                }
            }
            self.accum(b, &db);
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn batchnorm_backward(
        &mut self,
        x: TensorId,
        gamma: TensorId,
        beta: TensorId,
        mean: &[E],
        inv_std: &[E],
        training: bool,
        gout: &[E],
    ) {
        let (n, c, t, f) = ops::as_nchw(self.shape(x)).expect("checked");
        let tf = t * f;
        let m = n * tf;
        let inv_m = E::from_f64(1.0 / m as f64);
        let xd = self.data(x);
        let g = self.data(gamma);
        let mut dgamma = vec![E::ZERO; c];
        let mut dbeta = vec![E::ZERO; c];
        let mut dx = vec![E::ZERO; xd.len()];
        for ch in 0..c {
            let (mu, is, gv) = (mean[ch], inv_std[ch], g[ch]);
            let mut sum_dy = E::ZERO;
            let mut sum_dy_xh = E::ZERO;
            for i in 0..n {
                let base = (i * c + ch) * tf;
                for j in 0..tf {
                    let dy = gout[base + j];
                    let xh = (xd[base + j] - mu) * is;
                    sum_dy += dy;
                    sum_dy_xh += dy * xh;
                }
            }
            dgamma[ch] = sum_dy_xh;
            dbeta[ch] = sum_dy;
            for i in 0..n {
                let base = (i * c + ch) * tf;
                for j in 0..tf {
                    let dy = gout[base + j];
                    if training {
                        // Batch stats depend on x: full normalization gradient.
                        let xh = (xd[base + j] - mu) * is;
                        dx[base + j] =
                            gv * is * (dy - inv_m * sum_dy - xh * inv_m * sum_dy_xh);
                    } else {
                        // Running stats are constants.
                        dx[base + j] = gv * is * dy;
                    }
                }
            }
        }
        self.accum(x, &dx);
        self.accum(gamma, &dgamma);
        self.accum(beta, &dbeta);
    }
}

fn pooled_shape(orig: &[usize], to: usize, fo: usize) -> Vec<usize> {
    let mut shape = orig.to_vec();
    let l = shape.len();
    shape[l - 2] = to;
    shape[l - 1] = fo;
    shape
}
