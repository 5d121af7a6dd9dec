//! Numeric kernels behind the tape ops.
//!
//! Everything here is pure slice math; the tape owns shapes and wiring.
//! Convolution lowers to im2col + GEMM, matmul broadcasts leading batch
//! dimensions, and all reductions accumulate sequentially so results are
//! bit-reproducible run to run.

use super::element::Element;
use crate::error::{Result, SeldError};

/// Resolved batched-matmul geometry: `a: La ++ [m,k]`, `b: Lb ++ [k,n]`
/// where `La == Lb` or one side has no batch dims.
pub(super) struct MatmulPlan {
    pub out_shape: Vec<usize>,
    pub batch: usize,
    pub m: usize,
    pub k: usize,
    pub n: usize,
    pub a_batched: bool,
    pub b_batched: bool,
}

pub(super) fn matmul_plan(a: &[usize], b: &[usize]) -> Result<MatmulPlan> {
    if a.len() < 2 || b.len() < 2 {
        return Err(SeldError::Shape(format!(
            "matmul needs rank >= 2 operands, got {a:?} and {b:?}"
        )));
    }
    let (la, ma) = a.split_at(a.len() - 2);
    let (lb, mb) = b.split_at(b.len() - 2);
    let (m, ka) = (ma[0], ma[1]);
    let (kb, n) = (mb[0], mb[1]);
    if ka != kb {
        return Err(SeldError::Shape(format!(
            "matmul inner dimensions disagree: {a:?} @ {b:?}"
        )));
    }
    let (lead, a_batched, b_batched) = if la == lb {
        (la, !la.is_empty(), !lb.is_empty())
    } else if lb.is_empty() {
        (la, true, false)
    } else if la.is_empty() {
        (lb, false, true)
    } else {
        return Err(SeldError::Shape(format!(
            "matmul batch dimensions not broadcastable: {a:?} @ {b:?}"
        )));
    };
    let mut out_shape = lead.to_vec();
    out_shape.push(m);
    out_shape.push(n);
    Ok(MatmulPlan { out_shape, batch: lead.iter().product(), m, k: ka, n, a_batched, b_batched })
}

pub(super) fn matmul_fwd<E: Element>(p: &MatmulPlan, a: &[E], b: &[E], out: &mut [E]) {
    let (m, k, n) = (p.m, p.k, p.n);
    for i in 0..p.batch {
        let ao = if p.a_batched { i * m * k } else { 0 };
        let bo = if p.b_batched { i * k * n } else { 0 };
        unsafe {
            E::gemm(
                m,
                k,
                n,
                E::ONE,
                a.as_ptr().add(ao),
                k as isize,
                1,
                b.as_ptr().add(bo),
                n as isize,
                1,
                E::ZERO,
                out.as_mut_ptr().add(i * m * n),
                n as isize,
                1,
            );
        }
    }
}

/// dA = dC @ B^T, accumulated into `da`.
pub(super) fn matmul_bwd_a<E: Element>(p: &MatmulPlan, dc: &[E], b: &[E], da: &mut [E]) {
    let (m, k, n) = (p.m, p.k, p.n);
    for i in 0..p.batch {
        let ao = if p.a_batched { i * m * k } else { 0 };
        let bo = if p.b_batched { i * k * n } else { 0 };
        unsafe {
            E::gemm(
                m,
                n,
                k,
                E::ONE,
                dc.as_ptr().add(i * m * n),
                n as isize,
                1,
                b.as_ptr().add(bo),
                1, // B^T strides
                n as isize,
                E::ONE,
                da.as_mut_ptr().add(ao),
                k as isize,
                1,
            );
        }
    }
}

/// dB = A^T @ dC, accumulated into `db` (summed over batch when B is shared).
pub(super) fn matmul_bwd_b<E: Element>(p: &MatmulPlan, dc: &[E], a: &[E], db: &mut [E]) {
    let (m, k, n) = (p.m, p.k, p.n);
    for i in 0..p.batch {
        let ao = if p.a_batched { i * m * k } else { 0 };
        let bo = if p.b_batched { i * k * n } else { 0 };
        unsafe {
            E::gemm(
                k,
                m,
                n,
                E::ONE,
                a.as_ptr().add(ao),
                1, // A^T strides
                k as isize,
                dc.as_ptr().add(i * m * n),
                n as isize,
                1,
                E::ONE,
                db.as_mut_ptr().add(bo),
                n as isize,
                1,
            );
        }
    }
}

/// 3x3/pad-1 im2col: `x` is one sample `[cin, t, f]`, `cols` is `[cin*9, t*f]`.
pub(super) fn im2col3x3<E: Element>(x: &[E], cin: usize, t: usize, f: usize, cols: &mut [E]) {
    debug_assert_eq!(cols.len(), cin * 9 * t * f);
    let tf = t * f;
    for c in 0..cin {
        let xc = &x[c * tf..(c + 1) * tf];
        for kt in 0..3usize {
            for kf in 0..3usize {
                let row = &mut cols[(c * 9 + kt * 3 + kf) * tf..][..tf];
                // source row index = ti + kt - 1, col = fi + kf - 1
                for ti in 0..t {
                    let si = ti as isize + kt as isize - 1;
                    let dst = &mut row[ti * f..(ti + 1) * f];
                    if si < 0 || si >= t as isize {
                        dst.fill(E::ZERO);
                        continue;
                    }
                    let src = &xc[si as usize * f..(si as usize + 1) * f];
                    match kf {
                        0 => {
                            dst[0] = E::ZERO;
                            dst[1..].copy_from_slice(&src[..f - 1]);
                        }
                        1 => dst.copy_from_slice(src),
                        _ => {
                            dst[..f - 1].copy_from_slice(&src[1..]);
                            dst[f - 1] = E::ZERO;
                        }
                    }
                }
            }
        }
    }
}

/// Scatter-add of column gradients back onto one input sample.
pub(super) fn col2im3x3_add<E: Element>(cols: &[E], cin: usize, t: usize, f: usize, dx: &mut [E]) {
    let tf = t * f;
    for c in 0..cin {
        let dxc = &mut dx[c * tf..(c + 1) * tf];
        for kt in 0..3usize {
            for kf in 0..3usize {
                let row = &cols[(c * 9 + kt * 3 + kf) * tf..][..tf];
                for ti in 0..t {
                    let si = ti as isize + kt as isize - 1;
                    if si < 0 || si >= t as isize {
                        continue;
                    }
                    let src = &row[ti * f..(ti + 1) * f];
                    let dst = &mut dxc[si as usize * f..(si as usize + 1) * f];
                    match kf {
                        0 => {
                            for j in 1..f {
                                dst[j - 1] += src[j];
                            }
                        }
                        1 => {
                            for j in 0..f {
                                dst[j] += src[j];
                            }
                        }
                        _ => {
                            for j in 0..f - 1 {
                                dst[j + 1] += src[j];
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Interpret a shape as `[n, c, t, f]`, accepting rank 3 as `n = 1`.
pub(super) fn as_nchw(shape: &[usize]) -> Result<(usize, usize, usize, usize)> {
    match shape.len() {
        3 => Ok((1, shape[0], shape[1], shape[2])),
        4 => Ok((shape[0], shape[1], shape[2], shape[3])),
        _ => Err(SeldError::Shape(format!("expected [C,T,F] or [N,C,T,F], got {shape:?}"))),
    }
}

/// Numerically stable logistic function.
#[inline]
pub(super) fn sigmoid_scalar<E: Element>(x: E) -> E {
    if x >= E::ZERO {
        E::ONE / (E::ONE + (-x).exp())
    } else {
        let e = x.exp();
        e / (E::ONE + e)
    }
}

/// Row-wise softmax over the last dimension with max subtraction.
pub(super) fn softmax_rows<E: Element>(x: &[E], d: usize, out: &mut [E]) {
    for (xr, yr) in x.chunks_exact(d).zip(out.chunks_exact_mut(d)) {
        let mut mx = xr[0];
        for &v in &xr[1..] {
            mx = mx.maximum(v);
        }
        let mut sum = E::ZERO;
        for (y, &v) in yr.iter_mut().zip(xr) {
            *y = (v - mx).exp();
            sum += *y;
        }
        for y in yr.iter_mut() {
            *y /= sum;
        }
    }
}
