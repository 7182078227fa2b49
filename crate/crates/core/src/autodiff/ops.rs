//! Primitive operations: forward kernels, shape validation, and hand-written
//! adjoints. Convolutions, the selective scan, and forward kinematics are
//! primitives rather than compositions so tapes stay small and their backward
//! passes can exploit structure.
//!
//! Conventions:
//! - rank-2 tensors are time-major `[T, C]` (row = frame/step);
//! - `Conv1d` weights are `[K, Cin, Cout]`, `ConvT1d` weights `[Cin, K, Cout]`,
//!   depthwise weights `[K, C]` — all chosen so the innermost loop runs over a
//!   contiguous output-channel axis;
//! - reductions produce rank-0 scalars.

use std::sync::Arc;

use crate::error::{CoreError, Result};
use crate::motion::kernels as mk;
use crate::motion::Skeleton;
use crate::scalar::Scalar;
use crate::ssm::scan;

use super::tensor::Tensor;

pub type ValueId = usize;

#[derive(Clone, Debug)]
pub enum Op<S: Scalar> {
    MatMul { a: ValueId, b: ValueId },
    Conv1d { x: ValueId, w: ValueId, b: ValueId, stride: usize, pad: usize },
    ConvT1d { x: ValueId, w: ValueId, b: ValueId, stride: usize, pad: usize },
    DwConvCausal { x: ValueId, w: ValueId, b: ValueId },
    Add { a: ValueId, b: ValueId },
    Sub { a: ValueId, b: ValueId },
    Mul { a: ValueId, b: ValueId },
    Scale { x: ValueId, c: S },
    AddRow { x: ValueId, v: ValueId },
    MulRow { x: ValueId, v: ValueId },
    ColAffine { x: ValueId, mul: Vec<S>, add: Vec<S> },
    Sigmoid { x: ValueId },
    Tanh { x: ValueId },
    Silu { x: ValueId },
    Exp { x: ValueId },
    Softplus { x: ValueId },
    Softmax { x: ValueId },
    Embedding { table: ValueId, ids: Vec<usize> },
    CumSum { x: ValueId },
    RoundSt { x: ValueId },
    Reverse { x: ValueId },
    ConcatCols { a: ValueId, b: ValueId },
    SliceCols { x: ValueId, lo: usize, hi: usize },
    TimeDiff { x: ValueId, scale: S },
    SelectiveScan { u: ValueId, delta: ValueId, a: ValueId, b: ValueId, c: ValueId },
    Rot6d { x: ValueId },
    FkChain { mats: ValueId, tau: ValueId, skel: Arc<Skeleton<S>> },
    CrossEntropy { logits: ValueId, targets: Vec<usize> },
    Mse { a: ValueId, b: ValueId },
    L1 { a: ValueId, b: ValueId },
}

fn slot<'g, S: Scalar>(
    grads: &'g mut [Option<Tensor<S>>],
    id: ValueId,
    shape: &[usize],
) -> &'g mut Tensor<S> {
    if grads[id].is_none() {
        grads[id] = Some(Tensor::zeros(shape));
    }
    grads[id].as_mut().unwrap()
}

fn shape_err(op: &'static str, detail: String) -> CoreError {
    CoreError::Shape { op, detail }
}

fn want_rank2(op: &'static str, t: &[usize]) -> Result<(usize, usize)> {
    if t.len() != 2 {
        return Err(shape_err(op, format!("expected rank-2 tensor, got shape {:?}", t)));
    }
    Ok((t[0], t[1]))
}

#[inline]
pub fn sigmoid<S: Scalar>(x: S) -> S {
    // Branch on sign so neither exp can overflow.
    if x >= S::zero() {
        S::one() / (S::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (S::one() + e)
    }
}

#[inline]
pub fn softplus<S: Scalar>(x: S) -> S {
    if x > S::of(20.0) {
        x
    } else {
        x.exp().ln_1p()
    }
}

#[inline]
pub fn silu<S: Scalar>(x: S) -> S {
    x * sigmoid(x)
}

impl<S: Scalar> Op<S> {
    pub fn name(&self) -> &'static str {
        match self {
            Op::MatMul { .. } => "matmul",
            Op::Conv1d { .. } => "conv1d",
            Op::ConvT1d { .. } => "conv1d_transpose",
            Op::DwConvCausal { .. } => "dwconv_causal",
            Op::Add { .. } => "add",
            Op::Sub { .. } => "sub",
            Op::Mul { .. } => "mul",
            Op::Scale { .. } => "scale",
            Op::AddRow { .. } => "add_row",
            Op::MulRow { .. } => "mul_row",
            Op::ColAffine { .. } => "col_affine",
            Op::Sigmoid { .. } => "sigmoid",
            Op::Tanh { .. } => "tanh",
            Op::Silu { .. } => "silu",
            Op::Exp { .. } => "exp",
            Op::Softplus { .. } => "softplus",
            Op::Softmax { .. } => "softmax",
            Op::Embedding { .. } => "embedding",
            Op::CumSum { .. } => "cumsum",
            Op::RoundSt { .. } => "round_st",
            Op::Reverse { .. } => "reverse_time",
            Op::ConcatCols { .. } => "concat_cols",
            Op::SliceCols { .. } => "slice_cols",
            Op::TimeDiff { .. } => "time_diff",
            Op::SelectiveScan { .. } => "selective_scan",
            Op::Rot6d { .. } => "rot6d_to_matrix",
            Op::FkChain { .. } => "forward_kinematics",
            Op::CrossEntropy { .. } => "cross_entropy",
            Op::Mse { .. } => "mse",
            Op::L1 { .. } => "l1",
        }
    }

    pub fn inputs(&self) -> Vec<ValueId> {
        match *self {
            Op::MatMul { a, b } | Op::Add { a, b } | Op::Sub { a, b } | Op::Mul { a, b }
            | Op::Mse { a, b } | Op::L1 { a, b } => vec![a, b],
            Op::ConcatCols { a, b } => vec![a, b],
            Op::Conv1d { x, w, b, .. } | Op::ConvT1d { x, w, b, .. } | Op::DwConvCausal { x, w, b } => {
                vec![x, w, b]
            }
            Op::Scale { x, .. } | Op::ColAffine { x, .. } | Op::Sigmoid { x } | Op::Tanh { x }
            | Op::Silu { x } | Op::Exp { x } | Op::Softplus { x } | Op::Softmax { x }
            | Op::CumSum { x } | Op::RoundSt { x } | Op::Reverse { x } | Op::SliceCols { x, .. }
            | Op::TimeDiff { x, .. } | Op::Rot6d { x } => vec![x],
            Op::AddRow { x, v } | Op::MulRow { x, v } => vec![x, v],
            Op::Embedding { table, .. } => vec![table],
            Op::SelectiveScan { u, delta, a, b, c } => vec![u, delta, a, b, c],
            Op::FkChain { mats, tau, .. } => vec![mats, tau],
            Op::CrossEntropy { logits, .. } => vec![logits],
        }
    }

    pub fn forward(&self, vals: &[Tensor<S>]) -> Result<Tensor<S>> {
        match self {
            Op::MatMul { a, b } => {
                let (m, k) = want_rank2("matmul", vals[*a].shape())?;
                let (k2, n) = want_rank2("matmul", vals[*b].shape())?;
                if k != k2 {
                    return Err(shape_err(
                        "matmul",
                        format!("inner dims disagree: [{},{}] x [{},{}]", m, k, k2, n),
                    ));
                }
                let av = vals[*a].data();
                let bv = vals[*b].data();
                let mut out = vec![S::zero(); m * n];
                for i in 0..m {
                    let arow = &av[i * k..(i + 1) * k];
                    let orow = &mut out[i * n..(i + 1) * n];
                    for (kk, &x) in arow.iter().enumerate() {
                        let brow = &bv[kk * n..(kk + 1) * n];
                        for j in 0..n {
                            orow[j] = orow[j] + x * brow[j];
                        }
                    }
                }
                Tensor::from_vec(&[m, n], out)
            }
            Op::Conv1d { x, w, b, stride, pad } => {
                let (t, cin) = want_rank2("conv1d", vals[*x].shape())?;
                let ws = vals[*w].shape();
                if ws.len() != 3 || ws[1] != cin {
                    return Err(shape_err(
                        "conv1d",
                        format!("weight shape {:?} incompatible with input [{},{}]", ws, t, cin),
                    ));
                }
                let (kk, cout) = (ws[0], ws[2]);
                if vals[*b].numel() != cout {
                    return Err(shape_err("conv1d", format!("bias len {} != cout {}", vals[*b].numel(), cout)));
                }
                if t + 2 * pad < kk {
                    return Err(shape_err(
                        "conv1d",
                        format!("input length {} (+2*{} pad) shorter than kernel {}", t, pad, kk),
                    ));
                }
                let tout = (t + 2 * pad - kk) / stride + 1;
                let xv = vals[*x].data();
                let wv = vals[*w].data();
                let bias = vals[*b].data();
                let mut out = vec![S::zero(); tout * cout];
                for to in 0..tout {
                    let orow = &mut out[to * cout..(to + 1) * cout];
                    orow.copy_from_slice(&bias[..cout]);
                    for k in 0..kk {
                        let src = (to * stride + k) as isize - *pad as isize;
                        if src < 0 || src >= t as isize {
                            continue;
                        }
                        let xrow = &xv[src as usize * cin..(src as usize + 1) * cin];
                        let wk = &wv[k * cin * cout..(k + 1) * cin * cout];
                        for ci in 0..cin {
                            let xc = xrow[ci];
                            let wrow = &wk[ci * cout..(ci + 1) * cout];
                            for co in 0..cout {
                                orow[co] = orow[co] + xc * wrow[co];
                            }
                        }
                    }
                }
                Tensor::from_vec(&[tout, cout], out)
            }
            Op::ConvT1d { x, w, b, stride, pad } => {
                let (t, cin) = want_rank2("conv1d_transpose", vals[*x].shape())?;
                let ws = vals[*w].shape();
                if ws.len() != 3 || ws[0] != cin {
                    return Err(shape_err(
                        "conv1d_transpose",
                        format!("weight shape {:?} incompatible with input [{},{}]", ws, t, cin),
                    ));
                }
                let (kk, cout) = (ws[1], ws[2]);
                if vals[*b].numel() != cout {
                    return Err(shape_err(
                        "conv1d_transpose",
                        format!("bias len {} != cout {}", vals[*b].numel(), cout),
                    ));
                }
                let full = (t - 1) * stride + kk;
                if full < 2 * pad + 1 {
                    return Err(shape_err(
                        "conv1d_transpose",
                        format!("output would be empty: (T-1)*s+K = {} <= 2*pad = {}", full, 2 * pad),
                    ));
                }
                let tout = full - 2 * pad;
                let xv = vals[*x].data();
                let wv = vals[*w].data();
                let bias = vals[*b].data();
                let mut out = vec![S::zero(); tout * cout];
                for to in 0..tout {
                    out[to * cout..(to + 1) * cout].copy_from_slice(&bias[..cout]);
                }
                for ti in 0..t {
                    let xrow = &xv[ti * cin..(ti + 1) * cin];
                    for k in 0..kk {
                        let to = (ti * stride + k) as isize - *pad as isize;
                        if to < 0 || to >= tout as isize {
                            continue;
                        }
                        let orow = &mut out[to as usize * cout..(to as usize + 1) * cout];
                        for ci in 0..cin {
                            let xc = xrow[ci];
                            let wrow = &wv[(ci * kk + k) * cout..(ci * kk + k + 1) * cout];
                            for co in 0..cout {
                                orow[co] = orow[co] + xc * wrow[co];
                            }
                        }
                    }
                }
                Tensor::from_vec(&[tout, cout], out)
            }
            Op::DwConvCausal { x, w, b } => {
                let (t, c) = want_rank2("dwconv_causal", vals[*x].shape())?;
                let ws = vals[*w].shape();
                if ws.len() != 2 || ws[1] != c {
                    return Err(shape_err(
                        "dwconv_causal",
                        format!("weight shape {:?} incompatible with input [{},{}]", ws, t, c),
                    ));
                }
                let kk = ws[0];
                if vals[*b].numel() != c {
                    return Err(shape_err("dwconv_causal", format!("bias len {} != channels {}", vals[*b].numel(), c)));
                }
                let xv = vals[*x].data();
                let wv = vals[*w].data();
                let bias = vals[*b].data();
                let mut out = vec![S::zero(); t * c];
                for ti in 0..t {
                    let orow = &mut out[ti * c..(ti + 1) * c];
                    orow.copy_from_slice(&bias[..c]);
                    for k in 0..kk {
                        // causal: tap k reads input at ti - (kk-1) + k
                        let src = ti as isize - (kk - 1) as isize + k as isize;
                        if src < 0 {
                            continue;
                        }
                        let xrow = &xv[src as usize * c..(src as usize + 1) * c];
                        let wrow = &wv[k * c..(k + 1) * c];
                        for ci in 0..c {
                            orow[ci] = orow[ci] + xrow[ci] * wrow[ci];
                        }
                    }
                }
                Tensor::from_vec(&[t, c], out)
            }
            Op::Add { a, b } | Op::Sub { a, b } | Op::Mul { a, b } => {
                if vals[*a].shape() != vals[*b].shape() {
                    return Err(shape_err(
                        self.name(),
                        format!("operand shapes differ: {:?} vs {:?}", vals[*a].shape(), vals[*b].shape()),
                    ));
                }
                let av = vals[*a].data();
                let bv = vals[*b].data();
                let data = match self {
                    Op::Add { .. } => av.iter().zip(bv).map(|(&x, &y)| x + y).collect(),
                    Op::Sub { .. } => av.iter().zip(bv).map(|(&x, &y)| x - y).collect(),
                    _ => av.iter().zip(bv).map(|(&x, &y)| x * y).collect(),
                };
                Tensor::from_vec(vals[*a].shape(), data)
            }
            Op::Scale { x, c } => Ok(vals[*x].map(|v| v * *c)),
            Op::AddRow { x, v } | Op::MulRow { x, v } => {
                let (_, c) = want_rank2(self.name(), vals[*x].shape())?;
                if vals[*v].numel() != c {
                    return Err(shape_err(
                        self.name(),
                        format!("row operand has {} elements, needs {}", vals[*v].numel(), c),
                    ));
                }
                let xv = vals[*x].data();
                let vv = vals[*v].data();
                let mul = matches!(self, Op::MulRow { .. });
                let data = xv
                    .iter()
                    .enumerate()
                    .map(|(i, &x)| if mul { x * vv[i % c] } else { x + vv[i % c] })
                    .collect();
                Tensor::from_vec(vals[*x].shape(), data)
            }
            Op::ColAffine { x, mul, add } => {
                let (_, c) = want_rank2("col_affine", vals[*x].shape())?;
                if mul.len() != c || add.len() != c {
                    return Err(shape_err(
                        "col_affine",
                        format!("coefficient lengths ({}, {}) != columns {}", mul.len(), add.len(), c),
                    ));
                }
                let data = vals[*x]
                    .data()
                    .iter()
                    .enumerate()
                    .map(|(i, &v)| v * mul[i % c] + add[i % c])
                    .collect();
                Tensor::from_vec(vals[*x].shape(), data)
            }
            Op::Sigmoid { x } => Ok(vals[*x].map(sigmoid)),
            Op::Tanh { x } => Ok(vals[*x].map(|v| v.tanh())),
            Op::Silu { x } => Ok(vals[*x].map(silu)),
            Op::Exp { x } => Ok(vals[*x].map(|v| v.exp())),
            Op::Softplus { x } => Ok(vals[*x].map(softplus)),
            Op::Softmax { x } => {
                let (t, c) = want_rank2("softmax", vals[*x].shape())?;
                let xv = vals[*x].data();
                let mut out = vec![S::zero(); t * c];
                for r in 0..t {
                    let row = &xv[r * c..(r + 1) * c];
                    let m = row.iter().cloned().fold(S::neg_infinity(), S::max);
                    let orow = &mut out[r * c..(r + 1) * c];
                    let mut z = S::zero();
                    for j in 0..c {
                        let e = (row[j] - m).exp();
                        orow[j] = e;
                        z += e;
                    }
                    for v in orow.iter_mut() {
                        *v = *v / z;
                    }
                }
                Tensor::from_vec(&[t, c], out)
            }
            Op::Embedding { table, ids } => {
                let (v, c) = want_rank2("embedding", vals[*table].shape())?;
                if let Some(bad) = ids.iter().find(|&&i| i >= v) {
                    return Err(shape_err("embedding", format!("id {} out of vocabulary {}", bad, v)));
                }
                let tv = vals[*table].data();
                let mut out = Vec::with_capacity(ids.len() * c);
                for &id in ids {
                    out.extend_from_slice(&tv[id * c..(id + 1) * c]);
                }
                Tensor::from_vec(&[ids.len(), c], out)
            }
            Op::CumSum { x } => {
                // Plain sequential prefix sum per column; the contract for this
                // primitive is exact agreement with a simple loop.
                let (t, c) = want_rank2("cumsum", vals[*x].shape())?;
                let xv = vals[*x].data();
                let mut out = xv.to_vec();
                for r in 1..t {
                    for j in 0..c {
                        out[r * c + j] = out[r * c + j] + out[(r - 1) * c + j];
                    }
                }
                Tensor::from_vec(&[t, c], out)
            }
            Op::RoundSt { x } => Ok(vals[*x].map(|v| v.round())),
            Op::Reverse { x } => {
                let (t, c) = want_rank2("reverse_time", vals[*x].shape())?;
                let xv = vals[*x].data();
                let mut out = Vec::with_capacity(t * c);
                for r in (0..t).rev() {
                    out.extend_from_slice(&xv[r * c..(r + 1) * c]);
                }
                Tensor::from_vec(&[t, c], out)
            }
            Op::ConcatCols { a, b } => {
                let (ta, ca) = want_rank2("concat_cols", vals[*a].shape())?;
                let (tb, cb) = want_rank2("concat_cols", vals[*b].shape())?;
                if ta != tb {
                    return Err(shape_err("concat_cols", format!("row counts differ: {} vs {}", ta, tb)));
                }
                let av = vals[*a].data();
                let bv = vals[*b].data();
                let mut out = Vec::with_capacity(ta * (ca + cb));
                for r in 0..ta {
                    out.extend_from_slice(&av[r * ca..(r + 1) * ca]);
                    out.extend_from_slice(&bv[r * cb..(r + 1) * cb]);
                }
                Tensor::from_vec(&[ta, ca + cb], out)
            }
            Op::SliceCols { x, lo, hi } => {
                let (t, c) = want_rank2("slice_cols", vals[*x].shape())?;
                if *lo >= *hi || *hi > c {
                    return Err(shape_err("slice_cols", format!("range {}..{} invalid for {} columns", lo, hi, c)));
                }
                let xv = vals[*x].data();
                let w = hi - lo;
                let mut out = Vec::with_capacity(t * w);
                for r in 0..t {
                    out.extend_from_slice(&xv[r * c + lo..r * c + hi]);
                }
                Tensor::from_vec(&[t, w], out)
            }
            Op::TimeDiff { x, scale } => {
                let (t, c) = want_rank2("time_diff", vals[*x].shape())?;
                if t < 2 {
                    return Err(shape_err("time_diff", format!("needs at least 2 rows, got {}", t)));
                }
                let xv = vals[*x].data();
                let mut out = Vec::with_capacity((t - 1) * c);
                for r in 0..t - 1 {
                    for j in 0..c {
                        out.push((xv[(r + 1) * c + j] - xv[r * c + j]) * *scale);
                    }
                }
                Tensor::from_vec(&[t - 1, c], out)
            }
            Op::SelectiveScan { u, delta, a, b, c } => {
                let (t, d) = want_rank2("selective_scan", vals[*u].shape())?;
                let (td, dd) = want_rank2("selective_scan", vals[*delta].shape())?;
                let (da, n) = want_rank2("selective_scan", vals[*a].shape())?;
                let (tb, nb) = want_rank2("selective_scan", vals[*b].shape())?;
                let (tc, nc) = want_rank2("selective_scan", vals[*c].shape())?;
                if td != t || dd != d || da != d || tb != t || tc != t || nb != n || nc != n {
                    return Err(shape_err(
                        "selective_scan",
                        format!(
                            "u [{},{}], delta [{},{}], a [{},{}], b [{},{}], c [{},{}] inconsistent",
                            t, d, td, dd, da, n, tb, nb, tc, nc
                        ),
                    ));
                }
                if let Some(neg) = vals[*delta].data().iter().find(|v| **v <= S::zero()) {
                    return Err(CoreError::Numerical(format!(
                        "selective_scan requires strictly positive step sizes, got {}",
                        neg
                    )));
                }
                let y = scan::selective_scan_parallel(
                    vals[*u].data(),
                    vals[*delta].data(),
                    vals[*a].data(),
                    vals[*b].data(),
                    vals[*c].data(),
                    t,
                    d,
                    n,
                );
                Tensor::from_vec(&[t, d], y)
            }
            Op::Rot6d { x } => {
                let (t, c) = want_rank2("rot6d_to_matrix", vals[*x].shape())?;
                if c % 6 != 0 {
                    return Err(shape_err("rot6d_to_matrix", format!("columns {} not divisible by 6", c)));
                }
                let j = c / 6;
                let mats = mk::rot6d_to_mats(vals[*x].data(), t, j)?;
                Tensor::from_vec(&[t, 9 * j], mats)
            }
            Op::FkChain { mats, tau, skel } => {
                let (t, c) = want_rank2("forward_kinematics", vals[*mats].shape())?;
                let j = skel.joint_count();
                if c != 9 * j {
                    return Err(shape_err(
                        "forward_kinematics",
                        format!("rotation input has {} columns, skeleton wants {}", c, 9 * j),
                    ));
                }
                let (tt, ct) = want_rank2("forward_kinematics", vals[*tau].shape())?;
                if tt != t || ct != 3 {
                    return Err(shape_err(
                        "forward_kinematics",
                        format!("translation shape [{},{}] incompatible with {} frames", tt, ct, t),
                    ));
                }
                let pos = mk::fk_positions(vals[*mats].data(), vals[*tau].data(), skel, t);
                Tensor::from_vec(&[t, 3 * j], pos)
            }
            Op::CrossEntropy { logits, targets } => {
                let (t, v) = want_rank2("cross_entropy", vals[*logits].shape())?;
                if targets.len() != t {
                    return Err(shape_err(
                        "cross_entropy",
                        format!("{} targets for {} rows", targets.len(), t),
                    ));
                }
                if let Some(bad) = targets.iter().find(|&&i| i >= v) {
                    return Err(shape_err("cross_entropy", format!("target {} out of {} classes", bad, v)));
                }
                let xv = vals[*logits].data();
                let mut total = S::zero();
                for (r, &tgt) in targets.iter().enumerate() {
                    let row = &xv[r * v..(r + 1) * v];
                    let m = row.iter().cloned().fold(S::neg_infinity(), S::max);
                    let mut z = S::zero();
                    for &l in row {
                        z += (l - m).exp();
                    }
                    total += m + z.ln() - row[tgt];
                }
                Ok(Tensor::scalar(total / S::of(t as f64)))
            }
            Op::Mse { a, b } | Op::L1 { a, b } => {
                if vals[*a].shape() != vals[*b].shape() {
                    return Err(shape_err(
                        self.name(),
                        format!("operand shapes differ: {:?} vs {:?}", vals[*a].shape(), vals[*b].shape()),
                    ));
                }
                let av = vals[*a].data();
                let bv = vals[*b].data();
                let n = S::of(av.len() as f64);
                let mut total = S::zero();
                if matches!(self, Op::Mse { .. }) {
                    for (&x, &y) in av.iter().zip(bv) {
                        let d = x - y;
                        total += d * d;
                    }
                } else {
                    for (&x, &y) in av.iter().zip(bv) {
                        total += (x - y).abs();
                    }
                }
                Ok(Tensor::scalar(total / n))
            }
        }
    }

    /// Accumulate input gradients given the output gradient `g` and the tape
    /// values. Grad slots are created lazily.
    pub fn backward(
        &self,
        vals: &[Tensor<S>],
        out: ValueId,
        g: &Tensor<S>,
        grads: &mut [Option<Tensor<S>>],
    ) {
        match self {
            Op::MatMul { a, b } => {
                let (m, k) = (vals[*a].shape()[0], vals[*a].shape()[1]);
                let n = vals[*b].shape()[1];
                let av = vals[*a].data();
                let bv = vals[*b].data();
                let gv = g.data();
                {
                    let da = slot(grads, *a, vals[*a].shape());
                    let dad = da.data_mut();
                    for i in 0..m {
                        let grow = &gv[i * n..(i + 1) * n];
                        for kk in 0..k {
                            let brow = &bv[kk * n..(kk + 1) * n];
                            let mut s = S::zero();
                            for j in 0..n {
                                s += grow[j] * brow[j];
                            }
                            dad[i * k + kk] += s;
                        }
                    }
                }
                {
                    let db = slot(grads, *b, vals[*b].shape());
                    let dbd = db.data_mut();
                    for i in 0..m {
                        let grow = &gv[i * n..(i + 1) * n];
                        let arow = &av[i * k..(i + 1) * k];
                        for kk in 0..k {
                            let x = arow[kk];
                            let drow = &mut dbd[kk * n..(kk + 1) * n];
                            for j in 0..n {
                                drow[j] += x * grow[j];
                            }
                        }
                    }
                }
            }
            Op::Conv1d { x, w, b, stride, pad } => {
                let (t, cin) = (vals[*x].shape()[0], vals[*x].shape()[1]);
                let ws = vals[*w].shape().to_vec();
                let (kk, cout) = (ws[0], ws[2]);
                let tout = g.shape()[0];
                let xv = vals[*x].data();
                let wv = vals[*w].data();
                let gv = g.data();
                {
                    let db = slot(grads, *b, vals[*b].shape());
                    let dbd = db.data_mut();
                    for to in 0..tout {
                        for co in 0..cout {
                            dbd[co] += gv[to * cout + co];
                        }
                    }
                }
                {
                    let dw = slot(grads, *w, &ws);
                    let dwd = dw.data_mut();
                    for to in 0..tout {
                        let grow = &gv[to * cout..(to + 1) * cout];
                        for k in 0..kk {
                            let src = (to * stride + k) as isize - *pad as isize;
                            if src < 0 || src >= t as isize {
                                continue;
                            }
                            let xrow = &xv[src as usize * cin..(src as usize + 1) * cin];
                            let base = k * cin * cout;
                            for ci in 0..cin {
                                let xc = xrow[ci];
                                let drow = &mut dwd[base + ci * cout..base + (ci + 1) * cout];
                                for co in 0..cout {
                                    drow[co] += xc * grow[co];
                                }
                            }
                        }
                    }
                }
                {
                    let dx = slot(grads, *x, vals[*x].shape());
                    let dxd = dx.data_mut();
                    for to in 0..tout {
                        let grow = &gv[to * cout..(to + 1) * cout];
                        for k in 0..kk {
                            let src = (to * stride + k) as isize - *pad as isize;
                            if src < 0 || src >= t as isize {
                                continue;
                            }
                            let base = k * cin * cout;
                            let xrow = &mut dxd[src as usize * cin..(src as usize + 1) * cin];
                            for ci in 0..cin {
                                let wrow = &wv[base + ci * cout..base + (ci + 1) * cout];
                                let mut s = S::zero();
                                for co in 0..cout {
                                    s += wrow[co] * grow[co];
                                }
                                xrow[ci] += s;
                            }
                        }
                    }
                }
            }
            Op::ConvT1d { x, w, b, stride, pad } => {
                let (t, cin) = (vals[*x].shape()[0], vals[*x].shape()[1]);
                let ws = vals[*w].shape().to_vec();
                let (kk, cout) = (ws[1], ws[2]);
                let tout = g.shape()[0];
                let xv = vals[*x].data();
                let wv = vals[*w].data();
                let gv = g.data();
                {
                    let db = slot(grads, *b, vals[*b].shape());
                    let dbd = db.data_mut();
                    for to in 0..tout {
                        for co in 0..cout {
                            dbd[co] += gv[to * cout + co];
                        }
                    }
                }
                {
                    let dw = slot(grads, *w, &ws);
                    let dwd = dw.data_mut();
                    for ti in 0..t {
                        let xrow = &xv[ti * cin..(ti + 1) * cin];
                        for k in 0..kk {
                            let to = (ti * stride + k) as isize - *pad as isize;
                            if to < 0 || to >= tout as isize {
                                continue;
                            }
                            let grow = &gv[to as usize * cout..(to as usize + 1) * cout];
                            for ci in 0..cin {
                                let xc = xrow[ci];
                                let drow = &mut dwd[(ci * kk + k) * cout..(ci * kk + k + 1) * cout];
                                for co in 0..cout {
                                    drow[co] += xc * grow[co];
                                }
                            }
                        }
                    }
                }
                {
                    let dx = slot(grads, *x, vals[*x].shape());
                    let dxd = dx.data_mut();
                    for ti in 0..t {
                        let xrow = &mut dxd[ti * cin..(ti + 1) * cin];
                        for k in 0..kk {
                            let to = (ti * stride + k) as isize - *pad as isize;
                            if to < 0 || to >= tout as isize {
                                continue;
                            }
                            let grow = &gv[to as usize * cout..(to as usize + 1) * cout];
                            for ci in 0..cin {
                                let wrow = &wv[(ci * kk + k) * cout..(ci * kk + k + 1) * cout];
                                let mut s = S::zero();
                                for co in 0..cout {
                                    s += wrow[co] * grow[co];
                                }
                                xrow[ci] += s;
                            }
                        }
                    }
                }
            }
            Op::DwConvCausal { x, w, b } => {
                let (t, c) = (vals[*x].shape()[0], vals[*x].shape()[1]);
                let kk = vals[*w].shape()[0];
                let xv = vals[*x].data();
                let wv = vals[*w].data();
                let gv = g.data();
                {
                    let db = slot(grads, *b, vals[*b].shape());
                    let dbd = db.data_mut();
                    for ti in 0..t {
                        for ci in 0..c {
                            dbd[ci] += gv[ti * c + ci];
                        }
                    }
                }
                {
                    let dw = slot(grads, *w, vals[*w].shape());
                    let dwd = dw.data_mut();
                    for ti in 0..t {
                        let grow = &gv[ti * c..(ti + 1) * c];
                        for k in 0..kk {
                            let src = ti as isize - (kk - 1) as isize + k as isize;
                            if src < 0 {
                                continue;
                            }
                            let xrow = &xv[src as usize * c..(src as usize + 1) * c];
                            let drow = &mut dwd[k * c..(k + 1) * c];
                            for ci in 0..c {
                                drow[ci] += xrow[ci] * grow[ci];
                            }
                        }
                    }
                }
                {
                    let dx = slot(grads, *x, vals[*x].shape());
                    let dxd = dx.data_mut();
                    for ti in 0..t {
                        let grow = &gv[ti * c..(ti + 1) * c];
                        for k in 0..kk {
                            let src = ti as isize - (kk - 1) as isize + k as isize;
                            if src < 0 {
                                continue;
                            }
                            let wrow = &wv[k * c..(k + 1) * c];
                            let xrow = &mut dxd[src as usize * c..(src as usize + 1) * c];
                            for ci in 0..c {
                                xrow[ci] += wrow[ci] * grow[ci];
                            }
                        }
                    }
                }
            }
            Op::Add { a, b } => {
                for &id in &[*a, *b] {
                    let d = slot(grads, id, g.shape());
                    d.add_assign(g);
                }
            }
            Op::Sub { a, b } => {
                {
                    let d = slot(grads, *a, g.shape());
                    d.add_assign(g);
                }
                let d = slot(grads, *b, g.shape());
                for (o, &gg) in d.data_mut().iter_mut().zip(g.data()) {
                    *o -= gg;
                }
            }
            Op::Mul { a, b } => {
                let av = vals[*a].data();
                let bv = vals[*b].data();
                {
                    let d = slot(grads, *a, g.shape());
                    for ((o, &gg), &y) in d.data_mut().iter_mut().zip(g.data()).zip(bv) {
                        *o += gg * y;
                    }
                }
                let d = slot(grads, *b, g.shape());
                for ((o, &gg), &x) in d.data_mut().iter_mut().zip(g.data()).zip(av) {
                    *o += gg * x;
                }
            }
            Op::Scale { x, c } => {
                let d = slot(grads, *x, g.shape());
                for (o, &gg) in d.data_mut().iter_mut().zip(g.data()) {
                    *o += gg * *c;
                }
            }
            Op::AddRow { x, v } => {
                let c = vals[*v].numel();
                {
                    let d = slot(grads, *x, g.shape());
                    d.add_assign(g);
                }
                let d = slot(grads, *v, vals[*v].shape());
                let dd = d.data_mut();
                for (i, &gg) in g.data().iter().enumerate() {
                    dd[i % c] += gg;
                }
            }
            Op::MulRow { x, v } => {
                let c = vals[*v].numel();
                let xv = vals[*x].data();
                let vv = vals[*v].data().to_vec();
                {
                    let d = slot(grads, *x, g.shape());
                    let dd = d.data_mut();
                    for (i, &gg) in g.data().iter().enumerate() {
                        dd[i] += gg * vv[i % c];
                    }
                }
                let d = slot(grads, *v, vals[*v].shape());
                let dd = d.data_mut();
                for (i, &gg) in g.data().iter().enumerate() {
                    dd[i % c] += gg * xv[i];
                }
            }
            Op::ColAffine { x, mul, .. } => {
                let c = mul.len();
                let d = slot(grads, *x, g.shape());
                let dd = d.data_mut();
                for (i, &gg) in g.data().iter().enumerate() {
                    dd[i] += gg * mul[i % c];
                }
            }
            Op::Sigmoid { x } => {
                let yv = vals[out].data();
                let d = slot(grads, *x, g.shape());
                for ((o, &gg), &y) in d.data_mut().iter_mut().zip(g.data()).zip(yv) {
                    *o += gg * y * (S::one() - y);
                }
            }
            Op::Tanh { x } => {
                let yv = vals[out].data();
                let d = slot(grads, *x, g.shape());
                for ((o, &gg), &y) in d.data_mut().iter_mut().zip(g.data()).zip(yv) {
                    *o += gg * (S::one() - y * y);
                }
            }
            Op::Silu { x } => {
                let xv = vals[*x].data();
                let d = slot(grads, *x, g.shape());
                for ((o, &gg), &xi) in d.data_mut().iter_mut().zip(g.data()).zip(xv) {
                    let s = sigmoid(xi);
                    *o += gg * s * (S::one() + xi * (S::one() - s));
                }
            }
            Op::Exp { x } => {
                let yv = vals[out].data();
                let d = slot(grads, *x, g.shape());
                for ((o, &gg), &y) in d.data_mut().iter_mut().zip(g.data()).zip(yv) {
                    *o += gg * y;
                }
            }
            Op::Softplus { x } => {
                let xv = vals[*x].data();
                let d = slot(grads, *x, g.shape());
                for ((o, &gg), &xi) in d.data_mut().iter_mut().zip(g.data()).zip(xv) {
                    *o += gg * sigmoid(xi);
                }
            }
            Op::Softmax { x } => {
                let (t, c) = (g.shape()[0], g.shape()[1]);
                let yv = vals[out].data();
                let gv = g.data();
                let d = slot(grads, *x, g.shape());
                let dd = d.data_mut();
                for r in 0..t {
                    let yrow = &yv[r * c..(r + 1) * c];
                    let grow = &gv[r * c..(r + 1) * c];
                    let mut dot = S::zero();
                    for j in 0..c {
                        dot += grow[j] * yrow[j];
                    }
                    let drow = &mut dd[r * c..(r + 1) * c];
                    for j in 0..c {
                        drow[j] += yrow[j] * (grow[j] - dot);
                    }
                }
            }
            Op::Embedding { table, ids } => {
                let c = vals[*table].shape()[1];
                let d = slot(grads, *table, vals[*table].shape());
                let dd = d.data_mut();
                let gv = g.data();
                for (r, &id) in ids.iter().enumerate() {
                    let grow = &gv[r * c..(r + 1) * c];
                    let drow = &mut dd[id * c..(id + 1) * c];
                    for j in 0..c {
                        drow[j] += grow[j];
                    }
                }
            }
            Op::CumSum { x } => {
                // adjoint of prefix sum = suffix sum of incoming gradients
                let (t, c) = (g.shape()[0], g.shape()[1]);
                let gv = g.data();
                let d = slot(grads, *x, g.shape());
                let dd = d.data_mut();
                let mut run = vec![S::zero(); c];
                for r in (0..t).rev() {
                    for j in 0..c {
                        run[j] += gv[r * c + j];
                        dd[r * c + j] += run[j];
                    }
                }
            }
            Op::RoundSt { x } => {
                // straight-through: declared gradient of rounding is identity
                let d = slot(grads, *x, g.shape());
                d.add_assign(g);
            }
            Op::Reverse { x } => {
                let (t, c) = (g.shape()[0], g.shape()[1]);
                let gv = g.data();
                let d = slot(grads, *x, g.shape());
                let dd = d.data_mut();
                for r in 0..t {
                    let src = &gv[(t - 1 - r) * c..(t - r) * c];
                    let dst = &mut dd[r * c..(r + 1) * c];
                    for j in 0..c {
                        dst[j] += src[j];
                    }
                }
            }
            Op::ConcatCols { a, b } => {
                let ca = vals[*a].shape()[1];
                let cb = vals[*b].shape()[1];
                let t = g.shape()[0];
                let gv = g.data();
                {
                    let d = slot(grads, *a, vals[*a].shape());
                    let dd = d.data_mut();
                    for r in 0..t {
                        for j in 0..ca {
                            dd[r * ca + j] += gv[r * (ca + cb) + j];
                        }
                    }
                }
                let d = slot(grads, *b, vals[*b].shape());
                let dd = d.data_mut();
                for r in 0..t {
                    for j in 0..cb {
                        dd[r * cb + j] += gv[r * (ca + cb) + ca + j];
                    }
                }
            }
            Op::SliceCols { x, lo, .. } => {
                let c = vals[*x].shape()[1];
                let (t, w) = (g.shape()[0], g.shape()[1]);
                let gv = g.data();
                let d = slot(grads, *x, vals[*x].shape());
                let dd = d.data_mut();
                for r in 0..t {
                    for j in 0..w {
                        dd[r * c + lo + j] += gv[r * w + j];
                    }
                }
            }
            Op::TimeDiff { x, scale } => {
                let (tm1, c) = (g.shape()[0], g.shape()[1]);
                let gv = g.data();
                let d = slot(grads, *x, vals[*x].shape());
                let dd = d.data_mut();
                for r in 0..tm1 {
                    for j in 0..c {
                        let gg = gv[r * c + j] * *scale;
                        dd[(r + 1) * c + j] += gg;
                        dd[r * c + j] -= gg;
                    }
                }
            }
            Op::SelectiveScan { u, delta, a, b, c } => {
                let (t, d_) = (vals[*u].shape()[0], vals[*u].shape()[1]);
                let n = vals[*a].shape()[1];
                let parts = scan::selective_scan_backward(
                    vals[*u].data(),
                    vals[*delta].data(),
                    vals[*a].data(),
                    vals[*b].data(),
                    vals[*c].data(),
                    g.data(),
                    t,
                    d_,
                    n,
                );
                let targets = [(*u, parts.du), (*delta, parts.ddelta), (*a, parts.da), (*b, parts.db), (*c, parts.dc)];
                for (id, part) in targets {
                    let d = slot(grads, id, vals[id].shape());
                    for (o, v) in d.data_mut().iter_mut().zip(part) {
                        *o += v;
                    }
                }
            }
            Op::Rot6d { x } => {
                let (t, c) = (vals[*x].shape()[0], vals[*x].shape()[1]);
                let j = c / 6;
                let dx = mk::rot6d_to_mats_backward(vals[*x].data(), g.data(), t, j);
                let d = slot(grads, *x, vals[*x].shape());
                for (o, v) in d.data_mut().iter_mut().zip(dx) {
                    *o += v;
                }
            }
            Op::FkChain { mats, tau, skel } => {
                let t = vals[*mats].shape()[0];
                let (dmats, dtau) = mk::fk_positions_backward(vals[*mats].data(), skel, g.data(), t);
                {
                    let d = slot(grads, *mats, vals[*mats].shape());
                    for (o, v) in d.data_mut().iter_mut().zip(dmats) {
                        *o += v;
                    }
                }
                let d = slot(grads, *tau, vals[*tau].shape());
                for (o, v) in d.data_mut().iter_mut().zip(dtau) {
                    *o += v;
                }
            }
            Op::CrossEntropy { logits, targets } => {
                let (t, v) = (vals[*logits].shape()[0], vals[*logits].shape()[1]);
                let gg = g.item() / S::of(t as f64);
                let xv = vals[*logits].data();
                let d = slot(grads, *logits, vals[*logits].shape());
                let dd = d.data_mut();
                for (r, &tgt) in targets.iter().enumerate() {
                    let row = &xv[r * v..(r + 1) * v];
                    let m = row.iter().cloned().fold(S::neg_infinity(), S::max);
                    let mut z = S::zero();
                    for &l in row {
                        z += (l - m).exp();
                    }
                    let drow = &mut dd[r * v..(r + 1) * v];
                    for jj in 0..v {
                        let p = (row[jj] - m).exp() / z;
                        drow[jj] += gg * (p - if jj == tgt { S::one() } else { S::zero() });
                    }
                }
            }
            Op::Mse { a, b } => {
                let n = S::of(vals[*a].numel() as f64);
                let gg = g.item() * S::of(2.0) / n;
                let av = vals[*a].data();
                let bv = vals[*b].data();
                {
                    let d = slot(grads, *a, vals[*a].shape());
                    for ((o, &x), &y) in d.data_mut().iter_mut().zip(av).zip(bv) {
                        *o += gg * (x - y);
                    }
                }
                let d = slot(grads, *b, vals[*b].shape());
                for ((o, &x), &y) in d.data_mut().iter_mut().zip(av).zip(bv) {
                    *o -= gg * (x - y);
                }
            }
            Op::L1 { a, b } => {
                let n = S::of(vals[*a].numel() as f64);
                let gg = g.item() / n;
                let av = vals[*a].data();
                let bv = vals[*b].data();
                let sign = |d: S| {
                    if d > S::zero() {
                        S::one()
                    } else if d < S::zero() {
                        -S::one()
                    } else {
                        S::zero()
                    }
                };
                {
                    let d = slot(grads, *a, vals[*a].shape());
                    for ((o, &x), &y) in d.data_mut().iter_mut().zip(av).zip(bv) {
                        *o += gg * sign(x - y);
                    }
                }
                let d = slot(grads, *b, vals[*b].shape());
                for ((o, &x), &y) in d.data_mut().iter_mut().zip(av).zip(bv) {
                    *o -= gg * sign(x - y);
                }
            }
        }
    }
}
