//! Elementwise, reduction, matrix and shape operations on [`Var`].

use super::{Tensor, Var};
use crate::error::{Error, Result};

/// Inputs to `log` are clamped below at this value.
pub const LOG_CLAMP: f64 = 1e-12;

#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub enum BinaryOp {
    Add,
    Sub,
    Mul,
    Div,
}

#[derive(Copy, Clone, Debug, PartialEq)]
pub enum UnaryOp {
    Tanh,
    Sigmoid,
    Relu,
    Abs,
    Square,
    Log,
    Exp,
    Scale(f64),
    ClampMin(f64),
}

#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub enum ReduceOp {
    Sum,
    Mean,
    Max,
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Broadcast plan for two shapes. Only leading dimensions may be broadcast:
/// the smaller operand must be a contiguous block repeated along a prefix.
struct Broadcast {
    out_shape: Vec<usize>,
    /// Element count of each operand; indexing is `i % len`.
    a_len: usize,
    b_len: usize,
}

fn broadcast(op: &'static str, a: &[usize], b: &[usize]) -> Result<Broadcast> {
    let mismatch = || Error::ShapeMismatch {
        op,
        lhs: a.to_vec(),
        rhs: b.to_vec(),
    };
    let nd = a.len().max(b.len());
    let pad = |s: &[usize]| {
        let mut p = vec![1; nd - s.len()];
        p.extend_from_slice(s);
        p
    };
    let (pa, pb) = (pad(a), pad(b));
    let mut split = nd;
    while split > 0 && pa[split - 1] == pb[split - 1] {
        split -= 1;
    }
    let a_ones = pa[..split].iter().all(|&d| d == 1);
    let b_ones = pb[..split].iter().all(|&d| d == 1);
    let out_shape = if b_ones {
        pa.clone()
    } else if a_ones {
        pb.clone()
    } else {
        return Err(mismatch());
    };
    // keep the caller's rank when shapes already agree
    let out_shape = if a == b { a.to_vec() } else { out_shape };
    Ok(Broadcast {
        out_shape,
        a_len: pa.iter().product(),
        b_len: pb.iter().product(),
    })
}

/// Sums a broadcast gradient back down to `len` elements.
fn unbroadcast(grad: &[f64], len: usize, shape: &[usize]) -> Tensor {
    if grad.len() == len {
        return Tensor::from_parts(shape.to_vec(), grad.to_vec());
    }
    let mut out = vec![0.0; len];
    for chunk in grad.chunks(len) {
        for (o, g) in out.iter_mut().zip(chunk) {
            *o += g;
        }
    }
    Tensor::from_parts(shape.to_vec(), out)
}

impl<'t> Var<'t> {
    pub fn binary(self, op: BinaryOp, rhs: Var<'t>) -> Result<Var<'t>> {
        let a = self.value();
        let b = rhs.value();
        let plan = broadcast(binary_name(op), a.shape(), b.shape())?;
        let n: usize = plan.out_shape.iter().product();
        let (ad, bd) = (a.data(), b.data());
        let (al, bl) = (plan.a_len, plan.b_len);
        let f = |x: f64, y: f64| match op {
            BinaryOp::Add => x + y,
            BinaryOp::Sub => x - y,
            BinaryOp::Mul => x * y,
            BinaryOp::Div => x / y,
        };
        let data: Vec<f64> = if al == n && bl == n {
            ad.iter().zip(bd).map(|(&x, &y)| f(x, y)).collect()
        } else {
            (0..n).map(|i| f(ad[i % al], bd[i % bl])).collect()
        };
        let out = Tensor::from_parts(plan.out_shape, data);
        let (a_shape, b_shape) = (a.shape().to_vec(), b.shape().to_vec());
        Ok(self.op(out, &[self, rhs], move |g| {
            let g = g.data();
            let (ad, bd) = (a.data(), b.data());
            let (ga, gb): (Vec<f64>, Vec<f64>) = match op {
                BinaryOp::Add => (g.to_vec(), g.to_vec()),
                BinaryOp::Sub => (g.to_vec(), g.iter().map(|v| -v).collect()),
                BinaryOp::Mul => (
                    (0..n).map(|i| g[i] * bd[i % bl]).collect(),
                    (0..n).map(|i| g[i] * ad[i % al]).collect(),
                ),
                BinaryOp::Div => (
                    (0..n).map(|i| g[i] / bd[i % bl]).collect(),
                    (0..n)
                        .map(|i| {
                            let y = bd[i % bl];
                            -g[i] * ad[i % al] / (y * y)
                        })
                        .collect(),
                ),
            };
            vec![
                Some(unbroadcast(&ga, al, &a_shape)),
                Some(unbroadcast(&gb, bl, &b_shape)),
            ]
        }))
    }

    pub fn add(self, rhs: Var<'t>) -> Result<Var<'t>> {
        self.binary(BinaryOp::Add, rhs)
    }

    pub fn sub(self, rhs: Var<'t>) -> Result<Var<'t>> {
        self.binary(BinaryOp::Sub, rhs)
    }

    pub fn mul(self, rhs: Var<'t>) -> Result<Var<'t>> {
        self.binary(BinaryOp::Mul, rhs)
    }

    pub fn div(self, rhs: Var<'t>) -> Result<Var<'t>> {
        self.binary(BinaryOp::Div, rhs)
    }

    pub fn unary(self, op: UnaryOp) -> Var<'t> {
        let x = self.value();
        let y = x.map(|v| match op {
            UnaryOp::Tanh => v.tanh(),
            UnaryOp::Sigmoid => sigmoid(v),
            UnaryOp::Relu => v.max(0.0),
            UnaryOp::Abs => v.abs(),
            UnaryOp::Square => v * v,
            UnaryOp::Log => v.max(LOG_CLAMP).ln(),
            UnaryOp::Exp => v.exp(),
            UnaryOp::Scale(c) => c * v,
            UnaryOp::ClampMin(lo) => v.max(lo),
        });
        let y_saved = y.clone();
        self.op(y, &[self], move |g| {
            let (xd, yd) = (x.data(), y_saved.data());
            let d: Vec<f64> = g
                .data()
                .iter()
                .enumerate()
                .map(|(i, &g)| {
                    let (x, y) = (xd[i], yd[i]);
                    g * match op {
                        UnaryOp::Tanh => 1.0 - y * y,
                        UnaryOp::Sigmoid => y * (1.0 - y),
                        UnaryOp::Relu => f64::from(u8::from(x > 0.0)),
                        UnaryOp::Abs => x.signum() * f64::from(u8::from(x != 0.0)),
                        UnaryOp::Square => 2.0 * x,
                        UnaryOp::Log => {
                            if x >= LOG_CLAMP {
                                1.0 / x
                            } else {
                                0.0
                            }
                        }
                        UnaryOp::Exp => y,
                        UnaryOp::Scale(c) => c,
                        UnaryOp::ClampMin(lo) => f64::from(u8::from(x >= lo)),
                    }
                })
                .collect();
            vec![Some(Tensor::from_parts(x.shape().to_vec(), d))]
        })
    }

    pub fn tanh(self) -> Var<'t> {
        self.unary(UnaryOp::Tanh)
    }

    pub fn sigmoid(self) -> Var<'t> {
        self.unary(UnaryOp::Sigmoid)
    }

    pub fn relu(self) -> Var<'t> {
        self.unary(UnaryOp::Relu)
    }

    pub fn abs(self) -> Var<'t> {
        self.unary(UnaryOp::Abs)
    }

    pub fn square(self) -> Var<'t> {
        self.unary(UnaryOp::Square)
    }

    pub fn log(self) -> Var<'t> {
        self.unary(UnaryOp::Log)
    }

    pub fn exp(self) -> Var<'t> {
        self.unary(UnaryOp::Exp)
    }

    pub fn scale(self, c: f64) -> Var<'t> {
        self.unary(UnaryOp::Scale(c))
    }

    pub fn clamp_min(self, lo: f64) -> Var<'t> {
        self.unary(UnaryOp::ClampMin(lo))
    }

    /// Reduces over `axes` (all axes when `None`); reduced axes are dropped.
    ///
    /// `Max` sends the whole gradient to the first maximal element.
    pub fn reduce(self, op: ReduceOp, axes: Option<&[usize]>) -> Result<Var<'t>> {
        let x = self.value();
        let shape = x.shape().to_vec();
        let nd = shape.len();
        let mut reduced = vec![false; nd];
        match axes {
            None => reduced.iter_mut().for_each(|r| *r = true),
            Some(axes) => {
                for &a in axes {
                    if a >= nd || reduced[a] {
                        return Err(Error::invalid(format!(
                            "reduce: invalid axis {a} for shape {shape:?}"
                        )));
                    }
                    reduced[a] = true;
                }
            }
        }
        let count: usize = (0..nd).filter(|&d| reduced[d]).map(|d| shape[d]).product();
        if count == 0 || x.numel() == 0 {
            return Err(Error::EmptyReduction(shape));
        }
        let out_shape: Vec<usize> = (0..nd).filter(|&d| !reduced[d]).map(|d| shape[d]).collect();
        let out_len: usize = out_shape.iter().product();
        let index = output_index_map(&shape, &reduced);

        let xd = x.data();
        let mut out = match op {
            ReduceOp::Max => vec![f64::NEG_INFINITY; out_len],
            _ => vec![0.0; out_len],
        };
        let mut argmax = vec![usize::MAX; if op == ReduceOp::Max { out_len } else { 0 }];
        for (i, &o) in index.iter().enumerate() {
            match op {
                ReduceOp::Sum | ReduceOp::Mean => out[o] += xd[i],
                ReduceOp::Max => {
                    if argmax[o] == usize::MAX || xd[i] > out[o] {
                        out[o] = xd[i];
                        argmax[o] = i;
                    }
                }
            }
        }
        if op == ReduceOp::Mean {
            let inv = 1.0 / count as f64;
            out.iter_mut().for_each(|v| *v *= inv);
        }
        let n = x.numel();
        Ok(self.op(
            Tensor::from_parts(out_shape, out),
            &[self],
            move |g| {
                let g = g.data();
                let mut d = vec![0.0; n];
                match op {
                    ReduceOp::Sum => index.iter().zip(&mut d).for_each(|(&o, d)| *d = g[o]),
                    ReduceOp::Mean => {
                        let inv = 1.0 / count as f64;
                        index.iter().zip(&mut d).for_each(|(&o, d)| *d = g[o] * inv)
                    }
                    ReduceOp::Max => argmax.iter().zip(g).for_each(|(&i, &g)| d[i] = g),
                }
                vec![Some(Tensor::from_parts(shape.clone(), d))]
            },
        ))
    }

    pub fn sum(self) -> Var<'t> {
        self.reduce(ReduceOp::Sum, None)
            .expect("sum over a non-empty tensor")
    }

    pub fn mean(self) -> Var<'t> {
        self.reduce(ReduceOp::Mean, None)
            .expect("mean over a non-empty tensor")
    }

    /// `[m×k] · [k×n] → [m×n]`.
    pub fn matmul(self, rhs: Var<'t>) -> Result<Var<'t>> {
        let a = self.value();
        let b = rhs.value();
        let (&[m, k], &[k2, n]) = (a.shape(), b.shape()) else {
            return Err(Error::ShapeMismatch {
                op: "matmul",
                lhs: a.shape().to_vec(),
                rhs: b.shape().to_vec(),
            });
        };
        if k != k2 {
            return Err(Error::ShapeMismatch {
                op: "matmul",
                lhs: a.shape().to_vec(),
                rhs: b.shape().to_vec(),
            });
        }
        let out = gemm(a.data(), b.data(), m, k, n);
        Ok(self.op(Tensor::from_parts(vec![m, n], out), &[self, rhs], move |g| {
            let g = g.data();
            // dA = G·Bᵀ
            let mut da = vec![0.0; m * k];
            for i in 0..m {
                for p in 0..k {
                    let brow = &b.data()[p * n..(p + 1) * n];
                    da[i * k + p] = g[i * n..(i + 1) * n]
                        .iter()
                        .zip(brow)
                        .map(|(x, y)| x * y)
                        .sum();
                }
            }
            // dB = Aᵀ·G
            let mut db = vec![0.0; k * n];
            for i in 0..m {
                for p in 0..k {
                    let av = a.data()[i * k + p];
                    let row = &mut db[p * n..(p + 1) * n];
                    for (r, gv) in row.iter_mut().zip(&g[i * n..(i + 1) * n]) {
                        *r += av * gv;
                    }
                }
            }
            vec![
                Some(Tensor::from_parts(vec![m, k], da)),
                Some(Tensor::from_parts(vec![k, n], db)),
            ]
        }))
    }

    pub fn reshape(self, shape: impl Into<Vec<usize>>) -> Result<Var<'t>> {
        let x = self.value();
        let old = x.shape().to_vec();
        let out = x.reshape(shape)?;
        Ok(self.op(out, &[self], move |g| {
            vec![Some(g.reshape(old.clone()).expect("same element count"))]
        }))
    }

    /// Slice `[start, start+len)` along `axis`.
    pub fn narrow(self, axis: usize, start: usize, len: usize) -> Result<Var<'t>> {
        let x = self.value();
        let shape = x.shape().to_vec();
        if axis >= shape.len() || start + len > shape[axis] {
            return Err(Error::invalid(format!(
                "narrow: range {start}..{} out of bounds for axis {axis} of {shape:?}",
                start + len
            )));
        }
        let outer: usize = shape[..axis].iter().product();
        let inner: usize = shape[axis + 1..].iter().product();
        let span = shape[axis];
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = o * span * inner + start * inner;
            out.extend_from_slice(&x.data()[base..base + len * inner]);
        }
        let mut out_shape = shape.clone();
        out_shape[axis] = len;
        Ok(self.op(Tensor::from_parts(out_shape, out), &[self], move |g| {
            let mut d = vec![0.0; shape.iter().product()];
            for o in 0..outer {
                let base = o * span * inner + start * inner;
                d[base..base + len * inner]
                    .copy_from_slice(&g.data()[o * len * inner..(o + 1) * len * inner]);
            }
            vec![Some(Tensor::from_parts(shape.clone(), d))]
        }))
    }

    /// Prepends `n` zeros along the last axis.
    pub fn pad_left(self, n: usize) -> Result<Var<'t>> {
        let x = self.value();
        let shape = x.shape().to_vec();
        let Some(&t) = shape.last() else {
            return Err(Error::invalid("pad_left on a scalar"));
        };
        if n == 0 {
            return Ok(self);
        }
        let rows = x.numel() / t.max(1);
        let mut out = Vec::with_capacity(rows * (t + n));
        for r in 0..rows {
            out.extend(std::iter::repeat_n(0.0, n));
            out.extend_from_slice(&x.data()[r * t..(r + 1) * t]);
        }
        let mut out_shape = shape.clone();
        *out_shape.last_mut().unwrap() = t + n;
        Ok(self.op(Tensor::from_parts(out_shape, out), &[self], move |g| {
            let mut d = Vec::with_capacity(rows * t);
            for r in 0..rows {
                d.extend_from_slice(&g.data()[r * (t + n) + n..(r + 1) * (t + n)]);
            }
            vec![Some(Tensor::from_parts(shape.clone(), d))]
        }))
    }
}

fn binary_name(op: BinaryOp) -> &'static str {
    match op {
        BinaryOp::Add => "add",
        BinaryOp::Sub => "sub",
        BinaryOp::Mul => "mul",
        BinaryOp::Div => "div",
    }
}

/// For every input element (row-major), the linear index of the output
/// element it reduces into.
fn output_index_map(shape: &[usize], reduced: &[bool]) -> Vec<usize> {
    let nd = shape.len();
    let mut out_stride = vec![0usize; nd];
    let mut acc = 1;
    for d in (0..nd).rev() {
        if !reduced[d] {
            out_stride[d] = acc;
            acc *= shape[d];
        }
    }
    let n: usize = shape.iter().product();
    let mut idx = vec![0usize; nd];
    let mut map = Vec::with_capacity(n);
    let mut cur = 0usize;
    for _ in 0..n {
        map.push(cur);
        for d in (0..nd).rev() {
            idx[d] += 1;
            cur += out_stride[d];
            if idx[d] < shape[d] {
                break;
            }
            cur -= out_stride[d] * idx[d];
            idx[d] = 0;
        }
    }
    map
}

pub(crate) fn gemm(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            for (o, bv) in row.iter_mut().zip(&b[p * n..(p + 1) * n]) {
                *o += av * bv;
            }
        }
    }
    out
}
