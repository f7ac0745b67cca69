use super::{Bound, Mode, ParamStore};
use crate::error::{Error, Result};
use crate::tensor::{Tensor, Var};

/// Width of the FiLM generator's hidden layer.
pub const FILM_HIDDEN: usize = 16;
pub const BN_MOMENTUM: f64 = 0.1;
pub const BN_EPS: f64 = 1e-5;

fn dims3(op: &'static str, x: &Tensor) -> Result<(usize, usize, usize)> {
    match *x.shape() {
        [b, c, t] => Ok((b, c, t)),
        _ => Err(Error::ShapeMismatch {
            op,
            lhs: x.shape().to_vec(),
            rhs: vec![],
        }),
    }
}

/// Length-preserving causal convolution with parameters `{name}.weight/bias`.
pub fn causal_conv<'t>(x: Var<'t>, p: &Bound<'t>, name: &str, dilation: usize) -> Result<Var<'t>> {
    let w = p.get(&format!("{name}.weight"))?;
    let b = p.get(&format!("{name}.bias"))?;
    let k = w.shape()[2];
    x.conv1d(w, Some(b), dilation, dilation * (k - 1))
}

pub fn conv1x1<'t>(x: Var<'t>, p: &Bound<'t>, name: &str) -> Result<Var<'t>> {
    causal_conv(x, p, name, 1)
}

/// `y[b,c,t] = γ[b,c]·x[b,c,t] + β[b,c]`.
pub fn film_affine<'t>(x: Var<'t>, gamma: Var<'t>, beta: Var<'t>) -> Result<Var<'t>> {
    let xv = x.value();
    let (b, c, t) = dims3("film_affine", &xv)?;
    let (gv, bv) = (gamma.value(), beta.value());
    for v in [&gv, &bv] {
        if v.shape() != [b, c] {
            return Err(Error::ShapeMismatch {
                op: "film_affine",
                lhs: vec![b, c],
                rhs: v.shape().to_vec(),
            });
        }
    }
    let mut out = Vec::with_capacity(xv.numel());
    for (row, xs) in xv.data().chunks_exact(t).enumerate() {
        let (g, s) = (gv.data()[row], bv.data()[row]);
        out.extend(xs.iter().map(|&v| g * v + s));
    }
    let shape = xv.shape().to_vec();
    Ok(x.op(Tensor::from_parts(shape.clone(), out), &[x, gamma, beta], move |g| {
        let mut dx = Vec::with_capacity(g.numel());
        let mut dg = vec![0.0; b * c];
        let mut db = vec![0.0; b * c];
        for (row, (gs, xs)) in g
            .data()
            .chunks_exact(t)
            .zip(xv.data().chunks_exact(t))
            .enumerate()
        {
            let gamma = gv.data()[row];
            dx.extend(gs.iter().map(|&u| u * gamma));
            dg[row] = gs.iter().zip(xs).map(|(u, v)| u * v).sum();
            db[row] = gs.iter().sum();
        }
        vec![
            Some(Tensor::from_parts(shape.clone(), dx)),
            Some(Tensor::from_parts(vec![b, c], dg)),
            Some(Tensor::from_parts(vec![b, c], db)),
        ]
    }))
}

/// Per-channel normalisation with batch statistics over `B×T`.
///
/// Returns the normalised input together with the batch mean and the
/// unbiased batch variance (the values folded into running statistics).
pub fn batch_norm_train(x: Var<'_>) -> Result<(Var<'_>, Tensor, Tensor)> {
    let xv = x.value();
    let (b, c, t) = dims3("batch_norm", &xv)?;
    let n = (b * t) as f64;
    if b * t < 2 {
        return Err(Error::invalid("batch norm needs at least two values per channel"));
    }
    let at = move |bi: usize, ci: usize| (bi * c + ci) * t;
    let mut mean = vec![0.0; c];
    let mut var = vec![0.0; c];
    for ci in 0..c {
        let m = (0..b).map(|bi| xv.data()[at(bi, ci)..at(bi, ci) + t].iter().sum::<f64>()).sum::<f64>() / n;
        let v = (0..b)
            .flat_map(|bi| xv.data()[at(bi, ci)..at(bi, ci) + t].iter())
            .map(|&u| (u - m) * (u - m))
            .sum::<f64>()
            / n;
        mean[ci] = m;
        var[ci] = v;
    }
    let inv: Vec<f64> = var.iter().map(|v| 1.0 / (v + BN_EPS).sqrt()).collect();
    let mut xhat = vec![0.0; xv.numel()];
    for bi in 0..b {
        for ci in 0..c {
            let o = at(bi, ci);
            for (dst, &u) in xhat[o..o + t].iter_mut().zip(&xv.data()[o..o + t]) {
                *dst = (u - mean[ci]) * inv[ci];
            }
        }
    }
    let shape = xv.shape().to_vec();
    let xhat = Tensor::from_parts(shape.clone(), xhat);
    let saved = xhat.clone();
    let y = x.op(xhat, &[x], move |g| {
        let (g, xh) = (g.data(), saved.data());
        let mut dx = vec![0.0; g.len()];
        for ci in 0..c {
            let (mut sg, mut sgx) = (0.0, 0.0);
            for bi in 0..b {
                let o = at(bi, ci);
                for i in o..o + t {
                    sg += g[i];
                    sgx += g[i] * xh[i];
                }
            }
            for bi in 0..b {
                let o = at(bi, ci);
                for i in o..o + t {
                    dx[i] = inv[ci] / n * (n * g[i] - sg - xh[i] * sgx);
                }
            }
        }
        vec![Some(Tensor::from_parts(shape.clone(), dx))]
    });
    let unbiased = var.iter().map(|v| v * n / (n - 1.0)).collect();
    Ok((y, Tensor::from_vec(mean), Tensor::from_vec(unbiased)))
}

/// Normalisation with fixed (running) statistics.
pub fn batch_norm_eval<'t>(x: Var<'t>, mean: &Tensor, var: &Tensor) -> Result<Var<'t>> {
    let xv = x.value();
    let (_, c, t) = dims3("batch_norm", &xv)?;
    if mean.shape() != [c] || var.shape() != [c] {
        return Err(Error::ShapeMismatch {
            op: "batch_norm running stats",
            lhs: vec![c],
            rhs: mean.shape().to_vec(),
        });
    }
    let inv: Vec<f64> = var.data().iter().map(|v| 1.0 / (v + BN_EPS).sqrt()).collect();
    let mean = mean.data().to_vec();
    let mut out = Vec::with_capacity(xv.numel());
    for (row, xs) in xv.data().chunks_exact(t).enumerate() {
        let ci = row % c;
        out.extend(xs.iter().map(|&u| (u - mean[ci]) * inv[ci]));
    }
    let shape = xv.shape().to_vec();
    Ok(x.op(Tensor::from_parts(shape.clone(), out), &[x], move |g| {
        let mut dx = g.data().to_vec();
        for (row, ds) in dx.chunks_exact_mut(t).enumerate() {
            ds.iter_mut().for_each(|d| *d *= inv[row % c]);
        }
        vec![Some(Tensor::from_parts(shape.clone(), dx))]
    }))
}

/// Feature-wise linear modulation driven by the conditioning vector.
///
/// Parameters live under `{name}.gen1` and `{name}.gen2`. When `norm` is
/// given, `x` is batch-normalised first; its running statistics are the
/// buffers `{name}.bn.running_mean` and `{name}.bn.running_var`. In training
/// mode the batch moments are recorded on the tape under those names.
pub fn film<'t>(
    x: Var<'t>,
    cond: Var<'t>,
    p: &Bound<'t>,
    name: &str,
    norm: Option<(&ParamStore, Mode)>,
) -> Result<Var<'t>> {
    let shape = x.shape();
    let (b, c) = match shape[..] {
        [b, c, _] => (b, c),
        _ => return Err(Error::invalid(format!("film expects [B×C×T], got {shape:?}"))),
    };
    let w1 = p.get(&format!("{name}.gen1.weight"))?;
    let cond_dim = w1.shape()[0];
    if cond.shape() != [b, cond_dim] {
        return Err(Error::ShapeMismatch {
            op: "film conditioning",
            lhs: vec![b, cond_dim],
            rhs: cond.shape(),
        });
    }
    let h = cond
        .matmul(w1)?
        .add(p.get(&format!("{name}.gen1.bias"))?)?
        .tanh();
    let gb = h
        .matmul(p.get(&format!("{name}.gen2.weight"))?)?
        .add(p.get(&format!("{name}.gen2.bias"))?)?;
    if gb.shape() != [b, 2 * c] {
        return Err(Error::ShapeMismatch {
            op: "film generator",
            lhs: vec![b, 2 * c],
            rhs: gb.shape(),
        });
    }
    let gamma = gb.narrow(1, 0, c)?;
    let beta = gb.narrow(1, c, c)?;
    let x = match norm {
        None => x,
        Some((_, Mode::Train)) => {
            let (y, mean, var) = batch_norm_train(x)?;
            let tape = x.tape();
            tape.record_stat(format!("{name}.bn.running_mean"), mean);
            tape.record_stat(format!("{name}.bn.running_var"), var);
            y
        }
        Some((buffers, Mode::Eval)) => {
            let get = |s: &str| {
                buffers
                    .get(&format!("{name}.bn.{s}"))
                    .ok_or_else(|| Error::invalid(format!("missing buffer {name}.bn.{s}")))
            };
            batch_norm_eval(x, get("running_mean")?, get("running_var")?)?
        }
    };
    film_affine(x, gamma, beta)
}

/// Parametric ReLU with one learned slope per channel, `{name}.slope`.
pub fn prelu<'t>(x: Var<'t>, slope: Var<'t>) -> Result<Var<'t>> {
    let xv = x.value();
    let (_, c, t) = dims3("prelu", &xv)?;
    let av = slope.value();
    if av.shape() != [c] {
        return Err(Error::ShapeMismatch {
            op: "prelu",
            lhs: vec![c],
            rhs: av.shape().to_vec(),
        });
    }
    let mut out = Vec::with_capacity(xv.numel());
    for (row, xs) in xv.data().chunks_exact(t).enumerate() {
        let a = av.data()[row % c];
        out.extend(xs.iter().map(|&u| if u >= 0.0 { u } else { a * u }));
    }
    let shape = xv.shape().to_vec();
    Ok(x.op(Tensor::from_parts(shape.clone(), out), &[x, slope], move |g| {
        let mut dx = Vec::with_capacity(g.numel());
        let mut da = vec![0.0; c];
        for (row, (gs, xs)) in g
            .data()
            .chunks_exact(t)
            .zip(xv.data().chunks_exact(t))
            .enumerate()
        {
            let a = av.data()[row % c];
            for (&u, &v) in gs.iter().zip(xs) {
                if v >= 0.0 {
                    dx.push(u);
                } else {
                    dx.push(a * u);
                    da[row % c] += u * v;
                }
            }
        }
        vec![
            Some(Tensor::from_parts(shape.clone(), dx)),
            Some(Tensor::from_vec(da)),
        ]
    }))
}

/// `tanh(x₁) ⊙ σ(x₂)` where `x₁`, `x₂` are the channel halves of `x`.
pub fn gated_activation(x: Var<'_>) -> Result<Var<'_>> {
    let shape = x.shape();
    let [_, c2, _] = shape[..] else {
        return Err(Error::invalid(format!("gated activation expects [B×2C×T], got {shape:?}")));
    };
    if c2 % 2 != 0 {
        return Err(Error::invalid(format!(
            "gated activation needs an even channel count, got {c2}"
        )));
    }
    let c = c2 / 2;
    x.narrow(1, 0, c)?.tanh().mul(x.narrow(1, c, c)?.sigmoid())
}

/// Causal sliding maximum over time. The input is left-padded with `−∞`
/// by `kernel − 1`, so the output has `ceil(T / stride)` frames. Ties send
/// the gradient to the earliest maximum.
pub fn max_pool1d(x: Var<'_>, kernel: usize, stride: usize) -> Result<Var<'_>> {
    if kernel == 0 || stride == 0 {
        return Err(Error::invalid("max_pool1d: kernel and stride must be >= 1"));
    }
    let xv = x.value();
    let (b, c, t) = dims3("max_pool1d", &xv)?;
    let t_out = t.div_ceil(stride);
    let mut out = Vec::with_capacity(b * c * t_out);
    let mut arg = Vec::with_capacity(b * c * t_out);
    for xs in xv.data().chunks_exact(t) {
        for s in 0..t_out {
            let end = s * stride;
            let start = end.saturating_sub(kernel - 1);
            let mut best = start;
            for i in start + 1..=end {
                if xs[i] > xs[best] {
                    best = i;
                }
            }
            out.push(xs[best]);
            arg.push(best);
        }
    }
    let shape = xv.shape().to_vec();
    Ok(x.op(Tensor::from_parts(vec![b, c, t_out], out), &[x], move |g| {
        let mut dx = vec![0.0; b * c * t];
        for (row, gs) in g.data().chunks_exact(t_out).enumerate() {
            for (s, &u) in gs.iter().enumerate() {
                dx[row * t + arg[row * t_out + s]] += u;
            }
        }
        vec![Some(Tensor::from_parts(shape.clone(), dx))]
    }))
}
