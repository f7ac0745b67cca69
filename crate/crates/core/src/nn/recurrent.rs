//! Fused recurrent layers with hand-written backpropagation through time.
//!
//! Weights are stored input-major: `w_ih [C×G·H]`, `w_hh [H×G·H]`,
//! `bias [G·H]`, with `G` gate blocks laid out contiguously.

use crate::error::{Error, Result};
use crate::tensor::ops::{gemm, sigmoid};
use crate::tensor::{Tensor, Var};

pub struct LstmOutput<'t> {
    /// Hidden sequence `[B×H×T]`.
    pub y: Var<'t>,
    pub h_t: Tensor,
    pub c_t: Tensor,
}

pub struct GruOutput<'t> {
    pub y: Var<'t>,
    pub h_t: Tensor,
}

fn transpose(src: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; src.len()];
    for r in 0..rows {
        for c in 0..cols {
            out[c * rows + r] = src[r * cols + c];
        }
    }
    out
}

#[derive(Clone, Copy)]
struct Dims {
    batch: usize,
    input: usize,
    hidden: usize,
    steps: usize,
}

fn check_dims(
    op: &'static str,
    x: &Tensor,
    w_ih: &Tensor,
    w_hh: &Tensor,
    bias: &Tensor,
    gates: usize,
) -> Result<Dims> {
    let mismatch = |lhs: &[usize], rhs: &[usize]| Error::ShapeMismatch {
        op,
        lhs: lhs.to_vec(),
        rhs: rhs.to_vec(),
    };
    let [batch, input, steps] = *x.shape() else {
        return Err(mismatch(x.shape(), w_ih.shape()));
    };
    let [h, gh] = *w_hh.shape() else {
        return Err(mismatch(&[], w_hh.shape()));
    };
    if gh != gates * h || h == 0 {
        return Err(mismatch(&[h, gates * h], w_hh.shape()));
    }
    if w_ih.shape() != [input, gates * h] {
        return Err(mismatch(&[input, gates * h], w_ih.shape()));
    }
    if bias.shape() != [gates * h] {
        return Err(mismatch(&[gates * h], bias.shape()));
    }
    Ok(Dims {
        batch,
        input,
        hidden: h,
        steps,
    })
}

fn initial_state(op: &'static str, s: Option<&Tensor>, batch: usize, h: usize) -> Result<Vec<f64>> {
    match s {
        None => Ok(vec![0.0; batch * h]),
        Some(t) if t.shape() == [batch, h] => Ok(t.data().to_vec()),
        Some(t) => Err(Error::ShapeMismatch {
            op,
            lhs: vec![batch, h],
            rhs: t.shape().to_vec(),
        }),
    }
}

/// `out[j] += Σ_k m[j, k] · v[k]` for `m` of shape `[rows × v.len()]`.
fn add_mat_vec(out: &mut [f64], m: &[f64], v: &[f64]) {
    let n = v.len();
    for (o, row) in out.iter_mut().zip(m.chunks_exact(n)) {
        *o += row.iter().zip(v).map(|(a, b)| a * b).sum::<f64>();
    }
}

/// `out[k] += Σ_j v[j] · m[j, k]`.
fn add_vec_mat(out: &mut [f64], v: &[f64], m: &[f64]) {
    let n = out.len();
    for (&a, row) in v.iter().zip(m.chunks_exact(n)) {
        if a != 0.0 {
            out.iter_mut().zip(row).for_each(|(o, w)| *o += a * w);
        }
    }
}

/// `m[j, k] += u[j] · v[k]`.
fn add_outer(m: &mut [f64], u: &[f64], v: &[f64]) {
    let n = v.len();
    for (&a, row) in u.iter().zip(m.chunks_exact_mut(n)) {
        if a != 0.0 {
            row.iter_mut().zip(v).for_each(|(o, b)| *o += a * b);
        }
    }
}

/// Input projections `x_t·W_ih + b` for every step: `[T×G·H]` per batch item.
fn project_inputs(x: &[f64], w_ih: &[f64], bias: &[f64], d: &Dims, gh: usize) -> Vec<Vec<f64>> {
    let per = d.input * d.steps;
    (0..d.batch)
        .map(|b| {
            let xt = transpose(&x[b * per..(b + 1) * per], d.input, d.steps);
            let mut a = gemm(&xt, w_ih, d.steps, d.input, gh);
            for row in a.chunks_exact_mut(gh) {
                row.iter_mut().zip(bias).for_each(|(v, b)| *v += b);
            }
            a
        })
        .collect()
}

/// Gradients of the input projection given `dA [T×G·H]` for one item.
fn input_grads(
    x_item: &[f64],
    da: &[f64],
    w_ih: &[f64],
    d: &Dims,
    gh: usize,
    dw_ih: &mut [f64],
    db: &mut [f64],
) -> Vec<f64> {
    // dW_ih = x · dA with x as [C×T]
    let dw = gemm(x_item, da, d.input, d.steps, gh);
    dw_ih.iter_mut().zip(&dw).for_each(|(a, b)| *a += b);
    for row in da.chunks_exact(gh) {
        db.iter_mut().zip(row).for_each(|(a, b)| *a += b);
    }
    // dx = W_ih · dAᵀ gives [C×T] directly
    let da_t = transpose(da, d.steps, gh);
    gemm(w_ih, &da_t, d.input, gh, d.steps)
}

/// Long short-term memory over `x [B×C×T]`, gate order `(i, f, g, o)`.
///
/// `h0`/`c0` default to zeros and are treated as constants.
pub fn lstm_forward<'t>(
    x: Var<'t>,
    w_ih: Var<'t>,
    w_hh: Var<'t>,
    bias: Var<'t>,
    h0: Option<&Tensor>,
    c0: Option<&Tensor>,
) -> Result<LstmOutput<'t>> {
    let (xv, wiv, whv, bv) = (x.value(), w_ih.value(), w_hh.value(), bias.value());
    let d = check_dims("lstm", &xv, &wiv, &whv, &bv, 4)?;
    let (h, t_len) = (d.hidden, d.steps);
    let gh = 4 * h;
    let h_init = initial_state("initial hidden state", h0, d.batch, h)?;
    let c_init = initial_state("initial cell state", c0, d.batch, h)?;
    let proj = project_inputs(xv.data(), wiv.data(), bv.data(), &d, gh);

    // per item, per step: activated gates, cell state, tanh(cell), hidden
    let mut gates = vec![0.0; d.batch * t_len * gh];
    let mut cells = vec![0.0; d.batch * t_len * h];
    let mut tcells = vec![0.0; d.batch * t_len * h];
    let mut hs = vec![0.0; d.batch * t_len * h];
    let mut y = vec![0.0; d.batch * h * t_len];
    let mut h_last = h_init.clone();
    let mut c_last = c_init.clone();
    for b in 0..d.batch {
        let mut hp = h_init[b * h..(b + 1) * h].to_vec();
        let mut cp = c_init[b * h..(b + 1) * h].to_vec();
        for t in 0..t_len {
            let s = b * t_len + t;
            let a = &mut gates[s * gh..(s + 1) * gh];
            a.copy_from_slice(&proj[b][t * gh..(t + 1) * gh]);
            add_vec_mat(a, &hp, whv.data());
            for j in 0..h {
                a[j] = sigmoid(a[j]);
                a[h + j] = sigmoid(a[h + j]);
                a[2 * h + j] = a[2 * h + j].tanh();
                a[3 * h + j] = sigmoid(a[3 * h + j]);
                let c = a[h + j] * cp[j] + a[j] * a[2 * h + j];
                let tc = c.tanh();
                cp[j] = c;
                hp[j] = a[3 * h + j] * tc;
                cells[s * h + j] = c;
                tcells[s * h + j] = tc;
                hs[s * h + j] = hp[j];
                y[(b * h + j) * t_len + t] = hp[j];
            }
        }
        h_last[b * h..(b + 1) * h].copy_from_slice(&hp);
        c_last[b * h..(b + 1) * h].copy_from_slice(&cp);
    }

    let y = x.op(
        Tensor::from_parts(vec![d.batch, h, t_len], y),
        &[x, w_ih, w_hh, bias],
        move |g| {
            let g = g.data();
            let mut dx = vec![0.0; xv.numel()];
            let mut dw_ih = vec![0.0; wiv.numel()];
            let mut dw_hh = vec![0.0; whv.numel()];
            let mut db = vec![0.0; gh];
            let per = d.input * t_len;
            for b in 0..d.batch {
                let mut da_all = vec![0.0; t_len * gh];
                let mut dh_next = vec![0.0; h];
                let mut dc_next = vec![0.0; h];
                for t in (0..t_len).rev() {
                    let s = b * t_len + t;
                    let a = &gates[s * gh..(s + 1) * gh];
                    let c_prev = if t == 0 {
                        &c_init[b * h..(b + 1) * h]
                    } else {
                        &cells[(s - 1) * h..s * h]
                    };
                    let da = &mut da_all[t * gh..(t + 1) * gh];
                    for j in 0..h {
                        let (i, f, gg, o) = (a[j], a[h + j], a[2 * h + j], a[3 * h + j]);
                        let tc = tcells[s * h + j];
                        let dh = g[(b * h + j) * t_len + t] + dh_next[j];
                        let dc = dh * o * (1.0 - tc * tc) + dc_next[j];
                        da[j] = dc * gg * i * (1.0 - i);
                        da[h + j] = dc * c_prev[j] * f * (1.0 - f);
                        da[2 * h + j] = dc * i * (1.0 - gg * gg);
                        da[3 * h + j] = dh * tc * o * (1.0 - o);
                        dc_next[j] = dc * f;
                    }
                    let h_prev = if t == 0 {
                        &h_init[b * h..(b + 1) * h]
                    } else {
                        &hs[(s - 1) * h..s * h]
                    };
                    add_outer(&mut dw_hh, h_prev, da);
                    dh_next.iter_mut().for_each(|v| *v = 0.0);
                    add_mat_vec(&mut dh_next, whv.data(), da);
                }
                let dxb = input_grads(
                    &xv.data()[b * per..(b + 1) * per],
                    &da_all,
                    wiv.data(),
                    &d,
                    gh,
                    &mut dw_ih,
                    &mut db,
                );
                dx[b * per..(b + 1) * per].copy_from_slice(&dxb);
            }
            vec![
                Some(Tensor::from_parts(xv.shape().to_vec(), dx)),
                Some(Tensor::from_parts(wiv.shape().to_vec(), dw_ih)),
                Some(Tensor::from_parts(whv.shape().to_vec(), dw_hh)),
                Some(Tensor::from_parts(vec![gh], db)),
            ]
        },
    );
    Ok(LstmOutput {
        y,
        h_t: Tensor::from_parts(vec![d.batch, h], h_last),
        c_t: Tensor::from_parts(vec![d.batch, h], c_last),
    })
}

/// Gated recurrent unit over `x [B×C×T]`, gate order `(z, r, n)`:
///
/// `z = σ(W_z x + U_z h + b_z)`, `r = σ(W_r x + U_r h + b_r)`,
/// `n = tanh(W_n x + r ⊙ (U_n h) + b_n)`, `h' = (1−z)⊙n + z⊙h`.
pub fn gru_forward<'t>(
    x: Var<'t>,
    w_ih: Var<'t>,
    w_hh: Var<'t>,
    bias: Var<'t>,
    h0: Option<&Tensor>,
) -> Result<GruOutput<'t>> {
    let (xv, wiv, whv, bv) = (x.value(), w_ih.value(), w_hh.value(), bias.value());
    let d = check_dims("gru", &xv, &wiv, &whv, &bv, 3)?;
    let (h, t_len) = (d.hidden, d.steps);
    let gh = 3 * h;
    let h_init = initial_state("initial hidden state", h0, d.batch, h)?;
    let proj = project_inputs(xv.data(), wiv.data(), bv.data(), &d, gh);

    // per item, per step: z, r, n and the recurrent candidate term U_n h
    let mut gates = vec![0.0; d.batch * t_len * gh];
    let mut uhn = vec![0.0; d.batch * t_len * h];
    let mut hs = vec![0.0; d.batch * t_len * h];
    let mut y = vec![0.0; d.batch * h * t_len];
    let mut h_last = h_init.clone();
    for b in 0..d.batch {
        let mut hp = h_init[b * h..(b + 1) * h].to_vec();
        let mut rec = vec![0.0; gh];
        for t in 0..t_len {
            let s = b * t_len + t;
            rec.iter_mut().for_each(|v| *v = 0.0);
            add_vec_mat(&mut rec, &hp, whv.data());
            let ax = &proj[b][t * gh..(t + 1) * gh];
            let a = &mut gates[s * gh..(s + 1) * gh];
            for j in 0..h {
                let z = sigmoid(ax[j] + rec[j]);
                let r = sigmoid(ax[h + j] + rec[h + j]);
                let n = (ax[2 * h + j] + r * rec[2 * h + j]).tanh();
                a[j] = z;
                a[h + j] = r;
                a[2 * h + j] = n;
                uhn[s * h + j] = rec[2 * h + j];
                hp[j] = (1.0 - z) * n + z * hp[j];
                hs[s * h + j] = hp[j];
                y[(b * h + j) * t_len + t] = hp[j];
            }
        }
        h_last[b * h..(b + 1) * h].copy_from_slice(&hp);
    }

    let y = x.op(
        Tensor::from_parts(vec![d.batch, h, t_len], y),
        &[x, w_ih, w_hh, bias],
        move |g| {
            let g = g.data();
            let mut dx = vec![0.0; xv.numel()];
            let mut dw_ih = vec![0.0; wiv.numel()];
            let mut dw_hh = vec![0.0; whv.numel()];
            let mut db = vec![0.0; gh];
            let per = d.input * t_len;
            let mut dah = vec![0.0; gh];
            for b in 0..d.batch {
                let mut dax_all = vec![0.0; t_len * gh];
                let mut dh_next = vec![0.0; h];
                for t in (0..t_len).rev() {
                    let s = b * t_len + t;
                    let a = &gates[s * gh..(s + 1) * gh];
                    let h_prev = if t == 0 {
                        &h_init[b * h..(b + 1) * h]
                    } else {
                        &hs[(s - 1) * h..s * h]
                    };
                    let dax = &mut dax_all[t * gh..(t + 1) * gh];
                    for j in 0..h {
                        let (z, r, n) = (a[j], a[h + j], a[2 * h + j]);
                        let dh = g[(b * h + j) * t_len + t] + dh_next[j];
                        let dz = dh * (h_prev[j] - n);
                        let dn = dh * (1.0 - z) * (1.0 - n * n);
                        let dr = dn * uhn[s * h + j];
                        dax[j] = dz * z * (1.0 - z);
                        dax[h + j] = dr * r * (1.0 - r);
                        dax[2 * h + j] = dn;
                        dah[j] = dax[j];
                        dah[h + j] = dax[h + j];
                        dah[2 * h + j] = dn * r;
                        dh_next[j] = dh * z;
                    }
                    add_outer(&mut dw_hh, h_prev, &dah);
                    add_mat_vec(&mut dh_next, whv.data(), &dah);
                }
                let dxb = input_grads(
                    &xv.data()[b * per..(b + 1) * per],
                    &dax_all,
                    wiv.data(),
                    &d,
                    gh,
                    &mut dw_ih,
                    &mut db,
                );
                dx[b * per..(b + 1) * per].copy_from_slice(&dxb);
            }
            vec![
                Some(Tensor::from_parts(xv.shape().to_vec(), dx)),
                Some(Tensor::from_parts(wiv.shape().to_vec(), dw_ih)),
                Some(Tensor::from_parts(whv.shape().to_vec(), dw_hh)),
                Some(Tensor::from_parts(vec![gh], db)),
            ]
        },
    );
    Ok(GruOutput {
        y,
        h_t: Tensor::from_parts(vec![d.batch, h], h_last),
    })
}
