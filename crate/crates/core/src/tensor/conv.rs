use super::{Tensor, Var};
use crate::error::{Error, Result};

impl<'t> Var<'t> {
    /// Dilated 1-D convolution.
    ///
    /// `self`: `[B×Cin×T]`, `weight`: `[Cout×Cin×K]`, `bias`: `[Cout]`.
    /// Tap `j` multiplies the sample `j·dilation` steps before the newest
    /// sample in its window, so tap 0 sees the current input under causal
    /// padding.
    /// The input is left-padded with `left_pad` zeros; output length is
    /// `T + left_pad − dilation·(K−1)`. With `left_pad = dilation·(K−1)` the
    /// convolution is causal and length-preserving.
    pub fn conv1d(
        self,
        weight: Var<'t>,
        bias: Option<Var<'t>>,
        dilation: usize,
        left_pad: usize,
    ) -> Result<Var<'t>> {
        let x = self.value();
        let w = weight.value();
        let (&[batch, cin, t], &[cout, wcin, k]) = (x.shape(), w.shape()) else {
            return Err(Error::ShapeMismatch {
                op: "conv1d",
                lhs: x.shape().to_vec(),
                rhs: w.shape().to_vec(),
            });
        };
        if cin != wcin {
            return Err(Error::ShapeMismatch {
                op: "conv1d",
                lhs: x.shape().to_vec(),
                rhs: w.shape().to_vec(),
            });
        }
        if dilation == 0 || k == 0 {
            return Err(Error::invalid("conv1d: dilation and kernel size must be >= 1"));
        }
        let b = bias.map(|b| b.value());
        if let Some(b) = &b {
            if b.shape() != [cout] {
                return Err(Error::ShapeMismatch {
                    op: "conv1d bias",
                    lhs: vec![cout],
                    rhs: b.shape().to_vec(),
                });
            }
        }
        let span = dilation * (k - 1);
        if t + left_pad <= span {
            return Err(Error::InputTooShort {
                required: span + 1 - left_pad.min(span),
                actual: t,
            });
        }
        let t_out = t + left_pad - span;
        let geom = Geometry {
            batch,
            cin,
            cout,
            k,
            t,
            t_out,
            dilation,
            left_pad,
        };
        let out = geom.forward(x.data(), w.data(), b.as_ref().map(|b| b.data()));
        let out = Tensor::from_parts(vec![batch, cout, t_out], out);

        let mut inputs = vec![self, weight];
        inputs.extend(bias);
        let has_bias = b.is_some();
        Ok(self.op(out, &inputs, move |g| {
            let g = g.data();
            let (dx, dw) = geom.backward(x.data(), w.data(), g);
            let mut grads = vec![
                Some(Tensor::from_parts(vec![batch, cin, t], dx)),
                Some(Tensor::from_parts(vec![cout, cin, k], dw)),
            ];
            if has_bias {
                let mut db = vec![0.0; cout];
                for bi in 0..batch {
                    for (o, db) in db.iter_mut().enumerate() {
                        let row = &g[(bi * cout + o) * t_out..(bi * cout + o + 1) * t_out];
                        *db += row.iter().sum::<f64>();
                    }
                }
                grads.push(Some(Tensor::from_parts(vec![cout], db)));
            }
            grads
        }))
    }
}

/// Output samples per block in the forward pass.
const TIME_BLOCK: usize = 512;

#[derive(Copy, Clone)]
struct Geometry {
    batch: usize,
    cin: usize,
    cout: usize,
    k: usize,
    t: usize,
    t_out: usize,
    dilation: usize,
    left_pad: usize,
}

impl Geometry {
    /// Output positions `[lo, hi)` for which tap `tap` reads a real input
    /// sample, and the input index read at output `lo`.
    fn tap_range(&self, tap: usize) -> (usize, usize, usize) {
        let shift = ((self.k - 1 - tap) * self.dilation) as isize - self.left_pad as isize;
        let lo = (-shift).max(0) as usize;
        let hi = ((self.t as isize - shift).max(0) as usize).min(self.t_out);
        if lo >= hi {
            return (0, 0, 0);
        }
        (lo, hi, (lo as isize + shift) as usize)
    }

    fn forward(&self, x: &[f64], w: &[f64], bias: Option<&[f64]>) -> Vec<f64> {
        let mut out = vec![0.0; self.batch * self.cout * self.t_out];
        #[cfg(target_arch = "x86_64")]
        if std::arch::is_x86_feature_detected!("avx2") {
            // SAFETY: the CPU supports AVX2, checked just above.
            unsafe { self.forward_avx2(x, w, bias, &mut out) };
            return out;
        }
        self.forward_into(x, w, bias, &mut out);
        out
    }

    /// The same loop compiled with 256-bit vectors. Rust never contracts
    /// `a * b + c` into a fused multiply-add, so results are bit-identical to
    /// the baseline build.
    #[cfg(target_arch = "x86_64")]
    #[target_feature(enable = "avx2")]
    unsafe fn forward_avx2(&self, x: &[f64], w: &[f64], bias: Option<&[f64]>, out: &mut [f64]) {
        self.forward_into(x, w, bias, out);
    }

    /// Processed in time blocks so each output row segment stays in cache
    /// across all input channels and taps. The per-sample summation order
    /// (bias, then channels, then taps) does not depend on the blocking.
    #[inline(always)]
    fn forward_into(&self, x: &[f64], w: &[f64], bias: Option<&[f64]>, out: &mut [f64]) {
        let Geometry {
            batch,
            cin,
            cout,
            k,
            t,
            t_out,
            ..
        } = *self;
        let taps: Vec<(usize, usize, usize)> = (0..k).map(|tap| self.tap_range(tap)).collect();
        for b in 0..batch {
            for start in (0..t_out).step_by(TIME_BLOCK) {
                let end = (start + TIME_BLOCK).min(t_out);
                for o in 0..cout {
                    let base = (b * cout + o) * t_out;
                    let row = &mut out[base + start..base + end];
                    if let Some(bias) = bias {
                        row.iter_mut().for_each(|v| *v = bias[o]);
                    }
                    for c in 0..cin {
                        let xin = &x[(b * cin + c) * t..(b * cin + c + 1) * t];
                        for (tap, &(lo, hi, s0)) in taps.iter().enumerate() {
                            let wv = w[(o * cin + c) * k + tap];
                            let (lo2, hi2) = (lo.max(start), hi.min(end));
                            if wv == 0.0 || lo2 >= hi2 {
                                continue;
                            }
                            let src = &xin[s0 + lo2 - lo..s0 + hi2 - lo];
                            for (r, xv) in row[lo2 - start..hi2 - start].iter_mut().zip(src) {
                                *r += wv * xv;
                            }
                        }
                    }
                }
            }
        }
    }

    fn backward(&self, x: &[f64], w: &[f64], g: &[f64]) -> (Vec<f64>, Vec<f64>) {
        #[cfg(target_arch = "x86_64")]
        if std::arch::is_x86_feature_detected!("avx2") {
            // SAFETY: the CPU supports AVX2, checked just above.
            return unsafe { self.backward_avx2(x, w, g) };
        }
        self.backward_impl(x, w, g)
    }

    #[cfg(target_arch = "x86_64")]
    #[target_feature(enable = "avx2")]
    unsafe fn backward_avx2(&self, x: &[f64], w: &[f64], g: &[f64]) -> (Vec<f64>, Vec<f64>) {
        self.backward_impl(x, w, g)
    }

    #[inline(always)]
    fn backward_impl(&self, x: &[f64], w: &[f64], g: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let Geometry {
            batch,
            cin,
            cout,
            k,
            t,
            t_out,
            ..
        } = *self;
        let mut dx = vec![0.0; batch * cin * t];
        let mut dw = vec![0.0; cout * cin * k];
        for b in 0..batch {
            for o in 0..cout {
                let grow = &g[(b * cout + o) * t_out..(b * cout + o + 1) * t_out];
                for c in 0..cin {
                    let xin = &x[(b * cin + c) * t..(b * cin + c + 1) * t];
                    let dxin = &mut dx[(b * cin + c) * t..(b * cin + c + 1) * t];
                    for tap in 0..k {
                        let widx = (o * cin + c) * k + tap;
                        let (lo, hi, s0) = self.tap_range(tap);
                        let s1 = s0 + (hi - lo);
                        let gs = &grow[lo..hi];
                        dw[widx] += gs.iter().zip(&xin[s0..s1]).map(|(a, b)| a * b).sum::<f64>();
                        let wv = w[widx];
                        if wv != 0.0 {
                            for (d, gv) in dxin[s0..s1].iter_mut().zip(gs) {
                                *d += wv * gv;
                            }
                        }
                    }
                }
            }
        }
        (dx, dw)
    }
}
