use std::cell::RefCell;
use std::collections::HashMap;
use std::f64::consts::PI;
use std::rc::Rc;

use num_complex::Complex64;

use crate::error::{Error, Result};

thread_local! {
    static TWIDDLES: RefCell<HashMap<usize, Rc<[Complex64]>>> = RefCell::new(HashMap::new());
}

/// `exp(−2πik/n)` for `k < n/2`, each evaluated directly and cached per size.
fn twiddles(n: usize) -> Rc<[Complex64]> {
    TWIDDLES.with(|cache| {
        cache
            .borrow_mut()
            .entry(n)
            .or_insert_with(|| {
                (0..n / 2)
                    .map(|k| {
                        if k == 0 {
                            Complex64::new(1.0, 0.0)
                        } else {
                            Complex64::from_polar(1.0, -2.0 * PI * k as f64 / n as f64)
                        }
                    })
                    .collect()
            })
            .clone()
    })
}

/// Iterative radix-2 decimation-in-time FFT.
///
/// The forward transform is unscaled; the inverse scales by `1/N`, so
/// `fft(fft(x, false), true) == x` up to rounding.
pub fn fft(x: &[Complex64], inverse: bool) -> Result<Vec<Complex64>> {
    let mut buf = x.to_vec();
    fft_in_place(&mut buf, inverse)?;
    Ok(buf)
}

pub fn fft_in_place(buf: &mut [Complex64], inverse: bool) -> Result<()> {
    let n = buf.len();
    if n == 0 || !n.is_power_of_two() {
        return Err(Error::NotPowerOfTwo(n));
    }
    let bits = n.trailing_zeros();
    if bits > 0 {
        for i in 0..n {
            let j = i.reverse_bits() >> (usize::BITS - bits);
            if j > i {
                buf.swap(i, j);
            }
        }
    }
    let roots = twiddles(n);
    let mut len = 2;
    while len <= n {
        let half = len / 2;
        let stride = n / len;
        for start in (0..n).step_by(len) {
            for k in 0..half {
                let w = roots[k * stride];
                let w = if inverse { w.conj() } else { w };
                let a = buf[start + k];
                let b = buf[start + k + half] * w;
                buf[start + k] = a + b;
                buf[start + k + half] = a - b;
            }
        }
        len <<= 1;
    }
    if inverse {
        let scale = 1.0 / n as f64;
        buf.iter_mut().for_each(|v| *v *= scale);
    }
    Ok(())
}
