use std::f64::consts::PI;
use std::sync::Arc;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::fft::fft_in_place;
use crate::error::{Error, Result};
use crate::tensor::{Tensor, Var};

/// Floor applied to magnitudes wherever they are divided by or logged.
pub const MAGNITUDE_FLOOR: f64 = 1e-7;

/// One STFT resolution: Hann window of `win_length`, centred in an
/// `fft_size` frame, advanced by `hop`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StftConfig {
    pub fft_size: usize,
    pub hop: usize,
    pub win_length: usize,
}

impl StftConfig {
    pub fn new(fft_size: usize, hop: usize, win_length: usize) -> Result<Self> {
        let cfg = Self {
            fft_size,
            hop,
            win_length,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// `hop = fft/4`, `win = fft`.
    pub fn with_fft_size(fft_size: usize) -> Result<Self> {
        Self::new(fft_size, fft_size / 4, fft_size)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.fft_size.is_power_of_two() {
            return Err(Error::NotPowerOfTwo(self.fft_size));
        }
        if !(0 < self.hop && self.hop <= self.win_length && self.win_length <= self.fft_size) {
            return Err(Error::invalid(format!(
                "STFT needs 0 < hop <= win_length <= fft_size, got hop={} win={} fft={}",
                self.hop, self.win_length, self.fft_size
            )));
        }
        Ok(())
    }

    pub fn bins(&self) -> usize {
        self.fft_size / 2 + 1
    }

    /// Frame count for a signal of `len` samples, `None` when too short.
    pub fn frames(&self, len: usize) -> Option<usize> {
        (len >= self.win_length).then(|| 1 + (len - self.win_length) / self.hop)
    }

    fn pad_offset(&self) -> usize {
        (self.fft_size - self.win_length) / 2
    }
}

/// Periodic Hann window.
pub fn hann_window(len: usize) -> Vec<f64> {
    (0..len)
        .map(|n| 0.5 - 0.5 * (2.0 * PI * n as f64 / len as f64).cos())
        .collect()
}

struct Spectra {
    frames: usize,
    bins: usize,
    /// `frames × bins` complex spectrum, row-major.
    values: Vec<Complex64>,
}

fn analyse(x: &[f64], cfg: &StftConfig, window: &[f64]) -> Result<Spectra> {
    cfg.validate()?;
    let frames = cfg.frames(x.len()).ok_or(Error::InputTooShort {
        required: cfg.win_length,
        actual: x.len(),
    })?;
    let (n, bins, off) = (cfg.fft_size, cfg.bins(), cfg.pad_offset());
    let mut values = Vec::with_capacity(frames * bins);
    let mut buf = vec![Complex64::new(0.0, 0.0); n];
    for f in 0..frames {
        buf.iter_mut().for_each(|v| *v = Complex64::new(0.0, 0.0));
        let seg = &x[f * cfg.hop..f * cfg.hop + cfg.win_length];
        for (i, (&s, &w)) in seg.iter().zip(window).enumerate() {
            buf[off + i] = Complex64::new(s * w, 0.0);
        }
        fft_in_place(&mut buf, false)?;
        values.extend_from_slice(&buf[..bins]);
    }
    Ok(Spectra {
        frames,
        bins,
        values,
    })
}

/// `|STFT(x)|` as a plain `[frames × bins]` tensor, no gradient.
pub fn stft_magnitude_values(x: &[f64], cfg: &StftConfig) -> Result<Tensor> {
    let window = hann_window(cfg.win_length);
    let spec = analyse(x, cfg, &window)?;
    Ok(Tensor::from_parts(
        vec![spec.frames, spec.bins],
        spec.values.iter().map(|v| v.norm()).collect(),
    ))
}

/// Differentiable `|STFT(x)|` of a 1-D signal, `[frames × bins]`.
///
/// Frames start at sample 0 with no centring. The backward pass divides by
/// `max(|X|, MAGNITUDE_FLOOR)`, so exactly-zero bins contribute no gradient.
pub fn stft_magnitude<'t>(x: Var<'t>, cfg: &StftConfig) -> Result<Var<'t>> {
    let xv = x.value();
    if xv.ndim() != 1 {
        return Err(Error::invalid(format!(
            "stft_magnitude expects a 1-D signal, got {:?}",
            xv.shape()
        )));
    }
    let window = Arc::new(hann_window(cfg.win_length));
    let spec = analyse(xv.data(), cfg, &window)?;
    let mags = Tensor::from_parts(
        vec![spec.frames, spec.bins],
        spec.values.iter().map(|v| v.norm()).collect(),
    );
    let cfg = cfg.clone();
    let len = xv.numel();
    Ok(x.op(mags, &[x], move |g| {
        let g = g.data();
        let (n, bins, off) = (cfg.fft_size, spec.bins, cfg.pad_offset());
        let mut dx = vec![0.0; len];
        let mut buf = vec![Complex64::new(0.0, 0.0); n];
        for f in 0..spec.frames {
            buf.iter_mut().for_each(|v| *v = Complex64::new(0.0, 0.0));
            for k in 0..bins {
                let xk = spec.values[f * bins + k];
                let mag = xk.norm().max(MAGNITUDE_FLOOR);
                buf[k] = xk * (g[f * bins + k] / mag);
            }
            // Σ_k V_k e^{+iθ} = N · ifft(V)
            fft_in_place(&mut buf, true).expect("power-of-two frame");
            let base = f * cfg.hop;
            for i in 0..cfg.win_length {
                dx[base + i] += window[i] * buf[off + i].re * n as f64;
            }
        }
        vec![Some(Tensor::from_parts(vec![len], dx))]
    }))
}
