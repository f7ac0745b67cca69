//! Deterministic test signals: tones, guitar-like plucks and synthetic
//! decaying-noise impulse responses.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::audio::{AudioClip, SamplePair, Split};
use crate::error::{Error, Result};

pub fn sine(sample_rate: u32, len: usize, freq: f64, amplitude: f64) -> Vec<f64> {
    let fs = sample_rate as f64;
    (0..len)
        .map(|n| amplitude * (2.0 * PI * freq * n as f64 / fs).sin())
        .collect()
}

/// ±1 square wave with an even number of samples per half period when
/// `sample_rate / freq` is even.
pub fn square(sample_rate: u32, len: usize, freq: f64) -> Vec<f64> {
    let period = sample_rate as f64 / freq;
    (0..len)
        .map(|n| if (n as f64 % period) < period / 2.0 { 1.0 } else { -1.0 })
        .collect()
}

/// Parameters of [`pluck`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PluckConfig {
    pub f0: f64,
    pub harmonics: usize,
    /// Decay rate of the fundamental in 1/s; harmonic `h` decays `h` times
    /// faster.
    pub decay: f64,
    pub peak: f64,
}

impl Default for PluckConfig {
    fn default() -> Self {
        Self {
            f0: 196.0,
            harmonics: 12,
            decay: 3.0,
            peak: 0.8,
        }
    }
}

/// Sum of exponentially decaying harmonics with `1/h` amplitudes and
/// seeded phases, scaled to `cfg.peak`.
pub fn pluck(sample_rate: u32, duration_s: f64, cfg: &PluckConfig, seed: u64) -> Result<Vec<f64>> {
    let fs = sample_rate as f64;
    let len = (duration_s * fs).round() as usize;
    if len == 0 || cfg.harmonics == 0 {
        return Err(Error::invalid("pluck needs a positive duration and at least one harmonic"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let nyquist = fs / 2.0;
    let partials: Vec<(f64, f64, f64)> = (1..=cfg.harmonics)
        .map(|h| (h as f64, rng.random_range(0.0..2.0 * PI)))
        .filter(|(h, _)| h * cfg.f0 < nyquist)
        .map(|(h, phase)| (h, phase, cfg.decay * h))
        .collect();
    let mut x: Vec<f64> = (0..len)
        .map(|n| {
            let t = n as f64 / fs;
            partials
                .iter()
                .map(|&(h, phase, rate)| (2.0 * PI * h * cfg.f0 * t + phase).sin() * (-rate * t).exp() / h)
                .sum()
        })
        .collect();
    normalise_peak(&mut x, cfg.peak);
    Ok(x)
}

/// White noise under an exponential envelope that falls by 60 dB over the
/// response, scaled to unit energy.
pub fn decaying_noise_ir(sample_rate: u32, duration_s: f64, seed: u64) -> Result<Vec<f64>> {
    let fs = sample_rate as f64;
    let len = (duration_s * fs).round() as usize;
    if len == 0 {
        return Err(Error::invalid("impulse response needs a positive duration"));
    }
    let rate = 6.91 / duration_s;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut h: Vec<f64> = (0..len)
        .map(|n| rng.random_range(-1.0..1.0) * (-rate * n as f64 / fs).exp())
        .collect();
    let energy = h.iter().map(|v| v * v).sum::<f64>().sqrt();
    h.iter_mut().for_each(|v| *v /= energy);
    Ok(h)
}

/// Causal convolution truncated to `x.len()` samples.
pub fn convolve(x: &[f64], h: &[f64]) -> Vec<f64> {
    (0..x.len())
        .map(|n| {
            let k_max = n.min(h.len().saturating_sub(1));
            (0..=k_max).map(|k| h[k] * x[n - k]).sum()
        })
        .collect()
}

pub fn normalise_peak(x: &mut [f64], peak: f64) {
    let m = x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if m > 0.0 {
        x.iter_mut().for_each(|v| *v *= peak / m);
    }
}

/// A 0.5 s pluck and its rendering through a 0.3 s decaying-noise response,
/// wet scaled to the same peak as dry.
pub fn pluck_pair(sample_rate: u32, cond: Vec<f64>, split: Split, seed: u64) -> Result<SamplePair> {
    let cfg = PluckConfig::default();
    let dry = pluck(sample_rate, 0.5, &cfg, seed)?;
    let ir = decaying_noise_ir(sample_rate, 0.3, seed.wrapping_add(1))?;
    let mut wet = convolve(&dry, &ir);
    normalise_peak(&mut wet, cfg.peak);
    SamplePair::new(
        format!("pluck-{seed}"),
        AudioClip::new(dry, sample_rate),
        AudioClip::new(wet, sample_rate),
        cond,
        split,
    )
}
