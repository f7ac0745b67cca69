//! FFT and short-time Fourier transform primitives.

mod fft;
mod stft;

pub use fft::{fft, fft_in_place};
pub use stft::{hann_window, stft_magnitude, stft_magnitude_values, StftConfig, MAGNITUDE_FLOOR};

pub use num_complex::Complex64;
