//! Neural spring-reverb emulation toolkit.
//!
//! Five audio-to-audio architectures (TCN, WaveNet, GCN, LSTM, GRU) built on a
//! small reverse-mode autodiff engine, trained with a Smooth L1 plus
//! multi-resolution STFT objective and evaluated with ESR, MRSTFT and
//! real-time factor against naive and noise baselines.

pub mod audio;
pub mod dsp;
pub mod error;
pub mod features;
pub mod gradcheck;
pub mod losses;
pub mod metrics;
pub mod models;
pub mod nn;
pub mod par;
pub mod synth;
pub mod tensor;
pub mod training;
pub mod verify;

pub use error::{Error, Result};
pub use tensor::{Tape, Tensor, Var};
