//! Differentiable building blocks shared by the model zoo.

mod layers;
mod params;
mod recurrent;

pub use layers::{
    batch_norm_eval, batch_norm_train, causal_conv, conv1x1, film, film_affine, gated_activation,
    max_pool1d, prelu, BN_EPS, BN_MOMENTUM, FILM_HIDDEN,
};
pub use params::{Bound, ParamInit, ParamStore};
pub use recurrent::{gru_forward, lstm_forward, GruOutput, LstmOutput};

/// Training mode uses batch statistics in batch normalisation and records
/// them on the tape; evaluation mode uses running statistics.
#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}
