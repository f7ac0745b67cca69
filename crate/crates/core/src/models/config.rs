use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::audio::DEFAULT_COND_DIM;
use crate::error::{Error, Result};
use crate::nn::FILM_HIDDEN;

#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ModelKind {
    #[serde(rename = "TCN")]
    Tcn,
    #[serde(rename = "WaveNet")]
    WaveNet,
    #[serde(rename = "GCN")]
    Gcn,
    #[serde(rename = "LSTM")]
    Lstm,
    #[serde(rename = "GRU")]
    Gru,
}

impl ModelKind {
    pub const ALL: [ModelKind; 5] = [Self::Tcn, Self::WaveNet, Self::Gcn, Self::Lstm, Self::Gru];

    pub fn name(self) -> &'static str {
        match self {
            Self::Tcn => "TCN",
            Self::WaveNet => "WaveNet",
            Self::Gcn => "GCN",
            Self::Lstm => "LSTM",
            Self::Gru => "GRU",
        }
    }

    pub fn is_recurrent(self) -> bool {
        matches!(self, Self::Lstm | Self::Gru)
    }

    pub fn description(self) -> &'static str {
        match self {
            Self::Tcn => "dilated causal conv blocks with FiLM, PReLU and residuals",
            Self::WaveNet => "blocks of dilated stacks with FiLM, PReLU, residual and skip sums",
            Self::Gcn => "gated tanh/sigmoid conv layers with 1x1 mixing and residuals",
            Self::Lstm => "conv front end, causal max-pool, LSTM, FiLM, 1x1 head",
            Self::Gru => "conv front end, causal max-pool, GRU, FiLM, 1x1 head, tanh",
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.pad(self.name())
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| {
                Error::invalid(format!(
                    "unknown model kind {s:?} (expected one of TCN, WaveNet, GCN, LSTM, GRU)"
                ))
            })
    }
}

/// Architecture hyper-parameters. Fields that a kind does not use are
/// ignored by it but still validated as positive so configs stay portable.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub kind: ModelKind,
    pub channels: usize,
    pub kernel_size: usize,
    pub dilation_growth: usize,
    pub n_blocks: usize,
    /// Stacks per block (WaveNet) or gated layers per block (GCN).
    pub stacks_per_block: usize,
    pub hidden_size: usize,
    pub cond_dim: usize,
    pub sample_rate: u32,
    pub use_batchnorm: bool,
    /// WaveNet and GCN: feed the sum of per-layer outputs to the head.
    /// LSTM: add the dry input to the output.
    pub use_skip: bool,
}

/// Causal max-pool geometry used by the recurrent front end.
pub const POOL_KERNEL: usize = 2;
pub const POOL_STRIDE: usize = 1;

#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub enum ReceptiveField {
    Samples(usize),
    Unbounded,
}

impl fmt::Display for ReceptiveField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Samples(n) => write!(f, "{n} samples"),
            Self::Unbounded => f.write_str("unbounded (recurrent)"),
        }
    }
}

impl ModelConfig {
    pub fn default_for(kind: ModelKind) -> Self {
        let base = Self {
            kind,
            channels: 16,
            kernel_size: 3,
            dilation_growth: 2,
            n_blocks: 2,
            stacks_per_block: 4,
            hidden_size: 64,
            cond_dim: DEFAULT_COND_DIM,
            sample_rate: 16_000,
            use_batchnorm: false,
            use_skip: false,
        };
        match kind {
            ModelKind::Tcn => Self {
                channels: 32,
                n_blocks: 8,
                stacks_per_block: 1,
                ..base
            },
            ModelKind::WaveNet => Self {
                use_skip: true,
                ..base
            },
            ModelKind::Gcn => base,
            ModelKind::Lstm | ModelKind::Gru => Self {
                channels: 32,
                n_blocks: 1,
                stacks_per_block: 1,
                dilation_growth: 1,
                ..base
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("channels", self.channels),
            ("kernel_size", self.kernel_size),
            ("dilation_growth", self.dilation_growth),
            ("n_blocks", self.n_blocks),
            ("stacks_per_block", self.stacks_per_block),
            ("hidden_size", self.hidden_size),
            ("cond_dim", self.cond_dim),
            ("sample_rate", self.sample_rate as usize),
        ];
        for (name, v) in dims {
            if v == 0 {
                return Err(Error::invalid(format!("model config: {name} must be positive")));
            }
        }
        let sum = self.dilation_sum().ok_or_else(|| {
            Error::invalid("model config: dilation schedule overflows".to_string())
        })?;
        (self.kernel_size - 1)
            .checked_mul(sum)
            .ok_or_else(|| Error::invalid("model config: receptive field overflows"))?;
        Ok(())
    }

    /// Dilations of every dilated conv layer, in forward order.
    pub fn dilations(&self) -> Vec<usize> {
        let g = self.dilation_growth;
        match self.kind {
            ModelKind::Tcn => (0..self.n_blocks).map(|i| g.pow(i as u32)).collect(),
            ModelKind::WaveNet | ModelKind::Gcn => (0..self.n_blocks)
                .flat_map(|_| (0..self.stacks_per_block).map(move |s| g.pow(s as u32)))
                .collect(),
            ModelKind::Lstm | ModelKind::Gru => vec![1],
        }
    }

    fn dilation_sum(&self) -> Option<usize> {
        let g = self.dilation_growth;
        let geometric = |n: usize| -> Option<usize> {
            (0..n).try_fold(0usize, |acc, i| acc.checked_add(g.checked_pow(i as u32)?))
        };
        match self.kind {
            ModelKind::Tcn => geometric(self.n_blocks),
            ModelKind::WaveNet | ModelKind::Gcn => {
                geometric(self.stacks_per_block)?.checked_mul(self.n_blocks)
            }
            ModelKind::Lstm | ModelKind::Gru => Some(1),
        }
    }

    /// `1 + (K−1)·Σ dᵢ` over all dilated conv layers.
    pub fn receptive_field(&self) -> ReceptiveField {
        if self.kind.is_recurrent() {
            return ReceptiveField::Unbounded;
        }
        let sum = self.dilation_sum().unwrap_or(usize::MAX);
        ReceptiveField::Samples(1 + (self.kernel_size - 1) * sum)
    }

    /// Closed-form parameter count; equals the size of the built map.
    pub fn param_count(&self) -> usize {
        let conv = |cin: usize, cout: usize, k: usize| cout * cin * k + cout;
        let film = |c: usize| conv(self.cond_dim, FILM_HIDDEN, 1) + conv(FILM_HIDDEN, 2 * c, 1);
        let (c, k) = (self.channels, self.kernel_size);
        let layers = self.n_blocks * self.stacks_per_block;
        match self.kind {
            ModelKind::Tcn => {
                let first = conv(1, c, k) + conv(1, c, 1);
                let rest = (self.n_blocks - 1) * conv(c, c, k);
                first + rest + self.n_blocks * (film(c) + c) + conv(c, 1, 1)
            }
            ModelKind::WaveNet => {
                conv(1, c, 1) + layers * (conv(c, c, k) + film(c) + c) + conv(c, 1, 1)
            }
            ModelKind::Gcn => {
                conv(1, c, 1) + layers * (conv(c, 2 * c, k) + film(2 * c) + conv(c, c, 1))
                    + conv(c, 1, 1)
            }
            ModelKind::Lstm | ModelKind::Gru => {
                let gates = if self.kind == ModelKind::Lstm { 4 } else { 3 };
                let h = self.hidden_size;
                conv(1, c, k) + gates * h * (c + h + 1) + film(h) + conv(h, 1, 1)
            }
        }
    }
}
