//! Training objective: Smooth L1 in the time domain plus a multi-resolution
//! STFT loss (spectral convergence and log-magnitude distance).

use serde::{Deserialize, Serialize};

use crate::dsp::{stft_magnitude, StftConfig, MAGNITUDE_FLOOR};
use crate::error::{Error, Result};
use crate::tensor::{Tape, Tensor, Var};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MrstftConfig {
    pub resolutions: Vec<StftConfig>,
    /// Weight of the log-magnitude term.
    pub alpha: f64,
}

impl Default for MrstftConfig {
    fn default() -> Self {
        Self {
            resolutions: [512, 1024, 2048]
                .into_iter()
                .map(|n| StftConfig::with_fft_size(n).expect("power of two"))
                .collect(),
            alpha: 1.0,
        }
    }
}

impl MrstftConfig {
    pub fn validate(&self) -> Result<()> {
        if self.resolutions.is_empty() {
            return Err(Error::invalid("MRSTFT needs at least one resolution"));
        }
        if !(self.alpha.is_finite() && self.alpha >= 0.0) {
            return Err(Error::invalid(format!("MRSTFT alpha must be >= 0, got {}", self.alpha)));
        }
        self.resolutions.iter().try_for_each(StftConfig::validate)
    }

    /// Shortest signal every resolution can frame.
    pub fn min_len(&self) -> usize {
        self.resolutions.iter().map(|r| r.win_length).max().unwrap_or(1)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossConfig {
    /// Smooth L1 transition point.
    pub beta: f64,
    pub mrstft: MrstftConfig,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            beta: 1.0,
            mrstft: MrstftConfig::default(),
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.beta.is_finite() && self.beta > 0.0) {
            return Err(Error::invalid(format!("smooth L1 beta must be > 0, got {}", self.beta)));
        }
        self.mrstft.validate()
    }
}

fn same_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() == b.shape() {
        Ok(())
    } else {
        Err(Error::ShapeMismatch {
            op,
            lhs: a.shape().to_vec(),
            rhs: b.shape().to_vec(),
        })
    }
}

/// Mean Huber-style loss: `0.5·d²/β` for `|d| < β`, else `|d| − 0.5·β`.
pub fn smooth_l1<'t>(pred: Var<'t>, target: Var<'t>, beta: f64) -> Result<Var<'t>> {
    let (p, t) = (pred.value(), target.value());
    same_shape("smooth_l1", &p, &t)?;
    if p.numel() == 0 {
        return Err(Error::EmptyReduction(p.shape().to_vec()));
    }
    let n = p.numel() as f64;
    let value: f64 = p
        .data()
        .iter()
        .zip(t.data())
        .map(|(a, b)| {
            let d = (a - b).abs();
            if d < beta {
                0.5 * d * d / beta
            } else {
                d - 0.5 * beta
            }
        })
        .sum::<f64>()
        / n;
    Ok(pred.tape().custom_op(Tensor::scalar(value), &[pred, target], move |g| {
        let g = g.data()[0] / n;
        let dp: Vec<f64> = p
            .data()
            .iter()
            .zip(t.data())
            .map(|(a, b)| {
                let d = a - b;
                g * if d.abs() < beta { d / beta } else { d.signum() }
            })
            .collect();
        let dt = dp.iter().map(|v| -v).collect();
        vec![
            Some(Tensor::from_parts(p.shape().to_vec(), dp)),
            Some(Tensor::from_parts(p.shape().to_vec(), dt)),
        ]
    }))
}

/// `‖|Y| − |Ŷ|‖_F / max(‖|Y|‖_F, floor)` with `pred_mag = |Ŷ|`.
pub fn spectral_convergence<'t>(pred_mag: Var<'t>, target_mag: Var<'t>) -> Result<Var<'t>> {
    let (p, t) = (pred_mag.value(), target_mag.value());
    same_shape("spectral_convergence", &p, &t)?;
    let num = p
        .data()
        .iter()
        .zip(t.data())
        .map(|(a, b)| (b - a) * (b - a))
        .sum::<f64>()
        .sqrt();
    let tnorm = t.sum_squares().sqrt();
    let den = tnorm.max(MAGNITUDE_FLOOR);
    let value = num / den;
    Ok(pred_mag
        .tape()
        .custom_op(Tensor::scalar(value), &[pred_mag, target_mag], move |g| {
            let g = g.data()[0];
            let shape = p.shape().to_vec();
            if num == 0.0 {
                return vec![
                    Some(Tensor::zeros(shape.clone())),
                    Some(Tensor::zeros(shape)),
                ];
            }
            let k = g / (num * den);
            let dp: Vec<f64> = p.data().iter().zip(t.data()).map(|(a, b)| k * (a - b)).collect();
            // the denominator only depends on the target above the floor
            let q = if tnorm > MAGNITUDE_FLOOR {
                g * num / (tnorm * tnorm * tnorm)
            } else {
                0.0
            };
            let dt = dp.iter().zip(t.data()).map(|(d, b)| -d - q * b).collect();
            vec![
                Some(Tensor::from_parts(shape.clone(), dp)),
                Some(Tensor::from_parts(shape, dt)),
            ]
        }))
}

/// Mean `|log max(|Y|, floor) − log max(|Ŷ|, floor)|`.
pub fn log_magnitude<'t>(pred_mag: Var<'t>, target_mag: Var<'t>) -> Result<Var<'t>> {
    let (p, t) = (pred_mag.value(), target_mag.value());
    same_shape("log_magnitude", &p, &t)?;
    if p.numel() == 0 {
        return Err(Error::EmptyReduction(p.shape().to_vec()));
    }
    let n = p.numel() as f64;
    let lg = |v: f64| v.max(MAGNITUDE_FLOOR).ln();
    let diffs: Vec<f64> = p.data().iter().zip(t.data()).map(|(&a, &b)| lg(b) - lg(a)).collect();
    let value = diffs.iter().map(|d| d.abs()).sum::<f64>() / n;
    Ok(pred_mag
        .tape()
        .custom_op(Tensor::scalar(value), &[pred_mag, target_mag], move |g| {
            let g = g.data()[0] / n;
            let grad = |mags: &Tensor, sign: f64| -> Tensor {
                let d = mags
                    .data()
                    .iter()
                    .zip(&diffs)
                    .map(|(&m, &d)| {
                        if m > MAGNITUDE_FLOOR && d != 0.0 {
                            sign * g * d.signum() / m
                        } else {
                            0.0
                        }
                    })
                    .collect();
                Tensor::from_parts(mags.shape().to_vec(), d)
            };
            vec![Some(grad(&p, -1.0)), Some(grad(&t, 1.0))]
        }))
}

/// `Σ_m [SC_m + α·SM_m]` over 1-D signals.
pub fn mrstft<'t>(pred: Var<'t>, target: Var<'t>, cfg: &MrstftConfig) -> Result<Var<'t>> {
    cfg.validate()?;
    let (ps, ts) = (pred.shape(), target.shape());
    if ps != ts || ps.len() != 1 {
        return Err(Error::ShapeMismatch {
            op: "mrstft (expects equal 1-D signals)",
            lhs: ps,
            rhs: ts,
        });
    }
    let min = cfg.min_len();
    if ps[0] < min {
        return Err(Error::InputTooShort {
            required: min,
            actual: ps[0],
        });
    }
    let mut total: Option<Var<'t>> = None;
    for res in &cfg.resolutions {
        let pm = stft_magnitude(pred, res)?;
        let tm = stft_magnitude(target, res)?;
        let term = spectral_convergence(pm, tm)?.add(log_magnitude(pm, tm)?.scale(cfg.alpha))?;
        total = Some(match total {
            None => term,
            Some(acc) => acc.add(term)?,
        });
    }
    Ok(total.expect("at least one resolution"))
}

/// Value of [`mrstft`] on plain signals, computed by the same code path.
pub fn mrstft_value(pred: &[f64], target: &[f64], cfg: &MrstftConfig) -> Result<f64> {
    let tape = Tape::inference();
    let p = tape.constant(Tensor::from_vec(pred.to_vec()));
    let t = tape.constant(Tensor::from_vec(target.to_vec()));
    mrstft(p, t, cfg)?.value().item()
}

/// Per-item `smooth_l1 + mrstft`, averaged over items.
///
/// Accepts `[T]` or any `[..×T]` shape, in which case every length-`T` row
/// is one item.
pub fn combined_loss<'t>(pred: Var<'t>, target: Var<'t>, cfg: &LossConfig) -> Result<Var<'t>> {
    let (ps, ts) = (pred.shape(), target.shape());
    if ps != ts || ps.is_empty() {
        return Err(Error::ShapeMismatch {
            op: "combined_loss",
            lhs: ps,
            rhs: ts,
        });
    }
    let len = *ps.last().unwrap();
    let items = ps.iter().product::<usize>() / len.max(1);
    let flat_p = pred.reshape(vec![items * len])?;
    let flat_t = target.reshape(vec![items * len])?;
    let mut total: Option<Var<'t>> = None;
    for i in 0..items {
        let p = flat_p.narrow(0, i * len, len)?;
        let t = flat_t.narrow(0, i * len, len)?;
        let item = smooth_l1(p, t, cfg.beta)?.add(mrstft(p, t, &cfg.mrstft)?)?;
        total = Some(match total {
            None => item,
            Some(acc) => acc.add(item)?,
        });
    }
    let total = total.ok_or_else(|| Error::EmptyReduction(ps.clone()))?;
    Ok(if items == 1 {
        total
    } else {
        total.scale(1.0 / items as f64)
    })
}

/// Value of [`combined_loss`] on plain signals.
pub fn combined_loss_value(pred: &[f64], target: &[f64], cfg: &LossConfig) -> Result<f64> {
    let tape = Tape::inference();
    let p = tape.constant(Tensor::from_vec(pred.to_vec()));
    let t = tape.constant(Tensor::from_vec(target.to_vec()));
    combined_loss(p, t, cfg)?.value().item()
}
