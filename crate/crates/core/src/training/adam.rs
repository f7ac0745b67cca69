use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::ParamStore;
use crate::tensor::Tensor;

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPSILON: f64 = 1e-8;

/// First and second moment estimates, one buffer per parameter in store
/// order, plus the step counter.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub step: u64,
    /// Steps rejected because a gradient was not finite.
    pub skipped: u64,
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
}

/// Counters stored in checkpoint headers; the moments travel as blobs.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AdamCounters {
    pub step: u64,
    pub skipped: u64,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub enum StepOutcome {
    Applied,
    SkippedNonFinite,
}

impl AdamState {
    pub fn new(params: &ParamStore) -> Self {
        let zeros: Vec<Vec<f64>> = params.iter().map(|(_, t)| vec![0.0; t.numel()]).collect();
        Self {
            step: 0,
            skipped: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn counters(&self) -> AdamCounters {
        AdamCounters {
            step: self.step,
            skipped: self.skipped,
        }
    }
}

fn to_f32(x: f64) -> f64 {
    x as f32 as f64
}

/// One bias-corrected Adam update.
///
/// Arithmetic is `f64`; parameters and both moments are rounded to `f32`
/// afterwards, which is the precision they are checkpointed at. A step with
/// any non-finite gradient changes nothing except the skip counter.
pub fn adam_step(
    params: &mut ParamStore,
    grads: &[Tensor],
    state: &mut AdamState,
    lr: f64,
) -> Result<StepOutcome> {
    if grads.len() != params.len() || state.m.len() != params.len() || state.v.len() != params.len() {
        return Err(Error::invalid(format!(
            "adam: {} parameters, {} gradients, {} moment buffers",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    for ((name, p), g) in params.iter().zip(grads) {
        if p.shape() != g.shape() {
            return Err(Error::ShapeMismatch {
                op: "adam gradient",
                lhs: p.shape().to_vec(),
                rhs: g.shape().to_vec(),
            });
        }
        if !g.is_finite() {
            state.skipped += 1;
            log::warn!("non-finite gradient for {name}; optimizer step skipped");
            return Ok(StepOutcome::SkippedNonFinite);
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - BETA1.powi(t);
    let c2 = 1.0 - BETA2.powi(t);
    let names: Vec<String> = params.names().map(str::to_owned).collect();
    for (i, name) in names.iter().enumerate() {
        let p = params.get(name).expect("name from store");
        let (m, v) = (&mut state.m[i], &mut state.v[i]);
        let updated: Vec<f64> = p
            .data()
            .iter()
            .zip(grads[i].data())
            .zip(m.iter_mut().zip(v.iter_mut()))
            .map(|((&p, &g), (m, v))| {
                let m_new = BETA1 * *m + (1.0 - BETA1) * g;
                let v_new = BETA2 * *v + (1.0 - BETA2) * g * g;
                let step = lr * (m_new / c1) / ((v_new / c2).sqrt() + EPSILON);
                *m = to_f32(m_new);
                *v = to_f32(v_new);
                to_f32(p - step)
            })
            .collect();
        params.set(name, Tensor::new(p.shape().to_vec(), updated)?)?;
    }
    Ok(StepOutcome::Applied)
}

/// Scales `grads` in place so their global L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_global_norm(grads: &mut [Tensor], max_norm: f64) -> f64 {
    let norm = grads.iter().map(Tensor::sum_squares).sum::<f64>().sqrt();
    if norm.is_finite() && norm > max_norm {
        let s = max_norm / norm;
        for g in grads.iter_mut() {
            *g = g.map(|x| x * s);
        }
    }
    norm
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store(values: &[f64]) -> ParamStore {
        let mut s = ParamStore::new();
        s.insert("w", Tensor::from_vec(values.to_vec()));
        s
    }

    #[test]
    fn zero_gradient_leaves_params_and_decays_moments() {
        let mut p = store(&[0.5, -0.25]);
        let mut st = AdamState::new(&p);
        st.m[0] = vec![0.5, 0.5];
        st.v[0] = vec![0.25, 0.25];
        st.step = 3;
        let before = p.clone();
        adam_step(&mut p, &[Tensor::zeros(vec![2])], &mut st, 0.01).unwrap();
        assert_ne!(p, before, "nonzero momentum still moves parameters");

        let mut p = store(&[0.5, -0.25]);
        let mut st = AdamState::new(&p);
        adam_step(&mut p, &[Tensor::zeros(vec![2])], &mut st, 0.01).unwrap();
        assert_eq!(p, store(&[0.5, -0.25]));
        assert_eq!(st.m[0], vec![0.0, 0.0]);
    }

    #[test]
    fn non_finite_gradient_skips() {
        let mut p = store(&[1.0]);
        let mut st = AdamState::new(&p);
        let out = adam_step(&mut p, &[Tensor::from_vec(vec![f64::NAN])], &mut st, 0.1).unwrap();
        assert_eq!(out, StepOutcome::SkippedNonFinite);
        assert_eq!((st.step, st.skipped), (0, 1));
        assert_eq!(p, store(&[1.0]));
    }

    #[test]
    fn clipping_bounds_the_norm() {
        let mut g = vec![Tensor::from_vec(vec![3.0]), Tensor::from_vec(vec![4.0])];
        assert_eq!(clip_global_norm(&mut g, 1.0), 5.0);
        let n: f64 = g.iter().map(Tensor::sum_squares).sum::<f64>().sqrt();
        assert!((n - 1.0).abs() < 1e-12);
        let mut small = vec![Tensor::from_vec(vec![0.1])];
        clip_global_norm(&mut small, 1.0);
        assert_eq!(small[0].data(), &[0.1]);
    }
}
