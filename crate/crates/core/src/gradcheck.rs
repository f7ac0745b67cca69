//! Finite-difference verification of tape gradients.
//!
//! Central differences `(f(p+h) − f(p−h)) / 2h` are compared against the
//! reverse pass coordinate by coordinate. Evaluations of the perturbed
//! function run on inference tapes and are spread over the worker pool.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::par::{self, Parallelism};
use crate::tensor::{Tape, Tensor, Var};

#[derive(Clone, Debug)]
pub struct GradcheckConfig {
    pub step: f64,
    pub tolerance: f64,
    /// Denominator floor for the relative error, so coordinates whose true
    /// gradient is ~0 are judged on absolute agreement. Scaled by
    /// `max(1, |f|)` since round-off in the difference quotient grows with
    /// the magnitude of the function value.
    pub abs_floor: f64,
    /// Check at most this many coordinates per group (all when `None`).
    pub coords_per_group: Option<usize>,
    pub seed: u64,
    pub parallelism: Parallelism,
    /// Handle ReLU-type kinks lying within one step of the evaluation
    /// point. A coordinate that fails and whose forward and backward
    /// one-sided quotients disagree is re-measured with `step/100`; if it is
    /// still one-sided there it is counted as skipped instead of failed.
    pub skip_nonsmooth: bool,
}

impl Default for GradcheckConfig {
    fn default() -> Self {
        Self {
            step: 1e-5,
            tolerance: 1e-4,
            abs_floor: 1e-5,
            coords_per_group: None,
            seed: 0,
            parallelism: Parallelism::Parallel,
            skip_nonsmooth: false,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct GroupReport {
    pub name: String,
    pub checked: usize,
    /// Coordinates re-measured with a finer step because of a nearby kink.
    pub refined: usize,
    /// Coordinates excluded as non-differentiable at the current point.
    pub skipped: usize,
    pub max_rel_err: f64,
    pub passed: bool,
}

/// Relative error between an analytic and a numeric derivative.
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    let denom = analytic.abs().max(numeric.abs()).max(floor);
    (analytic - numeric).abs() / denom
}

enum Numeric {
    Direct(f64),
    Refined(f64),
    Kink,
}

/// Checks the gradient of the scalar `f` with respect to every named input.
pub fn check<F>(inputs: &[(String, Tensor)], f: F, cfg: &GradcheckConfig) -> Result<Vec<GroupReport>>
where
    F: for<'t> Fn(&'t Tape, &[Var<'t>]) -> Result<Var<'t>> + Sync,
{
    let tape = Tape::new();
    let vars: Vec<Var<'_>> = inputs.iter().map(|(_, t)| tape.leaf(t.clone())).collect();
    let loss = f(&tape, &vars)?;
    let grads = tape.backward(loss)?;
    let analytic: Vec<Tensor> = vars.iter().map(|&v| grads.wrt(v)).collect();
    drop(grads);

    let eval = |perturbed: &[Tensor]| -> Result<f64> {
        let tape = Tape::inference();
        let vars: Vec<Var<'_>> = perturbed.iter().map(|t| tape.constant(t.clone())).collect();
        f(&tape, &vars)?.value().item()
    };

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut jobs = Vec::new();
    for (g, (_, t)) in inputs.iter().enumerate() {
        let n = t.numel();
        let coords: Vec<usize> = match cfg.coords_per_group {
            Some(k) if k < n => {
                let mut c = sample(&mut rng, n, k).into_vec();
                c.sort_unstable();
                c
            }
            _ => (0..n).collect(),
        };
        jobs.extend(coords.into_iter().map(|c| (g, c)));
    }

    let base: Vec<Tensor> = inputs.iter().map(|(_, t)| t.clone()).collect();
    let f0 = eval(&base)?;
    let floor = cfg.abs_floor * f0.abs().max(1.0);
    let numeric = par::map_slice(&jobs, cfg.parallelism, |&(g, c)| -> Result<Numeric> {
        let mut shifted = base.clone();
        let mut at = |delta: f64| -> Result<f64> {
            let mut data = base[g].data().to_vec();
            data[c] += delta;
            shifted[g] = Tensor::new(base[g].shape().to_vec(), data)?;
            eval(&shifted)
        };
        let ana = analytic[g].data()[c];
        let mut measure = |h: f64| -> Result<(f64, bool)> {
            let (plus, minus) = (at(h)?, at(-h)?);
            let one_sided = relative_error((plus - f0) / h, (f0 - minus) / h, floor);
            Ok(((plus - minus) / (2.0 * h), one_sided >= cfg.tolerance))
        };
        let (d, kinked) = measure(cfg.step)?;
        if !cfg.skip_nonsmooth || !kinked || relative_error(ana, d, floor) < cfg.tolerance {
            return Ok(Numeric::Direct(d));
        }
        match measure(cfg.step / 100.0)? {
            (fine, true) if relative_error(ana, fine, floor) >= cfg.tolerance => Ok(Numeric::Kink),
            (fine, _) => Ok(Numeric::Refined(fine)),
        }
    });

    let mut reports: Vec<GroupReport> = inputs
        .iter()
        .map(|(name, _)| GroupReport {
            name: name.clone(),
            checked: 0,
            refined: 0,
            skipped: 0,
            max_rel_err: 0.0,
            passed: true,
        })
        .collect();
    for (&(g, c), num) in jobs.iter().zip(numeric) {
        let r = &mut reports[g];
        r.checked += 1;
        let num = match num? {
            Numeric::Direct(d) => d,
            Numeric::Refined(d) => {
                r.refined += 1;
                d
            }
            Numeric::Kink => {
                r.skipped += 1;
                continue;
            }
        };
        let err = relative_error(analytic[g].data()[c], num, floor);
        if !(err <= r.max_rel_err) {
            r.max_rel_err = err;
        }
    }
    for r in &mut reports {
        // a group that is mostly kinks has not really been checked
        r.passed = r.max_rel_err < cfg.tolerance && 4 * r.skipped <= r.checked;
    }
    Ok(reports)
}

/// Convenience wrapper: error unless every group passes.
pub fn assert_gradients<F>(inputs: &[(String, Tensor)], f: F, cfg: &GradcheckConfig) -> Result<()>
where
    F: for<'t> Fn(&'t Tape, &[Var<'t>]) -> Result<Var<'t>> + Sync,
{
    let reports = check(inputs, f, cfg)?;
    let failed: Vec<String> = reports
        .iter()
        .filter(|r| !r.passed)
        .map(|r| format!("{} (rel err {:.3e})", r.name, r.max_rel_err))
        .collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Error::invalid(format!("gradient check failed: {}", failed.join(", "))))
    }
}

/// Deterministic uniform(-scale, scale) tensor for tests and checks.
pub fn random_tensor(shape: &[usize], scale: f64, seed: u64) -> Tensor {
    use rand::Rng;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = shape.iter().product();
    Tensor::from_parts(
        shape.to_vec(),
        (0..n).map(|_| rng.random_range(-scale..scale)).collect(),
    )
}
