//! Gradient-check suites for complete models and for the training losses.

use serde::Serialize;

use crate::error::Result;
use crate::gradcheck::{check, random_tensor, GradcheckConfig, GroupReport};
use crate::losses::{combined_loss, log_magnitude, mrstft, smooth_l1, spectral_convergence, LossConfig, MrstftConfig};
use crate::models::{Model, ModelConfig, ReceptiveField};
use crate::nn::{Bound, Mode};
use crate::par::Parallelism;

/// Results for one differentiable function.
#[derive(Clone, Debug, Serialize)]
pub struct SuiteReport {
    pub subject: String,
    pub groups: Vec<GroupReport>,
}

impl SuiteReport {
    pub fn passed(&self) -> bool {
        self.groups.iter().all(|g| g.passed)
    }

    pub fn worst(&self) -> f64 {
        self.groups.iter().map(|g| g.max_rel_err).fold(0.0, f64::max)
    }
}

/// Checks a randomly initialised model in training mode: the input, the
/// conditioning vector and every named parameter are separate groups. The
/// scalar is a fixed random projection of the output. With `fault` the
/// backward pass of the output is deliberately scaled, which must fail.
pub fn check_model(
    config: &ModelConfig,
    seed: u64,
    coords_per_group: Option<usize>,
    fault: bool,
    parallelism: Parallelism,
) -> Result<SuiteReport> {
    let model = Model::build(config.clone(), seed)?;
    let n = match model.receptive_field() {
        ReceptiveField::Samples(rf) => rf + 8,
        ReceptiveField::Unbounded => 24,
    };
    let s = seed.wrapping_mul(7919);
    let names: Vec<String> = model.params().names().map(String::from).collect();
    let mut inputs = vec![
        ("input".to_string(), random_tensor(&[2, 1, n], 0.8, s + 1)),
        ("cond".to_string(), random_tensor(&[2, config.cond_dim], 1.0, s + 2)),
    ];
    inputs.extend(model.params().iter().map(|(k, v)| (k.to_string(), v.clone())));
    let weights = random_tensor(&[2, 1, n], 1.0, s + 3);
    let cfg = GradcheckConfig {
        coords_per_group,
        seed: s + 4,
        skip_nonsmooth: true,
        parallelism,
        ..GradcheckConfig::default()
    };
    let groups = check(
        &inputs,
        |tape, vars| {
            let p = Bound::from_vars(names.iter().cloned().zip(vars[2..].iter().copied()));
            let mut y = model.forward(&p, vars[0], vars[1], Mode::Train)?;
            if fault {
                y = tape.custom_op(y.value(), &[y], |g| vec![Some(g.map(|v| 1.5 * v))]);
            }
            Ok(y.mul(tape.constant(weights.clone()))?.sum())
        },
        &cfg,
    )?;
    Ok(SuiteReport {
        subject: format!("{} (seed {seed})", config.kind),
        groups,
    })
}

/// Length of the signals used for the loss checks: long enough for the
/// default 2048-point resolution.
pub const LOSS_CHECK_LEN: usize = 4096;

/// Checks every loss with respect to both of its arguments.
pub fn check_losses(seed: u64, coords_per_group: Option<usize>, parallelism: Parallelism) -> Result<Vec<SuiteReport>> {
    let s = seed.wrapping_mul(104_729);
    let cfg = GradcheckConfig {
        coords_per_group,
        seed: s,
        parallelism,
        ..GradcheckConfig::default()
    };
    let pair = |shape: &[usize], scale: f64| {
        vec![
            ("pred".to_string(), random_tensor(shape, scale, s + 1)),
            ("target".to_string(), random_tensor(shape, scale, s + 2)),
        ]
    };
    // magnitudes stay clear of the floor
    let mags = |shape: &[usize]| {
        vec![
            ("pred_mag".to_string(), random_tensor(shape, 1.0, s + 3).map(|v| v.abs() + 0.05)),
            ("target_mag".to_string(), random_tensor(shape, 1.0, s + 4).map(|v| v.abs() + 0.05)),
        ]
    };
    let loss_cfg = LossConfig::default();
    let mr_cfg = MrstftConfig::default();
    let mut out = Vec::new();
    let mut run = |subject: &str, groups: Vec<GroupReport>| {
        out.push(SuiteReport {
            subject: format!("{subject} (seed {seed})"),
            groups,
        })
    };
    run(
        "smooth_l1",
        check(&pair(&[256], 2.0), |_, v| smooth_l1(v[0], v[1], loss_cfg.beta), &cfg)?,
    );
    run(
        "spectral_convergence",
        check(&mags(&[6, 33]), |_, v| spectral_convergence(v[0], v[1]), &cfg)?,
    );
    run(
        "log_magnitude",
        check(&mags(&[6, 33]), |_, v| log_magnitude(v[0], v[1]), &cfg)?,
    );
    run(
        "mrstft",
        check(&pair(&[LOSS_CHECK_LEN], 0.8), |_, v| mrstft(v[0], v[1], &mr_cfg), &cfg)?,
    );
    run(
        "combined_loss",
        check(&pair(&[2, LOSS_CHECK_LEN], 0.8), |_, v| combined_loss(v[0], v[1], &loss_cfg), &cfg)?,
    );
    Ok(out)
}
