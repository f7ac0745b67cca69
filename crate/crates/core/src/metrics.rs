//! Evaluation metrics (ESR, MRSTFT, real-time factor) and the naive and
//! dummy-regressor reference baselines.

use std::fmt::Write as _;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::audio::SamplePair;
use crate::error::{Error, Result};
use crate::losses::{mrstft_value, MrstftConfig};
use crate::models::Model;
use crate::par::{self, Parallelism};

/// Error-to-signal ratio `Σ(y−ŷ)² / Σy²`.
pub fn esr(pred: &[f64], target: &[f64]) -> Result<f64> {
    if pred.len() != target.len() {
        return Err(Error::ShapeMismatch {
            op: "esr",
            lhs: vec![pred.len()],
            rhs: vec![target.len()],
        });
    }
    let energy: f64 = target.iter().map(|y| y * y).sum();
    if energy == 0.0 {
        return Err(Error::SilentTarget);
    }
    let err: f64 = pred.iter().zip(target).map(|(p, y)| (y - p) * (y - p)).sum();
    Ok(err / energy)
}

/// The multi-resolution STFT loss with default resolutions, as a metric.
pub fn mrstft_metric(pred: &[f64], target: &[f64]) -> Result<f64> {
    mrstft_value(pred, target, &MrstftConfig::default())
}

/// One row of an evaluation table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub name: String,
    pub esr: f64,
    pub mrstft: f64,
    /// Absent for baselines, which involve no processing.
    pub rtf: Option<f64>,
}

/// Per-item ESR and MRSTFT averaged over items.
pub fn score_items(
    name: &str,
    pairs: &[&SamplePair],
    parallelism: Parallelism,
    predict: impl Fn(usize, &SamplePair) -> Result<Vec<f64>> + Sync,
) -> Result<MetricRow> {
    if pairs.is_empty() {
        return Err(Error::EmptySplit(name.to_string()));
    }
    let scores = par::map_range(pairs.len(), parallelism, |i| -> Result<(f64, f64)> {
        let pair = pairs[i];
        let pred = predict(i, pair)?;
        let target = &pair.wet.samples;
        Ok((esr(&pred, target)?, mrstft_metric(&pred, target)?))
    });
    let n = pairs.len() as f64;
    let (mut e, mut m) = (0.0, 0.0);
    for s in scores {
        let (a, b) = s?;
        e += a;
        m += b;
    }
    Ok(MetricRow {
        name: name.to_string(),
        esr: e / n,
        mrstft: m / n,
        rtf: None,
    })
}

/// NB: the prediction is the dry input itself.
pub fn naive_baseline(pairs: &[&SamplePair], parallelism: Parallelism) -> Result<MetricRow> {
    score_items("NB", pairs, parallelism, |_, p| Ok(p.dry.samples.clone()))
}

/// Uniform white noise in `[−1, 1]`, one independent stream per item
/// derived from `seed`.
pub fn dummy_prediction(len: usize, seed: u64, item: usize) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(item as u64);
    (0..len).map(|_| rng.random_range(-1.0..=1.0)).collect()
}

/// DR: the prediction is noise uncorrelated with input and target.
pub fn dummy_regressor(pairs: &[&SamplePair], seed: u64, parallelism: Parallelism) -> Result<MetricRow> {
    score_items("DR", pairs, parallelism, |i, p| {
        Ok(dummy_prediction(p.wet.len(), seed, i))
    })
}

/// Model metrics over full clips.
pub fn evaluate_model(name: &str, model: &Model, pairs: &[&SamplePair], parallelism: Parallelism) -> Result<MetricRow> {
    score_items(name, pairs, parallelism, |_, p| model.process(&p.dry.samples, &p.cond))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RtfReport {
    /// Median of `seconds / clip_seconds` over the timed repeats.
    pub median: f64,
    pub runs: Vec<f64>,
    pub clip_seconds: f64,
    /// FNV-1a digest of the output bits; identical across repeats.
    pub output_digest: u64,
}

impl RtfReport {
    pub fn real_time_capable(&self) -> bool {
        self.median <= 1.0
    }
}

fn digest(samples: &[f64]) -> u64 {
    samples.iter().fold(0xcbf29ce484222325, |h, v| {
        v.to_bits()
            .to_le_bytes()
            .iter()
            .fold(h, |h, &b| (h ^ b as u64).wrapping_mul(0x100000001b3))
    })
}

/// Times `process` on one warm-up plus `repeats` runs, on the calling
/// thread. Fails if repeated runs disagree in output.
pub fn measure_rtf(
    clip_seconds: f64,
    repeats: usize,
    mut process: impl FnMut() -> Result<Vec<f64>>,
) -> Result<RtfReport> {
    if repeats < 3 {
        return Err(Error::invalid(format!("RTF needs at least 3 repeats, got {repeats}")));
    }
    if !(clip_seconds > 0.0) {
        return Err(Error::invalid("RTF clip length must be positive"));
    }
    let reference = digest(&process()?);
    let mut runs = Vec::with_capacity(repeats);
    for _ in 0..repeats {
        let start = Instant::now();
        let out = process()?;
        runs.push(start.elapsed().as_secs_f64() / clip_seconds);
        if digest(&out) != reference {
            return Err(Error::invalid("model output changed between timing runs"));
        }
    }
    let mut sorted = runs.clone();
    sorted.sort_by(f64::total_cmp);
    let mid = sorted.len() / 2;
    let median = if sorted.len() % 2 == 1 {
        sorted[mid]
    } else {
        0.5 * (sorted[mid - 1] + sorted[mid])
    };
    Ok(RtfReport {
        median,
        runs,
        clip_seconds,
        output_digest: reference,
    })
}

/// RTF of `model` on a deterministic noise clip of `clip_seconds`.
pub fn model_rtf(model: &Model, clip_seconds: f64, repeats: usize, seed: u64) -> Result<RtfReport> {
    let sr = model.config().sample_rate as f64;
    let len = (clip_seconds * sr).round() as usize;
    let x: Vec<f64> = dummy_prediction(len, seed, 0).iter().map(|v| 0.5 * v).collect();
    let cond = vec![0.5; model.config().cond_dim];
    measure_rtf(len as f64 / sr, repeats, || model.process(&x, &cond))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub rows: Vec<MetricRow>,
    pub items: usize,
    pub hardware: String,
    pub seed: u64,
}

impl EvalReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Aligned plain-text table: Model, ESR, MR, RTF.
    pub fn to_table(&self) -> String {
        let width = self.rows.iter().map(|r| r.name.len()).max().unwrap_or(0).max(5);
        let mut out = String::new();
        let _ = writeln!(out, "{:<width$}  {:>10}  {:>10}  {:>10}", "Model", "ESR", "MR", "RTF");
        for r in &self.rows {
            let rtf = r.rtf.map_or_else(|| "-".to_string(), |v| format!("{v:.4}"));
            let _ = writeln!(out, "{:<width$}  {:>10.4}  {:>10.4}  {:>10}", r.name, r.esr, r.mrstft, rtf);
        }
        let _ = writeln!(out, "items: {}  seed: {}  hardware: {}", self.items, self.seed, self.hardware);
        out
    }
}

/// OS, architecture, CPU model where known, and worker threads.
pub fn hardware_descriptor() -> String {
    let cpu = std::fs::read_to_string("/proc/cpuinfo")
        .ok()
        .and_then(|s| {
            s.lines()
                .find(|l| l.starts_with("model name"))
                .and_then(|l| l.split(':').nth(1))
                .map(|v| v.trim().to_string())
        })
        .unwrap_or_else(|| "unknown cpu".to_string());
    let threads = std::thread::available_parallelism().map_or(1, |n| n.get());
    format!(
        "{}-{}, {cpu}, {threads} hw threads, {} workers",
        std::env::consts::OS,
        std::env::consts::ARCH,
        par::current_num_threads()
    )
}
