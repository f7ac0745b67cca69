use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::Serialize;
use springverb::audio::wav::{read_wav, read_wav_info, write_wav, BitDepth};
use springverb::audio::{build_manifest, AudioClip, Dataset, DatasetManifest, SamplePair, Split};
use springverb::features::analyze_pairs;
use springverb::metrics::{dummy_regressor, evaluate_model, hardware_descriptor, model_rtf, naive_baseline, EvalReport, RtfReport};
use springverb::models::{Model, ModelConfig, ModelKind};
use springverb::par::Parallelism;
use springverb::training::{self, Checkpoint, TrainConfig, TrainOptions, BEST_CHECKPOINT, LAST_CHECKPOINT};
use springverb::verify::{check_losses, check_model, SuiteReport};

use crate::run_config::{resolve, DataPaths, Overrides};
use crate::{AnalyzeArgs, DataArgs, DepthArg, EvalArgs, Format, GradcheckArgs, ProcessArgs, RtfArgs, TrainArgs, UsageError};

pub const RUN_CONFIG: &str = "run_config.json";
pub const MANIFEST: &str = "manifest.json";

/// Repeats used for the model RTF column of `eval`.
const EVAL_RTF_REPEATS: usize = 3;

fn manifest_from(data: &DataPaths, seed: u64) -> Result<DatasetManifest> {
    match (&data.manifest, &data.dry_dir, &data.wet_dir) {
        (Some(m), _, _) => Ok(DatasetManifest::load(m)?),
        (None, Some(dry), Some(wet)) => Ok(build_manifest(dry, wet, seed, None)?),
        _ => Err(UsageError::new("no data given: pass --manifest or both --dry-dir and --wet-dir").into()),
    }
}

impl From<&DataArgs> for DataPaths {
    fn from(a: &DataArgs) -> Self {
        Self {
            dry_dir: a.dry_dir.clone(),
            wet_dir: a.wet_dir.clone(),
            manifest: a.manifest.clone(),
        }
    }
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

pub fn train(a: TrainArgs, par: Parallelism) -> Result<bool> {
    let overrides = Overrides {
        model: a.model,
        sample_rate: a.sample_rate,
        seed: a.seed,
        epochs: a.epochs,
        batch_size: a.batch_size,
        lr: a.lr,
        data: (&a.data).into(),
        out: a.out.clone(),
    };
    let resolved = resolve(a.config.as_deref(), &overrides)?;
    let mut run = resolved.config;
    let Some(out) = run.out.clone() else {
        return Err(UsageError::new("no output directory: pass --out or set \"out\" in the config").into());
    };
    let manifest = manifest_from(&run.data, run.training.seed)?;
    let data = Dataset::load(&manifest)?;
    let t = &mut run.training;
    if !resolved.sample_rate_pinned {
        t.model.sample_rate = data.sample_rate;
    }
    if !resolved.cond_dim_pinned {
        t.model.cond_dim = data.cond_dim;
    }
    if data.sample_rate != t.model.sample_rate {
        bail!(
            "corpus is {} Hz but the model is configured for {} Hz",
            data.sample_rate,
            t.model.sample_rate
        );
    }
    if t.model.sample_rate == 48_000 && t.batch_size() == 64 {
        log::warn!("batch size 64 at 48 kHz: the reference protocol reduces it to 16 for memory");
    }
    t.validate()?;

    fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
    manifest.save(out.join(MANIFEST))?;
    write_json(&out.join(RUN_CONFIG), &run)?;

    let resume = if a.resume {
        let path = out.join(LAST_CHECKPOINT);
        let mut ck = Checkpoint::load(&path).with_context(|| format!("resuming from {}", path.display()))?;
        ck.config.max_epochs = run.training.max_epochs;
        log::info!("resuming after epoch {}", ck.epoch);
        Some(ck)
    } else {
        None
    };
    let outcome = training::train(
        &run.training,
        &data,
        TrainOptions {
            out_dir: Some(out.clone()),
            resume,
            parallelism: par,
        },
    )?;
    let best_val = outcome.best.best_val().unwrap_or(f64::NAN);
    println!(
        "{}: {} epochs, best validation loss {best_val:.6} at epoch {}",
        run.training.model.kind,
        outcome.last.epoch,
        outcome.best.epoch
    );
    println!("best checkpoint: {}", out.join(BEST_CHECKPOINT).display());
    Ok(true)
}

/// `eval` output: the report together with the configuration that produced
/// the checkpoint.
#[derive(Serialize)]
struct EvalOutput<'a> {
    checkpoint: &'a Path,
    split: Split,
    config: &'a TrainConfig,
    epoch: usize,
    report: &'a EvalReport,
}

pub fn eval(a: EvalArgs, par: Parallelism) -> Result<bool> {
    let ck = Checkpoint::load(&a.checkpoint)?;
    let seed = a.seed.unwrap_or(ck.config.seed);
    let manifest = manifest_from(&(&a.data).into(), seed)?;
    let model_rate = ck.model.config().sample_rate;
    if manifest.sample_rate != model_rate {
        bail!(
            "sample-rate mismatch: checkpoint is {model_rate} Hz, corpus is {} Hz",
            manifest.sample_rate
        );
    }
    let data = Dataset::load(&manifest)?;
    let pairs = data.split(a.split);
    if pairs.is_empty() {
        bail!("the {} split is empty", a.split);
    }
    let mut row = evaluate_model(ck.model.config().kind.name(), &ck.model, &pairs, par)?;
    if a.rtf_duration_s > 0.0 {
        row.rtf = Some(model_rtf(&ck.model, a.rtf_duration_s, EVAL_RTF_REPEATS, seed)?.median);
    }
    let report = EvalReport {
        rows: vec![row, naive_baseline(&pairs, par)?, dummy_regressor(&pairs, seed, par)?],
        items: pairs.len(),
        hardware: hardware_descriptor(),
        seed,
    };
    let output = EvalOutput {
        checkpoint: &a.checkpoint,
        split: a.split,
        config: &ck.config,
        epoch: ck.epoch,
        report: &report,
    };
    if let Some(path) = &a.report {
        write_json(path, &output)?;
    }
    if a.json {
        println!("{}", serde_json::to_string_pretty(&output)?);
    } else {
        print!("{}", report.to_table());
    }
    Ok(true)
}

pub fn process(a: ProcessArgs) -> Result<bool> {
    let ck = Checkpoint::load(&a.checkpoint)?;
    let cfg = ck.model.config();
    let info = read_wav_info(&a.input)?;
    let clip = read_wav(&a.input)?;
    if clip.sample_rate != cfg.sample_rate {
        if !a.force {
            bail!(
                "{} is {} Hz but the model was trained at {} Hz (use --force to process anyway)",
                a.input.display(),
                clip.sample_rate,
                cfg.sample_rate
            );
        }
        log::warn!("processing {} Hz audio with a {} Hz model", clip.sample_rate, cfg.sample_rate);
    }
    let cond = a.cond.unwrap_or_else(|| vec![0.0; cfg.cond_dim]);
    if cond.len() != cfg.cond_dim {
        return Err(UsageError::new(format!(
            "--cond has {} values, the model expects {}",
            cond.len(),
            cfg.cond_dim
        ))
        .into());
    }
    let mut out = ck.model.process(&clip.samples, &cond)?;
    let mut clamped = 0;
    for v in &mut out {
        if !v.is_finite() {
            bail!("model produced a non-finite sample");
        }
        if v.abs() > 1.0 {
            *v = v.clamp(-1.0, 1.0);
            clamped += 1;
        }
    }
    let depth = match a.bit_depth {
        Some(DepthArg::Pcm16) => BitDepth::Pcm16,
        Some(DepthArg::Pcm24) => BitDepth::Pcm24,
        Some(DepthArg::Float32) => BitDepth::Float32,
        None => info.bit_depth,
    };
    let n = out.len();
    write_wav(&AudioClip::new(out, clip.sample_rate), &a.output, depth)?;
    println!(
        "wrote {} ({n} samples at {} Hz, {clamped} clamped)",
        a.output.display(),
        clip.sample_rate
    );
    Ok(true)
}

#[derive(Serialize)]
struct RtfOutput<'a> {
    model: &'a ModelConfig,
    hardware: String,
    min: f64,
    max: f64,
    report: &'a RtfReport,
}

pub fn benchmark_rtf(a: RtfArgs) -> Result<bool> {
    let model = match (&a.checkpoint, a.model) {
        (Some(path), _) => Checkpoint::load(path)?.model,
        (None, Some(kind)) => Model::build(
            ModelConfig {
                sample_rate: a.sample_rate,
                ..ModelConfig::default_for(kind)
            },
            a.seed,
        )?,
        (None, None) => unreachable!("clap requires --checkpoint or --model"),
    };
    let report = model_rtf(&model, a.duration_s, a.repeats, a.seed)?;
    let min = report.runs.iter().copied().fold(f64::INFINITY, f64::min);
    let max = report.runs.iter().copied().fold(0.0, f64::max);
    let out = RtfOutput {
        model: model.config(),
        hardware: hardware_descriptor(),
        min,
        max,
        report: &report,
    };
    if a.json {
        println!("{}", serde_json::to_string_pretty(&out)?);
    } else {
        let cfg = model.config();
        println!("model:    {} @ {} Hz ({} parameters)", cfg.kind, cfg.sample_rate, model.param_count());
        println!("clip:     {:.3} s x {} repeats", report.clip_seconds, report.runs.len());
        println!("RTF:      median {:.4}  min {min:.4}  max {max:.4}", report.median);
        println!("realtime: {}", if report.real_time_capable() { "yes" } else { "no" });
        println!("hardware: {}", out.hardware);
    }
    Ok(true)
}

pub fn analyze_dataset(a: AnalyzeArgs, par: Parallelism) -> Result<bool> {
    let manifest = manifest_from(&(&a.data).into(), a.seed)?;
    let data = Dataset::load(&manifest)?;
    let pairs: Vec<&SamplePair> = match a.split {
        Some(s) => data.split(s),
        None => data.pairs.iter().collect(),
    };
    let features = analyze_pairs(&pairs, par)?;
    let text = match a.format {
        Format::Table => features.to_table(),
        Format::Csv => features.to_csv(),
        Format::Json => serde_json::to_string_pretty(&features)? + "\n",
    };
    match &a.output {
        Some(path) => fs::write(path, &text).with_context(|| format!("writing {}", path.display()))?,
        None => print!("{text}"),
    }
    Ok(true)
}

pub fn gradcheck(a: GradcheckArgs, par: Parallelism) -> Result<bool> {
    let mut cfg = ModelConfig::default_for(a.model);
    if let Some(sr) = a.sample_rate {
        cfg.sample_rate = sr;
    }
    let coords = (a.coords > 0).then_some(a.coords);
    let mut suites = vec![check_model(&cfg, a.seed, coords, a.inject_fault, par)?];
    if a.losses {
        suites.extend(check_losses(a.seed, coords, par)?);
    }
    let passed = suites.iter().all(SuiteReport::passed);
    if a.json {
        println!("{}", serde_json::to_string_pretty(&suites)?);
    } else {
        print!("{}", gradcheck_table(&suites));
    }
    println!("{}", if passed { "PASS" } else { "FAIL" });
    Ok(passed)
}

fn gradcheck_table(suites: &[SuiteReport]) -> String {
    let width = suites
        .iter()
        .flat_map(|s| s.groups.iter().map(|g| g.name.len()))
        .max()
        .unwrap_or(0)
        .max(5);
    let mut out = String::new();
    for s in suites {
        out += &format!("{}\n", s.subject);
        out += &format!("  {:<width$}  {:>7}  {:>7}  {:>11}  status\n", "group", "checked", "skipped", "max rel err");
        for g in &s.groups {
            out += &format!(
                "  {:<width$}  {:>7}  {:>7}  {:>11.3e}  {}\n",
                g.name,
                g.checked,
                g.skipped,
                g.max_rel_err,
                if g.passed { "ok" } else { "FAIL" }
            );
        }
    }
    out
}

pub fn list_models() -> Result<bool> {
    println!("{:<8}  {:>8}  {:<22}  description", "kind", "params", "receptive field");
    for kind in ModelKind::ALL {
        let cfg = ModelConfig::default_for(kind);
        println!(
            "{kind:<8}  {:>8}  {:<22}  {}",
            cfg.param_count(),
            cfg.receptive_field().to_string(),
            kind.description()
        );
    }
    Ok(true)
}
