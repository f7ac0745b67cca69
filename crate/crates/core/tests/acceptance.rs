//! Acceptance suite. Prints one `PASS`/`FAIL`/`SKIP` line per criterion
//! (with indented detail lines above it) and exits non-zero if any
//! criterion fails.
//!
//! Run a subset by naming criteria: `cargo test --test acceptance -- overfit rtf`.

use std::f64::consts::{E, PI};
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use springverb::audio::{build_manifest, Dataset, DatasetManifest, SamplePair, Split};
use springverb::dsp::StftConfig;
use springverb::features::{hfc, leq, yin_pitch, YinConfig};
use springverb::gradcheck::random_tensor;
use springverb::losses::{combined_loss_value, mrstft_value, LossConfig, MrstftConfig};
use springverb::metrics::{esr, model_rtf, naive_baseline};
use springverb::models::{Model, ModelConfig, ModelKind, ReceptiveField};
use springverb::nn::ParamStore;
use springverb::par::Parallelism;
use springverb::synth::{pluck_pair, sine, square};
use springverb::training::{
    adam_step, train, AdamState, Checkpoint, PlateauScheduler, SchedulerConfig, TrainConfig, TrainOptions,
    LAST_CHECKPOINT,
};
use springverb::verify::{check_losses, check_model};
use springverb::Tensor;

enum Verdict {
    Pass(String),
    Fail(String),
    Skip(String),
}

type Outcome = Result<Verdict, Box<dyn std::error::Error>>;

fn verdict(ok: bool, detail: String) -> Verdict {
    if ok {
        Verdict::Pass(detail)
    } else {
        Verdict::Fail(detail)
    }
}

fn main() -> ExitCode {
    let filters: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let criteria: [(&str, fn() -> Outcome); 9] = [
        ("gradient_integrity", gradient_integrity),
        ("metric_oracles", metric_oracles),
        ("causality", causality),
        ("overfit_smoke", overfit_smoke),
        ("baseline_reproduction", baseline_reproduction),
        ("scheduler_optimizer", scheduler_optimizer),
        ("determinism_resume", determinism_resume),
        ("rtf_sanity", rtf_sanity),
        ("feature_sanity", feature_sanity),
    ];
    let mut failed = 0;
    for (name, run) in criteria {
        if !filters.is_empty() && !filters.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        let started = Instant::now();
        let (tag, detail) = match run() {
            Ok(Verdict::Pass(d)) => ("PASS", d),
            Ok(Verdict::Skip(d)) => ("SKIP", d),
            Ok(Verdict::Fail(d)) => ("FAIL", d),
            Err(e) => ("FAIL", format!("error: {e}")),
        };
        if tag == "FAIL" {
            failed += 1;
        }
        println!("{tag} {name} ({:.1} s): {detail}", started.elapsed().as_secs_f64());
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}

/// Every default model and every loss, seeds 1 to 3, within five minutes.
fn gradient_integrity() -> Outcome {
    let started = Instant::now();
    let (mut suites, mut bad, mut worst) = (0, Vec::new(), 0.0f64);
    for seed in 1..=3 {
        for kind in ModelKind::ALL {
            let r = check_model(&ModelConfig::default_for(kind), seed, Some(4), false, Parallelism::Parallel)?;
            suites += 1;
            worst = worst.max(r.worst());
            if !r.passed() {
                bad.push(r.subject);
            }
        }
        for r in check_losses(seed, Some(48), Parallelism::Parallel)? {
            suites += 1;
            worst = worst.max(r.worst());
            if !r.passed() {
                bad.push(r.subject);
            }
        }
    }
    let secs = started.elapsed().as_secs_f64();
    Ok(verdict(
        bad.is_empty() && secs < 300.0,
        format!(
            "{suites} suites, worst rel err {worst:.2e} (< 1e-4), {secs:.0} s (< 300 s){}",
            if bad.is_empty() { String::new() } else { format!(", failing: {}", bad.join(", ")) }
        ),
    ))
}

/// Magnitudes by direct DFT summation.
fn naive_stft_mag(x: &[f64], cfg: &StftConfig) -> Vec<f64> {
    let (n, w, hop) = (cfg.fft_size, cfg.win_length, cfg.hop);
    let off = (n - w) / 2;
    let window: Vec<f64> = (0..w).map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / w as f64).cos()).collect();
    let frames = 1 + (x.len() - w) / hop;
    let mut out = Vec::new();
    for f in 0..frames {
        for k in 0..=n / 2 {
            let (mut re, mut im) = (0.0, 0.0);
            for i in 0..w {
                let s = x[f * hop + i] * window[i];
                let ang = -2.0 * PI * (k * (off + i)) as f64 / n as f64;
                re += s * ang.cos();
                im += s * ang.sin();
            }
            out.push((re * re + im * im).sqrt());
        }
    }
    out
}

fn metric_oracles() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut esr_err = 0.0f64;
    for i in 0..100 {
        let n = rng.random_range(1..600);
        let y = random_tensor(&[n], 1.0, 3 * i).into_vec();
        let p = random_tensor(&[n], 1.5, 3 * i + 1).into_vec();
        let (mut num, mut den) = (0.0, 0.0);
        for k in 0..n {
            num += (y[k] - p[k]) * (y[k] - p[k]);
            den += y[k] * y[k];
        }
        esr_err = esr_err.max((esr(&p, &y)? - num / den).abs());
    }

    let x = random_tensor(&[4096], 0.7, 99).into_vec();
    let identical = mrstft_value(&x, &x, &MrstftConfig::default())?;

    let res = StftConfig::new(64, 16, 64)?;
    let alpha = 0.7;
    let single = MrstftConfig {
        resolutions: vec![res.clone()],
        alpha,
    };
    let target = random_tensor(&[512], 0.5, 7).into_vec();
    let mags = naive_stft_mag(&target, &res);
    let floor_log = 1e-7f64.ln();
    let mean_log_gap = mags.iter().map(|m| (m.max(1e-7).ln() - floor_log).abs()).sum::<f64>() / mags.len() as f64;
    let scaled = |a: f64| target.iter().map(|v| a * v).collect::<Vec<f64>>();
    let cases = [
        ("zero prediction", vec![0.0; target.len()], 1.0 + alpha * mean_log_gap),
        ("e x target", scaled(E), (E - 1.0) + alpha),
        ("2 x target", scaled(2.0), 1.0 + alpha * 2f64.ln()),
    ];
    let mut closed_err = 0.0f64;
    for (_, pred, want) in &cases {
        closed_err = closed_err.max((mrstft_value(pred, &target, &single)? - want).abs());
    }
    Ok(verdict(
        esr_err < 1e-10 && identical == 0.0 && closed_err < 1e-6,
        format!(
            "ESR vs brute force on 100 pairs max err {esr_err:.1e} (< 1e-10); MRSTFT(x, x) = {identical}; \
             closed-form single-resolution cases max err {closed_err:.1e} (< 1e-6)"
        ),
    ))
}

fn causality() -> Outcome {
    let mut notes = Vec::new();
    let mut ok = true;
    for kind in ModelKind::ALL {
        let model = Model::build(ModelConfig::default_for(kind), 5)?;
        let len = match model.receptive_field() {
            ReceptiveField::Samples(rf) => rf + 300,
            ReceptiveField::Unbounded => 400,
        };
        let x = random_tensor(&[len], 0.5, 6).into_vec();
        let cond = [0.3, -0.2];
        let y = model.process(&x, &cond)?;
        for t in [len / 3, len - 20] {
            let mut xp = x.clone();
            xp[t] += 0.25;
            let yp = model.process(&xp, &cond)?;
            let prefix_same = y[..t].iter().zip(&yp[..t]).all(|(a, b)| a.to_bits() == b.to_bits());
            let responds = y[t..] != yp[t..];
            if !(prefix_same && responds) {
                ok = false;
                notes.push(format!("{kind} at t={t}"));
            }
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let conv = [ModelKind::Tcn, ModelKind::WaveNet, ModelKind::Gcn];
    let mut rf_checked = Vec::new();
    for i in 0..10 {
        let kind = conv[i % 3];
        let cfg = ModelConfig {
            channels: rng.random_range(2..5),
            kernel_size: rng.random_range(2..5),
            dilation_growth: rng.random_range(1..4),
            n_blocks: rng.random_range(1..4),
            stacks_per_block: rng.random_range(1..4),
            ..ModelConfig::default_for(kind)
        };
        let ReceptiveField::Samples(rf) = cfg.receptive_field() else {
            unreachable!()
        };
        let model = Model::build(cfg.clone(), 100 + i as u64)?;
        let t0 = rf + 5;
        let len = t0 + rf + 40;
        let x = random_tensor(&[len], 0.5, 200 + i as u64).into_vec();
        let mut xp = x.clone();
        xp[t0] += 0.5;
        let (y, yp) = (model.process(&x, &[0.1, 0.4])?, model.process(&xp, &[0.1, 0.4])?);
        let changed: Vec<usize> = (0..len).filter(|&t| y[t].to_bits() != yp[t].to_bits()).collect();
        let extent = changed.last().map_or(0, |&last| last + 1 - t0);
        let before = changed.first().is_some_and(|&f| f < t0);
        rf_checked.push(format!("{}:{rf}", kind));
        if extent != rf || before {
            ok = false;
            notes.push(format!("{kind} {cfg:?}: formula {rf}, measured {extent}"));
        }
    }
    Ok(verdict(
        ok,
        format!(
            "all five kinds causal (bit-exact prefix); receptive fields [{}] match perturbation extent{}",
            rf_checked.join(" "),
            if notes.is_empty() { String::new() } else { format!("; violations: {}", notes.join("; ")) }
        ),
    ))
}

/// One synthetic pluck pair used as both the training and the validation set.
fn overfit_dataset() -> springverb::Result<(Dataset, SamplePair)> {
    let cond = vec![0.5, 0.5];
    let train = pluck_pair(16_000, cond, Split::Train, 1)?;
    let mut val = train.clone();
    val.split = Split::Val;
    Ok((Dataset::from_pairs(16_000, 2, vec![train.clone(), val])?, train))
}

fn overfit_smoke() -> Outcome {
    let (data, pair) = overfit_dataset()?;
    let loss = LossConfig::default();
    let nb_loss = combined_loss_value(&pair.dry.samples, &pair.wet.samples, &loss)?;
    let nb_esr = esr(&pair.dry.samples, &pair.wet.samples)?;
    println!("    naive baseline on the pair: combined loss {nb_loss:.4}, ESR {nb_esr:.4}");
    let mut ok = true;
    let mut failures = Vec::new();
    for kind in ModelKind::ALL {
        let started = Instant::now();
        let cfg = TrainConfig {
            max_epochs: 200,
            seed: 1,
            ..TrainConfig::new(ModelConfig::default_for(kind))
        };
        let out = train(&cfg, &data, TrainOptions::default())?;
        let pred = out.best.model.process(&pair.dry.samples, &pair.cond)?;
        let l = combined_loss_value(&pred, &pair.wet.samples, &loss)?;
        let e = esr(&pred, &pair.wet.samples)?;
        let loss_ok = l < 0.5 * nb_loss;
        let esr_ok = kind.is_recurrent() || e < nb_esr;
        let secs = started.elapsed().as_secs_f64();
        let best_epoch = out.best.epoch;
        println!(
            "    {kind:<8} loss {l:.4} ({:.1}% of NB, needs < 50%) ESR {e:.4}{} best epoch {best_epoch}, final lr {:.0e}, {secs:.0} s",
            100.0 * l / nb_loss,
            if kind.is_recurrent() { " (not required)".to_string() } else { format!(" (needs < {nb_esr:.4})") },
            out.last.lr(),
        );
        if !loss_ok {
            failures.push(format!("{kind} loss"));
        }
        if !esr_ok {
            failures.push(format!("{kind} ESR"));
        }
        ok &= loss_ok && esr_ok && secs < 900.0;
    }
    Ok(verdict(
        ok,
        if failures.is_empty() {
            "all models under 50% of NB loss; conv models beat NB ESR".into()
        } else {
            format!("not met: {}", failures.join(", "))
        },
    ))
}

fn springset_manifest() -> springverb::Result<Option<DatasetManifest>> {
    if let Ok(path) = std::env::var("SPRINGSET_MANIFEST") {
        return DatasetManifest::load(PathBuf::from(path)).map(Some);
    }
    match (std::env::var("SPRINGSET_DRY_DIR"), std::env::var("SPRINGSET_WET_DIR")) {
        (Ok(dry), Ok(wet)) => build_manifest(dry, wet, 0, None).map(Some),
        _ => Ok(None),
    }
}

fn baseline_reproduction() -> Outcome {
    let Some(manifest) = springset_manifest()? else {
        return Ok(Verdict::Skip(
            "SpringSet not supplied (set SPRINGSET_MANIFEST, or SPRINGSET_DRY_DIR and SPRINGSET_WET_DIR)".into(),
        ));
    };
    let data = Dataset::load(&manifest)?;
    let pairs: Vec<&SamplePair> = data.pairs.iter().collect();
    let row = naive_baseline(&pairs, Parallelism::Parallel)?;
    Ok(verdict(
        (1.1..=1.7).contains(&row.esr),
        format!("NB ESR over {} pairs = {:.4} (expected in [1.1, 1.7])", pairs.len(), row.esr),
    ))
}

fn scheduler_optimizer() -> Outcome {
    let mut flat = PlateauScheduler::new(0.01, SchedulerConfig::default());
    flat.step(1.0);
    let reductions: Vec<f64> = (0..11).filter_map(|_| flat.step(1.0).reduced_to).collect();
    let flat_ok = reductions.len() == 1 && (reductions[0] - 0.001).abs() < 1e-15;

    let mut reset = PlateauScheduler::new(0.01, SchedulerConfig::default());
    reset.step(1.0);
    for _ in 0..9 {
        reset.step(1.0);
    }
    let improved = reset.step(0.9).improved && reset.counter == 0;
    let quiet = (0..10).all(|_| reset.step(0.9).reduced_to.is_none());
    let reset_ok = improved && quiet && reset.lr == 0.01;

    let lr = 0.01;
    let mut adam_err = 0.0f64;
    for g in [1e-3, -0.02, 0.5, -3.0, 40.0] {
        let mut p = ParamStore::new();
        p.insert("w", Tensor::from_vec(vec![0.25]));
        let mut st = AdamState::new(&p);
        adam_step(&mut p, &[Tensor::from_vec(vec![g])], &mut st, lr)?;
        let moved = (p.get("w").unwrap().data()[0] - 0.25).abs();
        adam_err = adam_err.max((moved - lr).abs() / lr);
    }
    Ok(verdict(
        flat_ok && reset_ok && adam_err < 1e-4,
        format!(
            "flat run reductions {reductions:?} (expect [0.001]); improvement resets counter: {reset_ok}; \
             Adam first-step |dp|/lr within {adam_err:.1e} of 1"
        ),
    ))
}

fn tiny_corpus() -> springverb::Result<Dataset> {
    let pairs = (0..4)
        .map(|i| {
            let split = if i == 3 { Split::Val } else { Split::Train };
            let mut p = pluck_pair(16_000, vec![0.2 * i as f64, 0.5], split, 10 + i)?;
            p.dry.samples.truncate(4096);
            p.wet.samples.truncate(4096);
            Ok(p)
        })
        .collect::<springverb::Result<Vec<_>>>()?;
    Dataset::from_pairs(16_000, 2, pairs)
}

fn determinism_resume() -> Outcome {
    let data = tiny_corpus()?;
    let dir = tempfile::tempdir()?;
    let mut notes = Vec::new();
    let mut ok = true;
    for kind in [ModelKind::Gcn, ModelKind::Lstm] {
        let cfg = TrainConfig {
            batch_size: Some(2),
            segment_len: Some(2048),
            max_epochs: 4,
            seed: 3,
            ..TrainConfig::new(ModelConfig::default_for(kind))
        };
        let a = train(&cfg, &data, TrainOptions::default())?.last;
        let b = train(&cfg, &data, TrainOptions::default())?.last;
        let same_seed = a.blob_bytes()? == b.blob_bytes()?;

        let out = dir.path().join(kind.name());
        let first = TrainConfig { max_epochs: 2, ..cfg.clone() };
        let opts = |resume| TrainOptions {
            out_dir: Some(out.clone()),
            resume,
            parallelism: Parallelism::Parallel,
        };
        train(&first, &data, opts(None))?;
        let saved = Checkpoint::load(out.join(LAST_CHECKPOINT))?;
        let resumed = train(&cfg, &data, opts(Some(saved)))?.last;
        let losses = |c: &Checkpoint| -> Vec<(u64, u64)> {
            c.history.iter().map(|r| (r.train_loss.to_bits(), r.val_loss.to_bits())).collect()
        };
        let resume_ok = resumed.blob_bytes()? == a.blob_bytes()? && losses(&resumed) == losses(&a);
        ok &= same_seed && resume_ok;
        notes.push(format!("{kind}: same-seed blobs identical {same_seed}, 2+2 resume == 4 straight {resume_ok}"));
    }
    Ok(verdict(ok, notes.join("; ")))
}

fn rtf_sanity() -> Outcome {
    let mut rows = Vec::new();
    let mut ok = true;
    let mut gcn48 = f64::NAN;
    for sr in [16_000, 48_000] {
        for kind in ModelKind::ALL {
            let model = Model::build(
                ModelConfig {
                    sample_rate: sr,
                    ..ModelConfig::default_for(kind)
                },
                1,
            )?;
            let r = model_rtf(&model, 1.0, 3, 2)?;
            ok &= r.median > 0.0 && r.median.is_finite();
            if kind == ModelKind::Gcn && sr == 48_000 {
                gcn48 = r.median;
            }
            rows.push(format!("{kind}@{}k {:.3}", sr / 1000, r.median));
        }
    }
    ok &= gcn48 < 1.0;
    Ok(verdict(
        ok,
        format!("RTF medians: {}; GCN @48 kHz {gcn48:.3} (needs < 1)", rows.join(", ")),
    ))
}

fn feature_sanity() -> Outcome {
    let a4 = sine(48_000, 48_000, 440.0, 0.5);
    let pitch = yin_pitch(&a4, 48_000, &YinConfig::default())?.mean_hz.unwrap_or(f64::NAN);
    let level = leq(&square(48_000, 48_000, 100.0))?;
    let bin_tone = |k: usize| sine(16_000, 16_384, k as f64 * 16_000.0 / 1024.0, 0.5);
    let mut worst = 0.0f64;
    for k in [8, 20, 50, 120] {
        let ratio = hfc(&bin_tone(2 * k), 1024, 512)? / hfc(&bin_tone(k), 1024, 512)?;
        worst = worst.max((ratio / 2.0 - 1.0).abs());
    }
    Ok(verdict(
        (pitch - 440.0).abs() <= 1.0 && level.abs() <= 0.01 && worst <= 0.05,
        format!(
            "YIN on A4 = {pitch:.3} Hz (440 +/- 1); LEQ of full-scale square = {level:.4} dB (0 +/- 0.01); \
             HFC bin-doubling ratio within {:.2}% of 2 (5%)",
            100.0 * worst
        ),
    ))
}
