//! Optimisation loop: Adam, reduce-on-plateau scheduling and
//! validation-driven checkpointing.

mod adam;
mod checkpoint;
mod scheduler;

use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

pub use adam::{adam_step, clip_global_norm, AdamCounters, AdamState, StepOutcome, BETA1, BETA2, EPSILON};
pub use checkpoint::{Checkpoint, FORMAT_VERSION, MAGIC};
pub use scheduler::{PlateauScheduler, SchedulerConfig, SchedulerStep, PLATEAU_THRESHOLD};

use crate::audio::{batch_segments, default_segment_len, segment_index, Batch, Dataset, SamplePair, Split};
use crate::error::{Error, Result};
use crate::losses::{combined_loss, combined_loss_value, LossConfig};
use crate::models::{Model, ModelConfig, ReceptiveField};
use crate::nn::Mode;
use crate::par::{map_range, Parallelism};
use crate::tensor::{Tape, Tensor};

/// Global-norm clip applied to recurrent models when [`GradClip::Auto`].
pub const RECURRENT_CLIP_NORM: f64 = 5.0;

/// Gradient clipping policy.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GradClip {
    /// Clip recurrent models at [`RECURRENT_CLIP_NORM`], leave others alone.
    #[default]
    Auto,
    Off,
    Norm(f64),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub model: ModelConfig,
    #[serde(default)]
    pub loss: LossConfig,
    #[serde(default = "default_lr0")]
    pub lr0: f64,
    #[serde(default)]
    pub scheduler: SchedulerConfig,
    /// Defaults to 64 at 16 kHz and 16 at 48 kHz.
    #[serde(default)]
    pub batch_size: Option<usize>,
    /// Defaults to the pipeline's segment length, shortened to the shortest
    /// train/val clip when necessary.
    #[serde(default)]
    pub segment_len: Option<usize>,
    #[serde(default = "default_max_epochs")]
    pub max_epochs: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub grad_clip: GradClip,
}

fn default_lr0() -> f64 {
    0.01
}

fn default_max_epochs() -> usize {
    200
}

impl TrainConfig {
    pub fn new(model: ModelConfig) -> Self {
        Self {
            model,
            loss: LossConfig::default(),
            lr0: default_lr0(),
            scheduler: SchedulerConfig::default(),
            batch_size: None,
            segment_len: None,
            max_epochs: default_max_epochs(),
            seed: 0,
            grad_clip: GradClip::Auto,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.loss.validate()?;
        self.scheduler.validate()?;
        if !(self.lr0.is_finite() && self.lr0 > 0.0) {
            return Err(Error::invalid(format!("lr0 must be > 0, got {}", self.lr0)));
        }
        if self.max_epochs == 0 {
            return Err(Error::invalid("max_epochs must be >= 1"));
        }
        if self.batch_size == Some(0) || self.segment_len == Some(0) {
            return Err(Error::invalid("batch_size and segment_len must be >= 1"));
        }
        if let GradClip::Norm(n) = self.grad_clip {
            if !(n.is_finite() && n > 0.0) {
                return Err(Error::invalid(format!("gradient clip norm must be > 0, got {n}")));
            }
        }
        Ok(())
    }

    pub fn batch_size(&self) -> usize {
        self.batch_size.unwrap_or(match self.model.sample_rate {
            48_000 => 16,
            _ => 64,
        })
    }

    pub fn clip_norm(&self) -> Option<f64> {
        match self.grad_clip {
            GradClip::Auto => self.model.kind.is_recurrent().then_some(RECURRENT_CLIP_NORM),
            GradClip::Off => None,
            GradClip::Norm(n) => Some(n),
        }
    }

    /// Segment length used for `data`, checked against the model's receptive
    /// field and the loss's longest STFT window.
    pub fn segment_len_for(&self, data: &Dataset) -> Result<usize> {
        let shortest = data
            .pairs
            .iter()
            .filter(|p| matches!(p.split, Split::Train | Split::Val))
            .map(SamplePair::len)
            .min()
            .ok_or_else(|| Error::EmptySplit("train/val".into()))?;
        let len = match self.segment_len {
            Some(n) => n,
            None => default_segment_len(self.model.sample_rate).min(shortest),
        };
        if len > shortest {
            return Err(Error::invalid(format!(
                "segment_len {len} exceeds the shortest train/val clip ({shortest} samples)"
            )));
        }
        let mut required = self.loss.mrstft.min_len();
        if let ReceptiveField::Samples(rf) = self.model.receptive_field() {
            required = required.max(rf);
        }
        if len < required {
            return Err(Error::InputTooShort { required, actual: len });
        }
        Ok(len)
    }
}

/// One line of the training log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean over batches with a finite loss; `null` when there were none.
    #[serde(with = "nullable")]
    pub train_loss: f64,
    pub val_loss: f64,
    /// Learning rate used during the epoch.
    pub lr: f64,
    pub seconds: f64,
}

mod nullable {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(x: &f64, s: S) -> Result<S::Ok, S::Error> {
        if x.is_finite() {
            s.serialize_f64(*x)
        } else {
            s.serialize_none()
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::NAN))
    }
}

/// Mean loss of a batch and its gradient for every parameter, in store
/// order.
#[derive(Clone, Debug)]
pub struct BatchGradients {
    pub loss: f64,
    pub grads: Vec<Tensor>,
    /// Batch-norm statistics recorded by the forward pass.
    pub stats: Vec<(String, Tensor)>,
}

/// Forward and backward pass over one batch in training mode.
///
/// Without batch norm every item runs on its own tape (in parallel when
/// allowed) and the per-item gradients are summed in item order, so the
/// result does not depend on scheduling. With batch norm the items share
/// statistics and run on one tape.
pub fn batch_gradients(
    model: &Model,
    batch: &Batch,
    loss: &LossConfig,
    parallelism: Parallelism,
) -> Result<BatchGradients> {
    if batch.is_empty() {
        return Err(Error::EmptyReduction(batch.dry.shape().to_vec()));
    }
    if model.config().use_batchnorm {
        return tape_gradients(model, &batch.dry, &batch.wet, &batch.cond, loss);
    }
    let b = batch.len();
    let l = batch.dry.shape()[2];
    let cd = batch.cond.shape()[1];
    let item = |i: usize| -> Result<BatchGradients> {
        let slice = |t: &Tensor, w: usize| t.data()[i * w..(i + 1) * w].to_vec();
        tape_gradients(
            model,
            &Tensor::new(vec![1, 1, l], slice(&batch.dry, l))?,
            &Tensor::new(vec![1, 1, l], slice(&batch.wet, l))?,
            &Tensor::new(vec![1, cd], slice(&batch.cond, cd))?,
            loss,
        )
    };
    let mut items = map_range(b, parallelism, item).into_iter();
    let mut acc = items.next().expect("non-empty batch")?;
    for r in items {
        let r = r?;
        acc.loss += r.loss;
        for (a, g) in acc.grads.iter_mut().zip(&r.grads) {
            *a = a.zip_map(g, |x, y| x + y)?;
        }
    }
    if b > 1 {
        let s = 1.0 / b as f64;
        acc.loss *= s;
        for g in &mut acc.grads {
            *g = g.map(|x| x * s);
        }
    }
    Ok(acc)
}

fn tape_gradients(model: &Model, dry: &Tensor, wet: &Tensor, cond: &Tensor, loss: &LossConfig) -> Result<BatchGradients> {
    let tape = Tape::new();
    let p = model.params().bind(&tape, true);
    let y = model.forward(&p, tape.constant(dry.clone()), tape.constant(cond.clone()), Mode::Train)?;
    let l = combined_loss(y, tape.constant(wet.clone()), loss)?;
    let grads = tape.backward(l)?;
    Ok(BatchGradients {
        loss: l.value().item()?,
        grads: p.iter().map(|(_, v)| grads.wrt(v)).collect(),
        stats: tape.take_stats(),
    })
}

/// Mean combined loss over every `segment_len` window of `pairs` (the last
/// window of a clip is zero-padded), in evaluation mode.
pub fn validation_loss(
    model: &Model,
    pairs: &[&SamplePair],
    segment_len: usize,
    loss: &LossConfig,
    parallelism: Parallelism,
) -> Result<f64> {
    let segments = segment_index(pairs, segment_len);
    if segments.is_empty() {
        return Err(Error::EmptySplit("validation".into()));
    }
    let losses = map_range(segments.len(), parallelism, |i| -> Result<f64> {
        let s = segments[i];
        let p = pairs[s.pair];
        let stop = (s.offset + segment_len).min(p.len());
        let mut dry = vec![0.0; segment_len];
        let mut wet = vec![0.0; segment_len];
        dry[..stop - s.offset].copy_from_slice(&p.dry.samples[s.offset..stop]);
        wet[..stop - s.offset].copy_from_slice(&p.wet.samples[s.offset..stop]);
        let pred = model.process(&dry, &p.cond)?;
        combined_loss_value(&pred, &wet, loss)
    });
    let mut total = 0.0;
    for l in losses {
        total += l?;
    }
    Ok(total / segments.len() as f64)
}

/// Where and how [`train`] runs.
#[derive(Clone, Debug, Default)]
pub struct TrainOptions {
    /// Receives `last.ckpt`, `best.ckpt` and `train_log.jsonl`.
    pub out_dir: Option<PathBuf>,
    /// Continue from this state instead of a fresh model.
    pub resume: Option<Checkpoint>,
    pub parallelism: Parallelism,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// State at the epoch with the best validation loss.
    pub best: Checkpoint,
    /// State after the final epoch.
    pub last: Checkpoint,
}

pub const LAST_CHECKPOINT: &str = "last.ckpt";
pub const BEST_CHECKPOINT: &str = "best.ckpt";
pub const TRAIN_LOG: &str = "train_log.jsonl";

/// Trains until `config.max_epochs` epochs have completed.
///
/// Each epoch shuffles the training segments (seeded by `config.seed` and
/// the epoch index), takes one Adam step per batch, then computes the
/// validation loss, updates the scheduler and saves checkpoints. Resuming
/// from a checkpoint of the same config continues the identical trajectory;
/// only `max_epochs` may differ.
pub fn train(config: &TrainConfig, data: &Dataset, opts: TrainOptions) -> Result<TrainOutcome> {
    config.validate()?;
    if data.sample_rate != config.model.sample_rate {
        return Err(Error::Dataset(format!(
            "dataset is {} Hz but the model is configured for {} Hz",
            data.sample_rate, config.model.sample_rate
        )));
    }
    if data.cond_dim != config.model.cond_dim {
        return Err(Error::Dataset(format!(
            "dataset conditioning has {} values, model expects {}",
            data.cond_dim, config.model.cond_dim
        )));
    }
    let train_pairs = data.split(Split::Train);
    let val_pairs = data.split(Split::Val);
    if train_pairs.is_empty() {
        return Err(Error::EmptySplit("train".into()));
    }
    if val_pairs.is_empty() {
        return Err(Error::EmptySplit("val".into()));
    }
    let segment_len = config.segment_len_for(data)?;
    let batch_size = config.batch_size();
    let clip = config.clip_norm();

    let resuming = opts.resume.is_some();
    let mut ck = match opts.resume {
        Some(ck) => {
            let mut theirs = ck.config.clone();
            theirs.max_epochs = config.max_epochs;
            if &theirs != config {
                return Err(Error::Checkpoint("resume config differs from the checkpoint's".into()));
            }
            Checkpoint { config: config.clone(), ..ck }
        }
        None => Checkpoint::initial(config.clone())?,
    };

    let out_dir = opts.out_dir.as_deref();
    let mut log_file = match out_dir {
        Some(dir) => Some(open_log(dir, resuming)?),
        None => None,
    };
    let mut best = match out_dir.map(|d| d.join(BEST_CHECKPOINT)) {
        Some(path) if resuming && path.exists() => Some(Checkpoint::load(path)?),
        _ => None,
    };

    while ck.epoch < config.max_epochs {
        let epoch = ck.epoch;
        let started = Instant::now();
        let lr = ck.lr();
        let (mut sum, mut count) = (0.0, 0usize);
        let batches = batch_segments(&train_pairs, segment_len, batch_size, config.seed, epoch as u64)?;
        let n_batches = batches.num_batches();
        for (bi, batch) in batches.enumerate() {
            let bg = batch_gradients(&ck.model, &batch, &config.loss, opts.parallelism)?;
            if !bg.loss.is_finite() {
                ck.nonfinite_streak += 1;
                log::warn!("epoch {} batch {bi}: non-finite loss, step skipped", epoch + 1);
                if ck.nonfinite_streak >= 2 {
                    return Err(Error::Diverged {
                        epoch: epoch + 1,
                        batch: bi,
                        lr,
                    });
                }
                continue;
            }
            ck.nonfinite_streak = 0;
            let mut grads = bg.grads;
            if let Some(max) = clip {
                clip_global_norm(&mut grads, max);
            }
            let outcome = adam_step(ck.model.params_mut(), &grads, &mut ck.optimizer, lr)?;
            if outcome == StepOutcome::Applied && !bg.stats.is_empty() {
                ck.model.update_running_stats(&bg.stats)?;
            }
            sum += bg.loss;
            count += 1;
        }
        let train_loss = if count > 0 { sum / count as f64 } else { f64::NAN };
        let val_loss = validation_loss(&ck.model, &val_pairs, segment_len, &config.loss, opts.parallelism)?;
        if !val_loss.is_finite() {
            return Err(Error::Diverged {
                epoch: epoch + 1,
                batch: n_batches,
                lr,
            });
        }
        let step = ck.scheduler.step(val_loss);
        ck.epoch += 1;
        let record = EpochRecord {
            epoch: ck.epoch,
            train_loss,
            val_loss,
            lr,
            seconds: started.elapsed().as_secs_f64(),
        };
        log::info!(
            "epoch {} train {:.6} val {:.6} lr {:e} ({:.1} s)",
            record.epoch,
            record.train_loss,
            record.val_loss,
            record.lr,
            record.seconds
        );
        if let Some(new_lr) = step.reduced_to {
            log::info!("plateau: learning rate reduced to {new_lr:e}");
        }
        ck.history.push(record.clone());
        if step.improved {
            best = Some(ck.clone());
            if let Some(dir) = out_dir {
                ck.save(dir.join(BEST_CHECKPOINT))?;
            }
        }
        if let Some(dir) = out_dir {
            ck.save(dir.join(LAST_CHECKPOINT))?;
        }
        if let Some(f) = log_file.as_mut() {
            let line = serde_json::to_string(&record)?;
            let path = out_dir.unwrap().join(TRAIN_LOG);
            writeln!(f, "{line}").map_err(|e| Error::io(path, e))?;
        }
    }
    Ok(TrainOutcome {
        best: best.unwrap_or_else(|| ck.clone()),
        last: ck,
    })
}

fn open_log(dir: &Path, append: bool) -> Result<File> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let path = dir.join(TRAIN_LOG);
    let mut opts = OpenOptions::new();
    opts.create(true);
    if append {
        opts.append(true);
    } else {
        opts.write(true).truncate(true);
    }
    opts.open(&path).map_err(|e| Error::io(path, e))
}
