//! Binary checkpoint format.
//!
//! ```text
//! "SPRV"  u32 version  u64 header length  header (JSON)  f32 blobs
//! ```
//!
//! All integers and floats are little-endian. The header lists every blob
//! with its group, name and shape in file order: model parameters, model
//! buffers, then the optimizer's first and second moments (both in
//! parameter order).

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::adam::{AdamCounters, AdamState};
use super::scheduler::PlateauScheduler;
use super::{EpochRecord, TrainConfig};
use crate::error::{Error, Result};
use crate::models::Model;
use crate::nn::ParamStore;
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"SPRV";
pub const FORMAT_VERSION: u32 = 1;

/// Complete training state.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: TrainConfig,
    pub model: Model,
    pub optimizer: AdamState,
    pub scheduler: PlateauScheduler,
    /// Completed epochs.
    pub epoch: usize,
    /// Consecutive batches whose loss was not finite.
    pub nonfinite_streak: usize,
    pub history: Vec<EpochRecord>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
enum BlobGroup {
    Param,
    Buffer,
    AdamM,
    AdamV,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
struct BlobSpec {
    group: BlobGroup,
    name: String,
    shape: Vec<usize>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    format_version: u32,
    config: TrainConfig,
    epoch: usize,
    nonfinite_streak: usize,
    rng: RngHeader,
    optimizer: AdamCounters,
    scheduler: PlateauScheduler,
    history: Vec<EpochRecord>,
    blobs: Vec<BlobSpec>,
}

/// Shuffling is a pure function of the seed and the epoch index, so this is
/// the whole generator state.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RngHeader {
    algorithm: String,
    seed: u64,
    next_epoch: u64,
}

const RNG_ALGORITHM: &str = "chacha8";

fn bad(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

impl Checkpoint {
    /// Fresh state before the first epoch.
    pub fn initial(config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let model = Model::build(config.model.clone(), config.seed)?;
        let optimizer = AdamState::new(model.params());
        let scheduler = PlateauScheduler::new(config.lr0, config.scheduler);
        Ok(Self {
            config,
            model,
            optimizer,
            scheduler,
            epoch: 0,
            nonfinite_streak: 0,
            history: Vec::new(),
        })
    }

    pub fn lr(&self) -> f64 {
        self.scheduler.lr
    }

    /// Best validation loss seen so far.
    pub fn best_val(&self) -> Option<f64> {
        self.scheduler.best
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let params = self.model.params();
        let buffers = self.model.buffers();
        let mut blobs = Vec::new();
        let mut data: Vec<&[f64]> = Vec::new();
        for (name, t) in params.iter() {
            blobs.push(BlobSpec {
                group: BlobGroup::Param,
                name: name.to_owned(),
                shape: t.shape().to_vec(),
            });
            data.push(t.data());
        }
        for (name, t) in buffers.iter() {
            blobs.push(BlobSpec {
                group: BlobGroup::Buffer,
                name: name.to_owned(),
                shape: t.shape().to_vec(),
            });
            data.push(t.data());
        }
        for (group, moments) in [(BlobGroup::AdamM, &self.optimizer.m), (BlobGroup::AdamV, &self.optimizer.v)] {
            for ((name, t), m) in params.iter().zip(moments) {
                blobs.push(BlobSpec {
                    group,
                    name: name.to_owned(),
                    shape: t.shape().to_vec(),
                });
                data.push(m);
            }
        }
        let header = Header {
            format_version: FORMAT_VERSION,
            config: self.config.clone(),
            epoch: self.epoch,
            nonfinite_streak: self.nonfinite_streak,
            rng: RngHeader {
                algorithm: RNG_ALGORITHM.into(),
                seed: self.config.seed,
                next_epoch: self.epoch as u64,
            },
            optimizer: self.optimizer.counters(),
            scheduler: self.scheduler.clone(),
            history: self.history.clone(),
            blobs,
        };
        let json = serde_json::to_vec(&header)?;
        let floats: usize = data.iter().map(|d| d.len()).sum();
        let mut out = Vec::with_capacity(16 + json.len() + 4 * floats);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for d in data {
            for &x in d {
                out.extend_from_slice(&(x as f32).to_le_bytes());
            }
        }
        Ok(out)
    }

    /// The `f32` blob section of [`Self::to_bytes`]: parameters, buffers and
    /// optimizer moments without the JSON header (which carries timings).
    pub fn blob_bytes(&self) -> Result<Vec<u8>> {
        let mut bytes = self.to_bytes()?;
        let header_len = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
        Ok(bytes.split_off(16 + header_len))
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 16 || &bytes[..4] != MAGIC {
            return Err(bad("not a springverb checkpoint (bad magic)"));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
        if version != FORMAT_VERSION {
            return Err(bad(format!("unsupported format version {version}")));
        }
        let header_len = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
        let header_end = 16usize
            .checked_add(header_len)
            .filter(|&e| e <= bytes.len())
            .ok_or_else(|| bad("truncated header"))?;
        let header: Header = serde_json::from_slice(&bytes[16..header_end])?;
        if header.format_version != version {
            return Err(bad("header version disagrees with file version"));
        }
        if header.rng.algorithm != RNG_ALGORITHM
            || header.rng.seed != header.config.seed
            || header.rng.next_epoch != header.epoch as u64
        {
            return Err(bad("inconsistent RNG state"));
        }
        header.config.validate()?;

        let mut body = &bytes[header_end..];
        let floats: usize = header.blobs.iter().map(|b| b.shape.iter().product::<usize>()).sum();
        if body.len() != 4 * floats {
            return Err(bad(format!(
                "blob section is {} bytes, header declares {}",
                body.len(),
                4 * floats
            )));
        }
        let mut params = ParamStore::new();
        let mut buffers = ParamStore::new();
        let (mut m, mut v) = (Vec::new(), Vec::new());
        for spec in &header.blobs {
            let n: usize = spec.shape.iter().product();
            let (chunk, rest) = body.split_at(4 * n);
            body = rest;
            let values: Vec<f64> = chunk
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
                .collect();
            match spec.group {
                BlobGroup::Param => params.insert(spec.name.clone(), Tensor::new(spec.shape.clone(), values)?),
                BlobGroup::Buffer => buffers.insert(spec.name.clone(), Tensor::new(spec.shape.clone(), values)?),
                BlobGroup::AdamM => m.push((spec.name.clone(), values)),
                BlobGroup::AdamV => v.push((spec.name.clone(), values)),
            }
        }
        let names: Vec<&str> = params.names().collect();
        for moments in [&m, &v] {
            let order: Vec<&str> = moments.iter().map(|(n, _)| n.as_str()).collect();
            if order != names {
                return Err(bad("optimizer moments do not follow parameter order"));
            }
        }
        let model = Model::from_parts(header.config.model.clone(), params, buffers)
            .map_err(|e| bad(format!("parameters do not match the model config: {e}")))?;
        Ok(Self {
            config: header.config,
            model,
            optimizer: AdamState {
                step: header.optimizer.step,
                skipped: header.optimizer.skipped,
                m: m.into_iter().map(|(_, x)| x).collect(),
                v: v.into_iter().map(|(_, x)| x).collect(),
            },
            scheduler: header.scheduler,
            epoch: header.epoch,
            nonfinite_streak: header.nonfinite_streak,
            history: header.history,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let bytes = self.to_bytes()?;
        // Write then rename so an interrupted save never truncates a good file.
        let tmp = path.with_extension("ckpt.tmp");
        fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
        fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}
