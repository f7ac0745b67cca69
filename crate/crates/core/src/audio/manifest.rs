use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::wav::{read_wav, read_wav_info};
use super::AudioClip;
use crate::error::{Error, Result};

pub const MANIFEST_VERSION: u32 = 1;

/// Length of the all-zero conditioning vector used when a corpus has none.
pub const DEFAULT_COND_DIM: usize = 2;

/// Conditioning vectors by file stem.
pub type CondSource = BTreeMap<String, Vec<f64>>;

#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" | "valid" | "validation" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            _ => Err(Error::invalid(format!("unknown split {s:?} (train, val, test)"))),
        }
    }
}

impl std::fmt::Display for Split {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub dry: PathBuf,
    pub wet: PathBuf,
    pub cond: Vec<f64>,
    pub split: Split,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub version: u32,
    pub sample_rate: u32,
    pub seed: u64,
    pub entries: Vec<ManifestEntry>,
}

/// 60/20/20 split sizes: `floor(0.6n)`, `floor(0.2n)`, remainder.
pub fn split_sizes(n: usize) -> (usize, usize, usize) {
    let train = n * 3 / 5;
    let val = n / 5;
    (train, val, n - train - val)
}

fn wav_stems(dir: &Path) -> Result<BTreeMap<String, PathBuf>> {
    let mut out = BTreeMap::new();
    let rd = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    for entry in rd {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        let is_wav = path
            .extension()
            .and_then(|e| e.to_str())
            .is_some_and(|e| e.eq_ignore_ascii_case("wav"));
        if !is_wav {
            continue;
        }
        if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
            out.insert(stem.to_string(), path.clone());
        }
    }
    Ok(out)
}

/// Pairs dry and wet files by stem, shuffles deterministically under `seed`
/// and assigns a 60/20/20 train/val/test split.
pub fn build_manifest(
    dry_dir: impl AsRef<Path>,
    wet_dir: impl AsRef<Path>,
    seed: u64,
    cond_source: Option<&CondSource>,
) -> Result<DatasetManifest> {
    let dry = wav_stems(dry_dir.as_ref())?;
    let wet = wav_stems(wet_dir.as_ref())?;
    let dry_keys: BTreeSet<&String> = dry.keys().collect();
    let wet_keys: BTreeSet<&String> = wet.keys().collect();
    let orphans: Vec<String> = dry_keys
        .symmetric_difference(&wet_keys)
        .map(|s| {
            if dry.contains_key(*s) {
                format!("{s} (dry only)")
            } else {
                format!("{s} (wet only)")
            }
        })
        .collect();
    if !orphans.is_empty() {
        return Err(Error::Dataset(format!(
            "unmatched files: {}",
            orphans.join(", ")
        )));
    }
    if dry.is_empty() {
        return Err(Error::Dataset(format!(
            "no .wav files in {}",
            dry_dir.as_ref().display()
        )));
    }

    let cond_dim = match cond_source {
        Some(src) => {
            let dims: BTreeSet<usize> = src.values().map(Vec::len).collect();
            if dims.len() > 1 {
                return Err(Error::Dataset(format!(
                    "conditioning vectors have mixed lengths {dims:?}"
                )));
            }
            dims.into_iter().next().unwrap_or(DEFAULT_COND_DIM)
        }
        None => DEFAULT_COND_DIM,
    };

    let mut rates = BTreeMap::new();
    for (stem, path) in dry.iter().chain(wet.iter()) {
        let info = read_wav_info(path)?;
        rates.entry(info.sample_rate).or_insert_with(|| stem.clone());
    }
    if rates.len() > 1 {
        return Err(Error::Dataset(format!(
            "mixed sample rates: {:?}",
            rates.keys().collect::<Vec<_>>()
        )));
    }
    let sample_rate = *rates.keys().next().expect("at least one file");

    // BTreeMap iteration is sorted by stem, so the shuffle input is canonical.
    let mut stems: Vec<&String> = dry.keys().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    stems.shuffle(&mut rng);
    let (n_train, n_val, _) = split_sizes(stems.len());

    let entries = stems
        .iter()
        .enumerate()
        .map(|(i, stem)| {
            let split = if i < n_train {
                Split::Train
            } else if i < n_train + n_val {
                Split::Val
            } else {
                Split::Test
            };
            let cond = cond_source
                .and_then(|s| s.get(*stem).cloned())
                .unwrap_or_else(|| vec![0.0; cond_dim]);
            ManifestEntry {
                dry: dry[*stem].clone(),
                wet: wet[*stem].clone(),
                cond,
                split,
            }
        })
        .collect();
    Ok(DatasetManifest {
        version: MANIFEST_VERSION,
        sample_rate,
        seed,
        entries,
    })
}

impl DatasetManifest {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let m: Self = serde_json::from_str(&text)?;
        if m.version != MANIFEST_VERSION {
            return Err(Error::Dataset(format!(
                "unsupported manifest version {}",
                m.version
            )));
        }
        Ok(m)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self)?;
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn cond_dim(&self) -> usize {
        self.entries
            .first()
            .map_or(DEFAULT_COND_DIM, |e| e.cond.len())
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &ManifestEntry> {
        self.entries.iter().filter(move |e| e.split == split)
    }
}

/// A dry/wet pair of equal length.
#[derive(Clone, Debug, PartialEq)]
pub struct SamplePair {
    pub name: String,
    pub dry: AudioClip,
    pub wet: AudioClip,
    pub cond: Vec<f64>,
    pub split: Split,
}

impl SamplePair {
    /// Pairs two clips, zero-padding the shorter one at the tail.
    pub fn new(
        name: impl Into<String>,
        mut dry: AudioClip,
        mut wet: AudioClip,
        cond: Vec<f64>,
        split: Split,
    ) -> Result<Self> {
        let name = name.into();
        if dry.sample_rate != wet.sample_rate {
            return Err(Error::Dataset(format!(
                "{name}: dry at {} Hz but wet at {} Hz",
                dry.sample_rate, wet.sample_rate
            )));
        }
        let len = dry.len().max(wet.len());
        for (label, clip) in [("dry", &mut dry), ("wet", &mut wet)] {
            if clip.len() < len {
                log::info!("{name}: padded {label} by {} samples", len - clip.len());
                clip.samples.resize(len, 0.0);
            }
        }
        Ok(Self {
            name,
            dry,
            wet,
            cond,
            split,
        })
    }

    pub fn len(&self) -> usize {
        self.dry.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dry.is_empty()
    }
}

/// Loaded, paired audio for every manifest entry.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub sample_rate: u32,
    pub cond_dim: usize,
    pub pairs: Vec<SamplePair>,
}

impl Dataset {
    pub fn from_pairs(sample_rate: u32, cond_dim: usize, pairs: Vec<SamplePair>) -> Result<Self> {
        for p in &pairs {
            if p.dry.sample_rate != sample_rate {
                return Err(Error::Dataset(format!(
                    "{}: {} Hz in a {sample_rate} Hz dataset",
                    p.name, p.dry.sample_rate
                )));
            }
            if p.cond.len() != cond_dim {
                return Err(Error::Dataset(format!(
                    "{}: conditioning length {} != {cond_dim}",
                    p.name,
                    p.cond.len()
                )));
            }
        }
        Ok(Self {
            sample_rate,
            cond_dim,
            pairs,
        })
    }

    pub fn load(manifest: &DatasetManifest) -> Result<Self> {
        let pairs = manifest
            .entries
            .iter()
            .map(|e| {
                let name = e
                    .dry
                    .file_stem()
                    .map(|s| s.to_string_lossy().into_owned())
                    .unwrap_or_default();
                SamplePair::new(name, read_wav(&e.dry)?, read_wav(&e.wet)?, e.cond.clone(), e.split)
            })
            .collect::<Result<Vec<_>>>()?;
        Self::from_pairs(manifest.sample_rate, manifest.cond_dim(), pairs)
    }

    pub fn split(&self, split: Split) -> Vec<&SamplePair> {
        self.pairs.iter().filter(|p| p.split == split).collect()
    }

    pub fn shortest(&self) -> Option<usize> {
        self.pairs.iter().map(SamplePair::len).min()
    }
}
