//! The merged run configuration: a JSON file plus command-line overrides.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use springverb::models::{ModelConfig, ModelKind};
use springverb::training::TrainConfig;

/// Where the training data comes from.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataPaths {
    pub dry_dir: Option<PathBuf>,
    pub wet_dir: Option<PathBuf>,
    pub manifest: Option<PathBuf>,
}

/// Everything a training run depends on. Written next to the checkpoints so
/// a run can be repeated from its output directory alone.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub training: TrainConfig,
    #[serde(default)]
    pub data: DataPaths,
    #[serde(default)]
    pub out: Option<PathBuf>,
}

/// The config file form: every section optional so a file may hold only the
/// parts it wants to pin.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RunConfigFile {
    training: Option<TrainConfig>,
    #[serde(default)]
    data: DataPaths,
    out: Option<PathBuf>,
}

/// Command-line values that take precedence over the file.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub model: Option<ModelKind>,
    pub sample_rate: Option<u32>,
    pub seed: Option<u64>,
    pub epochs: Option<usize>,
    pub batch_size: Option<usize>,
    pub lr: Option<f64>,
    pub data: DataPaths,
    pub out: Option<PathBuf>,
}

/// Outcome of [`resolve`]. Values the user did not pin are later taken from
/// the corpus.
pub struct Resolved {
    pub config: RunConfig,
    pub sample_rate_pinned: bool,
    pub cond_dim_pinned: bool,
}

/// Merges the optional file with the overrides. A `--model` flag replaces
/// the file's architecture with that kind's defaults, keeping the file's
/// sample rate and conditioning width.
pub fn resolve(file: Option<&Path>, o: &Overrides) -> Result<Resolved> {
    let parsed = match file {
        Some(path) => {
            let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            serde_json::from_str::<RunConfigFile>(&text).with_context(|| format!("parsing {}", path.display()))?
        }
        None => RunConfigFile::default(),
    };
    let from_file = parsed.training.is_some();
    let mut training = match (parsed.training, o.model) {
        (Some(mut t), Some(kind)) if t.model.kind != kind => {
            let keep = &t.model;
            t.model = ModelConfig {
                sample_rate: keep.sample_rate,
                cond_dim: keep.cond_dim,
                ..ModelConfig::default_for(kind)
            };
            t
        }
        (Some(t), _) => t,
        (None, Some(kind)) => TrainConfig::new(ModelConfig::default_for(kind)),
        (None, None) => {
            return Err(crate::UsageError::new("no model given: pass --model or a --config with a training section").into());
        }
    };
    if let Some(sr) = o.sample_rate {
        training.model.sample_rate = sr;
    }
    if let Some(seed) = o.seed {
        training.seed = seed;
    }
    if let Some(e) = o.epochs {
        training.max_epochs = e;
    }
    if let Some(b) = o.batch_size {
        training.batch_size = Some(b);
    }
    if let Some(lr) = o.lr {
        training.lr0 = lr;
    }
    let data = DataPaths {
        dry_dir: o.data.dry_dir.clone().or(parsed.data.dry_dir),
        wet_dir: o.data.wet_dir.clone().or(parsed.data.wet_dir),
        manifest: o.data.manifest.clone().or(parsed.data.manifest),
    };
    Ok(Resolved {
        config: RunConfig {
            training,
            data,
            out: o.out.clone().or(parsed.out),
        },
        sample_rate_pinned: from_file || o.sample_rate.is_some(),
        cond_dim_pinned: from_file,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write(json: &str) -> tempfile::NamedTempFile {
        let f = tempfile::NamedTempFile::new().unwrap();
        fs::write(f.path(), json).unwrap();
        f
    }

    #[test]
    fn flags_win_over_file() {
        let mut cfg = TrainConfig::new(ModelConfig::default_for(ModelKind::Gcn));
        cfg.seed = 3;
        cfg.max_epochs = 7;
        let json = serde_json::json!({ "training": cfg, "out": "from-file" }).to_string();
        let f = write(&json);
        let o = Overrides {
            seed: Some(9),
            out: Some("from-flag".into()),
            ..Overrides::default()
        };
        let r = resolve(Some(f.path()), &o).unwrap().config;
        assert_eq!(r.training.seed, 9);
        assert_eq!(r.training.max_epochs, 7);
        assert_eq!(r.out.as_deref(), Some(Path::new("from-flag")));
    }

    #[test]
    fn model_flag_resets_architecture_but_keeps_rate() {
        let mut cfg = TrainConfig::new(ModelConfig::default_for(ModelKind::Gcn));
        cfg.model.sample_rate = 48_000;
        cfg.model.channels = 5;
        let f = write(&serde_json::json!({ "training": cfg }).to_string());
        let o = Overrides {
            model: Some(ModelKind::Tcn),
            ..Overrides::default()
        };
        let r = resolve(Some(f.path()), &o).unwrap().config;
        assert_eq!(r.training.model.kind, ModelKind::Tcn);
        assert_eq!(r.training.model.sample_rate, 48_000);
        assert_eq!(r.training.model.channels, ModelConfig::default_for(ModelKind::Tcn).channels);
    }

    #[test]
    fn missing_model_is_a_usage_error() {
        let err = resolve(None, &Overrides::default()).err().unwrap();
        assert!(err.downcast_ref::<crate::UsageError>().is_some());
    }

    #[test]
    fn unknown_file_keys_are_rejected() {
        let f = write(r#"{"trainig": {}}"#);
        assert!(resolve(Some(f.path()), &Overrides::default()).is_err());
    }
}
