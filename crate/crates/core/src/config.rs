//! Experiment configuration files: TOML with a strict schema (unknown keys
//! rejected) mapping onto a [`TrainConfig`], datasets, and an optional grid.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{
    load_cifar_binary, make_synthetic, split_train_val, subsample_per_class, AugmentSpec, Dataset,
    SyntheticSpec,
};
use crate::error::{Error, Result};
use crate::net::{ArchSpec, ParamSubset};
use crate::optim::ScheduleKind;
use crate::rng::derive_seed;
use crate::search::GridSpec;
use crate::trainer::TrainConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataSource {
    CifarBinary,
    Synthetic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimSection {
    pub alpha: f64,
    pub weight_decay: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub total_steps: u64,
    pub schedule: ScheduleKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    pub source: DataSource,
    #[serde(default)]
    pub train_path: Option<String>,
    #[serde(default)]
    pub test_path: Option<String>,
    #[serde(default)]
    pub n_per_class: Option<usize>,
    #[serde(default)]
    pub val_per_class: usize,
    #[serde(default)]
    pub augment: AugmentSpec,
    #[serde(default)]
    pub synthetic: Option<SyntheticSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    pub seed: u64,
    #[serde(default)]
    pub probe_every: u64,
    #[serde(default = "default_norm_subset")]
    pub norm_subset: ParamSubset,
    pub output_dir: String,
}

fn default_norm_subset() -> ParamSubset {
    ParamSubset::All
}

/// A full experiment description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub arch: ArchSpec,
    pub optim: OptimSection,
    pub data: DataSection,
    #[serde(default)]
    pub grid: Option<GridSpec>,
    pub run: RunSection,
}

/// Datasets materialized from the `[data]` section.
pub struct LoadedData {
    pub train: Dataset,
    pub test: Dataset,
    pub val: Option<Dataset>,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig =
            toml::from_str(text).map_err(|e| Error::Config(format!("config parse error: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_path(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text =
            std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        Self::from_toml(&text)
    }

    pub fn validate(&self) -> Result<()> {
        self.train_config().and_then(|c| c.validate())?;
        if let Some(grid) = &self.grid {
            grid.validate()?;
        }
        match self.data.source {
            DataSource::CifarBinary => {
                if self.data.train_path.is_none() || self.data.test_path.is_none() {
                    return Err(Error::Config(
                        "cifar_binary source requires data.train_path and data.test_path".into(),
                    ));
                }
                if self.arch.input_shape != (3, 32, 32) {
                    return Err(Error::Config(format!(
                        "cifar_binary images are (3, 32, 32); arch.input_shape is {:?}",
                        self.arch.input_shape
                    )));
                }
                if self.arch.num_classes != 10 {
                    return Err(Error::Config("cifar_binary has 10 classes".into()));
                }
            }
            DataSource::Synthetic => {
                let synth = self.data.synthetic.as_ref().ok_or_else(|| {
                    Error::Config("synthetic source requires a [data.synthetic] section".into())
                })?;
                synth.validate()?;
                if synth.image_shape != self.arch.input_shape {
                    return Err(Error::Config(format!(
                        "synthetic image shape {:?} does not match arch.input_shape {:?}",
                        synth.image_shape, self.arch.input_shape
                    )));
                }
                if synth.num_classes != self.arch.num_classes {
                    return Err(Error::Config(format!(
                        "synthetic num_classes {} does not match arch.num_classes {}",
                        synth.num_classes, self.arch.num_classes
                    )));
                }
            }
        }
        Ok(())
    }

    /// The single-run hyper-parameters encoded by this config.
    pub fn train_config(&self) -> Result<TrainConfig> {
        let cfg = TrainConfig {
            arch: self.arch.clone(),
            alpha: self.optim.alpha,
            weight_decay: self.optim.weight_decay,
            momentum: self.optim.momentum,
            batch_size: self.optim.batch_size,
            total_steps: self.optim.total_steps,
            schedule: self.optim.schedule,
            augment: self.data.augment,
            seed: self.run.seed,
            probe_every: self.run.probe_every,
            norm_subset: self.run.norm_subset,
            suppress_grads: false,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Materialize train/test (and validation) sets per the data section.
    pub fn load_data(&self) -> Result<LoadedData> {
        let (mut train, test) = match self.data.source {
            DataSource::Synthetic => {
                let synth = self.data.synthetic.as_ref().expect("validated");
                make_synthetic(synth)?
            }
            DataSource::CifarBinary => {
                let train = load_cifar_path(self.data.train_path.as_ref().expect("validated"), true)?;
                let test = load_cifar_path(self.data.test_path.as_ref().expect("validated"), false)?;
                (train, test)
            }
        };
        if let Some(n) = self.data.n_per_class {
            train = subsample_per_class(&train, n, derive_seed(self.run.seed, "subsample", 0))?;
        }
        let val = if self.data.val_per_class > 0 {
            let (tr, val) =
                split_train_val(&train, self.data.val_per_class, derive_seed(self.run.seed, "val-split", 0))?;
            train = tr;
            Some(val)
        } else {
            None
        };
        Ok(LoadedData { train, test, val })
    }
}

/// A CIFAR path may be a single binary file or a dataset directory. For a
/// directory, training data is the concatenation of `data_batch_*.bin`
/// (sorted) and test data is `test_batch.bin`.
fn load_cifar_path(path: &str, train: bool) -> Result<Dataset> {
    let p = Path::new(path);
    if !p.is_dir() {
        return load_cifar_binary(p);
    }
    if !train {
        return load_cifar_binary(p.join("test_batch.bin"));
    }
    let mut batch_files: Vec<_> = std::fs::read_dir(p)
        .map_err(|e| Error::io(p.display().to_string(), e))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|path| {
            path.file_name()
                .and_then(|n| n.to_str())
                .is_some_and(|n| n.starts_with("data_batch_") && n.ends_with(".bin"))
        })
        .collect();
    batch_files.sort();
    if batch_files.is_empty() {
        return Err(Error::Data(format!("no data_batch_*.bin files under {}", p.display())));
    }
    let parts: Vec<Dataset> =
        batch_files.iter().map(load_cifar_binary).collect::<Result<_>>()?;
    crate::data::concat_datasets("cifar-train", &parts)
}
