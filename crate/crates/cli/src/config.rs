//! JSON experiment configuration.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use pgu_core::data::{load_idx, make_blobs, make_patterns, BlobsConfig, Dataset, PatternsConfig, PoisonSpec, SplitMode, SplitSpec, Splits};
use pgu_core::eval::MiaGroups;
use pgu_core::nn::{cnn_specs, mlp_specs, InputShape, LayerSpec, TrainConfig};
use pgu_core::unlearn::UnlearnConfig;
use pgu_core::Matrix;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case")]
pub enum DatasetConfig {
    Blobs(BlobsConfig),
    Patterns(PatternsConfig),
    /// MNIST-layout files. The test file is halved into validation (first
    /// half) and test (second half).
    Idx {
        train_images: PathBuf,
        train_labels: PathBuf,
        test_images: PathBuf,
        test_labels: PathBuf,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "arch", rename_all = "snake_case")]
pub enum ModelConfig {
    /// `d_in → hidden → hidden → C`.
    Mlp {
        #[serde(default = "default_hidden")]
        hidden: usize,
    },
    /// Reference CNN for single-channel square images.
    Cnn,
    Layers { layers: Vec<LayerSpec> },
}

fn default_hidden() -> usize {
    64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnlearnBlock {
    #[serde(flatten)]
    pub params: UnlearnConfig,
    pub split: SplitSpec,
    /// Incremental regime: `split` must be per-class random and is divided
    /// into this many disjoint rounds of `n_per_class` each.
    #[serde(default)]
    pub rounds: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MiaBlock {
    /// Models per fleet (positive and negative fleets are the same size).
    pub k: usize,
    #[serde(default)]
    pub groups: MiaGroups,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    /// Seed for weight initialisation.
    pub seed: u64,
    #[serde(default = "default_output")]
    pub output_dir: PathBuf,
    pub dataset: DatasetConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub unlearn: UnlearnBlock,
    #[serde(default)]
    pub mia: Option<MiaBlock>,
    #[serde(default)]
    pub poison: Option<PoisonSpec>,
}

fn default_output() -> PathBuf {
    PathBuf::from("out")
}

impl ExperimentConfig {
    /// Reads and validates a config. Relative dataset paths resolve against
    /// the config file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let mut cfg: ExperimentConfig =
            serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new(""));
        if let DatasetConfig::Idx { train_images, train_labels, test_images, test_labels } = &mut cfg.dataset {
            for p in [train_images, train_labels, test_images, test_labels] {
                if p.is_relative() {
                    *p = base.join(&*p);
                }
                if !p.exists() {
                    return Err(CliError::io(p.clone(), std::io::ErrorKind::NotFound.into()));
                }
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        self.unlearn.params.validate()?;
        if let Some(rounds) = self.unlearn.rounds {
            if rounds == 0 {
                return Err(CliError::Config("rounds must be at least 1".into()));
            }
            if !matches!(self.unlearn.split.mode, SplitMode::PerClassRandom { .. }) {
                return Err(CliError::Config("incremental rounds need a per_class_random split".into()));
            }
        }
        if let Some(m) = &self.mia {
            if m.k == 0 {
                return Err(CliError::Config("mia.k must be positive".into()));
            }
        }
        Ok(())
    }

    pub fn splits(&self) -> Result<Splits> {
        Ok(match &self.dataset {
            DatasetConfig::Blobs(b) => make_blobs(b)?,
            DatasetConfig::Patterns(p) => make_patterns(p)?,
            DatasetConfig::Idx { train_images, train_labels, test_images, test_labels } => {
                let train = load_idx(train_images, train_labels)?;
                let test = load_idx(test_images, test_labels)?;
                split_idx(train, test)?
            }
        })
    }

    pub fn layer_specs(&self, shape: InputShape, classes: usize) -> Result<Vec<LayerSpec>> {
        match (&self.model, shape) {
            (ModelConfig::Mlp { hidden }, _) => Ok(mlp_specs(shape.len(), *hidden, classes)),
            (ModelConfig::Cnn, InputShape::Image { channels: 1, height, width }) if height == width => {
                Ok(cnn_specs(height, classes))
            }
            (ModelConfig::Cnn, _) => Err(CliError::Config("the reference CNN needs single-channel square images".into())),
            (ModelConfig::Layers { layers }, _) => Ok(layers.clone()),
        }
    }

    /// Classes removed by a class-removal split, if any.
    pub fn removed_classes(&self) -> BTreeSet<usize> {
        match &self.unlearn.split.mode {
            SplitMode::ClassRemoval { classes } => classes.clone(),
            _ => BTreeSet::new(),
        }
    }
}

/// Relabels the test file's ids after the training ids and halves it into
/// validation and test sets.
fn split_idx(train: Dataset, test: Dataset) -> Result<Splits> {
    if train.shape() != test.shape() {
        return Err(CliError::Config("training and test images differ in size".into()));
    }
    let classes = train.num_classes().max(test.num_classes());
    let offset = train.len() as u64;
    let rebuild = |d: &Dataset, first_id: u64| -> Result<Dataset> {
        Ok(Dataset::new(
            Matrix::new(d.len(), d.shape().len(), d.features().as_slice().to_vec())?,
            d.labels().to_vec(),
            classes,
            (first_id..first_id + d.len() as u64).collect(),
            d.shape(),
        )?)
    };
    let half = test.len() / 2;
    let val_idx: Vec<usize> = (0..half).collect();
    let test_idx: Vec<usize> = (half..test.len()).collect();
    Ok(Splits {
        train: rebuild(&train, 0)?,
        val: rebuild(&test.subset(&val_idx), offset)?,
        test: rebuild(&test.subset(&test_idx), offset + half as u64)?,
    })
}
