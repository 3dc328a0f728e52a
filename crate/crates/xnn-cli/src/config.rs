//! Experiment configuration: one JSON document combining the model and
//! training sections with the data source and output paths.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use xnn_core::data::Dataset;
use xnn_core::model::XnnConfig;
use xnn_core::train::TrainConfig;
use xnn_core::Error;

/// `model` section: like [`XnnConfig`], but `input_dim` and `num_classes`
/// may be omitted and inferred from the data.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelSection {
    #[serde(default)]
    pub input_dim: Option<usize>,
    pub k: usize,
    pub base_width: usize,
    #[serde(default = "default_sublayers")]
    pub sublayers_per_block: usize,
    pub d_model: usize,
    #[serde(default = "default_heads")]
    pub heads: usize,
    #[serde(default)]
    pub head_hidden: Option<usize>,
    #[serde(default)]
    pub num_classes: Option<usize>,
    #[serde(default = "default_leaky_alpha")]
    pub leaky_alpha: f64,
    #[serde(default)]
    pub seed: u64,
}

fn default_sublayers() -> usize {
    3
}

fn default_heads() -> usize {
    8
}

fn default_leaky_alpha() -> f64 {
    0.01
}

fn default_train_fraction() -> f64 {
    0.8
}

fn default_standardize() -> bool {
    true
}

fn default_with_control() -> bool {
    true
}

fn default_has_header() -> bool {
    true
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub data_csv: PathBuf,
    pub label_column: String,
    #[serde(default = "default_has_header")]
    pub has_header: bool,
    pub output_dir: PathBuf,
    #[serde(default = "default_train_fraction")]
    pub train_fraction: f64,
    #[serde(default)]
    pub split_seed: u64,
    #[serde(default = "default_standardize")]
    pub standardize: bool,
    #[serde(default = "default_with_control")]
    pub with_control: bool,
    #[serde(default)]
    pub emit_plot_script: bool,
    pub model: ModelSection,
    pub train: TrainConfig,
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<ExperimentConfig, Error> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config {
            field: "config".into(),
            message: format!("cannot read {}: {e}", path.display()),
        })?;
        serde_json::from_str(&text).map_err(|e| Error::Config {
            field: "config".into(),
            message: format!("invalid JSON in {}: {e}", path.display()),
        })
    }

    /// Apply a single seed to every seeded component (model init, shuffle,
    /// split), as `XNN_SEED` and `--seed` do.
    pub fn override_seeds(&mut self, seed: u64) {
        self.model.seed = seed;
        self.train.seed = seed;
        self.split_seed = seed;
    }

    /// Resolve the model section against the loaded data, filling inferred
    /// fields and validating stated ones.
    pub fn resolve_model(&self, ds: &Dataset) -> Result<XnnConfig, Error> {
        if let Some(stated) = self.model.input_dim {
            if stated != ds.feature_dim() {
                return Err(Error::Config {
                    field: "input_dim".into(),
                    message: format!(
                        "config states {stated} but the data has {} features",
                        ds.feature_dim()
                    ),
                });
            }
        }
        if let Some(stated) = self.model.num_classes {
            if stated < ds.num_classes() {
                return Err(Error::Config {
                    field: "num_classes".into(),
                    message: format!(
                        "config states {stated} but the data has {} classes",
                        ds.num_classes()
                    ),
                });
            }
        }
        let cfg = XnnConfig {
            input_dim: self.model.input_dim.unwrap_or_else(|| ds.feature_dim()),
            k: self.model.k,
            base_width: self.model.base_width,
            sublayers_per_block: self.model.sublayers_per_block,
            d_model: self.model.d_model,
            heads: self.model.heads,
            head_hidden: self.model.head_hidden,
            num_classes: self.model.num_classes.unwrap_or_else(|| ds.num_classes()),
            leaky_alpha: self.model.leaky_alpha,
            seed: self.model.seed,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}
