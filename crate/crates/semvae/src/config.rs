//! Run configuration files (TOML key-value form).
//!
//! ```toml
//! name = "toy"
//! data = "data/toy"
//! runs = "runs"
//! preset = "toy"
//! epochs = 20
//! batch_size = 16
//! learning_rate = 1e-4
//! seed = 0
//! train_fraction = 0.9090909
//! kl_weight = 0.0005
//! weighted_ce = true
//! lstm_layers = 3
//! bidirectional = true
//! ```
//!
//! Relative paths are taken relative to the directory holding the file.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use semvae_core::loss::DEFAULT_KL_WEIGHT;
use semvae_core::train::TrainConfig;
use semvae_core::ModelConfig;

use crate::error::{CliError, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    /// Narrow decoder for small synthetic masks.
    #[default]
    Toy,
    /// Full-width decoder for 256×256 masks.
    Reference,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub name: String,
    /// Directory of label PNGs with a `palette.tsv`.
    pub data: PathBuf,
    #[serde(default = "default_runs")]
    pub runs: PathBuf,
    #[serde(default)]
    pub preset: Preset,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default = "default_lr")]
    pub learning_rate: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_fraction")]
    pub train_fraction: f64,
    #[serde(default = "default_kl")]
    pub kl_weight: f64,
    #[serde(default = "yes")]
    pub weighted_ce: bool,
    #[serde(default = "default_layers")]
    pub lstm_layers: usize,
    #[serde(default = "yes")]
    pub bidirectional: bool,
    #[serde(default)]
    pub per_class_encoders: bool,
    pub decoder_base_channels: Option<usize>,
    pub decoder_stage_channels: Option<Vec<usize>>,
    pub grad_clip: Option<f64>,
    /// Keep only the newest `n` epoch directories (0 keeps all).
    #[serde(default)]
    pub keep_checkpoints: usize,
}

fn default_runs() -> PathBuf {
    "runs".into()
}
fn default_epochs() -> usize {
    20
}
fn default_batch() -> usize {
    16
}
fn default_lr() -> f64 {
    1e-4
}
fn default_fraction() -> f64 {
    10.0 / 11.0
}
fn default_kl() -> f64 {
    DEFAULT_KL_WEIGHT
}
fn default_layers() -> usize {
    3
}
fn yes() -> bool {
    true
}

impl RunConfig {
    pub fn parse(text: &str, base: &Path) -> Result<Self> {
        let mut cfg: RunConfig = toml::from_str(text).map_err(|e| CliError::Usage(format!("config: {e}")))?;
        if cfg.name.is_empty() || cfg.name.contains(['/', '\\']) {
            return Err(CliError::Usage(format!("config: invalid run name {:?}", cfg.name)));
        }
        for p in [&mut cfg.data, &mut cfg.runs] {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        cfg.train_config().validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => CliError::Usage(format!("config file {} not found", path.display())),
            _ => CliError::io(path, e),
        })?;
        Self::parse(&text, path.parent().unwrap_or(Path::new(".")))
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            learning_rate: self.learning_rate,
            seed: self.seed,
            train_fraction: self.train_fraction,
            grad_clip: self.grad_clip,
        }
    }

    pub fn model_config(&self, class_count: usize, mask_size: usize) -> Result<ModelConfig> {
        let mut m = match self.preset {
            Preset::Toy => ModelConfig::toy(class_count, mask_size),
            Preset::Reference => ModelConfig { mask_size, ..ModelConfig::reference(class_count) },
        }
        .with_lstm(self.lstm_layers, self.bidirectional);
        m.per_class_encoders = self.per_class_encoders;
        if let Some(b) = self.decoder_base_channels {
            m.decoder_base_channels = b;
        }
        if let Some(s) = &self.decoder_stage_channels {
            m.decoder_stage_channels = s.clone();
        }
        m.validate()?;
        Ok(m)
    }

    pub fn run_dir(&self) -> PathBuf {
        self.runs.join(&self.name)
    }
}
