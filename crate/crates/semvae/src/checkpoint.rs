//! Checkpoint directories `runs/<name>/epoch_<k>/` holding `model.bin`,
//! `optimizer.bin` (newest epoch only) and a `meta.json` sidecar.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use semvae_core::loss::LossConfig;
use semvae_core::optim::Adam;
use semvae_core::serialize::{load_params, params_to_bytes};
use semvae_core::train::{TrainConfig, Trainer};
use semvae_core::{ClassPalette, ClassWeights, MaskVae, ModelConfig};

use crate::error::{CliError, Result};
use crate::io::{read_file, write_file};

pub const MODEL_FILE: &str = "model.bin";
pub const OPTIMIZER_FILE: &str = "optimizer.bin";
pub const META_FILE: &str = "meta.json";
const FORMAT: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub format: u32,
    pub epoch: usize,
    pub model: ModelConfig,
    pub palette: ClassPalette,
    /// Weights computed on the training split.
    pub class_weights: ClassWeights,
    pub kl_weight: f64,
    pub weighted_ce: bool,
    pub train: TrainConfig,
}

impl CheckpointMeta {
    pub fn loss_config(&self) -> LossConfig {
        LossConfig { kl_weight: self.kl_weight, use_weighted_ce: self.weighted_ce, class_weights: self.class_weights.clone() }
    }
}

pub struct Checkpoint {
    pub dir: PathBuf,
    pub meta: CheckpointMeta,
    pub model: MaskVae<f32>,
}

pub fn epoch_dir(run_dir: &Path, epoch: usize) -> PathBuf {
    run_dir.join(format!("epoch_{epoch}"))
}

fn epoch_dirs(run_dir: &Path) -> Result<Vec<(usize, PathBuf)>> {
    let mut out = Vec::new();
    let Ok(rd) = std::fs::read_dir(run_dir) else {
        return Ok(out);
    };
    for entry in rd {
        let path = entry.map_err(|e| CliError::io(run_dir, e))?.path();
        let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
        if let Some(k) = name.strip_prefix("epoch_").and_then(|k| k.parse::<usize>().ok()) {
            if path.join(META_FILE).is_file() {
                out.push((k, path));
            }
        }
    }
    out.sort();
    Ok(out)
}

/// Accepts an epoch directory or a run directory (newest epoch wins).
pub fn resolve(path: &Path) -> Result<PathBuf> {
    if path.join(META_FILE).is_file() {
        return Ok(path.to_path_buf());
    }
    epoch_dirs(path)?
        .pop()
        .map(|(_, p)| p)
        .ok_or_else(|| CliError::Usage(format!("no checkpoint found at {}", path.display())))
}

pub fn latest_epoch(run_dir: &Path) -> Result<Option<usize>> {
    Ok(epoch_dirs(run_dir)?.last().map(|(k, _)| *k))
}

pub fn save(run_dir: &Path, trainer: &Trainer<f32>, palette: &ClassPalette, keep: usize) -> Result<PathBuf> {
    let epoch = trainer.epochs_done();
    let dir = epoch_dir(run_dir, epoch);
    let meta = CheckpointMeta {
        format: FORMAT,
        epoch,
        model: trainer.model.config().clone(),
        palette: palette.clone(),
        class_weights: trainer.loss.class_weights.clone(),
        kl_weight: trainer.loss.kl_weight,
        weighted_ce: trainer.loss.use_weighted_ce,
        train: trainer.config.clone(),
    };
    write_file(&dir.join(MODEL_FILE), &params_to_bytes(&trainer.model))?;
    write_file(&dir.join(OPTIMIZER_FILE), &trainer.optimizer.to_bytes())?;
    let json = serde_json::to_vec_pretty(&meta).map_err(|e| CliError::Runtime(e.to_string()))?;
    write_file(&dir.join(META_FILE), &json)?;
    let older = epoch_dirs(run_dir)?;
    for (i, (k, p)) in older.iter().enumerate() {
        if *k == epoch {
            continue;
        }
        let remove_all = keep > 0 && older.len() - i > keep;
        if remove_all {
            std::fs::remove_dir_all(p).map_err(|e| CliError::io(p, e))?;
        } else if p.join(OPTIMIZER_FILE).exists() {
            std::fs::remove_file(p.join(OPTIMIZER_FILE)).map_err(|e| CliError::io(p, e))?;
        }
    }
    Ok(dir)
}

pub fn load_meta(dir: &Path) -> Result<CheckpointMeta> {
    let bytes = read_file(&dir.join(META_FILE))?;
    let meta: CheckpointMeta =
        serde_json::from_slice(&bytes).map_err(|e| CliError::Format(format!("{}: {e}", dir.join(META_FILE).display())))?;
    if meta.format != FORMAT {
        return Err(CliError::Format(format!("unsupported checkpoint format {}", meta.format)));
    }
    meta.model.validate()?;
    if meta.palette.len() != meta.model.class_count || meta.class_weights.len() != meta.model.class_count {
        return Err(CliError::Format(format!(
            "checkpoint is inconsistent: {} classes, palette {}, weights {}",
            meta.model.class_count,
            meta.palette.len(),
            meta.class_weights.len()
        )));
    }
    Ok(meta)
}

/// Loads model weights, checking that every tensor matches the stored config.
pub fn load(path: &Path) -> Result<Checkpoint> {
    let dir = resolve(path)?;
    let meta = load_meta(&dir)?;
    let mut model = MaskVae::<f32>::new(meta.model.clone(), 0)?;
    load_params(&mut model, &read_file(&dir.join(MODEL_FILE))?)?;
    Ok(Checkpoint { dir, meta, model })
}

/// Rebuilds a trainer from a checkpoint that still has its optimizer state.
pub fn resume(path: &Path, train: TrainConfig) -> Result<(Trainer<f32>, ClassPalette)> {
    let ck = load(path)?;
    let opt_path = ck.dir.join(OPTIMIZER_FILE);
    if !opt_path.is_file() {
        return Err(CliError::Usage(format!("{} has no optimizer state to resume from", ck.dir.display())));
    }
    let mut optimizer = Adam::new(train.adam(), &ck.model);
    optimizer.load_bytes(&read_file(&opt_path)?)?;
    let loss = ck.meta.loss_config();
    let trainer = Trainer::resume(ck.model, optimizer, loss, train, ck.meta.epoch)?;
    Ok((trainer, ck.meta.palette))
}
