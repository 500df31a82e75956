//! Implementation of each CLI subcommand.

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use semvae_core::latent::{ClassRef, Edit, EditOp, EditPlan};
use semvae_core::mask::{compute_class_weights, compute_label_stats};
use semvae_core::train::{
    ablation_markdown, evaluate, run_ablation, split_indices, standard_ablation_grid, AblationRow, AblationVariant,
    EpochLog, Trainer,
};
use semvae_core::toy::ToyConfig;
use semvae_core::{ClassPalette, LabelMap, MaskVae, SegMetrics};

use crate::checkpoint;
use crate::config::RunConfig;
use crate::dataset::{self, Dataset, SisLayout};
use crate::edit::run_edit;
use crate::error::{CliError, Result};
use crate::io::{load_label_png, load_palette, save_color_png, save_label_png, write_file};

pub const METRICS_FILE: &str = "metrics.csv";

pub fn synth_data(out: &Path, n: usize, config: &ToyConfig, seed: u64) -> Result<()> {
    if n == 0 {
        return Err(CliError::Usage("--n must be positive".into()));
    }
    dataset::synth_dataset(out, n, config, seed)?;
    eprintln!("wrote {n} masks and {} to {}", dataset::PALETTE_FILE, out.display());
    Ok(())
}

/// Train and held-out subsets under the run's split.
pub fn split(data: &Dataset, fraction: f64, seed: u64) -> (Vec<LabelMap>, Vec<LabelMap>) {
    let (tr, te) = split_indices(data.masks.len(), fraction, seed);
    (tr.iter().map(|&i| data.masks[i].clone()).collect(), te.iter().map(|&i| data.masks[i].clone()).collect())
}

pub fn csv_header(palette: &ClassPalette) -> String {
    let mut s = String::from("epoch,wce,kl,total,acc,miou");
    for n in palette.names() {
        let _ = write!(s, ",iou_{n}");
    }
    s.push('\n');
    s
}

pub fn csv_row(log: &EpochLog, metrics: Option<&SegMetrics>, class_count: usize) -> String {
    let mut s = format!("{},{:.8},{:.8},{:.8}", log.epoch, log.mean.wce, log.mean.kl, log.mean.total);
    match metrics {
        Some(m) => {
            let _ = write!(s, ",{:.6},{:.6}", m.pixel_accuracy, m.mean_iou);
            for iou in &m.per_class_iou {
                match iou {
                    Some(v) => {
                        let _ = write!(s, ",{v:.6}");
                    }
                    None => s.push(','),
                }
            }
        }
        None => s.push_str(&",".repeat(2 + class_count)),
    }
    s.push('\n');
    s
}

#[derive(Clone, Debug, Default, serde::Serialize)]
pub struct TrainSummary {
    pub run_dir: PathBuf,
    pub epochs: Vec<EpochLog>,
    pub final_metrics: Option<SegMetrics>,
    pub wall_clock_secs: f64,
}

pub fn train(config: &RunConfig, resume: bool, force: bool) -> Result<TrainSummary> {
    let start = Instant::now();
    let data = dataset::load_dataset(&config.data)?;
    let size = data.mask_size()?;
    let palette = data.palette.clone();
    let train_cfg = config.train_config();
    let (train_set, test_set) = split(&data, train_cfg.train_fraction, train_cfg.seed);
    if train_set.is_empty() {
        return Err(CliError::Usage("training split is empty".into()));
    }
    let run_dir = config.run_dir();
    let existing = checkpoint::latest_epoch(&run_dir)?;
    let metrics_path = run_dir.join(METRICS_FILE);
    let mut trainer = match (existing, resume) {
        (Some(_), true) => {
            let (t, stored) = checkpoint::resume(&run_dir, train_cfg.clone())?;
            if stored != palette || t.model.config().mask_size != size {
                return Err(CliError::Usage("dataset does not match the checkpoint being resumed".into()));
            }
            t
        }
        (Some(k), false) if !force => {
            return Err(CliError::Usage(format!(
                "{} already holds epoch {k}; pass --resume or --force",
                run_dir.display()
            )))
        }
        _ => {
            if force && run_dir.exists() {
                std::fs::remove_dir_all(&run_dir).map_err(|e| CliError::io(&run_dir, e))?;
            }
            let model_cfg = config.model_config(palette.len(), size)?;
            let weights = compute_class_weights(&compute_label_stats(train_set.iter())?);
            let loss = semvae_core::loss::LossConfig {
                kl_weight: config.kl_weight,
                use_weighted_ce: config.weighted_ce,
                class_weights: weights,
            };
            let model = MaskVae::<f32>::new(model_cfg, train_cfg.seed)?;
            write_file(&metrics_path, csv_header(&palette).as_bytes())?;
            Trainer::new(model, loss, train_cfg.clone())?
        }
    };
    let mut summary = TrainSummary { run_dir: run_dir.clone(), ..Default::default() };
    while trainer.epochs_done() < train_cfg.epochs {
        let t0 = Instant::now();
        let log = trainer.run_epoch(&train_set)?;
        let metrics = if test_set.is_empty() { None } else { Some(evaluate(&trainer.model, &test_set, train_cfg.batch_size)?) };
        append(&metrics_path, &csv_row(&log, metrics.as_ref(), palette.len()))?;
        checkpoint::save(&run_dir, &trainer, &palette, config.keep_checkpoints)?;
        eprintln!(
            "epoch {:>3}  total {:.5}  wce {:.5}  kl {:.3}{}  ({:.1}s)",
            log.epoch,
            log.mean.total,
            log.mean.wce,
            log.mean.kl,
            metrics.as_ref().map(|m| format!("  acc {:.4}  miou {:.4}", m.pixel_accuracy, m.mean_iou)).unwrap_or_default(),
            t0.elapsed().as_secs_f64()
        );
        summary.final_metrics = metrics;
        summary.epochs.push(EpochLog { steps: Vec::new(), ..log });
    }
    summary.wall_clock_secs = start.elapsed().as_secs_f64();
    let json = serde_json::to_vec_pretty(&summary).map_err(|e| CliError::Runtime(e.to_string()))?;
    write_file(&run_dir.join("report.json"), &json)?;
    Ok(summary)
}

fn append(path: &Path, line: &str) -> Result<()> {
    let mut f = std::fs::OpenOptions::new().append(true).create(true).open(path).map_err(|e| CliError::io(path, e))?;
    f.write_all(line.as_bytes()).map_err(|e| CliError::io(path, e))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum EvalSplit {
    Train,
    Test,
    All,
}

pub fn eval(checkpoint_path: &Path, data_dir: &Path, which: EvalSplit, out: Option<&Path>) -> Result<SegMetrics> {
    let ck = checkpoint::load(checkpoint_path)?;
    let data = dataset::load_dataset(data_dir)?;
    if data.palette != ck.meta.palette {
        return Err(CliError::Usage("dataset palette does not match the checkpoint".into()));
    }
    if data.mask_size()? != ck.meta.model.mask_size {
        return Err(CliError::Usage(format!(
            "dataset masks are {0}x{0}, checkpoint expects {1}x{1}",
            data.mask_size()?,
            ck.meta.model.mask_size
        )));
    }
    let (train_set, test_set) = split(&data, ck.meta.train.train_fraction, ck.meta.train.seed);
    let set = match which {
        EvalSplit::Train => train_set,
        EvalSplit::Test => test_set,
        EvalSplit::All => data.masks.clone(),
    };
    if set.is_empty() {
        return Err(CliError::Usage("selected split is empty".into()));
    }
    let metrics = evaluate(&ck.model, &set, ck.meta.train.batch_size)?;
    if let Some(out) = out {
        let mut csv = String::from("class,iou\n");
        for (name, iou) in ck.meta.palette.names().iter().zip(&metrics.per_class_iou) {
            let _ = writeln!(csv, "{name},{}", iou.map(|v| format!("{v:.6}")).unwrap_or_default());
        }
        write_file(&out.join("per_class_iou.csv"), csv.as_bytes())?;
        let json = serde_json::to_vec_pretty(&metrics).map_err(|e| CliError::Runtime(e.to_string()))?;
        write_file(&out.join("metrics.json"), &json)?;
    }
    Ok(metrics)
}

/// Edit flags given on the command line instead of a plan file.
#[derive(Clone, Debug, Default)]
pub struct EditFlags {
    pub op: Option<EditOp>,
    pub class: Option<String>,
    pub noise_scale: Option<f64>,
    pub alpha: Option<f64>,
    pub target: Option<PathBuf>,
    pub truncation: Option<f64>,
}

impl EditFlags {
    pub fn into_plan(self) -> Result<EditPlan> {
        let Some(op) = self.op else {
            return Err(CliError::Usage("either --plan or --op is required".into()));
        };
        let class = self.class.ok_or_else(|| CliError::Usage("--class is required with --op".into()))?;
        let class = match class.parse::<usize>() {
            Ok(i) => ClassRef::Index(i),
            Err(_) => ClassRef::Name(class),
        };
        let edit = Edit {
            class,
            op,
            alpha: self.alpha,
            noise_scale: self.noise_scale,
            seed: None,
            target: self.target.map(|p| p.to_string_lossy().into_owned()),
            truncation: self.truncation,
        };
        Ok(EditPlan::new(vec![edit]))
    }
}

pub fn load_plan(path: &Path) -> Result<EditPlan> {
    let text = std::fs::read_to_string(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => CliError::Usage(format!("plan file {} not found", path.display())),
        _ => CliError::io(path, e),
    })?;
    serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("plan {}: {e}", path.display())))
}

#[derive(Clone, Debug, serde::Serialize)]
pub struct EditedFile {
    pub path: PathBuf,
    pub seed: u64,
    pub changed_pixels: Vec<u64>,
}

fn class_error(e: CliError, palette: &ClassPalette) -> CliError {
    match e {
        CliError::Core(semvae_core::Error::UnknownClass(c)) => {
            CliError::Usage(format!("unknown class `{c}`; available: {}", palette.names().join(", ")))
        }
        other => other,
    }
}

/// Writes `batch` edited variants of `input`; variant `i` uses plan seed
/// `seed + i` (edits with their own seed keep it).
pub fn edit(
    checkpoint_path: &Path,
    input: &Path,
    plan: EditPlan,
    seed: u64,
    batch: usize,
    out: &Path,
) -> Result<Vec<EditedFile>> {
    if batch == 0 {
        return Err(CliError::Usage("--batch must be positive".into()));
    }
    let ck = checkpoint::load(checkpoint_path)?;
    let palette = &ck.meta.palette;
    plan.resolve(palette).map_err(|e| class_error(e.into(), palette))?;
    let labels = load_label_png(input, palette.len())?;
    if labels.height() != ck.meta.model.mask_size || labels.width() != ck.meta.model.mask_size {
        return Err(CliError::Usage(format!(
            "input is {}x{}, model expects {2}x{2}",
            labels.height(),
            labels.width(),
            ck.meta.model.mask_size
        )));
    }
    let stem = input.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "mask".into());
    let mut target = |t: Option<&str>| -> Result<LabelMap> {
        let t = t.ok_or_else(|| CliError::Usage("interpolation needs a target mask".into()))?;
        load_label_png(Path::new(t), palette.len())
    };
    let mut written = Vec::with_capacity(batch);
    for i in 0..batch {
        let s = seed.wrapping_add(i as u64);
        let plan_i = plan.clone().with_seed(s);
        let outcome = run_edit(&ck.model, palette, &labels, &plan_i, &mut target)?;
        let name = if batch == 1 { format!("{stem}_edit") } else { format!("{stem}_edit_{i:03}") };
        let path = out.join(format!("{name}.png"));
        save_label_png(&outcome.edited, &path)?;
        save_color_png(&outcome.edited, palette, &out.join(format!("{name}_color.png")))?;
        written.push(EditedFile { path, seed: s, changed_pixels: outcome.changed_pixels });
    }
    Ok(written)
}

pub fn export_sis(input: &Path, palette_path: &Path, layout: SisLayout, id: Option<&str>, out: &Path) -> Result<Vec<PathBuf>> {
    let palette = load_palette(palette_path)?;
    let labels = load_label_png(input, palette.len())?;
    let stem = input.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "mask".into());
    let id = id.unwrap_or(&stem);
    if id.contains('_') {
        return Err(CliError::Usage(format!("export id `{id}` must not contain `_`")));
    }
    dataset::export_sis(&labels, &palette, layout, id, out)
}

pub fn ingest(input: &Path, palette: &ClassPalette, size: usize, out: &Path) -> Result<Vec<String>> {
    if size == 0 || !size.is_multiple_of(16) {
        return Err(CliError::Usage(format!("--size must be a positive multiple of 16, got {size}")));
    }
    let ids = dataset::ingest_directory(input, palette, size, out)?;
    if ids.is_empty() {
        return Err(CliError::Usage(format!("no `<id>_<part>.png` files in {}", input.display())));
    }
    Ok(ids)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum AblationGrid {
    /// All six configurations.
    Full,
    /// Only the full model and the plain three-layer variant.
    Direction,
}

pub fn ablation_variants(grid: AblationGrid) -> Vec<AblationVariant> {
    let all = standard_ablation_grid();
    match grid {
        AblationGrid::Full => all,
        AblationGrid::Direction => vec![all[2].clone(), all[5].clone()],
    }
}

pub fn ablation(config: &RunConfig, seeds: &[u64], grid: AblationGrid, out: &Path) -> Result<Vec<AblationRow>> {
    if seeds.is_empty() {
        return Err(CliError::Usage("at least one seed is required".into()));
    }
    let data = dataset::load_dataset(&config.data)?;
    let size = data.mask_size()?;
    let train_cfg = config.train_config();
    let (train_set, test_set) = split(&data, train_cfg.train_fraction, train_cfg.seed);
    if test_set.is_empty() {
        return Err(CliError::Usage("ablation needs a non-empty held-out split".into()));
    }
    let base = config.model_config(data.palette.len(), size)?;
    let weights = compute_class_weights(&compute_label_stats(train_set.iter())?);
    let rows = run_ablation::<f32>(
        &base,
        &ablation_variants(grid),
        &train_set,
        &test_set,
        &train_cfg,
        &weights,
        config.kl_weight,
        seeds,
        |v, seed, log| eprintln!("{} seed {seed} epoch {} total {:.5}", v.name, log.epoch, log.mean.total),
    )?;
    write_file(&out.join("ablation.md"), ablation_markdown(&rows).as_bytes())?;
    let mut csv = String::from("variant,seed,acc,miou");
    for n in data.palette.names() {
        let _ = write!(csv, ",iou_{n}");
    }
    csv.push('\n');
    for r in &rows {
        for run in &r.runs {
            let _ = write!(csv, "{},{},{:.6},{:.6}", r.variant.name, run.seed, run.metrics.pixel_accuracy, run.metrics.mean_iou);
            for iou in &run.metrics.per_class_iou {
                csv.push(',');
                if let Some(v) = iou {
                    let _ = write!(csv, "{v:.6}");
                }
            }
            csv.push('\n');
        }
    }
    write_file(&out.join("ablation.csv"), csv.as_bytes())?;
    Ok(rows)
}
