//! Optimization loop, evaluation and ablation runs.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};

use crate::error::{Error, Result};
use crate::loss::{kl_grad, weighted_cross_entropy_grad, LossBreakdown, LossConfig};
use crate::mask::{ClassWeights, LabelMap};
use crate::metrics::{IouAccumulator, SegMetrics};
use crate::model::{MaskVae, Mode, ModelConfig};
use crate::nn::Module;
use crate::optim::{Adam, AdamConfig};
use crate::scalar::Scalar;

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
    /// Fraction of samples used for training; the rest is held out.
    pub train_fraction: f64,
    pub grad_clip: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { epochs: 20, batch_size: 16, learning_rate: 1e-4, seed: 0, train_fraction: 28.0 / 30.0, grad_clip: None }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config("epochs and batch_size must be positive".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!("learning_rate must be positive, got {}", self.learning_rate)));
        }
        if !(self.train_fraction > 0.0 && self.train_fraction <= 1.0) {
            return Err(Error::Config(format!("train_fraction must be in (0, 1], got {}", self.train_fraction)));
        }
        if let Some(c) = self.grad_clip {
            if !(c > 0.0) {
                return Err(Error::Config("grad_clip must be positive".into()));
            }
        }
        Ok(())
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig { learning_rate: self.learning_rate, grad_clip: self.grad_clip, ..AdamConfig::default() }
    }
}

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct EpochLog {
    /// 1-based.
    pub epoch: usize,
    /// Sample-weighted means over the epoch.
    pub mean: LossBreakdown,
    pub steps: Vec<LossBreakdown>,
}

#[derive(Clone, Debug, Default, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TrainReport {
    pub epochs: Vec<EpochLog>,
    pub eval: Option<SegMetrics>,
    pub wall_clock_secs: Option<f64>,
}

/// Deterministic train/test split of `n` sample indices.
pub fn split_indices(n: usize, train_fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(u64::MAX);
    shuffle(&mut idx, &mut rng);
    let mut n_train = libm::round(n as f64 * train_fraction) as usize;
    if n > 1 && train_fraction < 1.0 {
        n_train = n_train.clamp(1, n - 1);
    }
    let test = idx.split_off(n_train.min(n));
    (idx, test)
}

fn shuffle<T>(v: &mut [T], rng: &mut impl RngCore) {
    for i in (1..v.len()).rev() {
        let j = (rng.next_u64() % (i as u64 + 1)) as usize;
        v.swap(i, j);
    }
}

/// Model, optimizer state and loss settings advanced one epoch at a time.
///
/// Each epoch draws its shuffling and sampling noise from a stream derived
/// from `(seed, epoch)`, so resuming from a saved epoch reproduces the rest
/// of the run.
pub struct Trainer<T> {
    pub model: MaskVae<T>,
    pub optimizer: Adam<T>,
    pub loss: LossConfig,
    pub config: TrainConfig,
    epochs_done: usize,
    steps_done: usize,
}

impl<T: Scalar> Trainer<T> {
    pub fn new(model: MaskVae<T>, loss: LossConfig, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        loss.validate(model.config().class_count)?;
        let optimizer = Adam::new(config.adam(), &model);
        Ok(Self { model, optimizer, loss, config, epochs_done: 0, steps_done: 0 })
    }

    /// Continues a run whose first `epochs_done` epochs produced `model` and
    /// `optimizer`.
    pub fn resume(model: MaskVae<T>, optimizer: Adam<T>, loss: LossConfig, config: TrainConfig, epochs_done: usize) -> Result<Self> {
        let mut t = Self::new(model, loss, config)?;
        t.steps_done = optimizer.steps_taken() as usize;
        t.optimizer = optimizer;
        t.epochs_done = epochs_done;
        Ok(t)
    }

    pub fn epochs_done(&self) -> usize {
        self.epochs_done
    }

    /// One optimization step on a batch; returns the loss before the update.
    pub fn step(&mut self, batch: &[&LabelMap], rng: &mut impl RngCore) -> Result<LossBreakdown> {
        let pass = self.model.forward_batch(batch, Mode::Train, rng)?;
        let weights = self.loss.effective_weights();
        let (wce, dlogits) = weighted_cross_entropy_grad(&pass.logits, batch, &weights)?;
        let (kl, mut dmu, mut dlogvar) = kl_grad(&pass.mu, &pass.logvar);
        let lambda = T::lit(self.loss.kl_weight);
        dmu.iter_mut().for_each(|g| *g *= lambda);
        dlogvar.iter_mut().for_each(|g| *g *= lambda);
        let (wce, kl) = (wce.as_f64(), kl.as_f64());
        let total = wce + self.loss.kl_weight * kl;
        if !total.is_finite() {
            return Err(Error::Diverged { step: self.steps_done, wce, kl });
        }
        self.model.zero_grad();
        self.model.backward_batch(&pass, &dlogits, &dmu, &dlogvar);
        self.optimizer.step(&mut self.model);
        self.steps_done += 1;
        Ok(LossBreakdown { total, wce, kl })
    }

    pub fn run_epoch(&mut self, train: &[LabelMap]) -> Result<EpochLog> {
        if train.is_empty() {
            return Err(Error::Empty("training split is empty".into()));
        }
        let epoch = self.epochs_done + 1;
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed);
        rng.set_stream(epoch as u64);
        let mut order: Vec<usize> = (0..train.len()).collect();
        shuffle(&mut order, &mut rng);
        let mut steps = Vec::new();
        let (mut wce, mut kl, mut total) = (0.0, 0.0, 0.0);
        for chunk in order.chunks(self.config.batch_size) {
            let batch: Vec<&LabelMap> = chunk.iter().map(|&i| &train[i]).collect();
            let l = self.step(&batch, &mut rng)?;
            let n = chunk.len() as f64;
            wce += l.wce * n;
            kl += l.kl * n;
            total += l.total * n;
            steps.push(l);
        }
        let n = train.len() as f64;
        self.epochs_done = epoch;
        Ok(EpochLog { epoch, mean: LossBreakdown { total: total / n, wce: wce / n, kl: kl / n }, steps })
    }
}

/// Inference-mode reconstruction of every map, metrics accumulated over the
/// whole set before dividing.
pub fn evaluate<T: Scalar>(model: &MaskVae<T>, data: &[LabelMap], batch_size: usize) -> Result<SegMetrics> {
    let cfg = model.config();
    let mut acc = IouAccumulator::new(cfg.class_count);
    for chunk in data.chunks(batch_size.max(1)) {
        let batch: Vec<&LabelMap> = chunk.iter().collect();
        let pass = model.forward_batch(&batch, Mode::Infer, &mut ChaCha8Rng::seed_from_u64(0))?;
        for (i, gt) in chunk.iter().enumerate() {
            let pred = pass.sample_logits(i, cfg.class_count, cfg.mask_size).to_labels();
            acc.add(&pred, gt)?;
        }
    }
    if data.is_empty() {
        return Err(Error::Empty("evaluation set is empty".into()));
    }
    Ok(acc.finish())
}

/// Trains for `config.epochs` epochs, calling `on_epoch` after each, then
/// evaluates on `test` when it is non-empty.
pub fn train<T: Scalar>(
    trainer: &mut Trainer<T>,
    train_set: &[LabelMap],
    test_set: &[LabelMap],
    mut on_epoch: impl FnMut(&Trainer<T>, &EpochLog) -> Result<()>,
) -> Result<TrainReport> {
    let mut report = TrainReport::default();
    while trainer.epochs_done() < trainer.config.epochs {
        let log = trainer.run_epoch(train_set)?;
        on_epoch(trainer, &log)?;
        report.epochs.push(log);
    }
    if !test_set.is_empty() {
        report.eval = Some(evaluate(&trainer.model, test_set, trainer.config.batch_size)?);
    }
    Ok(report)
}

/// One configuration of the ablation grid.
#[derive(Clone, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct AblationVariant {
    pub name: String,
    pub lstm_layers: usize,
    pub bidirectional: bool,
    pub weighted_ce: bool,
}

impl AblationVariant {
    pub fn new(name: &str, lstm_layers: usize, bidirectional: bool, weighted_ce: bool) -> Self {
        Self { name: name.into(), lstm_layers, bidirectional, weighted_ce }
    }

    pub fn apply(&self, base: &ModelConfig) -> ModelConfig {
        base.clone().with_lstm(self.lstm_layers, self.bidirectional)
    }
}

/// The six rows of the reconstruction ablation, full model last.
pub fn standard_ablation_grid() -> Vec<AblationVariant> {
    alloc::vec![
        AblationVariant::new("w/o LSTM block", 0, false, false),
        AblationVariant::new("1 LSTM w/o Bidir. w/o weighted CE", 1, false, false),
        AblationVariant::new("3 LSTMs w/o Bidir. w/o weighted CE", 3, false, false),
        AblationVariant::new("3 LSTMs w/o Bidir", 3, false, true),
        AblationVariant::new("3 LSTMs w/o weighted CE", 3, true, false),
        AblationVariant::new("Full model", 3, true, true),
    ]
}

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct AblationRun {
    pub seed: u64,
    pub report: TrainReport,
    pub metrics: SegMetrics,
}

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct AblationRow {
    pub variant: AblationVariant,
    pub runs: Vec<AblationRun>,
}

impl AblationRow {
    pub fn median_miou(&self) -> f64 {
        median(self.runs.iter().map(|r| r.metrics.mean_iou).collect())
    }

    pub fn median_accuracy(&self) -> f64 {
        median(self.runs.iter().map(|r| r.metrics.pixel_accuracy).collect())
    }
}

pub fn median(mut v: Vec<f64>) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    v.sort_by(|a, b| a.partial_cmp(b).unwrap_or(core::cmp::Ordering::Equal));
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

/// Trains and evaluates every variant under every seed. The seed drives
/// both weight initialisation and batch order; the data split is fixed by
/// the caller.
pub fn run_ablation<T: Scalar>(
    base: &ModelConfig,
    variants: &[AblationVariant],
    train_set: &[LabelMap],
    test_set: &[LabelMap],
    train_config: &TrainConfig,
    class_weights: &ClassWeights,
    kl_weight: f64,
    seeds: &[u64],
    mut progress: impl FnMut(&AblationVariant, u64, &EpochLog),
) -> Result<Vec<AblationRow>> {
    let mut rows = Vec::with_capacity(variants.len());
    for variant in variants {
        let mut runs = Vec::with_capacity(seeds.len());
        for &seed in seeds {
            let model = MaskVae::<T>::new(variant.apply(base), seed)?;
            let loss = LossConfig { kl_weight, use_weighted_ce: variant.weighted_ce, class_weights: class_weights.clone() };
            let cfg = TrainConfig { seed, ..train_config.clone() };
            let mut trainer = Trainer::new(model, loss, cfg)?;
            let report = train(&mut trainer, train_set, &[], |_, log| {
                progress(variant, seed, log);
                Ok(())
            })?;
            let metrics = evaluate(&trainer.model, test_set, train_config.batch_size)?;
            runs.push(AblationRun { seed, report, metrics });
        }
        rows.push(AblationRow { variant: variant.clone(), runs });
    }
    Ok(rows)
}

/// Markdown table with median mIoU and accuracy (percent) per variant.
pub fn ablation_markdown(rows: &[AblationRow]) -> String {
    let mut s = String::from("| Method | mIoU | Acc |\n|---|---|---|\n");
    for r in rows {
        s.push_str(&format!(
            "| {} | {:.2} | {:.2} |\n",
            r.variant.name,
            100.0 * r.median_miou(),
            100.0 * r.median_accuracy()
        ));
    }
    s
}
