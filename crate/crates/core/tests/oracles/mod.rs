//! Reference implementations written independently of the library code:
//! plain per-pixel / per-element loops with no shared helpers.
#![allow(dead_code)]

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};
use semvae_core::loss::{kl_grad, weighted_cross_entropy_grad};
use semvae_core::nn::Module;
use semvae_core::{ClassWeights, LabelMap, MaskVae, Mode, ModelConfig};

/// Small architecture with every block type present, cheap enough for
/// finite differences in f64.
pub fn tiny_config(class_count: usize) -> ModelConfig {
    ModelConfig {
        class_count,
        mask_size: 16,
        latent_dim: 16,
        encoder_hidden: 8,
        lstm_layers: 2,
        bidirectional: true,
        lstm_hidden_per_direction: 8,
        ff_expansion: 2,
        decoder_base_channels: 4,
        decoder_stage_channels: vec![4, 2],
        groupnorm_groups: 2,
        decoder_init_size: 4,
        per_class_encoders: false,
    }
}

pub fn uniform(rng: &mut impl RngCore, lo: f64, hi: f64) -> f64 {
    lo + (hi - lo) * ((rng.next_u64() >> 11) as f64 / (1u64 << 53) as f64)
}

pub fn random_labels(seed: u64, h: usize, w: usize, c: usize) -> LabelMap {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let labels = (0..h * w).map(|_| (rng.next_u32() % c as u32) as u8).collect();
    LabelMap::new(h, w, c, labels).unwrap()
}

/// Random map with a few large blobs per class, closer to real masks than
/// i.i.d. pixel noise.
pub fn blobby_labels(seed: u64, h: usize, w: usize, c: usize) -> LabelMap {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut labels = vec![0u8; h * w];
    for class in 1..c {
        let cy = uniform(&mut rng, 0.0, h as f64);
        let cx = uniform(&mut rng, 0.0, w as f64);
        let r = uniform(&mut rng, 1.0, h as f64 / 3.0);
        for y in 0..h {
            for x in 0..w {
                let (dy, dx) = (y as f64 - cy, x as f64 - cx);
                if dy * dy + dx * dx <= r * r {
                    labels[y * w + x] = class as u8;
                }
            }
        }
    }
    LabelMap::new(h, w, c, labels).unwrap()
}

/// Mean over pixels of `-w[y] * ln softmax(logits)[y]`, logits laid out
/// `sample × class × pixel`.
pub fn weighted_ce_oracle(logits: &[f64], labels: &[&LabelMap], c: usize, weights: &[f64]) -> f64 {
    let hw = labels[0].pixel_count();
    let mut total = 0.0;
    let mut count = 0usize;
    for (s, lm) in labels.iter().enumerate() {
        for p in 0..hw {
            let y = lm.labels()[p] as usize;
            let mut denom = 0.0;
            for k in 0..c {
                denom += logits[(s * c + k) * hw + p].exp();
            }
            let prob = logits[(s * c + y) * hw + p].exp() / denom;
            total += -weights[y] * prob.ln();
            count += 1;
        }
    }
    total / count as f64
}

pub fn kl_oracle(mu: &[f64], logvar: &[f64]) -> f64 {
    let mut s = 0.0;
    for i in 0..mu.len() {
        s += -0.5 * (1.0 + logvar[i] - mu[i] * mu[i] - logvar[i].exp());
    }
    s / mu.len() as f64
}

pub struct ConfusionMetrics {
    pub accuracy: f64,
    pub iou: Vec<Option<f64>>,
    pub miou: f64,
}

/// Builds the full confusion matrix and reads every metric off it.
pub fn confusion_oracle(pairs: &[(&LabelMap, &LabelMap)], c: usize) -> ConfusionMetrics {
    let mut m = vec![vec![0u64; c]; c];
    for (pred, gt) in pairs {
        for (&p, &g) in pred.labels().iter().zip(gt.labels()) {
            m[g as usize][p as usize] += 1;
        }
    }
    let total: u64 = m.iter().flatten().sum();
    let diag: u64 = (0..c).map(|k| m[k][k]).sum();
    let mut iou = Vec::with_capacity(c);
    for k in 0..c {
        let row: u64 = m[k].iter().sum();
        let col: u64 = (0..c).map(|g| m[g][k]).sum();
        let union = row + col - m[k][k];
        iou.push(if union == 0 { None } else { Some(m[k][k] as f64 / union as f64) });
    }
    let present: Vec<f64> = iou.iter().flatten().copied().collect();
    ConfusionMetrics {
        accuracy: diag as f64 / total as f64,
        miou: present.iter().sum::<f64>() / present.len() as f64,
        iou,
    }
}

/// `(1 / N·H·W) Σ_n Σ_y Σ_x [label == c]` by direct triple loop.
pub fn coverage_oracle(maps: &[LabelMap], c: usize) -> Vec<f64> {
    let mut counts = vec![0u64; c];
    let mut pixels = 0u64;
    for m in maps {
        for y in 0..m.height() {
            for x in 0..m.width() {
                counts[m.get(y, x) as usize] += 1;
                pixels += 1;
            }
        }
    }
    counts.iter().map(|&n| n as f64 / pixels as f64).collect()
}

/// `|a - n| / max(|a|, |n|)`, zero when both vanish below `floor`.
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    let scale = analytic.abs().max(numeric.abs());
    if scale < floor {
        0.0
    } else {
        (analytic - numeric).abs() / scale
    }
}

pub struct GradientCheck {
    pub worst: f64,
    pub worst_at: String,
    pub tensors: usize,
    pub checked: usize,
}

const KL_WEIGHT: f64 = 0.5;
const STEP: f64 = 1e-4;
const SAMPLES_PER_TENSOR: usize = 6;

fn weights(c: usize) -> ClassWeights {
    ClassWeights { w: (0..c).map(|k| 0.2 + 0.7 * k as f64 / c as f64).collect() }
}

fn objective(model: &MaskVae<f64>, batch: &[&LabelMap], w: &ClassWeights) -> f64 {
    let pass = model.forward_batch(batch, Mode::Train, &mut ChaCha8Rng::seed_from_u64(42)).unwrap();
    weighted_ce_oracle(&pass.logits, batch, w.len(), &w.w) + KL_WEIGHT * kl_oracle(&pass.mu, &pass.logvar)
}

fn analytic(model: &mut MaskVae<f64>, batch: &[&LabelMap], w: &ClassWeights) {
    let pass = model.forward_batch(batch, Mode::Train, &mut ChaCha8Rng::seed_from_u64(42)).unwrap();
    let (_, dlogits) = weighted_cross_entropy_grad(&pass.logits, batch, w).unwrap();
    let (_, dmu, dlv) = kl_grad(&pass.mu, &pass.logvar);
    let dmu: Vec<f64> = dmu.iter().map(|g| g * KL_WEIGHT).collect();
    let dlv: Vec<f64> = dlv.iter().map(|g| g * KL_WEIGHT).collect();
    model.zero_grad();
    model.backward_batch(&pass, &dlogits, &dmu, &dlv);
}

/// Central differences on a spread of entries from every parameter tensor.
pub fn gradient_check(config: ModelConfig, seed: u64) -> GradientCheck {
    let c = config.class_count;
    let maps: Vec<LabelMap> = (0..2).map(|s| blobby_labels(seed * 7 + s, config.mask_size, config.mask_size, c)).collect();
    let batch: Vec<&LabelMap> = maps.iter().collect();
    let w = weights(c);
    let mut model = MaskVae::<f64>::new(config, seed).unwrap();
    analytic(&mut model, &batch, &w);

    let mut grads: Vec<(String, Vec<f64>)> = Vec::new();
    model.visit("", &mut |name, p| grads.push((name.to_string(), p.grad.clone())));

    let mut worst = (0.0f64, String::new());
    let mut checked = 0;
    for (t, (name, grad)) in grads.iter().enumerate() {
        let n = grad.len();
        let picks: Vec<usize> = (0..SAMPLES_PER_TENSOR.min(n)).map(|i| (i * 7919 + t * 31) % n).collect();
        for &i in &picks {
            let eval = |delta: f64, model: &mut MaskVae<f64>| {
                let mut idx = 0;
                model.visit_mut("", &mut |_, p| {
                    if idx == t {
                        p.value[i] += delta;
                    }
                    idx += 1;
                });
                let v = objective(model, &batch, &w);
                let mut idx = 0;
                model.visit_mut("", &mut |_, p| {
                    if idx == t {
                        p.value[i] -= delta;
                    }
                    idx += 1;
                });
                v
            };
            let numeric = (eval(STEP, &mut model) - eval(-STEP, &mut model)) / (2.0 * STEP);
            let err = relative_error(grad[i], numeric, 1e-7);
            checked += 1;
            if err > worst.0 {
                worst = (err, format!("{name}[{i}]: analytic {} numeric {numeric}", grad[i]));
            }
        }
    }
    GradientCheck { worst: worst.0, worst_at: worst.1, tensors: grads.len(), checked }
}

/// Worst relative error of the analytic loss gradients with respect to the
/// logits, `mu` and `logvar` on random inputs.
pub fn loss_gradient_check(seed: u64) -> f64 {
    let h = 1e-4;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (c, side) = (4, 3);
    let maps = [random_labels(seed, side, side, c), random_labels(seed + 1, side, side, c)];
    let refs: Vec<&LabelMap> = maps.iter().collect();
    let logits: Vec<f64> = (0..2 * c * side * side).map(|_| uniform(&mut rng, -4.0, 4.0)).collect();
    let w: Vec<f64> = (0..c).map(|_| uniform(&mut rng, 0.05, 1.0)).collect();
    let (_, grad) = weighted_cross_entropy_grad(&logits, &refs, &ClassWeights { w: w.clone() }).unwrap();
    let mut worst: f64 = 0.0;
    for i in 0..logits.len() {
        let mut p = logits.clone();
        p[i] += h;
        let up = weighted_ce_oracle(&p, &refs, c, &w);
        p[i] -= 2.0 * h;
        let down = weighted_ce_oracle(&p, &refs, c, &w);
        worst = worst.max(relative_error(grad[i], (up - down) / (2.0 * h), 1e-10));
    }

    let mu: Vec<f64> = (0..10).map(|_| uniform(&mut rng, -2.0, 2.0)).collect();
    let lv: Vec<f64> = (0..10).map(|_| uniform(&mut rng, -2.0, 2.0)).collect();
    let (_, dmu, dlv) = kl_grad(&mu, &lv);
    for i in 0..mu.len() {
        let (mut a, mut b) = (mu.clone(), mu.clone());
        a[i] += h;
        b[i] -= h;
        let n_mu = (kl_oracle(&a, &lv) - kl_oracle(&b, &lv)) / (2.0 * h);
        let (mut a, mut b) = (lv.clone(), lv.clone());
        a[i] += h;
        b[i] -= h;
        let n_lv = (kl_oracle(&mu, &a) - kl_oracle(&mu, &b)) / (2.0 * h);
        worst = worst.max(relative_error(dmu[i], n_mu, 1e-10)).max(relative_error(dlv[i], n_lv, 1e-10));
    }
    worst
}
