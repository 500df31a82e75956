//! Weighted pixel-wise cross-entropy, Gaussian KL, and their sum.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::mask::{ClassWeights, LabelMap};
use crate::model::{LatentDistribution, MaskLogits};
use crate::scalar::Scalar;

/// KL weight used in all reported experiments.
pub const DEFAULT_KL_WEIGHT: f64 = 0.0005;

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct LossConfig {
    pub kl_weight: f64,
    pub use_weighted_ce: bool,
    pub class_weights: ClassWeights,
}

impl LossConfig {
    pub fn new(class_weights: ClassWeights) -> Self {
        Self { kl_weight: DEFAULT_KL_WEIGHT, use_weighted_ce: true, class_weights }
    }

    pub fn validate(&self, class_count: usize) -> Result<()> {
        if !(self.kl_weight >= 0.0) || !self.kl_weight.is_finite() {
            return Err(Error::Config(format!("kl_weight must be finite and ≥ 0, got {}", self.kl_weight)));
        }
        if self.class_weights.len() != class_count {
            return Err(Error::Config(format!(
                "{} class weights for {class_count} classes",
                self.class_weights.len()
            )));
        }
        Ok(())
    }

    /// Weights actually applied: the configured ones, or all ones when the
    /// weighted variant is switched off.
    pub fn effective_weights(&self) -> ClassWeights {
        if self.use_weighted_ce {
            self.class_weights.clone()
        } else {
            ClassWeights::uniform(self.class_weights.len())
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct LossBreakdown {
    pub total: f64,
    pub wce: f64,
    pub kl: f64,
}

/// Mean over pixels of `-w[y] · log softmax(logits)[y]`, with the gradient
/// with respect to the logits.
///
/// `logits` is sample-major `samples × C × H × W`, one label map per sample.
pub fn weighted_cross_entropy_grad<T: Scalar>(
    logits: &[T],
    labels: &[&LabelMap],
    weights: &ClassWeights,
) -> Result<(T, Vec<T>)> {
    let first = labels.first().ok_or_else(|| Error::Empty("no label maps".into()))?;
    let (c, plane) = (first.class_count(), first.pixel_count());
    if weights.len() != c {
        return Err(Error::Shape(format!("{} weights for {c} classes", weights.len())));
    }
    if logits.len() != labels.len() * c * plane {
        return Err(Error::Shape(format!(
            "{} logits for {} maps of {c}x{plane}",
            logits.len(),
            labels.len()
        )));
    }
    let w: Vec<T> = weights.w.iter().map(|&v| T::lit(v)).collect();
    let norm = T::one() / T::lit((labels.len() * plane) as f64);
    let mut grad = vec![T::zero(); logits.len()];
    let mut total = T::zero();
    let mut probs = vec![T::zero(); c];
    for (s, map) in labels.iter().enumerate() {
        if map.class_count() != c || map.pixel_count() != plane {
            return Err(Error::Shape("label maps differ in shape".into()));
        }
        let base = s * c * plane;
        for (p, &y) in map.labels().iter().enumerate() {
            let y = y as usize;
            let mut max = T::neg_infinity();
            for k in 0..c {
                max = max.max(logits[base + k * plane + p]);
            }
            let mut sum = T::zero();
            for (k, pk) in probs.iter_mut().enumerate() {
                *pk = (logits[base + k * plane + p] - max).exp();
                sum += *pk;
            }
            let lse = max + sum.ln();
            total += w[y] * (lse - logits[base + y * plane + p]);
            let scale = w[y] * norm;
            for (k, &pk) in probs.iter().enumerate() {
                let target = if k == y { T::one() } else { T::zero() };
                grad[base + k * plane + p] = scale * (pk / sum - target);
            }
        }
    }
    Ok((total * norm, grad))
}

pub fn weighted_cross_entropy<T: Scalar>(logits: &MaskLogits<T>, gt: &LabelMap, weights: &ClassWeights) -> Result<T> {
    if gt.class_count() != logits.class_count || gt.height() != logits.height || gt.width() != logits.width {
        return Err(Error::Shape(format!(
            "logits {}x{}x{} vs labels {}x{}x{}",
            logits.class_count,
            logits.height,
            logits.width,
            gt.class_count(),
            gt.height(),
            gt.width()
        )));
    }
    Ok(weighted_cross_entropy_grad(&logits.logits, &[gt], weights)?.0)
}

/// Mean over all elements of `-½(1 + logvar - mu² - exp(logvar))`, with the
/// gradients with respect to `mu` and `logvar`.
pub fn kl_grad<T: Scalar>(mu: &[T], logvar: &[T]) -> (T, Vec<T>, Vec<T>) {
    assert_eq!(mu.len(), logvar.len());
    if mu.is_empty() {
        return (T::zero(), Vec::new(), Vec::new());
    }
    let half = T::lit(0.5);
    let n = T::one() / T::lit(mu.len() as f64);
    let mut total = T::zero();
    let mut dmu = Vec::with_capacity(mu.len());
    let mut dlogvar = Vec::with_capacity(mu.len());
    for (&m, &lv) in mu.iter().zip(logvar) {
        let e = lv.exp();
        total += -half * (T::one() + lv - m * m - e);
        dmu.push(m * n);
        dlogvar.push(half * (e - T::one()) * n);
    }
    (total * n, dmu, dlogvar)
}

pub fn kl_loss<T: Scalar>(dist: &LatentDistribution<T>) -> T {
    kl_grad(&dist.mu, &dist.logvar).0
}

/// `total = wce + kl_weight · kl`.
pub fn total_loss<T: Scalar>(
    logits: &MaskLogits<T>,
    gt: &LabelMap,
    dist: &LatentDistribution<T>,
    cfg: &LossConfig,
) -> Result<LossBreakdown> {
    let wce = weighted_cross_entropy(logits, gt, &cfg.effective_weights())?.as_f64();
    let kl = kl_loss(dist).as_f64();
    Ok(LossBreakdown { total: wce + cfg.kl_weight * kl, wce, kl })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn logits(c: usize, h: usize, w: usize, v: Vec<f64>) -> MaskLogits<f64> {
        MaskLogits { class_count: c, height: h, width: w, logits: v }
    }

    #[test]
    fn confident_correct_prediction_has_zero_loss() {
        let gt = LabelMap::new(1, 2, 2, vec![0, 1]).unwrap();
        let l = logits(2, 1, 2, vec![1000.0, -1000.0, -1000.0, 1000.0]);
        assert_eq!(weighted_cross_entropy(&l, &gt, &ClassWeights::uniform(2)).unwrap(), 0.0);
    }

    #[test]
    fn single_pixel_half_probability() {
        let gt = LabelMap::new(1, 1, 2, vec![0]).unwrap();
        let l = logits(2, 1, 1, vec![0.3, 0.3]);
        let w = ClassWeights { w: vec![0.25, 0.75] };
        let loss = weighted_cross_entropy(&l, &gt, &w).unwrap();
        assert!((loss - 0.25 * core::f64::consts::LN_2).abs() < 1e-15);
        assert!((loss - 0.17329).abs() < 1e-5);
    }

    #[test]
    fn kl_closed_form_cases() {
        let d = LatentDistribution { class_count: 1, dim: 3, mu: vec![0.0f64; 3], logvar: vec![0.0; 3] };
        assert_eq!(kl_loss(&d), 0.0);
        let d = LatentDistribution { class_count: 1, dim: 3, mu: vec![1.0f64; 3], logvar: vec![0.0; 3] };
        assert!((kl_loss(&d) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn zero_kl_weight_gives_pure_cross_entropy() {
        let gt = LabelMap::new(1, 2, 2, vec![0, 1]).unwrap();
        let l = logits(2, 1, 2, vec![0.1, 0.2, 0.7, -0.4]);
        let d = LatentDistribution { class_count: 2, dim: 1, mu: vec![0.5, 1.0], logvar: vec![0.1, -0.3] };
        let mut cfg = LossConfig::new(ClassWeights { w: vec![0.4, 0.6] });
        cfg.kl_weight = 0.0;
        let b = total_loss(&l, &gt, &d, &cfg).unwrap();
        assert_eq!(b.total, b.wce);
        cfg.kl_weight = DEFAULT_KL_WEIGHT;
        let b = total_loss(&l, &gt, &d, &cfg).unwrap();
        assert!((b.total - b.wce - 0.0005 * b.kl).abs() < 1e-12);
    }

    #[test]
    fn rejects_mismatched_shapes() {
        let gt = LabelMap::new(1, 2, 2, vec![0, 1]).unwrap();
        let l = logits(3, 1, 2, vec![0.0; 6]);
        assert!(weighted_cross_entropy(&l, &gt, &ClassWeights::uniform(2)).is_err());
        let mut cfg = LossConfig::new(ClassWeights::uniform(2));
        assert!(cfg.validate(3).is_err());
        cfg.kl_weight = -1.0;
        assert!(cfg.validate(2).is_err());
    }
}
