//! Pixel accuracy and intersection-over-union.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::mask::LabelMap;

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SegMetrics {
    pub pixel_accuracy: f64,
    /// `None` for classes absent from both prediction and ground truth.
    pub per_class_iou: Vec<Option<f64>>,
    pub mean_iou: f64,
}

/// Per-class intersection/union counts accumulated across images.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IouAccumulator {
    class_count: usize,
    intersection: Vec<u64>,
    union: Vec<u64>,
    correct: u64,
    total: u64,
}

impl IouAccumulator {
    pub fn new(class_count: usize) -> Self {
        Self {
            class_count,
            intersection: vec![0; class_count],
            union: vec![0; class_count],
            correct: 0,
            total: 0,
        }
    }

    pub fn add(&mut self, pred: &LabelMap, gt: &LabelMap) -> Result<()> {
        check_pair(pred, gt)?;
        if gt.class_count() != self.class_count {
            return Err(Error::Shape(format!(
                "accumulator has {} classes, maps have {}",
                self.class_count,
                gt.class_count()
            )));
        }
        for (&p, &g) in pred.labels().iter().zip(gt.labels()) {
            if p == g {
                self.correct += 1;
                self.intersection[g as usize] += 1;
                self.union[g as usize] += 1;
            } else {
                self.union[g as usize] += 1;
                self.union[p as usize] += 1;
            }
        }
        self.total += gt.pixel_count() as u64;
        Ok(())
    }

    pub fn merge(&mut self, other: &IouAccumulator) {
        assert_eq!(self.class_count, other.class_count);
        for c in 0..self.class_count {
            self.intersection[c] += other.intersection[c];
            self.union[c] += other.union[c];
        }
        self.correct += other.correct;
        self.total += other.total;
    }

    /// Ratios from the accumulated counts; classes whose union stayed empty
    /// are excluded from the mean.
    pub fn finish(&self) -> SegMetrics {
        let per_class_iou: Vec<Option<f64>> = (0..self.class_count)
            .map(|c| {
                (self.union[c] > 0).then(|| self.intersection[c] as f64 / self.union[c] as f64)
            })
            .collect();
        let present: Vec<f64> = per_class_iou.iter().flatten().copied().collect();
        let mean_iou = if present.is_empty() {
            0.0
        } else {
            present.iter().sum::<f64>() / present.len() as f64
        };
        let pixel_accuracy = if self.total == 0 { 0.0 } else { self.correct as f64 / self.total as f64 };
        SegMetrics { pixel_accuracy, per_class_iou, mean_iou }
    }
}

fn check_pair(pred: &LabelMap, gt: &LabelMap) -> Result<()> {
    if pred.height() != gt.height() || pred.width() != gt.width() || pred.class_count() != gt.class_count() {
        return Err(Error::Shape(format!(
            "prediction {}x{} ({} classes) vs ground truth {}x{} ({} classes)",
            pred.height(),
            pred.width(),
            pred.class_count(),
            gt.height(),
            gt.width(),
            gt.class_count()
        )));
    }
    Ok(())
}

/// Single-image metrics.
pub fn segmentation_metrics(pred: &LabelMap, gt: &LabelMap) -> Result<SegMetrics> {
    let mut acc = IouAccumulator::new(gt.class_count());
    acc.add(pred, gt)?;
    Ok(acc.finish())
}

/// Dataset-level metrics: counts are summed over all pairs before dividing.
pub fn dataset_metrics<'a, I>(pairs: I, class_count: usize) -> Result<SegMetrics>
where
    I: IntoIterator<Item = (&'a LabelMap, &'a LabelMap)>,
{
    let mut acc = IouAccumulator::new(class_count);
    for (p, g) in pairs {
        acc.add(p, g)?;
    }
    Ok(acc.finish())
}
