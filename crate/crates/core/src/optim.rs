//! Adaptive-moment gradient descent.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::nn::Module;
use crate::scalar::Scalar;
use crate::serialize::{TensorReader, TensorWriter};

#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Rescale gradients whose global L2 norm exceeds this value.
    pub grad_clip: Option<f64>,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { learning_rate: 1e-4, beta1: 0.9, beta2: 0.999, eps: 1e-8, grad_clip: None }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Adam<T> {
    pub config: AdamConfig,
    step: u64,
    first: Vec<Vec<T>>,
    second: Vec<Vec<T>>,
}

impl<T: Scalar> Adam<T> {
    pub fn new(config: AdamConfig, model: &impl Module<T>) -> Self {
        let mut first = Vec::new();
        model.visit("", &mut |_, p| first.push(vec![T::zero(); p.len()]));
        let second = first.clone();
        Self { config, step: 0, first, second }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// Applies one update from the accumulated gradients. Gradients are left
    /// in place; callers zero them before the next accumulation.
    pub fn step(&mut self, model: &mut impl Module<T>) {
        self.step += 1;
        let c = self.config;
        let mut scale = T::one();
        if let Some(limit) = c.grad_clip {
            let mut sq = 0.0f64;
            model.visit("", &mut |_, p| sq += p.grad.iter().map(|g| g.as_f64() * g.as_f64()).sum::<f64>());
            let norm = libm::sqrt(sq);
            if norm > limit {
                scale = T::lit(limit / norm);
            }
        }
        let b1 = T::lit(c.beta1);
        let b2 = T::lit(c.beta2);
        let bias1 = T::lit(1.0 - libm::pow(c.beta1, self.step as f64));
        let bias2 = T::lit(1.0 - libm::pow(c.beta2, self.step as f64));
        let lr = T::lit(c.learning_rate);
        let eps = T::lit(c.eps);
        let mut idx = 0;
        let (first, second) = (&mut self.first, &mut self.second);
        model.visit_mut("", &mut |_, p| {
            let (m, v) = (&mut first[idx], &mut second[idx]);
            for i in 0..p.value.len() {
                let g = p.grad[i] * scale;
                m[i] = b1 * m[i] + (T::one() - b1) * g;
                v[i] = b2 * v[i] + (T::one() - b2) * g * g;
                let m_hat = m[i] / bias1;
                let v_hat = v[i] / bias2;
                p.value[i] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
            idx += 1;
        });
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = TensorWriter::<T>::new(self.first.len() * 2);
        w.write_u64(self.step);
        for (i, m) in self.first.iter().enumerate() {
            w.tensor(&format!("m{i}"), &[m.len()], m);
        }
        for (i, v) in self.second.iter().enumerate() {
            w.tensor(&format!("v{i}"), &[v.len()], v);
        }
        w.finish()
    }

    pub fn load_bytes(&mut self, bytes: &[u8]) -> Result<()> {
        let mut r = TensorReader::<T>::new(bytes)?;
        if r.count() != self.first.len() * 2 {
            return Err(Error::Checkpoint(format!(
                "optimizer state has {} tensors, expected {}",
                r.count(),
                self.first.len() * 2
            )));
        }
        let step = r.read_u64()?;
        for slot in self.first.iter_mut().chain(self.second.iter_mut()) {
            let (_, _, values) = r.tensor()?;
            if values.len() != slot.len() {
                return Err(Error::Checkpoint("optimizer tensor size mismatch".into()));
            }
            *slot = values;
        }
        self.step = step;
        Ok(())
    }
}
