use alloc::vec;
use alloc::vec::Vec;

use rand_core::RngCore;

use super::{join, Module, Param};
use crate::scalar::{gemm, Scalar, Trans};

/// `y = x Wᵀ + b` over `rows × in_dim` inputs.
#[derive(Clone, Debug, PartialEq)]
pub struct Linear<T> {
    pub weight: Param<T>,
    pub bias: Param<T>,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl<T: Scalar> Linear<T> {
    pub fn new(in_dim: usize, out_dim: usize, rng: &mut impl RngCore) -> Self {
        let bound = 1.0 / libm::sqrt(in_dim as f64);
        Self {
            weight: Param::uniform(&[out_dim, in_dim], bound, rng),
            bias: Param::uniform(&[out_dim], bound, rng),
            in_dim,
            out_dim,
        }
    }

    pub fn forward(&self, x: &[T], rows: usize) -> Vec<T> {
        debug_assert_eq!(x.len(), rows * self.in_dim);
        let mut y = vec![T::zero(); rows * self.out_dim];
        for row in y.chunks_exact_mut(self.out_dim) {
            row.copy_from_slice(&self.bias.value);
        }
        gemm(Trans::N, Trans::T, rows, self.out_dim, self.in_dim, T::one(), x, &self.weight.value, T::one(), &mut y);
        y
    }

    /// Accumulates parameter gradients; returns `dx` when requested.
    pub fn backward(&mut self, x: &[T], dy: &[T], rows: usize, need_dx: bool) -> Option<Vec<T>> {
        debug_assert_eq!(dy.len(), rows * self.out_dim);
        gemm(Trans::T, Trans::N, self.out_dim, self.in_dim, rows, T::one(), dy, x, T::one(), &mut self.weight.grad);
        for row in dy.chunks_exact(self.out_dim) {
            for (g, &d) in self.bias.grad.iter_mut().zip(row) {
                *g += d;
            }
        }
        need_dx.then(|| {
            let mut dx = vec![T::zero(); rows * self.in_dim];
            gemm(Trans::N, Trans::N, rows, self.in_dim, self.out_dim, T::one(), dy, &self.weight.value, T::zero(), &mut dx);
            dx
        })
    }
}

impl<T: Scalar> Module<T> for Linear<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param<T>)) {
        f(&join(prefix, "weight"), &self.weight);
        f(&join(prefix, "bias"), &self.bias);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<T>)) {
        f(&join(prefix, "weight"), &mut self.weight);
        f(&join(prefix, "bias"), &mut self.bias);
    }
}
