//! Minimal layer library with explicit forward caches and hand-written
//! backward passes. Tensors are flat row-major `Vec`s; each layer documents
//! the layout it expects.

mod conv;
mod linear;
mod lstm;

pub use conv::{upsample2x, upsample2x_backward, Conv2d, GroupNorm, GroupNormStats};
pub use linear::Linear;
pub use lstm::{Lstm, LstmCache, LstmDirection, LstmLayer};

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand_core::RngCore;
use rand_distr::{Distribution, StandardNormal};

use crate::scalar::Scalar;

/// A trainable tensor and its accumulated gradient.
#[derive(Clone, Debug, PartialEq)]
pub struct Param<T> {
    pub value: Vec<T>,
    pub grad: Vec<T>,
    pub shape: Vec<usize>,
}

impl<T: Scalar> Param<T> {
    pub fn new(value: Vec<T>, shape: &[usize]) -> Self {
        assert_eq!(value.len(), shape.iter().product::<usize>(), "param shape mismatch");
        let grad = vec![T::zero(); value.len()];
        Self { value, grad, shape: shape.to_vec() }
    }

    pub fn constant(shape: &[usize], v: T) -> Self {
        Self::new(vec![v; shape.iter().product()], shape)
    }

    /// `U(-bound, bound)` entries.
    pub fn uniform(shape: &[usize], bound: f64, rng: &mut impl RngCore) -> Self {
        let n = shape.iter().product();
        let value = (0..n)
            .map(|_| T::lit((crate::toy::unit(rng) * 2.0 - 1.0) * bound))
            .collect();
        Self::new(value, shape)
    }

    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }

    pub fn zero_grad(&mut self) {
        self.grad.iter_mut().for_each(|g| *g = T::zero());
    }
}

/// Anything that owns parameters.
pub trait Module<T: Scalar> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param<T>));
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<T>));

    fn param_count(&self) -> usize {
        let mut n = 0;
        self.visit("", &mut |_, p| n += p.len());
        n
    }

    fn zero_grad(&mut self) {
        self.visit_mut("", &mut |_, p| p.zero_grad());
    }
}

pub(crate) fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        String::from(name)
    } else {
        let mut s = String::with_capacity(prefix.len() + name.len() + 1);
        s.push_str(prefix);
        s.push('.');
        s.push_str(name);
        s
    }
}

pub fn standard_normal<T: Scalar>(rng: &mut impl RngCore) -> T {
    let z: f64 = StandardNormal.sample(rng);
    T::lit(z)
}

/// `rows × cols` matrix with orthonormal columns (rows ≥ cols) or rows.
pub(crate) fn orthogonal<T: Scalar>(rows: usize, cols: usize, rng: &mut impl RngCore) -> Vec<T> {
    let transpose = rows < cols;
    let (r, c) = if transpose { (cols, rows) } else { (rows, cols) };
    // Columns of an r×c gaussian matrix, orthonormalised by modified Gram-Schmidt.
    let mut colv: Vec<Vec<f64>> = (0..c)
        .map(|_| (0..r).map(|_| StandardNormal.sample(rng)).collect())
        .collect();
    for j in 0..c {
        for k in 0..j {
            let (done, rest) = colv.split_at_mut(j);
            let dot: f64 = done[k].iter().zip(rest[0].iter()).map(|(a, b)| a * b).sum();
            for (x, q) in rest[0].iter_mut().zip(done[k].iter()) {
                *x -= dot * q;
            }
        }
        let norm = libm::sqrt(colv[j].iter().map(|x| x * x).sum::<f64>()).max(1e-12);
        colv[j].iter_mut().for_each(|x| *x /= norm);
    }
    let mut out = vec![T::zero(); rows * cols];
    for (j, col) in colv.iter().enumerate() {
        for (i, &v) in col.iter().enumerate() {
            if transpose {
                out[j * cols + i] = T::lit(v);
            } else {
                out[i * cols + j] = T::lit(v);
            }
        }
    }
    out
}

pub fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

pub fn relu_inplace<T: Scalar>(x: &mut [T]) {
    x.iter_mut().for_each(|v| {
        if *v < T::zero() {
            *v = T::zero()
        }
    });
}

/// Masks `grad` where the ReLU output was not positive.
pub fn relu_backward_inplace<T: Scalar>(out: &[T], grad: &mut [T]) {
    for (g, &o) in grad.iter_mut().zip(out) {
        if o <= T::zero() {
            *g = T::zero();
        }
    }
}

pub fn gelu<T: Scalar>(x: T) -> T {
    let half = T::lit(0.5);
    half * x * (T::one() + (x * T::lit(core::f64::consts::FRAC_1_SQRT_2)).erf())
}

pub fn gelu_grad<T: Scalar>(x: T) -> T {
    let cdf = T::lit(0.5) * (T::one() + (x * T::lit(core::f64::consts::FRAC_1_SQRT_2)).erf());
    let pdf = (-(x * x) * T::lit(0.5)).exp() * T::lit(0.398_942_280_401_432_7);
    cdf + x * pdf
}

pub fn silu<T: Scalar>(x: T) -> T {
    x * sigmoid(x)
}

pub fn silu_grad<T: Scalar>(x: T) -> T {
    let s = sigmoid(x);
    s * (T::one() + x * (T::one() - s))
}

pub fn silu_forward<T: Scalar>(x: &[T]) -> Vec<T> {
    x.iter().map(|&v| silu(v)).collect()
}

/// SiLU outputs together with the sigmoids they were built from, so the
/// backward pass needs no further exponentials.
pub fn silu_with_sigmoid<T: Scalar>(x: &[T]) -> (Vec<T>, Vec<T>) {
    let sig: Vec<T> = x.iter().map(|&v| sigmoid(v)).collect();
    let out = x.iter().zip(&sig).map(|(&v, &s)| v * s).collect();
    (out, sig)
}

/// `grad ← grad ⊙ silu'(input)` given `sig = sigmoid(input)`.
pub fn silu_backward_with_sigmoid<T: Scalar>(input: &[T], sig: &[T], grad: &mut [T]) {
    for ((g, &x), &s) in grad.iter_mut().zip(input).zip(sig) {
        *g *= s * (T::one() + x * (T::one() - s));
    }
}

/// `grad ← grad ⊙ silu'(input)`.
pub fn silu_backward_inplace<T: Scalar>(input: &[T], grad: &mut [T]) {
    for (g, &x) in grad.iter_mut().zip(input) {
        *g *= silu_grad(x);
    }
}
