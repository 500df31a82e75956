//! Convolution, group normalization and nearest-neighbour upsampling over
//! `batch × channels × height × width` tensors.

use alloc::vec;
use alloc::vec::Vec;

use rand_core::RngCore;

use super::{join, Module, Param};
use crate::scalar::{gemm, Scalar, Trans};

/// Square-kernel convolution, stride 1, "same" zero padding (odd kernels).
#[derive(Clone, Debug, PartialEq)]
pub struct Conv2d<T> {
    /// `out × in·k·k`.
    pub weight: Param<T>,
    pub bias: Param<T>,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
}

impl<T: Scalar> Conv2d<T> {
    pub fn new(in_channels: usize, out_channels: usize, kernel: usize, rng: &mut impl RngCore) -> Self {
        assert!(kernel % 2 == 1, "kernel must be odd");
        let fan_in = in_channels * kernel * kernel;
        let bound = 1.0 / libm::sqrt(fan_in as f64);
        Self {
            weight: Param::uniform(&[out_channels, in_channels, kernel, kernel], bound, rng),
            bias: Param::uniform(&[out_channels], bound, rng),
            in_channels,
            out_channels,
            kernel,
        }
    }

    fn patch_len(&self) -> usize {
        self.in_channels * self.kernel * self.kernel
    }

    /// Source column range `[lo, hi)` that stays inside the row for a
    /// horizontal tap offset of `shift`, with the matching output start.
    fn span(w: usize, shift: isize) -> (usize, usize, usize) {
        if shift >= 0 {
            let s = (shift as usize).min(w);
            (s, w, 0)
        } else {
            let s = ((-shift) as usize).min(w);
            (0, w - s, s)
        }
    }

    /// `cols[(ci·k + ky)·k + kx][y·w + x] = x[ci][y + ky - p][x + kx - p]`.
    fn im2col(&self, x: &[T], h: usize, w: usize, cols: &mut [T]) {
        let k = self.kernel;
        let pad = (k / 2) as isize;
        let hw = h * w;
        for ci in 0..self.in_channels {
            let plane = &x[ci * hw..(ci + 1) * hw];
            for ky in 0..k {
                for kx in 0..k {
                    let row = &mut cols[((ci * k + ky) * k + kx) * hw..][..hw];
                    let (lo, hi, start) = Self::span(w, kx as isize - pad);
                    for y in 0..h {
                        let sy = y as isize + ky as isize - pad;
                        let out = &mut row[y * w..(y + 1) * w];
                        if sy < 0 || sy >= h as isize {
                            out.fill(T::zero());
                            continue;
                        }
                        let src = &plane[sy as usize * w..(sy as usize + 1) * w];
                        out[..start].fill(T::zero());
                        out[start..start + hi - lo].copy_from_slice(&src[lo..hi]);
                        out[start + hi - lo..].fill(T::zero());
                    }
                }
            }
        }
    }

    fn col2im(&self, cols: &[T], h: usize, w: usize, dx: &mut [T]) {
        let k = self.kernel;
        let pad = (k / 2) as isize;
        let hw = h * w;
        for ci in 0..self.in_channels {
            let plane = &mut dx[ci * hw..(ci + 1) * hw];
            for ky in 0..k {
                for kx in 0..k {
                    let row = &cols[((ci * k + ky) * k + kx) * hw..][..hw];
                    let (lo, hi, start) = Self::span(w, kx as isize - pad);
                    for y in 0..h {
                        let sy = y as isize + ky as isize - pad;
                        if sy < 0 || sy >= h as isize {
                            continue;
                        }
                        let dst = &mut plane[sy as usize * w + lo..sy as usize * w + hi];
                        for (d, &v) in dst.iter_mut().zip(&row[y * w + start..]) {
                            *d += v;
                        }
                    }
                }
            }
        }
    }

    pub fn forward(&self, x: &[T], batch: usize, h: usize, w: usize) -> Vec<T> {
        let hw = h * w;
        let (ci, co) = (self.in_channels, self.out_channels);
        debug_assert_eq!(x.len(), batch * ci * hw);
        let mut y = vec![T::zero(); batch * co * hw];
        let mut cols = if self.kernel == 1 { Vec::new() } else { vec![T::zero(); self.patch_len() * hw] };
        for b in 0..batch {
            let xb = &x[b * ci * hw..(b + 1) * ci * hw];
            let yb = &mut y[b * co * hw..(b + 1) * co * hw];
            for (c, plane) in yb.chunks_exact_mut(hw).enumerate() {
                plane.iter_mut().for_each(|v| *v = self.bias.value[c]);
            }
            let src = if self.kernel == 1 {
                xb
            } else {
                self.im2col(xb, h, w, &mut cols);
                &cols
            };
            gemm(Trans::N, Trans::N, co, hw, self.patch_len(), T::one(), &self.weight.value, src, T::one(), yb);
        }
        y
    }

    pub fn backward(&mut self, x: &[T], dy: &[T], batch: usize, h: usize, w: usize, need_dx: bool) -> Option<Vec<T>> {
        let hw = h * w;
        let (ci, co) = (self.in_channels, self.out_channels);
        let patch = self.patch_len();
        let mut dx = need_dx.then(|| vec![T::zero(); batch * ci * hw]);
        let mut cols = if self.kernel == 1 { Vec::new() } else { vec![T::zero(); patch * hw] };
        let mut dcols = if need_dx && self.kernel != 1 { vec![T::zero(); patch * hw] } else { Vec::new() };
        for b in 0..batch {
            let xb = &x[b * ci * hw..(b + 1) * ci * hw];
            let dyb = &dy[b * co * hw..(b + 1) * co * hw];
            for (c, plane) in dyb.chunks_exact(hw).enumerate() {
                self.bias.grad[c] += plane.iter().copied().sum::<T>();
            }
            let src = if self.kernel == 1 {
                xb
            } else {
                self.im2col(xb, h, w, &mut cols);
                &cols
            };
            gemm(Trans::N, Trans::T, co, patch, hw, T::one(), dyb, src, T::one(), &mut self.weight.grad);
            if let Some(dx) = dx.as_mut() {
                let dxb = &mut dx[b * ci * hw..(b + 1) * ci * hw];
                if self.kernel == 1 {
                    gemm(Trans::T, Trans::N, patch, hw, co, T::one(), &self.weight.value, dyb, T::zero(), dxb);
                } else {
                    gemm(Trans::T, Trans::N, patch, hw, co, T::one(), &self.weight.value, dyb, T::zero(), &mut dcols);
                    self.col2im(&dcols, h, w, dxb);
                }
            }
        }
        dx
    }
}

impl<T: Scalar> Module<T> for Conv2d<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param<T>)) {
        f(&join(prefix, "weight"), &self.weight);
        f(&join(prefix, "bias"), &self.bias);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<T>)) {
        f(&join(prefix, "weight"), &mut self.weight);
        f(&join(prefix, "bias"), &mut self.bias);
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GroupNorm<T> {
    pub gamma: Param<T>,
    pub beta: Param<T>,
    pub groups: usize,
    pub channels: usize,
    pub eps: f64,
}

/// Per `(sample, group)` mean and reciprocal standard deviation.
#[derive(Clone, Debug, Default)]
pub struct GroupNormStats<T> {
    mean: Vec<T>,
    rstd: Vec<T>,
}

impl<T: Scalar> GroupNorm<T> {
    pub fn new(groups: usize, channels: usize) -> Self {
        assert!(groups > 0 && channels.is_multiple_of(groups), "groups must divide channels");
        Self {
            gamma: Param::constant(&[channels], T::one()),
            beta: Param::constant(&[channels], T::zero()),
            groups,
            channels,
            eps: 1e-5,
        }
    }

    pub fn forward(&self, x: &[T], batch: usize, hw: usize) -> (Vec<T>, GroupNormStats<T>) {
        let cpg = self.channels / self.groups;
        let n = T::lit((cpg * hw) as f64);
        let mut y = vec![T::zero(); x.len()];
        let mut stats = GroupNormStats { mean: Vec::with_capacity(batch * self.groups), rstd: Vec::with_capacity(batch * self.groups) };
        for b in 0..batch {
            for g in 0..self.groups {
                let off = (b * self.channels + g * cpg) * hw;
                let xs = &x[off..off + cpg * hw];
                let mean = xs.iter().copied().sum::<T>() / n;
                let var = xs.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / n;
                let rstd = T::one() / (var + T::lit(self.eps)).sqrt();
                stats.mean.push(mean);
                stats.rstd.push(rstd);
                for c in 0..cpg {
                    let ch = g * cpg + c;
                    let (ga, be) = (self.gamma.value[ch], self.beta.value[ch]);
                    let src = &xs[c * hw..(c + 1) * hw];
                    let dst = &mut y[off + c * hw..off + (c + 1) * hw];
                    for (o, &v) in dst.iter_mut().zip(src) {
                        *o = (v - mean) * rstd * ga + be;
                    }
                }
            }
        }
        (y, stats)
    }

    pub fn backward(&mut self, x: &[T], stats: &GroupNormStats<T>, dy: &[T], batch: usize, hw: usize) -> Vec<T> {
        let cpg = self.channels / self.groups;
        let n = T::lit((cpg * hw) as f64);
        let mut dx = vec![T::zero(); x.len()];
        for b in 0..batch {
            for g in 0..self.groups {
                let (mean, rstd) = (stats.mean[b * self.groups + g], stats.rstd[b * self.groups + g]);
                let off = (b * self.channels + g * cpg) * hw;
                let mut sum_dxhat = T::zero();
                let mut sum_dxhat_xhat = T::zero();
                for c in 0..cpg {
                    let ch = g * cpg + c;
                    let ga = self.gamma.value[ch];
                    let mut dgamma = T::zero();
                    let mut dbeta = T::zero();
                    for i in 0..hw {
                        let idx = off + c * hw + i;
                        let xhat = (x[idx] - mean) * rstd;
                        let d = dy[idx];
                        dgamma += d * xhat;
                        dbeta += d;
                        sum_dxhat += d * ga;
                        sum_dxhat_xhat += d * ga * xhat;
                    }
                    self.gamma.grad[ch] += dgamma;
                    self.beta.grad[ch] += dbeta;
                }
                for c in 0..cpg {
                    let ga = self.gamma.value[g * cpg + c];
                    for i in 0..hw {
                        let idx = off + c * hw + i;
                        let xhat = (x[idx] - mean) * rstd;
                        dx[idx] = rstd / n * (n * dy[idx] * ga - sum_dxhat - xhat * sum_dxhat_xhat);
                    }
                }
            }
        }
        dx
    }
}

impl<T: Scalar> Module<T> for GroupNorm<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param<T>)) {
        f(&join(prefix, "gamma"), &self.gamma);
        f(&join(prefix, "beta"), &self.beta);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<T>)) {
        f(&join(prefix, "gamma"), &mut self.gamma);
        f(&join(prefix, "beta"), &mut self.beta);
    }
}

/// Nearest-neighbour 2× upsampling of `planes` planes of size `h × w`.
pub fn upsample2x<T: Scalar>(x: &[T], planes: usize, h: usize, w: usize) -> Vec<T> {
    let mut y = vec![T::zero(); planes * 4 * h * w];
    for p in 0..planes {
        let src = &x[p * h * w..(p + 1) * h * w];
        let dst = &mut y[p * 4 * h * w..(p + 1) * 4 * h * w];
        for yy in 0..2 * h {
            let srow = &src[(yy / 2) * w..(yy / 2 + 1) * w];
            let drow = &mut dst[yy * 2 * w..(yy + 1) * 2 * w];
            for (xx, d) in drow.iter_mut().enumerate() {
                *d = srow[xx / 2];
            }
        }
    }
    y
}

/// Gradient of [`upsample2x`]: sums each 2×2 block.
pub fn upsample2x_backward<T: Scalar>(dy: &[T], planes: usize, h: usize, w: usize) -> Vec<T> {
    let mut dx = vec![T::zero(); planes * h * w];
    for p in 0..planes {
        let src = &dy[p * 4 * h * w..(p + 1) * 4 * h * w];
        let dst = &mut dx[p * h * w..(p + 1) * h * w];
        for yy in 0..2 * h {
            for xx in 0..2 * w {
                dst[(yy / 2) * w + xx / 2] += src[yy * 2 * w + xx];
            }
        }
    }
    dx
}
