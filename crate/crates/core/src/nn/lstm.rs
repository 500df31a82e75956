//! Stacked (optionally bidirectional) LSTM over a short sequence.
//!
//! Sequences are stored step-major: row `t * batch + b` holds step `t` of
//! sample `b`. Every step's hidden state is kept, so the output has one row
//! per input row.

use alloc::vec;
use alloc::vec::Vec;

use rand_core::RngCore;

use super::{join, orthogonal, sigmoid, Module, Param};
use crate::scalar::{gemm, Scalar, Trans};

/// One direction of one layer. Gate blocks are ordered `[input, forget, cell, output]`.
#[derive(Clone, Debug, PartialEq)]
pub struct LstmDirection<T> {
    pub w_ih: Param<T>,
    pub w_hh: Param<T>,
    pub bias: Param<T>,
    pub input: usize,
    pub hidden: usize,
    pub reverse: bool,
}

#[derive(Clone, Debug, Default)]
pub struct DirectionCache<T> {
    /// Post-activation gates, `steps·batch × 4h`.
    gates: Vec<T>,
    /// Cell states, `steps·batch × h`.
    cell: Vec<T>,
    tanh_cell: Vec<T>,
    /// Hidden states (the direction's output), `steps·batch × h`.
    hidden: Vec<T>,
}

impl<T: Scalar> LstmDirection<T> {
    pub fn new(input: usize, hidden: usize, reverse: bool, rng: &mut impl RngCore) -> Self {
        let bound = 1.0 / libm::sqrt(hidden as f64);
        let mut w_hh = vec![T::zero(); 4 * hidden * hidden];
        for gate in 0..4 {
            let block: Vec<T> = orthogonal(hidden, hidden, rng);
            w_hh[gate * hidden * hidden..(gate + 1) * hidden * hidden].copy_from_slice(&block);
        }
        Self {
            w_ih: Param::uniform(&[4 * hidden, input], bound, rng),
            w_hh: Param::new(w_hh, &[4 * hidden, hidden]),
            bias: Param::uniform(&[4 * hidden], bound, rng),
            input,
            hidden,
            reverse,
        }
    }

    fn order(&self, steps: usize) -> Vec<usize> {
        if self.reverse {
            (0..steps).rev().collect()
        } else {
            (0..steps).collect()
        }
    }

    pub fn forward(&self, x: &[T], steps: usize, batch: usize) -> DirectionCache<T> {
        let h = self.hidden;
        let rows = steps * batch;
        debug_assert_eq!(x.len(), rows * self.input);
        let mut gates = vec![T::zero(); rows * 4 * h];
        for row in gates.chunks_exact_mut(4 * h) {
            row.copy_from_slice(&self.bias.value);
        }
        gemm(Trans::N, Trans::T, rows, 4 * h, self.input, T::one(), x, &self.w_ih.value, T::one(), &mut gates);

        let mut cell = vec![T::zero(); rows * h];
        let mut tanh_cell = vec![T::zero(); rows * h];
        let mut hidden = vec![T::zero(); rows * h];
        let mut prev: Option<usize> = None;
        for t in self.order(steps) {
            let g_off = t * batch * 4 * h;
            let s_off = t * batch * h;
            if let Some(p) = prev {
                let (h_prev, g_t) = (&hidden[p * batch * h..(p + 1) * batch * h], &mut gates[g_off..g_off + batch * 4 * h]);
                gemm(Trans::N, Trans::T, batch, 4 * h, h, T::one(), h_prev, &self.w_hh.value, T::one(), g_t);
            }
            for b in 0..batch {
                let g = &mut gates[g_off + b * 4 * h..g_off + (b + 1) * 4 * h];
                for j in 0..h {
                    let i_g = sigmoid(g[j]);
                    let f_g = sigmoid(g[h + j]);
                    let c_g = g[2 * h + j].tanh();
                    let o_g = sigmoid(g[3 * h + j]);
                    g[j] = i_g;
                    g[h + j] = f_g;
                    g[2 * h + j] = c_g;
                    g[3 * h + j] = o_g;
                    let c_prev = prev.map_or(T::zero(), |p| cell[p * batch * h + b * h + j]);
                    let c = f_g * c_prev + i_g * c_g;
                    let tc = c.tanh();
                    cell[s_off + b * h + j] = c;
                    tanh_cell[s_off + b * h + j] = tc;
                    hidden[s_off + b * h + j] = o_g * tc;
                }
            }
            prev = Some(t);
        }
        DirectionCache { gates, cell, tanh_cell, hidden }
    }

    /// Backpropagation through time; returns `dx`.
    pub fn backward(&mut self, x: &[T], cache: &DirectionCache<T>, dh_out: &[T], steps: usize, batch: usize) -> Vec<T> {
        let h = self.hidden;
        let rows = steps * batch;
        let mut dgates = vec![T::zero(); rows * 4 * h];
        let mut dh_next = vec![T::zero(); batch * h];
        let mut dc_next = vec![T::zero(); batch * h];
        let order = self.order(steps);
        for (k, &t) in order.iter().enumerate().rev() {
            let prev = k.checked_sub(1).map(|k| order[k]);
            let g_off = t * batch * 4 * h;
            let s_off = t * batch * h;
            for b in 0..batch {
                let g = &cache.gates[g_off + b * 4 * h..g_off + (b + 1) * 4 * h];
                let dg = &mut dgates[g_off + b * 4 * h..g_off + (b + 1) * 4 * h];
                for j in 0..h {
                    let (i_g, f_g, c_g, o_g) = (g[j], g[h + j], g[2 * h + j], g[3 * h + j]);
                    let tc = cache.tanh_cell[s_off + b * h + j];
                    let dh = dh_out[s_off + b * h + j] + dh_next[b * h + j];
                    let d_o = dh * tc;
                    let dc = dc_next[b * h + j] + dh * o_g * (T::one() - tc * tc);
                    let c_prev = prev.map_or(T::zero(), |p| cache.cell[p * batch * h + b * h + j]);
                    let d_i = dc * c_g;
                    let d_c = dc * i_g;
                    let d_f = dc * c_prev;
                    dc_next[b * h + j] = dc * f_g;
                    dg[j] = d_i * i_g * (T::one() - i_g);
                    dg[h + j] = d_f * f_g * (T::one() - f_g);
                    dg[2 * h + j] = d_c * (T::one() - c_g * c_g);
                    dg[3 * h + j] = d_o * o_g * (T::one() - o_g);
                }
            }
            let dg_t = &dgates[g_off..g_off + batch * 4 * h];
            match prev {
                Some(p) => {
                    let h_prev = &cache.hidden[p * batch * h..(p + 1) * batch * h];
                    gemm(Trans::T, Trans::N, 4 * h, h, batch, T::one(), dg_t, h_prev, T::one(), &mut self.w_hh.grad);
                    gemm(Trans::N, Trans::N, batch, h, 4 * h, T::one(), dg_t, &self.w_hh.value, T::zero(), &mut dh_next);
                }
                None => dh_next.iter_mut().for_each(|v| *v = T::zero()),
            }
        }
        gemm(Trans::T, Trans::N, 4 * h, self.input, rows, T::one(), &dgates, x, T::one(), &mut self.w_ih.grad);
        for row in dgates.chunks_exact(4 * h) {
            for (g, &d) in self.bias.grad.iter_mut().zip(row) {
                *g += d;
            }
        }
        let mut dx = vec![T::zero(); rows * self.input];
        gemm(Trans::N, Trans::N, rows, self.input, 4 * h, T::one(), &dgates, &self.w_ih.value, T::zero(), &mut dx);
        dx
    }
}

impl<T: Scalar> Module<T> for LstmDirection<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param<T>)) {
        f(&join(prefix, "w_ih"), &self.w_ih);
        f(&join(prefix, "w_hh"), &self.w_hh);
        f(&join(prefix, "bias"), &self.bias);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<T>)) {
        f(&join(prefix, "w_ih"), &mut self.w_ih);
        f(&join(prefix, "w_hh"), &mut self.w_hh);
        f(&join(prefix, "bias"), &mut self.bias);
    }
}

/// One layer: a forward direction and, when bidirectional, a reverse one
/// whose hidden states are concatenated after the forward ones.
#[derive(Clone, Debug, PartialEq)]
pub struct LstmLayer<T> {
    pub forward: LstmDirection<T>,
    pub backward: Option<LstmDirection<T>>,
}

impl<T: Scalar> LstmLayer<T> {
    pub fn output_width(&self) -> usize {
        self.forward.hidden + self.backward.as_ref().map_or(0, |d| d.hidden)
    }
}

#[derive(Clone, Debug, Default)]
pub struct LstmCache<T> {
    /// Input of each layer.
    inputs: Vec<Vec<T>>,
    dirs: Vec<(DirectionCache<T>, Option<DirectionCache<T>>)>,
    steps: usize,
    batch: usize,
}

/// Stack of LSTM layers; with no layers it is the identity.
#[derive(Clone, Debug, PartialEq)]
pub struct Lstm<T> {
    pub layers: Vec<LstmLayer<T>>,
}

impl<T: Scalar> Lstm<T> {
    pub fn new(width: usize, layers: usize, bidirectional: bool, hidden: usize, rng: &mut impl RngCore) -> Self {
        let mut out = Vec::with_capacity(layers);
        let mut input = width;
        for _ in 0..layers {
            let forward = LstmDirection::new(input, hidden, false, rng);
            let backward = bidirectional.then(|| LstmDirection::new(input, hidden, true, rng));
            let layer = LstmLayer { forward, backward };
            input = layer.output_width();
            out.push(layer);
        }
        Self { layers: out }
    }

    pub fn forward(&self, x: &[T], steps: usize, batch: usize) -> (Vec<T>, LstmCache<T>) {
        let mut cache = LstmCache { inputs: Vec::new(), dirs: Vec::new(), steps, batch };
        let mut current = x.to_vec();
        for layer in &self.layers {
            let fwd = layer.forward.forward(&current, steps, batch);
            let bwd = layer.backward.as_ref().map(|d| d.forward(&current, steps, batch));
            let width = layer.output_width();
            let hf = layer.forward.hidden;
            let mut out = vec![T::zero(); steps * batch * width];
            for (r, row) in out.chunks_exact_mut(width).enumerate() {
                row[..hf].copy_from_slice(&fwd.hidden[r * hf..(r + 1) * hf]);
                if let Some(b) = &bwd {
                    let hb = width - hf;
                    row[hf..].copy_from_slice(&b.hidden[r * hb..(r + 1) * hb]);
                }
            }
            cache.inputs.push(core::mem::replace(&mut current, out));
            cache.dirs.push((fwd, bwd));
        }
        (current, cache)
    }

    pub fn backward(&mut self, cache: &LstmCache<T>, dy: &[T]) -> Vec<T> {
        let (steps, batch) = (cache.steps, cache.batch);
        let mut grad = dy.to_vec();
        for (l, layer) in self.layers.iter_mut().enumerate().rev() {
            let width = layer.output_width();
            let hf = layer.forward.hidden;
            let hb = width - hf;
            let rows = steps * batch;
            let mut d_f = vec![T::zero(); rows * hf];
            let mut d_b = vec![T::zero(); rows * hb];
            for (r, row) in grad.chunks_exact(width).enumerate() {
                d_f[r * hf..(r + 1) * hf].copy_from_slice(&row[..hf]);
                d_b[r * hb..(r + 1) * hb].copy_from_slice(&row[hf..]);
            }
            let input = &cache.inputs[l];
            let (fc, bc) = &cache.dirs[l];
            let mut dx = layer.forward.backward(input, fc, &d_f, steps, batch);
            if let (Some(dir), Some(bc)) = (layer.backward.as_mut(), bc.as_ref()) {
                let dxb = dir.backward(input, bc, &d_b, steps, batch);
                for (a, b) in dx.iter_mut().zip(dxb) {
                    *a += b;
                }
            }
            grad = dx;
        }
        grad
    }
}

impl<T: Scalar> Module<T> for Lstm<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param<T>)) {
        for (i, layer) in self.layers.iter().enumerate() {
            let p = join(prefix, &alloc::format!("layer{i}"));
            layer.forward.visit(&join(&p, "fwd"), f);
            if let Some(b) = &layer.backward {
                b.visit(&join(&p, "rev"), f);
            }
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<T>)) {
        for (i, layer) in self.layers.iter_mut().enumerate() {
            let p = join(prefix, &alloc::format!("layer{i}"));
            layer.forward.visit_mut(&join(&p, "fwd"), f);
            if let Some(b) = &mut layer.backward {
                b.visit_mut(&join(&p, "rev"), f);
            }
        }
    }
}
