//! Encoder, feed-forward and decoder sub-networks.

use alloc::format;
use alloc::vec::Vec;

use rand_core::RngCore;

use crate::nn::{
    gelu, gelu_grad, join, relu_backward_inplace, relu_inplace, silu_backward_with_sigmoid, silu_with_sigmoid,
    upsample2x, upsample2x_backward, Conv2d, GroupNorm, GroupNormStats, Linear, Module, Param,
};
use crate::scalar::Scalar;

use super::ModelConfig;

/// Three ReLU layers followed by the mean and log-variance heads.
#[derive(Clone, Debug, PartialEq)]
pub struct EncoderTrunk<T> {
    pub layers: [Linear<T>; 3],
    pub mu: Linear<T>,
    pub logvar: Linear<T>,
}

#[derive(Clone, Debug, Default)]
pub struct TrunkCache<T> {
    acts: [Vec<T>; 3],
}

impl<T: Scalar> EncoderTrunk<T> {
    fn new(pixels: usize, hidden: usize, latent: usize, rng: &mut impl RngCore) -> Self {
        Self {
            layers: [
                Linear::new(pixels, hidden, rng),
                Linear::new(hidden, hidden, rng),
                Linear::new(hidden, hidden, rng),
            ],
            mu: Linear::new(hidden, latent, rng),
            logvar: Linear::new(hidden, latent, rng),
        }
    }

    fn forward(&self, x: &[T], rows: usize) -> (Vec<T>, Vec<T>, TrunkCache<T>) {
        let mut a0 = self.layers[0].forward(x, rows);
        relu_inplace(&mut a0);
        let mut a1 = self.layers[1].forward(&a0, rows);
        relu_inplace(&mut a1);
        let mut a2 = self.layers[2].forward(&a1, rows);
        relu_inplace(&mut a2);
        let mu = self.mu.forward(&a2, rows);
        let logvar = self.logvar.forward(&a2, rows);
        (mu, logvar, TrunkCache { acts: [a0, a1, a2] })
    }

    fn backward(&mut self, x: &[T], cache: &TrunkCache<T>, dmu: &[T], dlogvar: &[T], rows: usize) {
        let [a0, a1, a2] = &cache.acts;
        let mut da2 = self.mu.backward(a2, dmu, rows, true).unwrap_or_default();
        let from_logvar = self.logvar.backward(a2, dlogvar, rows, true).unwrap_or_default();
        for (a, b) in da2.iter_mut().zip(from_logvar) {
            *a += b;
        }
        relu_backward_inplace(a2, &mut da2);
        let mut da1 = self.layers[2].backward(a1, &da2, rows, true).unwrap_or_default();
        relu_backward_inplace(a1, &mut da1);
        let mut da0 = self.layers[1].backward(a0, &da1, rows, true).unwrap_or_default();
        relu_backward_inplace(a0, &mut da0);
        self.layers[0].backward(x, &da0, rows, false);
    }
}

impl<T: Scalar> Module<T> for EncoderTrunk<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param<T>)) {
        for (i, l) in self.layers.iter().enumerate() {
            l.visit(&join(prefix, &format!("fc{i}")), f);
        }
        self.mu.visit(&join(prefix, "mu"), f);
        self.logvar.visit(&join(prefix, "logvar"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<T>)) {
        for (i, l) in self.layers.iter_mut().enumerate() {
            l.visit_mut(&join(prefix, &format!("fc{i}")), f);
        }
        self.mu.visit_mut(&join(prefix, "mu"), f);
        self.logvar.visit_mut(&join(prefix, "logvar"), f);
    }
}

/// Flattened class channels → per-class Gaussian parameters. Input rows are
/// class-major (`class · batch + sample`), one row per class channel.
#[derive(Clone, Debug, PartialEq)]
pub struct Encoder<T> {
    pub trunks: Vec<EncoderTrunk<T>>,
}

#[derive(Clone, Debug, Default)]
pub struct EncoderCache<T> {
    blocks: Vec<TrunkCache<T>>,
}

impl<T: Scalar> Encoder<T> {
    pub fn new(config: &ModelConfig, rng: &mut impl RngCore) -> Self {
        let n = if config.per_class_encoders { config.class_count } else { 1 };
        let trunks = (0..n)
            .map(|_| EncoderTrunk::new(config.pixels(), config.encoder_hidden, config.latent_dim, rng))
            .collect();
        Self { trunks }
    }

    fn block_rows(&self, classes: usize, batch: usize) -> usize {
        if self.trunks.len() == 1 {
            classes * batch
        } else {
            batch
        }
    }

    pub fn forward(&self, x: &[T], classes: usize, batch: usize) -> (Vec<T>, Vec<T>, EncoderCache<T>) {
        let rows = self.block_rows(classes, batch);
        let in_dim = self.trunks[0].layers[0].in_dim;
        let latent = self.trunks[0].mu.out_dim;
        let mut mu = Vec::with_capacity(classes * batch * latent);
        let mut logvar = Vec::with_capacity(classes * batch * latent);
        let mut blocks = Vec::with_capacity(self.trunks.len());
        for (i, trunk) in self.trunks.iter().enumerate() {
            let xs = &x[i * rows * in_dim..(i + 1) * rows * in_dim];
            let (m, l, c) = trunk.forward(xs, rows);
            mu.extend_from_slice(&m);
            logvar.extend_from_slice(&l);
            blocks.push(c);
        }
        (mu, logvar, EncoderCache { blocks })
    }

    pub fn backward(&mut self, x: &[T], cache: &EncoderCache<T>, dmu: &[T], dlogvar: &[T], classes: usize, batch: usize) {
        let rows = self.block_rows(classes, batch);
        let in_dim = self.trunks[0].layers[0].in_dim;
        let latent = self.trunks[0].mu.out_dim;
        for (i, trunk) in self.trunks.iter_mut().enumerate() {
            let xs = &x[i * rows * in_dim..(i + 1) * rows * in_dim];
            let r = i * rows * latent..(i + 1) * rows * latent;
            trunk.backward(xs, &cache.blocks[i], &dmu[r.clone()], &dlogvar[r], rows);
        }
    }
}

impl<T: Scalar> Module<T> for Encoder<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param<T>)) {
        for (i, t) in self.trunks.iter().enumerate() {
            t.visit(&join(prefix, &format!("trunk{i}")), f);
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<T>)) {
        for (i, t) in self.trunks.iter_mut().enumerate() {
            t.visit_mut(&join(prefix, &format!("trunk{i}")), f);
        }
    }
}

/// Two linear layers with a GELU in between, shared across classes.
#[derive(Clone, Debug, PartialEq)]
pub struct FeedForward<T> {
    pub expand: Linear<T>,
    pub project: Linear<T>,
}

#[derive(Clone, Debug, Default)]
pub struct FeedForwardCache<T> {
    pre: Vec<T>,
    act: Vec<T>,
}

impl<T: Scalar> FeedForward<T> {
    pub fn new(width: usize, expansion: usize, rng: &mut impl RngCore) -> Self {
        Self { expand: Linear::new(width, expansion * width, rng), project: Linear::new(expansion * width, width, rng) }
    }

    pub fn forward(&self, x: &[T], rows: usize) -> (Vec<T>, FeedForwardCache<T>) {
        let pre = self.expand.forward(x, rows);
        let act: Vec<T> = pre.iter().map(|&v| gelu(v)).collect();
        let y = self.project.forward(&act, rows);
        (y, FeedForwardCache { pre, act })
    }

    pub fn backward(&mut self, x: &[T], cache: &FeedForwardCache<T>, dy: &[T], rows: usize) -> Vec<T> {
        let mut dact = self.project.backward(&cache.act, dy, rows, true).unwrap_or_default();
        for (d, &p) in dact.iter_mut().zip(&cache.pre) {
            *d *= gelu_grad(p);
        }
        self.expand.backward(x, &dact, rows, true).unwrap_or_default()
    }
}

impl<T: Scalar> Module<T> for FeedForward<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param<T>)) {
        self.expand.visit(&join(prefix, "expand"), f);
        self.project.visit(&join(prefix, "project"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<T>)) {
        self.expand.visit_mut(&join(prefix, "expand"), f);
        self.project.visit_mut(&join(prefix, "project"), f);
    }
}

/// Pre-activation residual block: `conv(silu(gn(conv(silu(gn(x)))))) + skip(x)`.
#[derive(Clone, Debug, PartialEq)]
pub struct ResBlock<T> {
    pub norm1: GroupNorm<T>,
    pub conv1: Conv2d<T>,
    pub norm2: GroupNorm<T>,
    pub conv2: Conv2d<T>,
    /// 1×1 projection when the width changes.
    pub skip: Option<Conv2d<T>>,
}

#[derive(Clone, Debug, Default)]
pub struct ResBlockCache<T> {
    x: Vec<T>,
    n1: Vec<T>,
    s1: GroupNormStats<T>,
    a1: Vec<T>,
    sig1: Vec<T>,
    h1: Vec<T>,
    n2: Vec<T>,
    s2: GroupNormStats<T>,
    a2: Vec<T>,
    sig2: Vec<T>,
}

impl<T: Scalar> ResBlock<T> {
    fn new(input: usize, output: usize, groups: usize, rng: &mut impl RngCore) -> Self {
        Self {
            norm1: GroupNorm::new(groups, input),
            conv1: Conv2d::new(input, output, 3, rng),
            norm2: GroupNorm::new(groups, output),
            conv2: Conv2d::new(output, output, 3, rng),
            skip: (input != output).then(|| Conv2d::new(input, output, 1, rng)),
        }
    }

    fn forward(&self, x: Vec<T>, batch: usize, side: usize) -> (Vec<T>, ResBlockCache<T>) {
        let hw = side * side;
        let (n1, s1) = self.norm1.forward(&x, batch, hw);
        let (a1, sig1) = silu_with_sigmoid(&n1);
        let h1 = self.conv1.forward(&a1, batch, side, side);
        let (n2, s2) = self.norm2.forward(&h1, batch, hw);
        let (a2, sig2) = silu_with_sigmoid(&n2);
        let mut out = self.conv2.forward(&a2, batch, side, side);
        match &self.skip {
            Some(proj) => {
                for (o, s) in out.iter_mut().zip(proj.forward(&x, batch, side, side)) {
                    *o += s;
                }
            }
            None => {
                for (o, &s) in out.iter_mut().zip(&x) {
                    *o += s;
                }
            }
        }
        (out, ResBlockCache { x, n1, s1, a1, sig1, h1, n2, s2, a2, sig2 })
    }

    fn backward(&mut self, cache: &ResBlockCache<T>, dout: &[T], batch: usize, side: usize) -> Vec<T> {
        let hw = side * side;
        let mut dn2 = self.conv2.backward(&cache.a2, dout, batch, side, side, true).unwrap_or_default();
        silu_backward_with_sigmoid(&cache.n2, &cache.sig2, &mut dn2);
        let dh1 = self.norm2.backward(&cache.h1, &cache.s2, &dn2, batch, hw);
        let mut dn1 = self.conv1.backward(&cache.a1, &dh1, batch, side, side, true).unwrap_or_default();
        silu_backward_with_sigmoid(&cache.n1, &cache.sig1, &mut dn1);
        let mut dx = self.norm1.backward(&cache.x, &cache.s1, &dn1, batch, hw);
        match &mut self.skip {
            Some(proj) => {
                let ds = proj.backward(&cache.x, dout, batch, side, side, true).unwrap_or_default();
                for (d, s) in dx.iter_mut().zip(ds) {
                    *d += s;
                }
            }
            None => {
                for (d, &s) in dx.iter_mut().zip(dout) {
                    *d += s;
                }
            }
        }
        dx
    }
}

impl<T: Scalar> Module<T> for ResBlock<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param<T>)) {
        self.norm1.visit(&join(prefix, "norm1"), f);
        self.conv1.visit(&join(prefix, "conv1"), f);
        self.norm2.visit(&join(prefix, "norm2"), f);
        self.conv2.visit(&join(prefix, "conv2"), f);
        if let Some(s) = &self.skip {
            s.visit(&join(prefix, "skip"), f);
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<T>)) {
        self.norm1.visit_mut(&join(prefix, "norm1"), f);
        self.conv1.visit_mut(&join(prefix, "conv1"), f);
        self.norm2.visit_mut(&join(prefix, "norm2"), f);
        self.conv2.visit_mut(&join(prefix, "conv2"), f);
        if let Some(s) = &mut self.skip {
            s.visit_mut(&join(prefix, "skip"), f);
        }
    }
}

/// `C` feature maps of `init × init` → `C × H × W` logits via repeated
/// (2× nearest upsample, residual block) stages.
#[derive(Clone, Debug, PartialEq)]
pub struct Decoder<T> {
    pub conv_in: Conv2d<T>,
    pub stages: Vec<ResBlock<T>>,
    pub conv_out: Conv2d<T>,
    init_size: usize,
}

#[derive(Clone, Debug, Default)]
pub struct DecoderCache<T> {
    maps: Vec<T>,
    stages: Vec<ResBlockCache<T>>,
    last: Vec<T>,
    batch: usize,
}

impl<T: Scalar> Decoder<T> {
    pub fn new(config: &ModelConfig, rng: &mut impl RngCore) -> Self {
        let conv_in = Conv2d::new(config.class_count, config.decoder_base_channels, 3, rng);
        let mut prev = config.decoder_base_channels;
        let mut stages = Vec::new();
        for &w in &config.decoder_stage_channels {
            stages.push(ResBlock::new(prev, w, config.groupnorm_groups, rng));
            prev = w;
        }
        Self {
            conv_in,
            stages,
            conv_out: Conv2d::new(prev, config.class_count, 3, rng),
            init_size: config.decoder_init_size,
        }
    }

    /// `maps` is sample-major `batch × C × init × init`.
    pub fn forward(&self, maps: &[T], batch: usize) -> (Vec<T>, DecoderCache<T>) {
        let mut side = self.init_size;
        let mut h = self.conv_in.forward(maps, batch, side, side);
        let mut caches = Vec::with_capacity(self.stages.len());
        for block in &self.stages {
            let up = upsample2x(&h, batch * block.norm1.channels, side, side);
            side *= 2;
            let (out, cache) = block.forward(up, batch, side);
            caches.push(cache);
            h = out;
        }
        let logits = self.conv_out.forward(&h, batch, side, side);
        (logits, DecoderCache { maps: maps.to_vec(), stages: caches, last: h, batch })
    }

    /// Returns the gradient with respect to the input maps.
    pub fn backward(&mut self, cache: &DecoderCache<T>, dlogits: &[T]) -> Vec<T> {
        let batch = cache.batch;
        let mut side = self.init_size << self.stages.len();
        let mut dh = self.conv_out.backward(&cache.last, dlogits, batch, side, side, true).unwrap_or_default();
        for (block, bc) in self.stages.iter_mut().zip(&cache.stages).rev() {
            let dup = block.backward(bc, &dh, batch, side);
            side /= 2;
            dh = upsample2x_backward(&dup, batch * block.norm1.channels, side, side);
        }
        self.conv_in.backward(&cache.maps, &dh, batch, side, side, true).unwrap_or_default()
    }
}

impl<T: Scalar> Module<T> for Decoder<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param<T>)) {
        self.conv_in.visit(&join(prefix, "conv_in"), f);
        for (i, s) in self.stages.iter().enumerate() {
            s.visit(&join(prefix, &format!("stage{i}")), f);
        }
        self.conv_out.visit(&join(prefix, "conv_out"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<T>)) {
        self.conv_in.visit_mut(&join(prefix, "conv_in"), f);
        for (i, s) in self.stages.iter_mut().enumerate() {
            s.visit_mut(&join(prefix, &format!("stage{i}")), f);
        }
        self.conv_out.visit_mut(&join(prefix, "conv_out"), f);
    }
}
