//! The mask autoencoder: per-class MLP encoder with Gaussian heads, a
//! recurrent block that reads the classes as a sequence, a feed-forward
//! block, and a convolutional decoder.
//!
//! Batched tensors inside this module are class-major up to the decoder
//! (row `class · batch + sample`) and sample-major afterwards.

mod blocks;
mod config;

pub use blocks::{Decoder, Encoder, EncoderTrunk, FeedForward, ResBlock};
pub use config::{parameter_count, stage_count, ModelConfig};

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};

use blocks::{DecoderCache, EncoderCache, FeedForwardCache};

use crate::error::{Error, Result};
use crate::mask::{one_hot_decode, LabelMap, SemanticMask};
use crate::nn::{join, standard_normal, Lstm, LstmCache, Module, Param};
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum Mode {
    /// Sample codes with the reparameterization trick.
    Train,
    /// Use the mean as the code.
    Infer,
}

/// Per-class Gaussian parameters, `C × D` each.
#[derive(Clone, Debug, PartialEq)]
pub struct LatentDistribution<T> {
    pub class_count: usize,
    pub dim: usize,
    pub mu: Vec<T>,
    pub logvar: Vec<T>,
}

/// One code per class, `C × D`; row `c` belongs to palette class `c`.
#[derive(Clone, Debug, PartialEq)]
pub struct ClassEmbeddings<T> {
    pub class_count: usize,
    pub dim: usize,
    pub codes: Vec<T>,
}

impl<T: Scalar> ClassEmbeddings<T> {
    pub fn new(class_count: usize, dim: usize, codes: Vec<T>) -> Result<Self> {
        if codes.len() != class_count * dim {
            return Err(Error::Shape(format!(
                "expected {class_count}x{dim} codes, got {}",
                codes.len()
            )));
        }
        Ok(Self { class_count, dim, codes })
    }

    pub fn row(&self, class: usize) -> &[T] {
        &self.codes[class * self.dim..(class + 1) * self.dim]
    }

    pub fn row_mut(&mut self, class: usize) -> &mut [T] {
        &mut self.codes[class * self.dim..(class + 1) * self.dim]
    }

    pub fn is_finite(&self) -> bool {
        self.codes.iter().all(|v| v.is_finite())
    }
}

/// Codes viewed as `C` square feature maps (row-major reshape).
#[derive(Clone, Debug, PartialEq)]
pub struct DecoderInput<T> {
    pub class_count: usize,
    pub side: usize,
    pub maps: Vec<T>,
}

impl<T: Scalar> DecoderInput<T> {
    pub fn from_codes(codes: &ClassEmbeddings<T>, side: usize) -> Result<Self> {
        if side * side != codes.dim {
            return Err(Error::Shape(format!("code width {} is not {side}²", codes.dim)));
        }
        Ok(Self { class_count: codes.class_count, side, maps: codes.codes.clone() })
    }

    pub fn map(&self, class: usize) -> &[T] {
        let n = self.side * self.side;
        &self.maps[class * n..(class + 1) * n]
    }

    pub fn into_codes(self) -> ClassEmbeddings<T> {
        ClassEmbeddings { class_count: self.class_count, dim: self.side * self.side, codes: self.maps }
    }
}

/// Pre-softmax class scores, `C × H × W`.
#[derive(Clone, Debug, PartialEq)]
pub struct MaskLogits<T> {
    pub class_count: usize,
    pub height: usize,
    pub width: usize,
    pub logits: Vec<T>,
}

impl<T: Scalar> MaskLogits<T> {
    /// Argmax labels (ties → lowest class).
    pub fn to_labels(&self) -> LabelMap {
        one_hot_decode(&self.logits, self.class_count, self.height, self.width)
            .expect("logits shape is consistent")
    }

    pub fn to_mask(&self) -> SemanticMask {
        crate::mask::one_hot_encode(&self.to_labels()).expect("decoder output size is valid")
    }

    /// Channel-wise softmax, `C × H × W`.
    pub fn softmax(&self) -> Vec<T> {
        let plane = self.height * self.width;
        let mut out = vec![T::zero(); self.logits.len()];
        for p in 0..plane {
            let max = (0..self.class_count)
                .map(|c| self.logits[c * plane + p])
                .fold(T::neg_infinity(), T::max);
            let mut sum = T::zero();
            for c in 0..self.class_count {
                let e = (self.logits[c * plane + p] - max).exp();
                out[c * plane + p] = e;
                sum += e;
            }
            for c in 0..self.class_count {
                out[c * plane + p] /= sum;
            }
        }
        out
    }

    pub fn is_finite(&self) -> bool {
        self.logits.iter().all(|v| v.is_finite())
    }
}

/// Draws codes from a distribution. In [`Mode::Infer`] the codes are the
/// means and `rng` is untouched.
pub fn reparameterize<T: Scalar>(dist: &LatentDistribution<T>, mode: Mode, rng: &mut impl RngCore) -> ClassEmbeddings<T> {
    let codes = match mode {
        Mode::Infer => dist.mu.clone(),
        Mode::Train => dist
            .mu
            .iter()
            .zip(&dist.logvar)
            .map(|(&m, &lv)| m + (lv * T::lit(0.5)).exp() * standard_normal::<T>(rng))
            .collect(),
    };
    ClassEmbeddings { class_count: dist.class_count, dim: dist.dim, codes }
}

/// Everything a backward pass needs from one batched forward pass.
#[derive(Clone, Debug)]
pub struct BatchPass<T> {
    pub batch: usize,
    /// Sample-major `batch × C × H × W`.
    pub logits: Vec<T>,
    /// Class-major `C·batch × D`.
    pub mu: Vec<T>,
    pub logvar: Vec<T>,
    input: Vec<T>,
    enc: EncoderCache<T>,
    eps: Option<Vec<T>>,
    lstm: LstmCache<T>,
    lstm_out: Vec<T>,
    ff: FeedForwardCache<T>,
    dec: DecoderCache<T>,
}

impl<T: Scalar> BatchPass<T> {
    pub fn sample_logits(&self, sample: usize, class_count: usize, size: usize) -> MaskLogits<T> {
        let n = class_count * size * size;
        MaskLogits {
            class_count,
            height: size,
            width: size,
            logits: self.logits[sample * n..(sample + 1) * n].to_vec(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MaskVae<T> {
    config: ModelConfig,
    pub encoder: Encoder<T>,
    pub lstm: Lstm<T>,
    pub feed_forward: FeedForward<T>,
    pub decoder: Decoder<T>,
}

impl<T: Scalar> MaskVae<T> {
    /// Freshly initialised model; identical seeds give identical weights.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let encoder = Encoder::new(&config, &mut rng);
        let lstm = Lstm::new(
            config.latent_dim,
            config.lstm_layers,
            config.bidirectional,
            config.lstm_hidden_per_direction,
            &mut rng,
        );
        let feed_forward = FeedForward::new(config.latent_dim, config.ff_expansion, &mut rng);
        let decoder = Decoder::new(&config, &mut rng);
        Ok(Self { config, encoder, lstm, feed_forward, decoder })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    fn check_labels(&self, labels: &LabelMap) -> Result<()> {
        let c = &self.config;
        if labels.class_count() != c.class_count || labels.height() != c.mask_size || labels.width() != c.mask_size {
            return Err(Error::Shape(format!(
                "model expects {} classes at {}x{}, got {} at {}x{}",
                c.class_count,
                c.mask_size,
                c.mask_size,
                labels.class_count(),
                labels.height(),
                labels.width()
            )));
        }
        Ok(())
    }

    fn check_codes(&self, codes: &ClassEmbeddings<T>) -> Result<()> {
        if codes.class_count != self.config.class_count || codes.dim != self.config.latent_dim {
            return Err(Error::Shape(format!(
                "model expects {}x{} codes, got {}x{}",
                self.config.class_count, self.config.latent_dim, codes.class_count, codes.dim
            )));
        }
        Ok(())
    }

    /// Class-major one-hot rows for a batch of label maps.
    fn one_hot_rows(&self, batch: &[&LabelMap]) -> Vec<T> {
        let (c, p, b) = (self.config.class_count, self.config.pixels(), batch.len());
        let mut x = vec![T::zero(); c * b * p];
        for (s, labels) in batch.iter().enumerate() {
            for (i, &l) in labels.labels().iter().enumerate() {
                x[(l as usize * b + s) * p + i] = T::one();
            }
        }
        x
    }

    pub fn encode(&self, mask: &SemanticMask) -> Result<LatentDistribution<T>> {
        let labels = mask.to_labels();
        self.check_labels(&labels)?;
        let x = mask.to_scalars::<T>();
        let (mu, logvar, _) = self.encoder.forward(&x, self.config.class_count, 1);
        Ok(LatentDistribution { class_count: self.config.class_count, dim: self.config.latent_dim, mu, logvar })
    }

    pub fn encode_labels(&self, labels: &LabelMap) -> Result<LatentDistribution<T>> {
        self.check_labels(labels)?;
        let x = self.one_hot_rows(&[labels]);
        let (mu, logvar, _) = self.encoder.forward(&x, self.config.class_count, 1);
        Ok(LatentDistribution { class_count: self.config.class_count, dim: self.config.latent_dim, mu, logvar })
    }

    /// Runs the class sequence through the recurrent block (identity when it
    /// has no layers).
    pub fn lstm_block(&self, codes: &ClassEmbeddings<T>) -> Result<ClassEmbeddings<T>> {
        self.check_codes(codes)?;
        let (out, _) = self.lstm.forward(&codes.codes, codes.class_count, 1);
        Ok(ClassEmbeddings { codes: out, ..codes.clone() })
    }

    pub fn feed_forward(&self, codes: &ClassEmbeddings<T>) -> Result<ClassEmbeddings<T>> {
        self.check_codes(codes)?;
        let (out, _) = self.feed_forward.forward(&codes.codes, codes.class_count);
        Ok(ClassEmbeddings { codes: out, ..codes.clone() })
    }

    /// Reshapes codes into feature maps and decodes them to logits.
    pub fn decode(&self, codes: &ClassEmbeddings<T>) -> Result<MaskLogits<T>> {
        self.check_codes(codes)?;
        let input = DecoderInput::from_codes(codes, self.config.decoder_init_size)?;
        let (logits, _) = self.decoder.forward(&input.maps, 1);
        Ok(self.wrap_logits(logits))
    }

    fn wrap_logits(&self, logits: Vec<T>) -> MaskLogits<T> {
        MaskLogits {
            class_count: self.config.class_count,
            height: self.config.mask_size,
            width: self.config.mask_size,
            logits,
        }
    }

    /// Everything after the encoder: recurrent block, feed-forward, decoder.
    pub fn synthesize(&self, codes: &ClassEmbeddings<T>) -> Result<MaskLogits<T>> {
        let mixed = self.lstm_block(codes)?;
        let projected = self.feed_forward(&mixed)?;
        self.decode(&projected)
    }

    /// Decodes many code sets in one batched pass. Samples do not interact.
    pub fn synthesize_batch(&self, codes: &[ClassEmbeddings<T>]) -> Result<Vec<MaskLogits<T>>> {
        let (c, d) = (self.config.class_count, self.config.latent_dim);
        let b = codes.len();
        let mut rows = vec![T::zero(); c * b * d];
        for (s, e) in codes.iter().enumerate() {
            self.check_codes(e)?;
            for k in 0..c {
                rows[(k * b + s) * d..(k * b + s + 1) * d].copy_from_slice(e.row(k));
            }
        }
        let (mixed, _) = self.lstm.forward(&rows, c, b);
        let (projected, _) = self.feed_forward.forward(&mixed, c * b);
        let maps = class_to_sample_major(&projected, c, b, d);
        let (logits, _) = self.decoder.forward(&maps, b);
        let n = c * self.config.pixels();
        Ok(logits.chunks_exact(n).map(|l| self.wrap_logits(l.to_vec())).collect())
    }

    pub fn forward(&self, mask: &SemanticMask, mode: Mode, rng: &mut impl RngCore) -> Result<(MaskLogits<T>, LatentDistribution<T>)> {
        let dist = self.encode(mask)?;
        let codes = reparameterize(&dist, mode, rng);
        Ok((self.synthesize(&codes)?, dist))
    }

    /// Inference-mode round trip of a label map.
    pub fn reconstruct(&self, labels: &LabelMap) -> Result<LabelMap> {
        let dist = self.encode_labels(labels)?;
        let codes = reparameterize(&dist, Mode::Infer, &mut NoRng);
        Ok(self.synthesize(&codes)?.to_labels())
    }

    /// Batched forward pass retaining the intermediate activations needed by
    /// [`MaskVae::backward_batch`].
    pub fn forward_batch(&self, batch: &[&LabelMap], mode: Mode, rng: &mut impl RngCore) -> Result<BatchPass<T>> {
        if batch.is_empty() {
            return Err(Error::Empty("batch has no samples".into()));
        }
        for l in batch {
            self.check_labels(l)?;
        }
        let (c, d, b) = (self.config.class_count, self.config.latent_dim, batch.len());
        let input = self.one_hot_rows(batch);
        let (mu, logvar, enc) = self.encoder.forward(&input, c, b);
        let (codes, eps) = match mode {
            Mode::Infer => (mu.clone(), None),
            Mode::Train => {
                let eps: Vec<T> = (0..mu.len()).map(|_| standard_normal::<T>(rng)).collect();
                let codes = mu
                    .iter()
                    .zip(&logvar)
                    .zip(&eps)
                    .map(|((&m, &lv), &e)| m + (lv * T::lit(0.5)).exp() * e)
                    .collect();
                (codes, Some(eps))
            }
        };
        let (lstm_out, lstm) = self.lstm.forward(&codes, c, b);
        let (projected, ff) = self.feed_forward.forward(&lstm_out, c * b);
        let maps = class_to_sample_major(&projected, c, b, d);
        let (logits, dec) = self.decoder.forward(&maps, b);
        Ok(BatchPass { batch: b, logits, mu, logvar, input, enc, eps, lstm, lstm_out, ff, dec })
    }

    /// Accumulates parameter gradients given the loss gradients with respect
    /// to the logits and (directly, e.g. from a KL term) to `mu`/`logvar`.
    pub fn backward_batch(&mut self, pass: &BatchPass<T>, dlogits: &[T], dmu_direct: &[T], dlogvar_direct: &[T]) {
        let (c, d, b) = (self.config.class_count, self.config.latent_dim, pass.batch);
        let dmaps = self.decoder.backward(&pass.dec, dlogits);
        let dprojected = sample_to_class_major(&dmaps, c, b, d);
        let dmixed = self.feed_forward.backward(&pass.lstm_out, &pass.ff, &dprojected, c * b);
        let dcodes = self.lstm.backward(&pass.lstm, &dmixed);
        let mut dmu = dmu_direct.to_vec();
        let mut dlogvar = dlogvar_direct.to_vec();
        for (g, &dz) in dmu.iter_mut().zip(&dcodes) {
            *g += dz;
        }
        if let Some(eps) = &pass.eps {
            for i in 0..dlogvar.len() {
                let std = (pass.logvar[i] * T::lit(0.5)).exp();
                dlogvar[i] += dcodes[i] * eps[i] * std * T::lit(0.5);
            }
        }
        self.encoder.backward(&pass.input, &pass.enc, &dmu, &dlogvar, c, b);
    }
}

impl<T: Scalar> Module<T> for MaskVae<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param<T>)) {
        self.encoder.visit(&join(prefix, "encoder"), f);
        self.lstm.visit(&join(prefix, "lstm"), f);
        self.feed_forward.visit(&join(prefix, "ff"), f);
        self.decoder.visit(&join(prefix, "decoder"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<T>)) {
        self.encoder.visit_mut(&join(prefix, "encoder"), f);
        self.lstm.visit_mut(&join(prefix, "lstm"), f);
        self.feed_forward.visit_mut(&join(prefix, "ff"), f);
        self.decoder.visit_mut(&join(prefix, "decoder"), f);
    }
}

fn class_to_sample_major<T: Scalar>(x: &[T], classes: usize, batch: usize, dim: usize) -> Vec<T> {
    let mut out = vec![T::zero(); x.len()];
    for c in 0..classes {
        for b in 0..batch {
            out[(b * classes + c) * dim..(b * classes + c + 1) * dim]
                .copy_from_slice(&x[(c * batch + b) * dim..(c * batch + b + 1) * dim]);
        }
    }
    out
}

fn sample_to_class_major<T: Scalar>(x: &[T], classes: usize, batch: usize, dim: usize) -> Vec<T> {
    let mut out = vec![T::zero(); x.len()];
    for c in 0..classes {
        for b in 0..batch {
            out[(c * batch + b) * dim..(c * batch + b + 1) * dim]
                .copy_from_slice(&x[(b * classes + c) * dim..(b * classes + c + 1) * dim]);
        }
    }
    out
}

/// Stand-in generator for code paths that never draw (inference mode).
struct NoRng;

impl RngCore for NoRng {
    fn next_u32(&mut self) -> u32 {
        unreachable!("inference mode does not sample")
    }
    fn next_u64(&mut self) -> u64 {
        unreachable!("inference mode does not sample")
    }
    fn fill_bytes(&mut self, _dst: &mut [u8]) {
        unreachable!("inference mode does not sample")
    }
}
