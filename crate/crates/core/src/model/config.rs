use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};

/// Architecture hyperparameters, including the ablation switches
/// (`lstm_layers`, `bidirectional`).
#[derive(Clone, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ModelConfig {
    pub class_count: usize,
    /// Mask height and width.
    pub mask_size: usize,
    /// Per-class code width; always `decoder_init_size²`.
    pub latent_dim: usize,
    pub encoder_hidden: usize,
    /// 0 disables the recurrent block.
    pub lstm_layers: usize,
    pub bidirectional: bool,
    pub lstm_hidden_per_direction: usize,
    pub ff_expansion: usize,
    /// Width of the convolution applied to the reshaped codes.
    pub decoder_base_channels: usize,
    /// Output width of each upsampling stage.
    pub decoder_stage_channels: Vec<usize>,
    pub groupnorm_groups: usize,
    pub decoder_init_size: usize,
    /// One encoder MLP per class instead of a shared one.
    #[cfg_attr(feature = "serde", serde(default))]
    pub per_class_encoders: bool,
}

impl ModelConfig {
    /// Full-resolution configuration: 256×256 masks, 256-d codes, three
    /// bidirectional layers of 128 units per direction, four decoder stages.
    pub fn reference(class_count: usize) -> Self {
        Self {
            class_count,
            mask_size: 256,
            latent_dim: 256,
            encoder_hidden: 256,
            lstm_layers: 3,
            bidirectional: true,
            lstm_hidden_per_direction: 128,
            ff_expansion: 4,
            decoder_base_channels: 128,
            decoder_stage_channels: vec![128, 128, 64, 32],
            groupnorm_groups: 8,
            decoder_init_size: 16,
            per_class_encoders: false,
        }
    }

    /// Desk-scale configuration for small synthetic masks: same recurrent
    /// block and code width, narrower decoder.
    pub fn toy(class_count: usize, mask_size: usize) -> Self {
        let stages = stage_count(mask_size, 16).unwrap_or(0);
        Self {
            mask_size,
            decoder_base_channels: 32,
            decoder_stage_channels: vec![16; stages],
            ..Self::reference(class_count)
        }
    }

    /// Switches the recurrent block to `layers` layers, keeping the output
    /// width equal to the code width.
    pub fn with_lstm(mut self, layers: usize, bidirectional: bool) -> Self {
        self.lstm_layers = layers;
        self.bidirectional = bidirectional;
        self.lstm_hidden_per_direction = if bidirectional { self.latent_dim / 2 } else { self.latent_dim };
        self
    }

    pub fn stages(&self) -> usize {
        self.decoder_stage_channels.len()
    }

    pub fn pixels(&self) -> usize {
        self.mask_size * self.mask_size
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: alloc::string::String| Err(Error::Config(m));
        if self.class_count == 0 || self.class_count > 256 {
            return bad(format!("class_count must be in 1..=256, got {}", self.class_count));
        }
        if self.decoder_init_size == 0 || self.latent_dim != self.decoder_init_size * self.decoder_init_size {
            return bad(format!(
                "latent_dim {} must equal decoder_init_size² ({}²)",
                self.latent_dim, self.decoder_init_size
            ));
        }
        let Some(stages) = stage_count(self.mask_size, self.decoder_init_size) else {
            return bad(format!(
                "mask_size {} is not decoder_init_size {} times a power of two",
                self.mask_size, self.decoder_init_size
            ));
        };
        if stages != self.decoder_stage_channels.len() {
            return bad(format!(
                "mask_size {} needs {stages} decoder stages, {} configured",
                self.mask_size,
                self.decoder_stage_channels.len()
            ));
        }
        if self.encoder_hidden == 0 || self.ff_expansion == 0 {
            return bad("encoder_hidden and ff_expansion must be positive".into());
        }
        if self.lstm_layers > 0 {
            let width = self.lstm_hidden_per_direction * if self.bidirectional { 2 } else { 1 };
            if width != self.latent_dim {
                return bad(format!(
                    "recurrent output width {width} must equal latent_dim {}",
                    self.latent_dim
                ));
            }
        }
        let g = self.groupnorm_groups;
        if g == 0 {
            return bad("groupnorm_groups must be positive".into());
        }
        for &w in core::iter::once(&self.decoder_base_channels).chain(&self.decoder_stage_channels) {
            if w == 0 || w % g != 0 {
                return bad(format!("decoder width {w} is not a positive multiple of {g} groups"));
            }
        }
        Ok(())
    }
}

/// `log2(size / init)` when `size = init · 2^k`.
pub fn stage_count(size: usize, init: usize) -> Option<usize> {
    if init == 0 || size < init || !size.is_multiple_of(init) {
        return None;
    }
    let ratio = size / init;
    ratio.is_power_of_two().then(|| ratio.trailing_zeros() as usize)
}

/// Closed-form number of trainable scalars for `config`.
pub fn parameter_count(config: &ModelConfig) -> usize {
    let linear = |i: usize, o: usize| i * o + o;
    let conv = |i: usize, o: usize, k: usize| i * o * k * k + o;
    let norm = |c: usize| 2 * c;
    let (p, e, d, c) = (config.pixels(), config.encoder_hidden, config.latent_dim, config.class_count);

    let trunk = linear(p, e) + 2 * linear(e, e) + 2 * linear(e, d);
    let trunks = if config.per_class_encoders { c } else { 1 };

    let h = config.lstm_hidden_per_direction;
    let dirs = if config.bidirectional { 2 } else { 1 };
    let mut lstm = 0;
    let mut input = d;
    for _ in 0..config.lstm_layers {
        lstm += dirs * (4 * h * input + 4 * h * h + 4 * h);
        input = dirs * h;
    }

    let ff = linear(d, config.ff_expansion * d) + linear(config.ff_expansion * d, d);

    let mut dec = conv(c, config.decoder_base_channels, 3);
    let mut prev = config.decoder_base_channels;
    for &w in &config.decoder_stage_channels {
        dec += norm(prev) + conv(prev, w, 3) + norm(w) + conv(w, w, 3);
        if prev != w {
            dec += conv(prev, w, 1);
        }
        prev = w;
    }
    dec += conv(prev, c, 3);

    trunks * trunk + lstm + ff + dec
}
