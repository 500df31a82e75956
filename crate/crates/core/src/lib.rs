//! Class-wise variational autoencoder for semantic segmentation masks.
//!
//! Each class channel of a mask is embedded independently, the resulting
//! per-class codes are read as a sequence by a (bi-directional) LSTM block so
//! that every class sees every other, and a convolutional decoder turns the
//! codes back into a mask. Individual class codes can be regenerated,
//! perturbed or interpolated before decoding.
//!
//! The crate is `no_std` + `alloc`; file formats, the CLI and the HTTP
//! service live in the `semvae` crate.
#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod error;
pub mod latent;
pub mod loss;
pub mod mask;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod optim;
pub mod scalar;
pub mod serialize;
pub mod toy;
pub mod train;

pub use error::{Error, Result};
pub use mask::{ClassPalette, ClassWeights, DatasetStats, LabelMap, SemanticMask};
pub use metrics::SegMetrics;
pub use model::{ClassEmbeddings, LatentDistribution, MaskLogits, MaskVae, Mode, ModelConfig};
pub use scalar::Scalar;
