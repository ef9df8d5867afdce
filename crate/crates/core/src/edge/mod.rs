//! Edge half of the split: acoustic encoder, Q-Former compression and the
//! end-to-end clip → features pipeline.

mod encoder;
mod pipeline;
mod qformer;

use esrt_nn::{NnError, Tensor};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::audio::{AudioError, N_FRAMES, N_MELS};
use crate::key::CacheKey;

pub use encoder::{AcousticEncoder, ToyEncoder};
pub use pipeline::EdgePipeline;
pub use qformer::{QFormer, QFormerCache};

#[derive(Debug, Error)]
pub enum EdgeError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("weights do not match configuration: {0}")]
    WeightMismatch(String),
    #[error(transparent)]
    Audio(#[from] AudioError),
    #[error(transparent)]
    Numerics(#[from] NnError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncoderConfig {
    pub d_w: usize,
    pub layers: usize,
    pub heads: usize,
    pub downsample: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            d_w: 64,
            layers: 2,
            heads: 2,
            downsample: 2,
        }
    }
}

impl EncoderConfig {
    /// Full-size dimensions with no transformer layers, for shape checks.
    pub fn full_size() -> Self {
        Self {
            d_w: 1280,
            layers: 0,
            heads: 20,
            downsample: 2,
        }
    }

    /// Output sequence length L′ of the strided convolution.
    pub fn seq_len(&self) -> usize {
        N_FRAMES.div_ceil(self.downsample)
    }

    pub fn validate(&self) -> Result<(), EdgeError> {
        if self.d_w == 0 || self.heads == 0 || self.d_w % self.heads != 0 {
            return Err(EdgeError::Config(format!(
                "encoder d_w {} must be a positive multiple of heads {}",
                self.d_w, self.heads
            )));
        }
        if self.downsample == 0 {
            return Err(EdgeError::Config("encoder downsample must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QFormerConfig {
    pub k_queries: usize,
    pub d_q: usize,
    pub layers: usize,
    pub heads: usize,
}

impl Default for QFormerConfig {
    fn default() -> Self {
        Self {
            k_queries: 8,
            d_q: 32,
            layers: 2,
            heads: 2,
        }
    }
}

impl QFormerConfig {
    pub fn full_size(k_queries: usize) -> Self {
        Self {
            k_queries,
            d_q: 768,
            layers: 1,
            heads: 2,
        }
    }

    pub fn validate(&self, encoder: &EncoderConfig) -> Result<(), EdgeError> {
        if self.k_queries == 0 {
            return Err(EdgeError::Config("k_queries must be >= 1".into()));
        }
        if self.d_q == 0 || self.heads == 0 || self.d_q % self.heads != 0 {
            return Err(EdgeError::Config(format!(
                "q-former d_q {} must be a positive multiple of heads {}",
                self.d_q, self.heads
            )));
        }
        let l = encoder.seq_len();
        if self.k_queries >= l {
            return Err(EdgeError::Config(format!(
                "k_queries {} must be much smaller than the encoder length {l}",
                self.k_queries
            )));
        }
        if u16::try_from(self.k_queries).is_err() || u16::try_from(self.d_q).is_err() {
            return Err(EdgeError::Config("k_queries and d_q must fit in 16 bits".into()));
        }
        Ok(())
    }

    pub fn numel(&self) -> usize {
        self.k_queries * self.d_q
    }
}

/// Encoder output `H` of shape `[L′ × d_w]`.
#[derive(Debug, Clone, PartialEq)]
pub struct AcousticFeatures {
    pub h: Tensor,
    pub source_key: CacheKey,
}

/// Q-Former output `Z`, the only acoustic data that leaves the device.
#[derive(Debug, Clone, PartialEq)]
pub struct CompressedFeatures {
    z: Tensor,
    cache_key: CacheKey,
}

impl CompressedFeatures {
    pub fn new(z: Tensor, cache_key: CacheKey) -> Result<Self, EdgeError> {
        if z.rank() != 2 || z.rows() == 0 || z.cols() == 0 {
            return Err(EdgeError::Config(format!(
                "features must be a non-empty K x d_q matrix, got {:?}",
                z.shape()
            )));
        }
        Ok(Self { z, cache_key })
    }

    pub fn z(&self) -> &Tensor {
        &self.z
    }

    pub fn into_z(self) -> Tensor {
        self.z
    }

    pub fn cache_key(&self) -> CacheKey {
        self.cache_key
    }

    pub fn k(&self) -> usize {
        self.z.rows()
    }

    pub fn d_q(&self) -> usize {
        self.z.cols()
    }
}

/// Element count of the Mel input, `128 · 3000`.
pub const MEL_ELEMENTS: usize = N_MELS * N_FRAMES;

/// `(encoder / Mel, features / Mel, Mel / features)` element-count ratios.
pub fn compression_ratios(enc: &EncoderConfig, q: &QFormerConfig) -> (f64, f64, f64) {
    let mel = MEL_ELEMENTS as f64;
    let h = (enc.seq_len() * enc.d_w) as f64;
    let z = q.numel() as f64;
    (h / mel, z / mel, mel / z)
}
