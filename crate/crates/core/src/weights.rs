//! Weight files for the edge pipeline and cloud model.
//!
//! Layout, all little-endian:
//!
//! ```text
//! "ESRW"            4 bytes
//! version           u32 (1)
//! seed              u64
//! encoder           d_w, layers, heads, downsample       4 x u32
//! q-former          k_queries, d_q, layers, heads        4 x u32
//! cloud             d_llm, decoder_layers, heads,
//!                   max_new_tokens                       4 x u32
//! lora              rank u32 (0 = none), alpha f32
//! tensor count      u32
//! per tensor        element count u32, then f32 values
//! ```
//!
//! Tensors follow `params()` order: encoder, q-former, projection MLP,
//! decoder (adapters inline when present).

use std::fs;
use std::path::Path;

use esrt_nn::{Params, Tensor};
use thiserror::Error;

use crate::cloud::{CloudConfig, CloudError, CloudModel};
use crate::edge::{AcousticEncoder, EdgeError, EdgePipeline, EncoderConfig, QFormerConfig};

pub const MAGIC: &[u8; 4] = b"ESRW";
pub const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum WeightsError {
    #[error("not a weight file (bad magic)")]
    BadMagic,
    #[error("unsupported weight file version {0}")]
    Version(u32),
    #[error("weight file truncated at byte {0}")]
    Truncated(usize),
    #[error("{0} trailing bytes after the last tensor")]
    Trailing(usize),
    #[error("weight file holds {found} tensors, model needs {expected}")]
    TensorCount { expected: usize, found: usize },
    #[error("tensor {index}: file has {found} values, model needs {expected}")]
    TensorSize { index: usize, expected: usize, found: usize },
    #[error("weights were saved for {0}")]
    ConfigMismatch(String),
    #[error(transparent)]
    Edge(#[from] EdgeError),
    #[error(transparent)]
    Cloud(#[from] CloudError),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WeightsHeader {
    pub seed: u64,
    pub encoder: EncoderConfig,
    pub qformer: QFormerConfig,
    pub cloud: CloudConfig,
    /// `(rank, alpha)` when the decoder carries adapters.
    pub lora: Option<(usize, f32)>,
}

/// Everything a deployment needs, edge and cloud.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub seed: u64,
    pub edge: EdgePipeline,
    pub cloud: CloudModel,
}

impl Checkpoint {
    /// Fresh seeded weights.
    pub fn init(enc: EncoderConfig, q: QFormerConfig, cloud: CloudConfig, seed: u64) -> Result<Self, WeightsError> {
        Ok(Self {
            seed,
            edge: EdgePipeline::init(enc, q, seed)?,
            cloud: CloudModel::init(cloud, q.d_q, seed)?,
        })
    }

    pub fn header(&self) -> WeightsHeader {
        let lora = self
            .cloud
            .decoder
            .lora_params()
            .first()
            .map(|a| (a.cols(), self.lora_alpha()));
        WeightsHeader {
            seed: self.seed,
            encoder: *self.edge.encoder().config(),
            qformer: *self.edge.qformer().config(),
            cloud: self.cloud.cfg,
            lora,
        }
    }

    fn lora_alpha(&self) -> f32 {
        self.cloud
            .decoder
            .blocks
            .first()
            .and_then(|b| b.attn.wq.lora.as_ref())
            .map_or(0.0, |l| l.alpha)
    }

    fn tensors(&self) -> Vec<&Tensor> {
        let mut v = self.edge.encoder().params();
        v.extend(self.edge.qformer().params());
        v.extend(self.cloud.mlp.params());
        v.extend(self.cloud.decoder.params());
        v
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let h = self.header();
        let tensors = self.tensors();
        let n: usize = tensors.iter().map(|t| t.numel()).sum();
        let mut out = Vec::with_capacity(96 + 4 * tensors.len() + 4 * n);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&h.seed.to_le_bytes());
        let dims = [
            h.encoder.d_w,
            h.encoder.layers,
            h.encoder.heads,
            h.encoder.downsample,
            h.qformer.k_queries,
            h.qformer.d_q,
            h.qformer.layers,
            h.qformer.heads,
            h.cloud.d_llm,
            h.cloud.decoder_layers,
            h.cloud.heads,
            h.cloud.max_new_tokens,
            h.lora.map_or(0, |(r, _)| r),
        ];
        for d in dims {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        out.extend_from_slice(&h.lora.map_or(0.0f32, |(_, a)| a).to_le_bytes());
        out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
        for t in tensors {
            out.extend_from_slice(&(t.numel() as u32).to_le_bytes());
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, WeightsError> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(WeightsError::BadMagic);
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(WeightsError::Version(version));
        }
        let h = read_header_body(&mut r)?;
        let mut ck = Self::init(h.encoder, h.qformer, h.cloud, h.seed)?;
        if let Some((rank, alpha)) = h.lora {
            ck.cloud.decoder.attach_lora(rank, alpha, h.seed)?;
        }
        let count = r.u32()? as usize;
        let (mut enc, q) = ck.edge.clone().into_parts();
        let mut q = q;
        let mut slots: Vec<&mut Tensor> = enc.params_mut();
        slots.extend(q.params_mut());
        slots.extend(ck.cloud.mlp.params_mut());
        slots.extend(ck.cloud.decoder.params_mut());
        if count != slots.len() {
            return Err(WeightsError::TensorCount {
                expected: slots.len(),
                found: count,
            });
        }
        for (index, t) in slots.into_iter().enumerate() {
            let found = r.u32()? as usize;
            if found != t.numel() {
                return Err(WeightsError::TensorSize {
                    index,
                    expected: t.numel(),
                    found,
                });
            }
            let raw = r.take(4 * found)?;
            for (dst, c) in t.data_mut().iter_mut().zip(raw.chunks_exact(4)) {
                *dst = f32::from_le_bytes([c[0], c[1], c[2], c[3]]);
            }
        }
        if r.pos != bytes.len() {
            return Err(WeightsError::Trailing(bytes.len() - r.pos));
        }
        ck.edge = EdgePipeline::new(enc, q)?;
        Ok(ck)
    }

    pub fn save(&self, path: &Path) -> Result<(), WeightsError> {
        fs::write(path, self.to_bytes()).map_err(|source| io_err(path, source))
    }

    pub fn load(path: &Path) -> Result<Self, WeightsError> {
        Self::from_bytes(&fs::read(path).map_err(|source| io_err(path, source))?)
    }

    /// Fails unless the saved dimensions equal the configured ones.
    pub fn check_dims(&self, enc: &EncoderConfig, q: &QFormerConfig, cloud: &CloudConfig) -> Result<(), WeightsError> {
        let h = self.header();
        if h.encoder != *enc {
            return Err(WeightsError::ConfigMismatch(format!("encoder {:?}", h.encoder)));
        }
        if h.qformer != *q {
            return Err(WeightsError::ConfigMismatch(format!("q-former {:?}", h.qformer)));
        }
        if h.cloud.d_llm != cloud.d_llm || h.cloud.decoder_layers != cloud.decoder_layers || h.cloud.heads != cloud.heads {
            return Err(WeightsError::ConfigMismatch(format!("cloud {:?}", h.cloud)));
        }
        Ok(())
    }
}

fn io_err(path: &Path, source: std::io::Error) -> WeightsError {
    WeightsError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Reads only the header of a weight file.
pub fn read_header(bytes: &[u8]) -> Result<WeightsHeader, WeightsError> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(WeightsError::BadMagic);
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(WeightsError::Version(version));
    }
    read_header_body(&mut r)
}

fn read_header_body(r: &mut Reader<'_>) -> Result<WeightsHeader, WeightsError> {
    let seed = u64::from_le_bytes(r.take(8)?.try_into().expect("8 bytes"));
    let mut d = [0usize; 13];
    for v in &mut d {
        *v = r.u32()? as usize;
    }
    let alpha = f32::from_le_bytes(r.take(4)?.try_into().expect("4 bytes"));
    Ok(WeightsHeader {
        seed,
        encoder: EncoderConfig {
            d_w: d[0],
            layers: d[1],
            heads: d[2],
            downsample: d[3],
        },
        qformer: QFormerConfig {
            k_queries: d[4],
            d_q: d[5],
            layers: d[6],
            heads: d[7],
        },
        cloud: CloudConfig {
            d_llm: d[8],
            decoder_layers: d[9],
            heads: d[10],
            max_new_tokens: d[11],
        },
        lora: (d[12] > 0).then_some((d[12], alpha)),
    })
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], WeightsError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let Some(end) = end else {
            return Err(WeightsError::Truncated(self.bytes.len()));
        };
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, WeightsError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
}
