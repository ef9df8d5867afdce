//! Cloud half of the split: projection, prompt fusion, decoding and serving.

mod client;
mod decode;
mod model;
mod service;
mod srt;
pub mod vocab;

use esrt_nn::NnError;
use thiserror::Error;

use crate::cache::CacheError;
use crate::wire::WireError;

pub use client::{EdgeClient, InProcess, TcpTransport, TrafficSummary, Transport};
pub use decode::{
    decode, decode_beam, decode_greedy, DecodeMode, DecoderScorer, NextTokenScorer, SrtConstraint,
    TokenConstraint, Unconstrained, DEFAULT_BEAM_WIDTH,
};
pub use model::{cross_entropy, fuse, CloudConfig, CloudModel, DecoderCache, FusedInput, Mlp, ToyDecoder};
pub use service::{CloudServer, CloudService, ConnectionSource};
pub use srt::{parse_srt_output, srt_tokens, SrtOutput};
pub use vocab::{LanguageInfo, ResourceLevel, Vocabulary, LANGUAGES};

#[derive(Debug, Error)]
pub enum CloudError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("unknown language code {0:?}")]
    UnknownLanguage(String),
    #[error("token id {id} outside vocabulary of {size}")]
    TokenOutOfRange { id: u32, size: usize },
    #[error("dimension mismatch: {0}")]
    DimMismatch(String),
    #[error("malformed SRT output: {0}")]
    Format(String),
    #[error("beam width must be at least 1")]
    InvalidBeamWidth,
    #[error("bad request: {0}")]
    BadRequest(String),
    #[error("server reported: {0}")]
    Remote(String),
    #[error("protocol violation: {0}")]
    Protocol(String),
    #[error(transparent)]
    Wire(#[from] WireError),
    #[error(transparent)]
    Cache(#[from] CacheError),
    #[error(transparent)]
    Numerics(#[from] NnError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl CloudError {
    /// True when the failure came from the transport rather than the data.
    pub fn is_network(&self) -> bool {
        matches!(self, CloudError::Io(_) | CloudError::Wire(WireError::Io(_)))
    }
}
