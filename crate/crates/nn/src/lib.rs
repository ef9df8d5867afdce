//! Dense-tensor numerics shared by the ESRT edge encoder, cloud decoder,
//! curriculum trainer and reconstruction probe.
//!
//! Everything computes in `f32`, row-major, with explicit shapes. Layers carry
//! hand-written backward passes sized for the toy trainer; there is no graph
//! engine.

pub mod error;
pub mod grad;
pub mod init;
pub mod layers;
pub mod ops;
pub mod optim;
pub mod tensor;

pub use error::{NnError, Result};
pub use grad::grad_check;
pub use init::ParamRng;
pub use layers::{
    AdaptedLinear, FeedForward, LayerNormLayer, LinearLayer, LoraAdapter, MultiHeadAttention,
    Params, TransformerBlock,
};
pub use optim::Adam;
pub use ops::{
    attention, cross_attention, gelu, layer_norm, log_softmax_slice, sinusoidal_positions, softmax,
};
pub use tensor::{matmul, matmul_nt, matmul_tn, Tensor};
