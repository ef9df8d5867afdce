//! Edge ↔ cloud framing. Only `Z`, opaque prompt token ids and text ever
//! cross the wire.

mod bf16;
mod envelope;
mod sizes;
mod stream;

use esrt_nn::Tensor;
use thiserror::Error;

use crate::edge::CompressedFeatures;
use crate::key::CacheKey;

pub use bf16::{bf16_to_f32, decode_bf16, encode_bf16, f32_to_bf16, quantize_bf16};
pub use envelope::{
    decode_envelope, encode_envelope, frame_len, peek_frame_len, DType, FeatureEnvelope, MsgType,
    HEADER_BYTES, MAGIC, VERSION,
};
pub use sizes::{audio_size, base64_len, measure_sizes, SizeReport};
pub use stream::{read_frame, write_frame, MAX_FRAME_BYTES};

#[derive(Debug, Error)]
pub enum WireError {
    #[error("bad magic {0:02x?}, expected \"ESRT\"")]
    BadMagic([u8; 4]),
    #[error("unsupported protocol version {0}")]
    UnsupportedVersion(u8),
    #[error("truncated frame: need {needed} bytes, have {available}")]
    Truncated { needed: usize, available: usize },
    #[error("payload length mismatch: expected {expected}, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },
    #[error("unknown message type {0}")]
    UnknownMessageType(u8),
    #[error("unknown dtype {0}")]
    UnknownDType(u8),
    #[error("reserved flags must be zero, got {0:#04x}")]
    ReservedFlags(u8),
    #[error("{0} trailing bytes after frame")]
    TrailingBytes(usize),
    #[error("frame of {0} bytes exceeds the limit")]
    FrameTooLarge(usize),
    #[error("invalid message: {0}")]
    Invalid(String),
    #[error("unexpected {actual:?} frame, wanted {expected:?}")]
    UnexpectedType { expected: MsgType, actual: MsgType },
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

/// FEATURES frame for a single clip (`n = 1`).
pub fn features_envelope(
    features: &CompressedFeatures,
    prompt: &[u32],
    dtype: DType,
) -> Result<FeatureEnvelope, WireError> {
    let dim = |v: usize, name: &str| {
        u16::try_from(v).map_err(|_| WireError::Invalid(format!("{name} = {v} exceeds u16")))
    };
    let data = features.z().data();
    let payload = match dtype {
        DType::Bf16 => encode_bf16(data),
        DType::F32 => data.iter().flat_map(|v| v.to_le_bytes()).collect(),
    };
    Ok(FeatureEnvelope {
        msg_type: MsgType::Features,
        dtype,
        cache_key: features.cache_key(),
        n: 1,
        k: dim(features.k(), "k")?,
        d: dim(features.d_q(), "d")?,
        prompt_token_ids: prompt.to_vec(),
        payload,
    })
}

/// Frame without payload: `CacheRef` or `NeedFeatures`.
pub fn reference_envelope(msg_type: MsgType, key: CacheKey, prompt: &[u32]) -> FeatureEnvelope {
    FeatureEnvelope {
        msg_type,
        dtype: DType::Bf16,
        cache_key: key,
        n: 0,
        k: 0,
        d: 0,
        prompt_token_ids: prompt.to_vec(),
        payload: Vec::new(),
    }
}

/// `Response` or `Error` frame carrying UTF-8 text.
pub fn text_envelope(msg_type: MsgType, key: CacheKey, prompt: &[u32], text: &str) -> FeatureEnvelope {
    FeatureEnvelope {
        payload: text.as_bytes().to_vec(),
        ..reference_envelope(msg_type, key, prompt)
    }
}

pub fn features_from_envelope(env: &FeatureEnvelope) -> Result<CompressedFeatures, WireError> {
    if env.msg_type != MsgType::Features {
        return Err(WireError::UnexpectedType {
            expected: MsgType::Features,
            actual: env.msg_type,
        });
    }
    if env.n != 1 {
        return Err(WireError::Invalid(format!("batch size {} (edge sends 1)", env.n)));
    }
    env.validate()?;
    let values = match env.dtype {
        DType::Bf16 => decode_bf16(&env.payload),
        DType::F32 => env
            .payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect(),
    };
    let z = Tensor::new(vec![env.k as usize, env.d as usize], values)
        .map_err(|e| WireError::Invalid(e.to_string()))?;
    if !z.is_finite() {
        return Err(WireError::Invalid("non-finite feature values".into()));
    }
    CompressedFeatures::new(z, env.cache_key).map_err(|e| WireError::Invalid(e.to_string()))
}

pub fn text_payload(env: &FeatureEnvelope) -> Result<&str, WireError> {
    std::str::from_utf8(&env.payload).map_err(|_| WireError::Invalid("payload is not UTF-8".into()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn features_survive_bf16_framing() {
        let z = Tensor::from_fn(&[3, 4], |i| bf16_to_f32(f32_to_bf16(i as f32 * 0.37 - 1.0)));
        let f = CompressedFeatures::new(z, CacheKey([3; 32])).unwrap();
        let env = features_envelope(&f, &[9], DType::Bf16).unwrap();
        let bytes = encode_envelope(&env).unwrap();
        let back = features_from_envelope(&decode_envelope(&bytes).unwrap()).unwrap();
        assert_eq!(back, f);
    }

    #[test]
    fn f32_dtype_is_lossless() {
        let z = Tensor::from_fn(&[2, 2], |i| 0.1 + i as f32 / 3.0);
        let f = CompressedFeatures::new(z, CacheKey::ZERO).unwrap();
        let env = features_envelope(&f, &[], DType::F32).unwrap();
        assert_eq!(env.payload.len(), 16);
        assert_eq!(features_from_envelope(&env).unwrap(), f);
    }

    #[test]
    fn wrong_type_rejected() {
        let env = reference_envelope(MsgType::CacheRef, CacheKey::ZERO, &[]);
        assert!(matches!(
            features_from_envelope(&env),
            Err(WireError::UnexpectedType { .. })
        ));
    }
}
