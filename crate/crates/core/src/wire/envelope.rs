//! Frame layout (all integers little-endian):
//!
//! ```text
//! 0   magic "ESRT"
//! 4   version u8 = 1
//! 5   msg_type u8
//! 6   dtype u8
//! 7   flags u8 = 0
//! 8   cache_key [u8; 32]
//! 40  n u16, k u16, d u16, prompt_len u16
//! 48  prompt_token_ids u32[prompt_len]
//! ..  payload_len u32
//! ..  payload
//! ```

use super::WireError;
use crate::key::CacheKey;

pub const MAGIC: [u8; 4] = *b"ESRT";
pub const VERSION: u8 = 1;
pub const HEADER_BYTES: usize = 48;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum MsgType {
    Features,
    CacheRef,
    Response,
    /// Cloud asks the edge to resend features for a key it does not hold.
    NeedFeatures,
    /// Cloud-side failure; payload is a UTF-8 diagnostic.
    Error,
}

impl MsgType {
    pub fn code(self) -> u8 {
        match self {
            MsgType::Features => 0,
            MsgType::CacheRef => 1,
            MsgType::Response => 2,
            MsgType::NeedFeatures => 3,
            MsgType::Error => 4,
        }
    }

    pub fn from_code(code: u8) -> Result<Self, WireError> {
        Ok(match code {
            0 => MsgType::Features,
            1 => MsgType::CacheRef,
            2 => MsgType::Response,
            3 => MsgType::NeedFeatures,
            4 => MsgType::Error,
            other => return Err(WireError::UnknownMessageType(other)),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DType {
    Bf16,
    F32,
}

impl DType {
    pub fn code(self) -> u8 {
        match self {
            DType::Bf16 => 0,
            DType::F32 => 1,
        }
    }

    pub fn from_code(code: u8) -> Result<Self, WireError> {
        match code {
            0 => Ok(DType::Bf16),
            1 => Ok(DType::F32),
            other => Err(WireError::UnknownDType(other)),
        }
    }

    pub fn bytes_per_element(self) -> usize {
        match self {
            DType::Bf16 => 2,
            DType::F32 => 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct FeatureEnvelope {
    pub msg_type: MsgType,
    pub dtype: DType,
    pub cache_key: CacheKey,
    pub n: u16,
    pub k: u16,
    pub d: u16,
    pub prompt_token_ids: Vec<u32>,
    pub payload: Vec<u8>,
}

impl FeatureEnvelope {
    pub fn encoded_len(&self) -> usize {
        frame_len(self.prompt_token_ids.len(), self.payload.len())
    }

    /// Checks the per-type payload rules.
    pub fn validate(&self) -> Result<(), WireError> {
        if self.prompt_token_ids.len() > u16::MAX as usize {
            return Err(WireError::Invalid(format!(
                "{} prompt tokens exceed the u16 length field",
                self.prompt_token_ids.len()
            )));
        }
        if u32::try_from(self.payload.len()).is_err() {
            return Err(WireError::Invalid("payload exceeds 4 GiB".into()));
        }
        match self.msg_type {
            MsgType::Features => {
                let want = self.n as usize
                    * self.k as usize
                    * self.d as usize
                    * self.dtype.bytes_per_element();
                if self.payload.len() != want {
                    return Err(WireError::LengthMismatch {
                        expected: want,
                        actual: self.payload.len(),
                    });
                }
            }
            MsgType::CacheRef | MsgType::NeedFeatures => {
                if !self.payload.is_empty() {
                    return Err(WireError::LengthMismatch {
                        expected: 0,
                        actual: self.payload.len(),
                    });
                }
            }
            MsgType::Response | MsgType::Error => {
                if std::str::from_utf8(&self.payload).is_err() {
                    return Err(WireError::Invalid("text payload is not UTF-8".into()));
                }
            }
        }
        Ok(())
    }
}

/// Total frame length for a given prompt and payload size.
pub fn frame_len(prompt_len: usize, payload_len: usize) -> usize {
    HEADER_BYTES + 4 * prompt_len + 4 + payload_len
}

pub fn encode_envelope(msg: &FeatureEnvelope) -> Result<Vec<u8>, WireError> {
    msg.validate()?;
    let mut out = Vec::with_capacity(msg.encoded_len());
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&[VERSION, msg.msg_type.code(), msg.dtype.code(), 0]);
    out.extend_from_slice(msg.cache_key.as_bytes());
    for v in [msg.n, msg.k, msg.d, msg.prompt_token_ids.len() as u16] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for id in &msg.prompt_token_ids {
        out.extend_from_slice(&id.to_le_bytes());
    }
    out.extend_from_slice(&(msg.payload.len() as u32).to_le_bytes());
    out.extend_from_slice(&msg.payload);
    Ok(out)
}

fn u16_at(b: &[u8], at: usize) -> u16 {
    u16::from_le_bytes([b[at], b[at + 1]])
}

fn u32_at(b: &[u8], at: usize) -> u32 {
    u32::from_le_bytes([b[at], b[at + 1], b[at + 2], b[at + 3]])
}

/// Reads the header and returns the full frame length it announces.
///
/// Needs at least `HEADER_BYTES + 4·prompt_len + 4` bytes to answer; returns
/// `Ok(None)` when more are required.
pub fn peek_frame_len(bytes: &[u8]) -> Result<Option<usize>, WireError> {
    if bytes.len() < 4 {
        return Ok(None);
    }
    if bytes[..4] != MAGIC {
        return Err(WireError::BadMagic([bytes[0], bytes[1], bytes[2], bytes[3]]));
    }
    if bytes.len() < HEADER_BYTES {
        return Ok(None);
    }
    if bytes[4] != VERSION {
        return Err(WireError::UnsupportedVersion(bytes[4]));
    }
    let prompt_len = u16_at(bytes, 46) as usize;
    let len_at = HEADER_BYTES + 4 * prompt_len;
    if bytes.len() < len_at + 4 {
        return Ok(None);
    }
    Ok(Some(frame_len(prompt_len, u32_at(bytes, len_at) as usize)))
}

pub fn decode_envelope(bytes: &[u8]) -> Result<FeatureEnvelope, WireError> {
    let total = match peek_frame_len(bytes)? {
        Some(t) => t,
        None => {
            return Err(WireError::Truncated {
                needed: bytes.len().max(HEADER_BYTES) + 1,
                available: bytes.len(),
            })
        }
    };
    if bytes.len() < total {
        return Err(WireError::Truncated {
            needed: total,
            available: bytes.len(),
        });
    }
    if bytes.len() > total {
        return Err(WireError::TrailingBytes(bytes.len() - total));
    }
    let msg_type = MsgType::from_code(bytes[5])?;
    let dtype = DType::from_code(bytes[6])?;
    if bytes[7] != 0 {
        return Err(WireError::ReservedFlags(bytes[7]));
    }
    let mut key = [0u8; 32];
    key.copy_from_slice(&bytes[8..40]);
    let prompt_len = u16_at(bytes, 46) as usize;
    let prompt_token_ids = (0..prompt_len)
        .map(|i| u32_at(bytes, HEADER_BYTES + 4 * i))
        .collect();
    let payload_at = HEADER_BYTES + 4 * prompt_len + 4;
    let msg = FeatureEnvelope {
        msg_type,
        dtype,
        cache_key: CacheKey(key),
        n: u16_at(bytes, 40),
        k: u16_at(bytes, 42),
        d: u16_at(bytes, 44),
        prompt_token_ids,
        payload: bytes[payload_at..].to_vec(),
    };
    msg.validate()?;
    Ok(msg)
}
