use std::fmt;

use sha2::{Digest, Sha256};
use thiserror::Error;

/// 32-byte SHA-256 digest identifying a clip by its PCM content.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct CacheKey(pub [u8; 32]);

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum KeyError {
    #[error("cannot derive a cache key from empty audio")]
    EmptyInput,
    #[error("invalid hex cache key: {0}")]
    BadHex(String),
}

/// Hashes raw (pre-padding) audio bytes into a content key.
pub fn build_cache_key(audio_bytes: &[u8]) -> Result<CacheKey, KeyError> {
    if audio_bytes.is_empty() {
        return Err(KeyError::EmptyInput);
    }
    Ok(CacheKey(Sha256::digest(audio_bytes).into()))
}

impl CacheKey {
    pub const ZERO: CacheKey = CacheKey([0; 32]);

    pub fn as_bytes(&self) -> &[u8; 32] {
        &self.0
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }

    pub fn from_hex(s: &str) -> Result<Self, KeyError> {
        let bytes = hex::decode(s).map_err(|e| KeyError::BadHex(e.to_string()))?;
        let arr: [u8; 32] = bytes
            .try_into()
            .map_err(|_| KeyError::BadHex(format!("expected 64 hex digits, got {}", s.len())))?;
        Ok(Self(arr))
    }
}

impl fmt::Debug for CacheKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "CacheKey({})", &self.to_hex()[..16])
    }
}

impl fmt::Display for CacheKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn published_sha256_vector() {
        let key = build_cache_key(b"abc").unwrap();
        assert_eq!(
            key.to_hex(),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }

    #[test]
    fn equal_bytes_equal_keys_and_bit_flip_changes_key() {
        let a = vec![0x12u8; 1000];
        let mut b = a.clone();
        assert_eq!(build_cache_key(&a).unwrap(), build_cache_key(&b).unwrap());
        b[500] ^= 0x01;
        assert_ne!(build_cache_key(&a).unwrap(), build_cache_key(&b).unwrap());
    }

    #[test]
    fn empty_input_rejected() {
        assert_eq!(build_cache_key(&[]), Err(KeyError::EmptyInput));
    }

    #[test]
    fn hex_round_trip() {
        let key = build_cache_key(b"hello").unwrap();
        assert_eq!(CacheKey::from_hex(&key.to_hex()).unwrap(), key);
        assert!(CacheKey::from_hex("abcd").is_err());
    }
}
