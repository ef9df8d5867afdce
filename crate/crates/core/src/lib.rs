//! Edge/cloud split speech recognition and translation: audio frontend,
//! edge encoder, wire protocol, feature cache, cloud decoding, curriculum
//! training, and the bandwidth and privacy bench.

pub mod audio;
pub mod bench;
pub mod cache;
pub mod cloud;
pub mod config;
pub mod curriculum;
pub mod edge;
pub mod key;
pub mod weights;
pub mod wire;

pub use key::{build_cache_key, CacheKey, KeyError};
