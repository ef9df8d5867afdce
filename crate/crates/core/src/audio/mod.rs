//! Audio ingestion: WAV decoding, fixed-window padding and log-Mel features.

mod mel;
mod wav;

use thiserror::Error;

use crate::key::CacheKey;

pub use mel::{
    compute_mel, hz_to_mel, mel_to_hz, MelFilterbank, MelSpectrogram, HOP_LENGTH, LOG_FLOOR,
    MEL_FMAX_HZ, N_FFT, N_FRAMES, N_MELS,
};
pub use wav::{decode_wav, encode_wav, AudioClip};

pub const SAMPLE_RATE_HZ: u32 = 16_000;
pub const MAX_DURATION_S: f64 = 30.0;
pub const WINDOW_SAMPLES: usize = 480_000;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AudioError {
    #[error("malformed WAV: {0}")]
    Malformed(String),
    #[error("unsupported audio format: {0}")]
    UnsupportedFormat(String),
    #[error("clip is {duration_s:.2} s long, limit is 30 s")]
    TooLong { duration_s: f64 },
    #[error("clip has no samples")]
    Empty,
    #[error("expected {expected} samples, got {actual}")]
    WrongSampleCount { expected: usize, actual: usize },
}

/// Exactly 30 s of f32 samples in [-1, 1), zero-padded at the tail.
#[derive(Debug, Clone, PartialEq)]
pub struct PaddedAudio {
    pub samples: Vec<f32>,
    pub source_key: CacheKey,
}

pub fn pad_to_window(clip: &AudioClip) -> PaddedAudio {
    let mut samples = vec![0.0f32; WINDOW_SAMPLES];
    for (dst, &s) in samples.iter_mut().zip(clip.samples()) {
        *dst = s as f32 / 32768.0;
    }
    PaddedAudio {
        samples,
        source_key: clip.cache_key(),
    }
}

/// Decode, pad and featurize in one step.
pub fn mel_from_wav(bytes: &[u8]) -> Result<MelSpectrogram, AudioError> {
    let clip = decode_wav(bytes)?;
    compute_mel(&pad_to_window(&clip))
}
