use std::io::Cursor;

use super::{AudioError, MAX_DURATION_S, SAMPLE_RATE_HZ};
use crate::key::{build_cache_key, CacheKey};

/// Mono 16 kHz PCM16 clip of at most 30 seconds.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AudioClip {
    samples: Vec<i16>,
    sample_rate_hz: u32,
}

impl AudioClip {
    pub fn new(samples: Vec<i16>, sample_rate_hz: u32) -> Result<Self, AudioError> {
        if sample_rate_hz != SAMPLE_RATE_HZ {
            return Err(AudioError::UnsupportedFormat(format!(
                "sample rate {sample_rate_hz} Hz (need {SAMPLE_RATE_HZ})"
            )));
        }
        if samples.is_empty() {
            return Err(AudioError::Empty);
        }
        let duration = samples.len() as f64 / sample_rate_hz as f64;
        if duration > MAX_DURATION_S {
            return Err(AudioError::TooLong {
                duration_s: duration,
            });
        }
        Ok(Self {
            samples,
            sample_rate_hz,
        })
    }

    pub fn samples(&self) -> &[i16] {
        &self.samples
    }

    pub fn sample_rate_hz(&self) -> u32 {
        self.sample_rate_hz
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate_hz as f64
    }

    /// Little-endian PCM bytes, the content the cache key is computed over.
    pub fn pcm_bytes(&self) -> Vec<u8> {
        self.samples.iter().flat_map(|s| s.to_le_bytes()).collect()
    }

    pub fn cache_key(&self) -> CacheKey {
        build_cache_key(&self.pcm_bytes()).expect("clip is never empty")
    }
}

pub fn decode_wav(bytes: &[u8]) -> Result<AudioClip, AudioError> {
    let reader = hound::WavReader::new(Cursor::new(bytes))
        .map_err(|e| AudioError::Malformed(e.to_string()))?;
    let spec = reader.spec();
    if spec.channels != 1 {
        return Err(AudioError::UnsupportedFormat(format!(
            "{} channels (need mono)",
            spec.channels
        )));
    }
    if spec.sample_format != hound::SampleFormat::Int || spec.bits_per_sample != 16 {
        return Err(AudioError::UnsupportedFormat(format!(
            "{:?} with {} bits per sample (need 16-bit PCM)",
            spec.sample_format, spec.bits_per_sample
        )));
    }
    if spec.sample_rate != SAMPLE_RATE_HZ {
        return Err(AudioError::UnsupportedFormat(format!(
            "sample rate {} Hz (need {SAMPLE_RATE_HZ})",
            spec.sample_rate
        )));
    }
    let samples = reader
        .into_samples::<i16>()
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| AudioError::Malformed(e.to_string()))?;
    AudioClip::new(samples, spec.sample_rate)
}

/// Serializes PCM16 mono samples as a canonical 44-byte-header WAV file.
pub fn encode_wav(samples: &[i16], sample_rate_hz: u32, channels: u16) -> Vec<u8> {
    let spec = hound::WavSpec {
        channels,
        sample_rate: sample_rate_hz,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut cursor = Cursor::new(Vec::new());
    {
        let mut w = hound::WavWriter::new(&mut cursor, spec).expect("in-memory writer");
        for &s in samples {
            w.write_sample(s).expect("in-memory write");
        }
        w.finalize().expect("in-memory finalize");
    }
    cursor.into_inner()
}

impl AudioClip {
    pub fn to_wav(&self) -> Vec<u8> {
        encode_wav(&self.samples, self.sample_rate_hz, 1)
    }
}
