use serde::Serialize;

use super::BenchError;
use crate::wire::{base64_len, frame_len};

/// What "MB" and "Mbps" mean in a report.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum SizeUnit {
    /// 10⁶ bytes and 10⁶ bit/s.
    Decimal,
    /// 2²⁰ bytes and 2²⁰ bit/s.
    Binary,
}

impl SizeUnit {
    pub fn bytes_per_mb(self) -> f64 {
        match self {
            SizeUnit::Decimal => 1e6,
            SizeUnit::Binary => (1u64 << 20) as f64,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            SizeUnit::Decimal => "MB",
            SizeUnit::Binary => "MiB",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CorpusStats {
    pub n_clips: u64,
    pub total_audio_bytes: u64,
    pub tokens_per_clip: u64,
    pub d_q: u64,
}

impl CorpusStats {
    pub fn new(n_clips: u64, total_audio_bytes: u64, tokens_per_clip: u64, d_q: u64) -> Result<Self, BenchError> {
        if n_clips == 0 || total_audio_bytes == 0 || tokens_per_clip == 0 || d_q == 0 {
            return Err(BenchError::Invalid("corpus counts must be positive".into()));
        }
        Ok(Self {
            n_clips,
            total_audio_bytes,
            tokens_per_clip,
            d_q,
        })
    }

    /// Audio size given in MB of `unit`.
    pub fn from_mb(n_clips: u64, audio_mb: f64, unit: SizeUnit, tokens_per_clip: u64, d_q: u64) -> Result<Self, BenchError> {
        if !(audio_mb > 0.0) {
            return Err(BenchError::Invalid(format!("audio size {audio_mb} MB")));
        }
        Self::new(n_clips, (audio_mb * unit.bytes_per_mb()).round() as u64, tokens_per_clip, d_q)
    }

    /// BF16 feature bytes for one clip.
    pub fn tensor_bytes_per_clip(&self) -> u64 {
        self.tokens_per_clip * self.d_q * 2
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BandwidthReport {
    pub unit: SizeUnit,
    pub link_mbps: f64,
    pub n_languages: u64,
    pub audio_bytes: u64,
    pub audio_b64_bytes: u64,
    /// Raw BF16 payload bytes over all clips.
    pub tensor_bytes: u64,
    /// Same with the envelope header, prompt and length field per clip.
    pub tensor_frame_bytes: u64,
    pub tensor_b64_bytes: u64,
    /// Audio path resends everything per target language.
    pub audio_total_bytes: u64,
    /// Tensor path sends features once for any number of languages.
    pub tensor_total_bytes: u64,
    /// Base64 cache-reference frames for the extra languages, reported apart.
    pub cache_ref_bytes: u64,
    pub audio_time_s: f64,
    pub tensor_time_s: f64,
    pub compression_ratio: f64,
}

impl BandwidthReport {
    pub fn mb(&self, bytes: u64) -> f64 {
        bytes as f64 / self.unit.bytes_per_mb()
    }
}

/// Seconds to move `bytes` over a link of `mbps` in the given unit.
pub fn transfer_time_s(bytes: u64, link_mbps: f64, unit: SizeUnit) -> f64 {
    bytes as f64 * 8.0 / (link_mbps * unit.bytes_per_mb())
}

/// Base64 over the whole corpus, treating it as one contiguous blob per path.
pub fn bandwidth_report(
    stats: &CorpusStats,
    n_languages: u64,
    link_mbps: f64,
    unit: SizeUnit,
) -> Result<BandwidthReport, BenchError> {
    if n_languages == 0 || !(link_mbps > 0.0) {
        return Err(BenchError::Invalid(format!(
            "need at least one language and a positive link rate, got {n_languages} / {link_mbps}"
        )));
    }
    let audio_b64 = base64_len(stats.total_audio_bytes);
    let tensor = stats.n_clips * stats.tensor_bytes_per_clip();
    let tensor_b64 = base64_len(tensor);
    let per_frame = frame_len(2, stats.tensor_bytes_per_clip() as usize) as u64;
    let cache_ref = base64_len(frame_len(2, 0) as u64);
    Ok(BandwidthReport {
        unit,
        link_mbps,
        n_languages,
        audio_bytes: stats.total_audio_bytes,
        audio_b64_bytes: audio_b64,
        tensor_bytes: tensor,
        tensor_frame_bytes: stats.n_clips * per_frame,
        tensor_b64_bytes: tensor_b64,
        audio_total_bytes: audio_b64 * n_languages,
        tensor_total_bytes: tensor_b64,
        cache_ref_bytes: (n_languages - 1) * stats.n_clips * cache_ref,
        audio_time_s: transfer_time_s(audio_b64, link_mbps, unit),
        tensor_time_s: transfer_time_s(tensor_b64, link_mbps, unit),
        compression_ratio: audio_b64 as f64 / tensor_b64 as f64,
    })
}
