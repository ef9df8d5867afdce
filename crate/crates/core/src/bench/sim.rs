use serde::Serialize;

use super::BenchError;
use crate::wire::{audio_size, base64_len, frame_len};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum AudioMode {
    /// Base64 audio per request.
    Audio,
    /// Base64 feature frame per request.
    Tensor,
    /// Feature frame for the first language, cache references after.
    TensorCached,
}

impl std::str::FromStr for AudioMode {
    type Err = BenchError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "audio" => Ok(AudioMode::Audio),
            "tensor" => Ok(AudioMode::Tensor),
            "tensor_cached" | "tensor-cached" => Ok(AudioMode::TensorCached),
            other => Err(BenchError::Invalid(format!("unknown mode {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SessionSpec {
    pub clients: usize,
    pub link_mbps: f64,
    pub mode: AudioMode,
    /// Clip durations each client sends, in order.
    pub clip_durations_s: Vec<f64>,
    pub n_languages: usize,
    pub k_queries: usize,
    pub d_q: usize,
}

impl SessionSpec {
    pub fn new(clients: usize, link_mbps: f64, mode: AudioMode, clip_durations_s: Vec<f64>) -> Self {
        Self {
            clients,
            link_mbps,
            mode,
            clip_durations_s,
            n_languages: 1,
            k_queries: 40,
            d_q: 768,
        }
    }

    /// Wire bytes (Base64) of each request one client makes, in order.
    pub fn requests(&self) -> Vec<u64> {
        let feature = base64_len(frame_len(2, self.k_queries * self.d_q * 2) as u64);
        let reference = base64_len(frame_len(2, 0) as u64);
        let mut out = Vec::new();
        for &d in &self.clip_durations_s {
            for lang in 0..self.n_languages {
                out.push(match self.mode {
                    AudioMode::Audio => base64_len(audio_size(d, 16_000, 2)),
                    AudioMode::Tensor => feature,
                    AudioMode::TensorCached if lang == 0 => feature,
                    AudioMode::TensorCached => reference,
                });
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SessionReport {
    pub bytes_requested: u64,
    pub bytes_delivered: u64,
    pub total_time_s: f64,
    pub client_finish_s: Vec<f64>,
    /// Delivered megabits per second over the whole run.
    pub throughput_mbps: f64,
}

/// Fluid fair-share link: every client with a pending request gets an equal
/// share of capacity; requests of one client go back to back.
pub fn simulate_session(spec: &SessionSpec) -> Result<SessionReport, BenchError> {
    if spec.clients == 0 || !(spec.link_mbps > 0.0) || spec.n_languages == 0 {
        return Err(BenchError::Invalid("clients, link rate and languages must be positive".into()));
    }
    if spec.clip_durations_s.iter().any(|d| !(*d > 0.0)) {
        return Err(BenchError::Invalid("clip durations must be positive".into()));
    }
    let capacity = spec.link_mbps * 1e6 / 8.0;
    let queue = spec.requests();
    let requested: u64 = queue.iter().sum::<u64>() * spec.clients as u64;
    let mut next = vec![0usize; spec.clients];
    let mut remaining: Vec<f64> = (0..spec.clients)
        .map(|_| queue.first().copied().unwrap_or(0) as f64)
        .collect();
    let mut finish = vec![0.0; spec.clients];
    let mut delivered = 0u64;
    let mut now = 0.0;
    loop {
        // Zero-length requests complete instantly.
        for c in 0..spec.clients {
            while next[c] < queue.len() && remaining[c] <= 0.0 {
                delivered += queue[next[c]];
                next[c] += 1;
                finish[c] = now;
                remaining[c] = queue.get(next[c]).copied().unwrap_or(0) as f64;
            }
        }
        let active: Vec<usize> = (0..spec.clients).filter(|&c| next[c] < queue.len()).collect();
        if active.is_empty() {
            break;
        }
        let rate = capacity / active.len() as f64;
        let step = active.iter().map(|&c| remaining[c]).fold(f64::INFINITY, f64::min) / rate;
        now += step;
        for &c in &active {
            remaining[c] -= step * rate;
            // Absorb rounding so the shortest transfer lands exactly on zero.
            if remaining[c] < 1e-6 {
                remaining[c] = 0.0;
            }
        }
    }
    Ok(SessionReport {
        bytes_requested: requested,
        bytes_delivered: delivered,
        total_time_s: now,
        client_finish_s: finish,
        throughput_mbps: if now > 0.0 {
            delivered as f64 * 8.0 / now / 1e6
        } else {
            0.0
        },
    })
}
