use super::FeatureEnvelope;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SizeReport {
    pub payload_bytes: u64,
    pub envelope_bytes: u64,
    pub base64_bytes: u64,
}

/// Raw PCM size `T · f_s · B_d` in bytes.
pub fn audio_size(duration_s: f64, sample_rate_hz: u32, bytes_per_sample: u32) -> u64 {
    (duration_s * sample_rate_hz as f64 * bytes_per_sample as f64).round() as u64
}

/// Padded Base64 length, `4 · ⌈n / 3⌉`.
pub fn base64_len(n: u64) -> u64 {
    4 * n.div_ceil(3)
}

pub fn measure_sizes(msg: &FeatureEnvelope) -> SizeReport {
    let envelope_bytes = msg.encoded_len() as u64;
    SizeReport {
        payload_bytes: msg.payload.len() as u64,
        envelope_bytes,
        base64_bytes: base64_len(envelope_bytes),
    }
}
