//! Log-Mel spectrogram over a fixed 30 s window.
//!
//! Centered STFT (reflect padding of `N_FFT/2`), periodic Hann window, power
//! spectrum, 128 triangular HTK-scale filters spanning 0–8 kHz, `log10` with a
//! `1e-10` floor. 480 000 samples give 3 001 frames; the last one is dropped.

use std::sync::{Arc, OnceLock};

use esrt_nn::Tensor;
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use super::{AudioError, PaddedAudio, SAMPLE_RATE_HZ, WINDOW_SAMPLES};
use crate::key::CacheKey;

pub const N_FFT: usize = 400;
pub const HOP_LENGTH: usize = 160;
pub const N_MELS: usize = 128;
pub const N_FRAMES: usize = WINDOW_SAMPLES / HOP_LENGTH;
pub const LOG_FLOOR: f32 = 1e-10;
pub const MEL_FMAX_HZ: f64 = 8000.0;

/// `[128 × 3000]` log-Mel energies plus the key of the clip they came from.
#[derive(Debug, Clone, PartialEq)]
pub struct MelSpectrogram {
    pub mel: Tensor,
    pub source_key: CacheKey,
}

impl MelSpectrogram {
    /// Value of every cell computed from digital silence.
    pub fn floor_value() -> f32 {
        LOG_FLOOR.log10()
    }
}

pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Sparse triangular filters over the `N_FFT/2 + 1` power bins.
#[derive(Debug, Clone)]
pub struct MelFilterbank {
    /// `(first nonzero bin, weights)` per filter.
    filters: Vec<(usize, Vec<f32>)>,
    centers_hz: Vec<f64>,
}

impl MelFilterbank {
    pub fn new(n_mels: usize, n_fft: usize, sample_rate: f64, fmax: f64) -> Self {
        let n_bins = n_fft / 2 + 1;
        let mel_max = hz_to_mel(fmax);
        let points: Vec<f64> = (0..n_mels + 2)
            .map(|i| mel_to_hz(mel_max * i as f64 / (n_mels + 1) as f64))
            .collect();
        let bin_hz = sample_rate / n_fft as f64;
        let filters = (0..n_mels)
            .map(|m| {
                let (lo, c, hi) = (points[m], points[m + 1], points[m + 2]);
                let weights: Vec<(usize, f32)> = (0..n_bins)
                    .filter_map(|k| {
                        let f = k as f64 * bin_hz;
                        let w = ((f - lo) / (c - lo)).min((hi - f) / (hi - c)).max(0.0);
                        (w > 0.0).then_some((k, w as f32))
                    })
                    .collect();
                match weights.first() {
                    None => (0, Vec::new()),
                    Some(&(start, _)) => {
                        let end = weights.last().unwrap().0;
                        let mut dense = vec![0.0; end - start + 1];
                        for (k, w) in weights {
                            dense[k - start] = w;
                        }
                        (start, dense)
                    }
                }
            })
            .collect();
        Self {
            filters,
            centers_hz: points[1..=n_mels].to_vec(),
        }
    }

    pub fn standard() -> &'static MelFilterbank {
        static FB: OnceLock<MelFilterbank> = OnceLock::new();
        FB.get_or_init(|| MelFilterbank::new(N_MELS, N_FFT, SAMPLE_RATE_HZ as f64, MEL_FMAX_HZ))
    }

    pub fn centers_hz(&self) -> &[f64] {
        &self.centers_hz
    }

    pub fn n_mels(&self) -> usize {
        self.filters.len()
    }

    fn apply(&self, power: &[f32], out: &mut [f32]) {
        for (o, (start, w)) in out.iter_mut().zip(&self.filters) {
            *o = w.iter().zip(&power[*start..]).map(|(a, b)| a * b).sum();
        }
    }
}

fn hann_window() -> &'static [f32] {
    static W: OnceLock<Vec<f32>> = OnceLock::new();
    W.get_or_init(|| {
        (0..N_FFT)
            .map(|n| {
                (0.5 - 0.5 * (2.0 * std::f64::consts::PI * n as f64 / N_FFT as f64).cos()) as f32
            })
            .collect()
    })
}

fn fft_plan() -> Arc<dyn Fft<f32>> {
    static PLAN: OnceLock<Arc<dyn Fft<f32>>> = OnceLock::new();
    PLAN.get_or_init(|| FftPlanner::new().plan_fft_forward(N_FFT))
        .clone()
}

/// Reflect-pads by `N_FFT/2` on each side (mirror without repeating the edge).
fn reflect_pad(x: &[f32]) -> Vec<f32> {
    let p = N_FFT / 2;
    let n = x.len();
    let mut out = Vec::with_capacity(n + 2 * p);
    out.extend((1..=p).rev().map(|i| x[i]));
    out.extend_from_slice(x);
    out.extend((1..=p).map(|i| x[n - 1 - i]));
    out
}

pub fn compute_mel(audio: &PaddedAudio) -> Result<MelSpectrogram, AudioError> {
    if audio.samples.len() != WINDOW_SAMPLES {
        return Err(AudioError::WrongSampleCount {
            expected: WINDOW_SAMPLES,
            actual: audio.samples.len(),
        });
    }
    let padded = reflect_pad(&audio.samples);
    let window = hann_window();
    let fft = fft_plan();
    let fb = MelFilterbank::standard();
    let n_bins = N_FFT / 2 + 1;
    let mut scratch = vec![Complex::new(0.0f32, 0.0); fft.get_inplace_scratch_len()];
    let mut buf = vec![Complex::new(0.0f32, 0.0); N_FFT];
    let mut power = vec![0.0f32; n_bins];
    let mut column = vec![0.0f32; N_MELS];
    let mut mel = vec![0.0f32; N_MELS * N_FRAMES];
    let silent_column = MelSpectrogram::floor_value();
    for t in 0..N_FRAMES {
        let frame = &padded[t * HOP_LENGTH..t * HOP_LENGTH + N_FFT];
        if frame.iter().all(|&v| v == 0.0) {
            for m in 0..N_MELS {
                mel[m * N_FRAMES + t] = silent_column;
            }
            continue;
        }
        for ((b, &s), &w) in buf.iter_mut().zip(frame).zip(window) {
            *b = Complex::new(s * w, 0.0);
        }
        fft.process_with_scratch(&mut buf, &mut scratch);
        for (p, c) in power.iter_mut().zip(&buf) {
            *p = c.norm_sqr();
        }
        fb.apply(&power, &mut column);
        for (m, &e) in column.iter().enumerate() {
            mel[m * N_FRAMES + t] = e.max(LOG_FLOOR).log10();
        }
    }
    Ok(MelSpectrogram {
        mel: Tensor::new(vec![N_MELS, N_FRAMES], mel).expect("fixed shape"),
        source_key: audio.source_key,
    })
}
