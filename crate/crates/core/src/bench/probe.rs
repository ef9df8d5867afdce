//! Reconstruction attack probe: how well can a regressor recover the Mel
//! spectrogram from intercepted features?

use esrt_nn::{Adam, FeedForward, LinearLayer, ParamRng, Tensor};
use serde::Serialize;

use super::BenchError;
use crate::audio::{compute_mel, pad_to_window, AudioClip, MelSpectrogram, SAMPLE_RATE_HZ};
use crate::edge::{AcousticEncoder, CompressedFeatures, EdgePipeline};

pub const MIN_PAIRS: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ProbeConfig {
    pub hidden: usize,
    /// Full-batch optimizer steps.
    pub epochs: usize,
    pub lr: f32,
    pub val_fraction: f64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self {
            hidden: 16,
            epochs: 40,
            lr: 3e-3,
            val_fraction: 0.25,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProbeReport {
    pub model: String,
    pub n_train: usize,
    pub n_val: usize,
    pub input_shape: [usize; 2],
    pub output_shape: [usize; 2],
    /// Input elements over output elements.
    pub element_ratio: f64,
    pub epochs: usize,
    /// Mean squared error per Mel element, in log-Mel units.
    pub train_mse: f64,
    pub val_mse: f64,
    /// Predicting the per-element training mean.
    pub baseline_train_mse: f64,
    pub baseline_val_mse: f64,
}

impl ProbeReport {
    /// `key: value` lines.
    pub fn to_records(&self) -> Vec<(String, String)> {
        vec![
            ("model".into(), self.model.clone()),
            ("pairs_train".into(), self.n_train.to_string()),
            ("pairs_val".into(), self.n_val.to_string()),
            ("input_shape".into(), format!("{}x{}", self.input_shape[0], self.input_shape[1])),
            ("output_shape".into(), format!("{}x{}", self.output_shape[0], self.output_shape[1])),
            ("element_ratio".into(), format!("{:.4}", self.element_ratio)),
            ("epochs".into(), self.epochs.to_string()),
            ("train_mse".into(), format!("{:.6}", self.train_mse)),
            ("val_mse".into(), format!("{:.6}", self.val_mse)),
            ("baseline_train_mse".into(), format!("{:.6}", self.baseline_train_mse)),
            ("baseline_val_mse".into(), format!("{:.6}", self.baseline_val_mse)),
        ]
    }
}

struct Standardizer {
    mean: Vec<f32>,
    std: Vec<f32>,
}

impl Standardizer {
    fn fit(rows: &Tensor) -> Self {
        let (n, d) = (rows.rows(), rows.cols());
        let mut mean = vec![0.0f64; d];
        for r in 0..n {
            for (m, &v) in mean.iter_mut().zip(rows.row(r)) {
                *m += v as f64;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n as f64);
        let mut var = vec![0.0f64; d];
        for r in 0..n {
            for ((s, &v), m) in var.iter_mut().zip(rows.row(r)).zip(&mean) {
                *s += (v as f64 - m).powi(2);
            }
        }
        Self {
            mean: mean.iter().map(|&m| m as f32).collect(),
            std: var.iter().map(|&s| ((s / n as f64).sqrt() as f32).max(1e-3)).collect(),
        }
    }

    fn apply(&self, rows: &Tensor) -> Tensor {
        let mut out = rows.clone();
        let d = rows.cols();
        for (i, v) in out.data_mut().iter_mut().enumerate() {
            let j = i % d;
            *v = (*v - self.mean[j]) / self.std[j];
        }
        out
    }

    fn invert(&self, rows: &Tensor) -> Tensor {
        let mut out = rows.clone();
        let d = rows.cols();
        for (i, v) in out.data_mut().iter_mut().enumerate() {
            let j = i % d;
            *v = *v * self.std[j] + self.mean[j];
        }
        out
    }
}

fn stack(rows: &[&Tensor]) -> Result<Tensor, BenchError> {
    let d = rows[0].numel();
    let mut data = Vec::with_capacity(rows.len() * d);
    for r in rows {
        if r.numel() != d {
            return Err(BenchError::Invalid("pairs have inconsistent shapes".into()));
        }
        data.extend_from_slice(r.data());
    }
    Ok(Tensor::new(vec![rows.len(), d], data)?)
}

fn mse(pred: &Tensor, target: &Tensor) -> f64 {
    let n = pred.numel().max(1);
    pred.data()
        .iter()
        .zip(target.data())
        .map(|(a, b)| ((a - b) as f64).powi(2))
        .sum::<f64>()
        / n as f64
}

/// Mean over elements of the population variance across rows.
pub fn mean_element_variance(rows: &Tensor) -> f64 {
    let s = Standardizer::fit(rows);
    let mut mean_rows = Tensor::zeros(rows.shape());
    for r in 0..rows.rows() {
        mean_rows.row_mut(r).copy_from_slice(&s.mean);
    }
    mse(&mean_rows, rows)
}

/// Trains a GELU MLP `Z → Mel` on standardized data with Adam and reports
/// reconstruction error against the predict-the-mean baseline.
pub fn reconstruct_probe(
    pairs: &[(CompressedFeatures, MelSpectrogram)],
    cfg: &ProbeConfig,
    seed: u64,
) -> Result<ProbeReport, BenchError> {
    if pairs.len() < MIN_PAIRS {
        return Err(BenchError::TooFewPairs {
            got: pairs.len(),
            need: MIN_PAIRS,
        });
    }
    if cfg.hidden == 0 || !(0.0..1.0).contains(&cfg.val_fraction) {
        return Err(BenchError::Invalid("probe needs hidden > 0 and 0 <= val_fraction < 1".into()));
    }
    let (k, d_q) = (pairs[0].0.k(), pairs[0].0.d_q());
    let out_shape = [pairs[0].1.mel.rows(), pairs[0].1.mel.cols()];

    let mut rng = ParamRng::for_component(seed, "probe");
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    for i in (1..order.len()).rev() {
        order.swap(i, rng.below(i + 1));
    }
    let n_val = ((pairs.len() as f64 * cfg.val_fraction).round() as usize).min(pairs.len() - 1);
    let (val_idx, train_idx) = order.split_at(n_val);

    let gather_x = |idx: &[usize]| stack(&idx.iter().map(|&i| pairs[i].0.z()).collect::<Vec<_>>());
    let gather_y = |idx: &[usize]| stack(&idx.iter().map(|&i| &pairs[i].1.mel).collect::<Vec<_>>());
    let (x_train, y_train) = (gather_x(train_idx)?, gather_y(train_idx)?);
    let (d_in, d_out) = (x_train.cols(), y_train.cols());

    let xs = Standardizer::fit(&x_train);
    let ys = Standardizer::fit(&y_train);
    let xt = xs.apply(&x_train);
    let yt = ys.apply(&y_train);

    let mut net = FeedForward {
        up: LinearLayer::init(&mut rng, d_in, cfg.hidden, 1.0 / (d_in as f32).sqrt()),
        down: LinearLayer::init(&mut rng, cfg.hidden, d_out, 1.0 / (cfg.hidden as f32).sqrt()),
    };
    let mut adam = Adam::new(cfg.lr);
    let scale = 2.0 / yt.numel() as f32;
    for epoch in 0..cfg.epochs {
        let (pred, cache) = net.forward_cached(&xt)?;
        let mut dy = pred.sub(&yt)?;
        dy.data_mut().iter_mut().for_each(|g| *g *= scale);
        let (_, grads) = net.backward(&dy, &cache)?;
        adam.step(&mut net, &grads);
        if epoch % 10 == 0 {
            log::debug!("probe epoch {epoch}: standardized mse {:.4}", mse(&pred, &yt));
        }
    }

    let predict = |x: &Tensor| -> Result<Tensor, BenchError> { Ok(ys.invert(&net.forward(&xs.apply(x))?)) };
    let train_mse = mse(&predict(&x_train)?, &y_train);
    let mut mean_rows_train = Tensor::zeros(y_train.shape());
    for r in 0..y_train.rows() {
        mean_rows_train.row_mut(r).copy_from_slice(&ys.mean);
    }
    let baseline_train_mse = mse(&mean_rows_train, &y_train);
    let (val_mse, baseline_val_mse) = if val_idx.is_empty() {
        (f64::NAN, f64::NAN)
    } else {
        let (x_val, y_val) = (gather_x(val_idx)?, gather_y(val_idx)?);
        let mut mean_rows = Tensor::zeros(y_val.shape());
        for r in 0..y_val.rows() {
            mean_rows.row_mut(r).copy_from_slice(&ys.mean);
        }
        (mse(&predict(&x_val)?, &y_val), mse(&mean_rows, &y_val))
    };

    Ok(ProbeReport {
        model: format!("mlp {d_in}->{}->{d_out} (gelu, adam, full batch)", cfg.hidden),
        n_train: train_idx.len(),
        n_val,
        input_shape: [k, d_q],
        output_shape: out_shape,
        element_ratio: d_in as f64 / d_out as f64,
        epochs: cfg.epochs,
        train_mse,
        val_mse,
        baseline_train_mse,
        baseline_val_mse,
    })
}

/// Random tone-and-noise clips of 1 to 10 s run through `pipeline`, paired
/// with their Mel spectrograms.
pub fn synthetic_pairs<E: AcousticEncoder>(
    n: usize,
    pipeline: &EdgePipeline<E>,
    seed: u64,
) -> Result<Vec<(CompressedFeatures, MelSpectrogram)>, BenchError> {
    let mut rng = ParamRng::for_component(seed, "probe-clips");
    let rate = SAMPLE_RATE_HZ as f64;
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let len = ((1.0 + 9.0 * rng.next_f64()) * rate) as usize;
        let tones: Vec<(f64, f64)> = (0..3)
            .map(|_| (100.0 + 3900.0 * rng.next_f64(), 2000.0 * rng.next_f64()))
            .collect();
        let noise = 500.0 * rng.next_f64();
        let samples = (0..len)
            .map(|i| {
                let t = i as f64 / rate;
                let v: f64 = tones
                    .iter()
                    .map(|(f, a)| a * (2.0 * std::f64::consts::PI * f * t).sin())
                    .sum::<f64>()
                    + noise * (2.0 * rng.next_f64() - 1.0);
                v.round().clamp(-32768.0, 32767.0) as i16
            })
            .collect();
        let clip = AudioClip::new(samples, SAMPLE_RATE_HZ)?;
        let mel = compute_mel(&pad_to_window(&clip))?;
        out.push((pipeline.encode_clip(&clip)?, mel));
    }
    Ok(out)
}
