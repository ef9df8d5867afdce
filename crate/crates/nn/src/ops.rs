//! Pure numeric primitives: softmax, layer normalization, GELU and attention.

use crate::error::{NnError, Result};
use crate::tensor::{gemm_nn, gemm_nt, Tensor};

/// Softmax along `axis`, stabilized by subtracting the slice maximum.
pub fn softmax(x: &Tensor, axis: usize) -> Result<Tensor> {
    if axis >= x.rank() {
        return Err(NnError::InvalidAxis {
            op: "softmax",
            axis,
            rank: x.rank(),
        });
    }
    let shape = x.shape();
    let len = shape[axis];
    let inner: usize = shape[axis + 1..].iter().product();
    let outer: usize = shape[..axis].iter().product();
    let src = x.data();
    let mut out = vec![0.0f32; src.len()];
    for o in 0..outer {
        for i in 0..inner {
            let base = o * len * inner + i;
            let idx = |j: usize| base + j * inner;
            let max = (0..len).map(|j| src[idx(j)]).fold(f32::NEG_INFINITY, f32::max);
            let mut sum = 0.0f32;
            for j in 0..len {
                let e = (src[idx(j)] - max).exp();
                out[idx(j)] = e;
                sum += e;
            }
            for j in 0..len {
                out[idx(j)] /= sum;
            }
        }
    }
    Tensor::new(shape.to_vec(), out)
}

/// In-place softmax of a single slice. Entries equal to `-inf` get zero mass.
pub fn softmax_slice(row: &mut [f32]) {
    let max = row.iter().copied().fold(f32::NEG_INFINITY, f32::max);
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}

/// Log-softmax of a single slice, accumulated in `f64` for the normalizer.
pub fn log_softmax_slice(row: &[f32]) -> Vec<f32> {
    let max = row.iter().copied().fold(f32::NEG_INFINITY, f32::max);
    let lse = row
        .iter()
        .map(|&v| ((v - max) as f64).exp())
        .sum::<f64>()
        .ln() as f32
        + max;
    row.iter().map(|&v| v - lse).collect()
}

/// Normalizes each row over the last dimension, then applies `gamma * x + beta`.
pub fn layer_norm(x: &Tensor, gamma: &Tensor, beta: &Tensor, eps: f32) -> Result<Tensor> {
    let d = x.cols();
    if gamma.numel() != d || beta.numel() != d {
        return Err(NnError::ShapeMismatch {
            op: "layer_norm",
            left: x.shape().to_vec(),
            right: gamma.shape().to_vec(),
        });
    }
    let mut out = x.clone();
    for row in out.data_mut().chunks_mut(d) {
        let (mean, inv_std) = row_stats(row, eps);
        for ((v, g), b) in row.iter_mut().zip(gamma.data()).zip(beta.data()) {
            *v = (*v - mean) * inv_std * g + b;
        }
    }
    Ok(out)
}

/// Mean and `1/sqrt(var + eps)` of a row, two-pass in `f64`.
pub fn row_stats(row: &[f32], eps: f32) -> (f32, f32) {
    let n = row.len() as f64;
    let mean = row.iter().map(|&v| v as f64).sum::<f64>() / n;
    let var = row.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / n;
    (mean as f32, (1.0 / (var + eps as f64).sqrt()) as f32)
}

const GELU_C: f32 = 0.797_884_6; // sqrt(2/pi)

/// Tanh approximation of GELU.
pub fn gelu(x: f32) -> f32 {
    0.5 * x * (1.0 + (GELU_C * (x + 0.044715 * x * x * x)).tanh())
}

pub fn gelu_grad(x: f32) -> f32 {
    let inner = GELU_C * (x + 0.044715 * x * x * x);
    let t = inner.tanh();
    let d_inner = GELU_C * (1.0 + 3.0 * 0.044715 * x * x);
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * d_inner
}

/// Sinusoidal position table `[n × d]`: even columns `sin`, odd columns `cos`,
/// wavelengths geometric from `2π` to `10000·2π`.
pub fn sinusoidal_positions(n: usize, d: usize) -> Tensor {
    Tensor::from_fn(&[n, d], |idx| {
        let (pos, col) = (idx / d, idx % d);
        let freq = 10000f64.powf(-((col / 2 * 2) as f64) / d as f64);
        let angle = pos as f64 * freq;
        (if col % 2 == 0 { angle.sin() } else { angle.cos() }) as f32
    })
}

/// Scaled dot-product attention `softmax(q kᵀ / sqrt(d_k)) v`.
///
/// `queries` is `[m × d_k]`, `keys` is `[n × d_k]`, `values` is `[n × d_v]`;
/// the result is `[m × d_v]`.
pub fn cross_attention(queries: &Tensor, keys: &Tensor, values: &Tensor) -> Result<Tensor> {
    attention(queries, keys, values, false).map(|(out, _)| out)
}

/// Attention that also returns the probability matrix `[m × n]`.
///
/// With `causal`, query `i` only sees keys `j <= i + (n - m)`, so a query block
/// aligned with the tail of the key sequence is masked correctly.
pub fn attention(
    queries: &Tensor,
    keys: &Tensor,
    values: &Tensor,
    causal: bool,
) -> Result<(Tensor, Tensor)> {
    for t in [queries, keys, values] {
        if t.rank() != 2 {
            return Err(NnError::Rank {
                op: "attention",
                expected: 2,
                shape: t.shape().to_vec(),
            });
        }
    }
    let (m, dk) = (queries.shape()[0], queries.shape()[1]);
    let n = keys.shape()[0];
    if keys.shape()[1] != dk {
        return Err(NnError::ShapeMismatch {
            op: "attention(query/key dim)",
            left: queries.shape().to_vec(),
            right: keys.shape().to_vec(),
        });
    }
    if values.shape()[0] != n {
        return Err(NnError::ShapeMismatch {
            op: "attention(key/value length)",
            left: keys.shape().to_vec(),
            right: values.shape().to_vec(),
        });
    }
    let dv = values.shape()[1];
    let scale = 1.0 / (dk as f32).sqrt();
    let mut scores = vec![0.0f32; m * n];
    gemm_nt(queries.data(), keys.data(), &mut scores, m, dk, n);
    let offset = n.saturating_sub(m);
    for (i, row) in scores.chunks_mut(n).enumerate() {
        for (j, s) in row.iter_mut().enumerate() {
            if causal && j > i + offset {
                *s = f32::NEG_INFINITY;
            } else {
                *s *= scale;
            }
        }
        softmax_slice(row);
    }
    let mut out = vec![0.0f32; m * dv];
    gemm_nn(&scores, values.data(), &mut out, m, n, dv);
    Ok((
        Tensor::new(vec![m, dv], out)?,
        Tensor::new(vec![m, n], scores)?,
    ))
}
