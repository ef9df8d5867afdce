//! Trainable building blocks with hand-written backward passes.
//!
//! Gradients are returned as values of the same type as the layer, so an
//! optimizer can walk parameters and gradients in lockstep via [`Params`].

use crate::error::{NnError, Result};
use crate::init::ParamRng;
use crate::ops::{attention, gelu, gelu_grad, row_stats};
use crate::tensor::{matmul, matmul_nt, matmul_tn, Tensor};

/// Ordered access to every learnable tensor of a module.
pub trait Params: Clone {
    fn params(&self) -> Vec<&Tensor>;
    fn params_mut(&mut self) -> Vec<&mut Tensor>;

    /// A gradient buffer with this module's layout, filled with zeros.
    fn zeros_like(&self) -> Self {
        let mut out = self.clone();
        for p in out.params_mut() {
            p.fill(0.0);
        }
        out
    }

    fn param_count(&self) -> usize {
        self.params().iter().map(|t| t.numel()).sum()
    }

    /// `self -= lr * grads`.
    fn sgd_step(&mut self, grads: &Self, lr: f32) {
        for (p, g) in self.params_mut().into_iter().zip(grads.params()) {
            for (pv, gv) in p.data_mut().iter_mut().zip(g.data()) {
                *pv -= lr * gv;
            }
        }
    }

    /// `self += other`, element-wise over all parameters.
    fn accumulate(&mut self, other: &Self) {
        for (p, g) in self.params_mut().into_iter().zip(other.params()) {
            for (pv, gv) in p.data_mut().iter_mut().zip(g.data()) {
                *pv += gv;
            }
        }
    }

    fn scale_all(&mut self, s: f32) {
        for p in self.params_mut() {
            p.data_mut().iter_mut().for_each(|v| *v *= s);
        }
    }
}

/// Dense affine map `y = x · weight + bias`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearLayer {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl LinearLayer {
    pub fn new(weight: Tensor, bias: Tensor) -> Result<Self> {
        if weight.rank() != 2 || bias.rank() != 1 || bias.numel() != weight.shape()[1] {
            return Err(NnError::ShapeMismatch {
                op: "LinearLayer::new",
                left: weight.shape().to_vec(),
                right: bias.shape().to_vec(),
            });
        }
        Ok(Self { weight, bias })
    }

    pub fn init(rng: &mut ParamRng, d_in: usize, d_out: usize, std: f32) -> Self {
        Self {
            weight: rng.normal(&[d_in, d_out], std),
            bias: Tensor::zeros(&[d_out]),
        }
    }

    pub fn zeros(d_in: usize, d_out: usize) -> Self {
        Self {
            weight: Tensor::zeros(&[d_in, d_out]),
            bias: Tensor::zeros(&[d_out]),
        }
    }

    pub fn d_in(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn d_out(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let mut y = matmul(x, &self.weight)?;
        y.add_row_bias(&self.bias)?;
        Ok(y)
    }

    /// Returns `(dx, grads)` for upstream gradient `dy` at input `x`.
    pub fn backward(&self, x: &Tensor, dy: &Tensor) -> Result<(Tensor, LinearLayer)> {
        let x2 = as_matrix(x);
        let dy2 = as_matrix(dy);
        let dx = matmul_nt(&dy2, &self.weight)?.reshape(x.shape())?;
        let dw = matmul_tn(&x2, &dy2)?;
        let db = dy2.sum_rows();
        Ok((
            dx,
            LinearLayer {
                weight: dw,
                bias: db,
            },
        ))
    }
}

impl Params for LinearLayer {
    fn params(&self) -> Vec<&Tensor> {
        vec![&self.weight, &self.bias]
    }
    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        vec![&mut self.weight, &mut self.bias]
    }
}

fn as_matrix(t: &Tensor) -> Tensor {
    let (r, c) = (t.rows(), t.cols());
    t.clone().reshape(&[r, c]).expect("same element count")
}

/// Low-rank additive adapter: `delta = (alpha / r) · a · b`.
#[derive(Debug, Clone, PartialEq)]
pub struct LoraAdapter {
    /// `[d_in × r]`
    pub a: Tensor,
    /// `[r × d_out]`, zero at initialization.
    pub b: Tensor,
    pub alpha: f32,
}

impl LoraAdapter {
    pub fn init(rng: &mut ParamRng, d_in: usize, d_out: usize, r: usize, alpha: f32) -> Self {
        Self {
            a: rng.normal(&[d_in, r], 1.0 / (d_in as f32).sqrt()),
            b: Tensor::zeros(&[r, d_out]),
            alpha,
        }
    }

    pub fn rank(&self) -> usize {
        self.a.shape()[1]
    }

    pub fn scaling(&self) -> f32 {
        self.alpha / self.rank() as f32
    }

    /// Dense `[d_in × d_out]` update this adapter adds to the base weight.
    pub fn delta(&self) -> Result<Tensor> {
        Ok(matmul(&self.a, &self.b)?.scale(self.scaling()))
    }
}

impl Params for LoraAdapter {
    fn params(&self) -> Vec<&Tensor> {
        vec![&self.a, &self.b]
    }
    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        vec![&mut self.a, &mut self.b]
    }
}

/// A frozen-or-trainable base projection with an optional LoRA adapter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdaptedLinear {
    pub base: LinearLayer,
    pub lora: Option<LoraAdapter>,
}

impl From<LinearLayer> for AdaptedLinear {
    fn from(base: LinearLayer) -> Self {
        Self { base, lora: None }
    }
}

impl AdaptedLinear {
    pub fn with_adapter(base: LinearLayer, adapter: LoraAdapter) -> Result<Self> {
        if adapter.a.shape()[0] != base.d_in()
            || adapter.b.shape()[1] != base.d_out()
            || adapter.a.shape()[1] != adapter.b.shape()[0]
        {
            return Err(NnError::ShapeMismatch {
                op: "apply_lora",
                left: base.weight.shape().to_vec(),
                right: vec![adapter.a.shape()[0], adapter.rank(), adapter.b.shape()[1]],
            });
        }
        Ok(Self {
            base,
            lora: Some(adapter),
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let mut y = self.base.forward(x)?;
        if let Some(l) = &self.lora {
            let xa = matmul(x, &l.a)?;
            let delta = matmul(&xa, &l.b)?;
            y.axpy(l.scaling(), &delta)?;
        }
        Ok(y)
    }

    pub fn backward(&self, x: &Tensor, dy: &Tensor) -> Result<(Tensor, AdaptedLinear)> {
        let (mut dx, base_g) = self.base.backward(x, dy)?;
        let lora_g = match &self.lora {
            None => None,
            Some(l) => {
                let s = l.scaling();
                let x2 = as_matrix(x);
                let dy2 = as_matrix(dy);
                let xa = matmul(&x2, &l.a)?;
                let dy_bt = matmul_nt(&dy2, &l.b)?;
                let da = matmul_tn(&x2, &dy_bt)?.scale(s);
                let db = matmul_tn(&xa, &dy2)?.scale(s);
                let dx_l = matmul_nt(&dy_bt, &l.a)?.scale(s).reshape(x.shape())?;
                dx.add_assign(&dx_l)?;
                Some(LoraAdapter {
                    a: da,
                    b: db,
                    alpha: l.alpha,
                })
            }
        };
        Ok((
            dx,
            AdaptedLinear {
                base: base_g,
                lora: lora_g,
            },
        ))
    }

    /// Folds the adapter into a plain dense layer.
    pub fn merged(&self) -> Result<LinearLayer> {
        match &self.lora {
            None => Ok(self.base.clone()),
            Some(l) => Ok(LinearLayer {
                weight: self.base.weight.add(&l.delta()?)?,
                bias: self.base.bias.clone(),
            }),
        }
    }
}

impl Params for AdaptedLinear {
    fn params(&self) -> Vec<&Tensor> {
        let mut v = self.base.params();
        if let Some(l) = &self.lora {
            v.extend(l.params());
        }
        v
    }
    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut v = self.base.params_mut();
        if let Some(l) = &mut self.lora {
            v.extend(l.params_mut());
        }
        v
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerNormLayer {
    pub gamma: Tensor,
    pub beta: Tensor,
    pub eps: f32,
}

#[derive(Debug, Clone)]
pub struct LayerNormCache {
    xhat: Tensor,
    inv_std: Vec<f32>,
}

impl LayerNormLayer {
    pub fn new(d: usize) -> Self {
        Self {
            gamma: Tensor::full(&[d], 1.0),
            beta: Tensor::zeros(&[d]),
            eps: 1e-5,
        }
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        crate::ops::layer_norm(x, &self.gamma, &self.beta, self.eps)
    }

    pub fn forward_cached(&self, x: &Tensor) -> Result<(Tensor, LayerNormCache)> {
        let d = x.cols();
        if self.gamma.numel() != d {
            return Err(NnError::ShapeMismatch {
                op: "layer_norm",
                left: x.shape().to_vec(),
                right: self.gamma.shape().to_vec(),
            });
        }
        let mut xhat = x.clone();
        let mut inv_std = Vec::with_capacity(x.rows());
        for row in xhat.data_mut().chunks_mut(d) {
            let (mean, is) = row_stats(row, self.eps);
            inv_std.push(is);
            row.iter_mut().for_each(|v| *v = (*v - mean) * is);
        }
        let mut y = xhat.clone();
        for row in y.data_mut().chunks_mut(d) {
            for ((v, g), b) in row.iter_mut().zip(self.gamma.data()).zip(self.beta.data()) {
                *v = *v * g + b;
            }
        }
        Ok((y, LayerNormCache { xhat, inv_std }))
    }

    pub fn backward(&self, dy: &Tensor, cache: &LayerNormCache) -> (Tensor, LayerNormLayer) {
        let d = dy.cols();
        let n = d as f32;
        let mut dx = dy.clone();
        let mut dgamma = vec![0.0f32; d];
        let mut dbeta = vec![0.0f32; d];
        for (r, (dx_row, xh_row)) in dx
            .data_mut()
            .chunks_mut(d)
            .zip(cache.xhat.data().chunks(d))
            .enumerate()
        {
            let mut sum_dxh = 0.0f32;
            let mut sum_dxh_xh = 0.0f32;
            for j in 0..d {
                dgamma[j] += dx_row[j] * xh_row[j];
                dbeta[j] += dx_row[j];
                let dxh = dx_row[j] * self.gamma.data()[j];
                sum_dxh += dxh;
                sum_dxh_xh += dxh * xh_row[j];
            }
            let is = cache.inv_std[r];
            for j in 0..d {
                let dxh = dx_row[j] * self.gamma.data()[j];
                dx_row[j] = is / n * (n * dxh - sum_dxh - xh_row[j] * sum_dxh_xh);
            }
        }
        (
            dx,
            LayerNormLayer {
                gamma: Tensor::new(vec![d], dgamma).expect("len d"),
                beta: Tensor::new(vec![d], dbeta).expect("len d"),
                eps: self.eps,
            },
        )
    }
}

impl Params for LayerNormLayer {
    fn params(&self) -> Vec<&Tensor> {
        vec![&self.gamma, &self.beta]
    }
    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        vec![&mut self.gamma, &mut self.beta]
    }
}

/// Multi-head attention; queries come from one sequence, keys/values from another
/// (which may be the same sequence).
#[derive(Debug, Clone, PartialEq)]
pub struct MultiHeadAttention {
    pub wq: AdaptedLinear,
    pub wk: AdaptedLinear,
    pub wv: AdaptedLinear,
    pub wo: AdaptedLinear,
    pub heads: usize,
    pub causal: bool,
}

#[derive(Debug, Clone)]
pub struct AttentionCache {
    xq: Tensor,
    xkv: Tensor,
    q: Tensor,
    k: Tensor,
    v: Tensor,
    probs: Vec<Tensor>,
    merged: Tensor,
}

impl MultiHeadAttention {
    pub fn init(
        rng: &mut ParamRng,
        d_model: usize,
        d_context: usize,
        heads: usize,
        causal: bool,
        std: f32,
    ) -> Result<Self> {
        if heads == 0 || d_model % heads != 0 {
            return Err(NnError::Config(format!(
                "model dim {d_model} is not divisible by {heads} heads"
            )));
        }
        Ok(Self {
            wq: LinearLayer::init(rng, d_model, d_model, std).into(),
            wk: LinearLayer::init(rng, d_context, d_model, std).into(),
            wv: LinearLayer::init(rng, d_context, d_model, std).into(),
            wo: LinearLayer::init(rng, d_model, d_model, std).into(),
            heads,
            causal,
        })
    }

    pub fn forward(&self, xq: &Tensor, xkv: &Tensor) -> Result<Tensor> {
        self.forward_cached(xq, xkv).map(|(y, _)| y)
    }

    pub fn forward_cached(&self, xq: &Tensor, xkv: &Tensor) -> Result<(Tensor, AttentionCache)> {
        let q = self.wq.forward(xq)?;
        let k = self.wk.forward(xkv)?;
        let v = self.wv.forward(xkv)?;
        let d = q.cols();
        let dh = d / self.heads;
        let mut merged = Tensor::zeros(&[q.rows(), d]);
        let mut probs = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let (o, p) = attention(
                &q.column_block(h * dh, dh),
                &k.column_block(h * dh, dh),
                &v.column_block(h * dh, dh),
                self.causal,
            )?;
            merged.set_column_block(h * dh, &o);
            probs.push(p);
        }
        let y = self.wo.forward(&merged)?;
        Ok((
            y,
            AttentionCache {
                xq: xq.clone(),
                xkv: xkv.clone(),
                q,
                k,
                v,
                probs,
                merged,
            },
        ))
    }

    /// Returns `(d_xq, d_xkv, grads)`.
    pub fn backward(
        &self,
        dy: &Tensor,
        cache: &AttentionCache,
    ) -> Result<(Tensor, Tensor, MultiHeadAttention)> {
        let (d_merged, g_wo) = self.wo.backward(&cache.merged, dy)?;
        let d = cache.q.cols();
        let dh = d / self.heads;
        let scale = 1.0 / (dh as f32).sqrt();
        let mut dq = Tensor::zeros(cache.q.shape());
        let mut dk = Tensor::zeros(cache.k.shape());
        let mut dv = Tensor::zeros(cache.v.shape());
        for h in 0..self.heads {
            let p = &cache.probs[h];
            let d_o = d_merged.column_block(h * dh, dh);
            let qh = cache.q.column_block(h * dh, dh);
            let kh = cache.k.column_block(h * dh, dh);
            let vh = cache.v.column_block(h * dh, dh);
            let dvh = matmul_tn(p, &d_o)?;
            let mut ds = matmul_nt(&d_o, &vh)?;
            let n = p.cols();
            for (ds_row, p_row) in ds.data_mut().chunks_mut(n).zip(p.data().chunks(n)) {
                let inner: f32 = ds_row.iter().zip(p_row).map(|(a, b)| a * b).sum();
                for (g, &pv) in ds_row.iter_mut().zip(p_row) {
                    *g = pv * (*g - inner) * scale;
                }
            }
            dq.set_column_block(h * dh, &matmul(&ds, &kh)?);
            dk.set_column_block(h * dh, &matmul_tn(&ds, &qh)?);
            dv.set_column_block(h * dh, &dvh);
        }
        let (dxq, g_wq) = self.wq.backward(&cache.xq, &dq)?;
        let (mut dxkv, g_wk) = self.wk.backward(&cache.xkv, &dk)?;
        let (dxkv_v, g_wv) = self.wv.backward(&cache.xkv, &dv)?;
        dxkv.add_assign(&dxkv_v)?;
        Ok((
            dxq,
            dxkv,
            MultiHeadAttention {
                wq: g_wq,
                wk: g_wk,
                wv: g_wv,
                wo: g_wo,
                heads: self.heads,
                causal: self.causal,
            },
        ))
    }
}

impl Params for MultiHeadAttention {
    fn params(&self) -> Vec<&Tensor> {
        let mut v = self.wq.params();
        v.extend(self.wk.params());
        v.extend(self.wv.params());
        v.extend(self.wo.params());
        v
    }
    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut v = self.wq.params_mut();
        v.extend(self.wk.params_mut());
        v.extend(self.wv.params_mut());
        v.extend(self.wo.params_mut());
        v
    }
}

/// Position-wise `Linear → GELU → Linear`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeedForward {
    pub up: LinearLayer,
    pub down: LinearLayer,
}

#[derive(Debug, Clone)]
pub struct FeedForwardCache {
    x: Tensor,
    pre: Tensor,
    act: Tensor,
}

impl FeedForward {
    pub fn init(rng: &mut ParamRng, d_in: usize, d_hidden: usize, d_out: usize, std: f32) -> Self {
        Self {
            up: LinearLayer::init(rng, d_in, d_hidden, std),
            down: LinearLayer::init(rng, d_hidden, d_out, std),
        }
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let pre = self.up.forward(x)?;
        self.down.forward(&pre.map(gelu))
    }

    pub fn forward_cached(&self, x: &Tensor) -> Result<(Tensor, FeedForwardCache)> {
        let pre = self.up.forward(x)?;
        let act = pre.map(gelu);
        let y = self.down.forward(&act)?;
        Ok((
            y,
            FeedForwardCache {
                x: x.clone(),
                pre,
                act,
            },
        ))
    }

    pub fn backward(&self, dy: &Tensor, cache: &FeedForwardCache) -> Result<(Tensor, FeedForward)> {
        let (d_act, g_down) = self.down.backward(&cache.act, dy)?;
        let mut d_pre = d_act;
        for (g, &p) in d_pre.data_mut().iter_mut().zip(cache.pre.data()) {
            *g *= gelu_grad(p);
        }
        let (dx, g_up) = self.up.backward(&cache.x, &d_pre)?;
        Ok((
            dx,
            FeedForward {
                up: g_up,
                down: g_down,
            },
        ))
    }
}

impl Params for FeedForward {
    fn params(&self) -> Vec<&Tensor> {
        let mut v = self.up.params();
        v.extend(self.down.params());
        v
    }
    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut v = self.up.params_mut();
        v.extend(self.down.params_mut());
        v
    }
}

/// Pre-norm residual block: `x + Attn(LN(x), ctx)` then `x + FFN(LN(x))`.
///
/// Without a context the attention is self-attention over `LN(x)`; with a
/// context it is cross-attention whose keys and values come from `ctx`.
#[derive(Debug, Clone, PartialEq)]
pub struct TransformerBlock {
    pub ln_attn: LayerNormLayer,
    pub attn: MultiHeadAttention,
    pub ln_ffn: LayerNormLayer,
    pub ffn: FeedForward,
}

#[derive(Debug, Clone)]
pub struct BlockCache {
    ln_attn: LayerNormCache,
    attn: AttentionCache,
    ln_ffn: LayerNormCache,
    ffn: FeedForwardCache,
    self_attention: bool,
}

impl TransformerBlock {
    pub fn init(
        rng: &mut ParamRng,
        d_model: usize,
        d_context: Option<usize>,
        heads: usize,
        causal: bool,
        std: f32,
    ) -> Result<Self> {
        let attn = MultiHeadAttention::init(
            rng,
            d_model,
            d_context.unwrap_or(d_model),
            heads,
            causal,
            std,
        )?;
        Ok(Self {
            ln_attn: LayerNormLayer::new(d_model),
            attn,
            ln_ffn: LayerNormLayer::new(d_model),
            ffn: FeedForward::init(rng, d_model, 4 * d_model, d_model, std),
        })
    }

    pub fn forward(&self, x: &Tensor, context: Option<&Tensor>) -> Result<Tensor> {
        let n = self.ln_attn.forward(x)?;
        let a = match context {
            None => self.attn.forward(&n, &n)?,
            Some(ctx) => self.attn.forward(&n, ctx)?,
        };
        let x = x.add(&a)?;
        let f = self.ffn.forward(&self.ln_ffn.forward(&x)?)?;
        x.add(&f)
    }

    pub fn forward_cached(
        &self,
        x: &Tensor,
        context: Option<&Tensor>,
    ) -> Result<(Tensor, BlockCache)> {
        let (n, ln_attn) = self.ln_attn.forward_cached(x)?;
        let (a, attn) = match context {
            None => self.attn.forward_cached(&n, &n)?,
            Some(ctx) => self.attn.forward_cached(&n, ctx)?,
        };
        let x = x.add(&a)?;
        let (n2, ln_ffn) = self.ln_ffn.forward_cached(&x)?;
        let (f, ffn) = self.ffn.forward_cached(&n2)?;
        Ok((
            x.add(&f)?,
            BlockCache {
                ln_attn,
                attn,
                ln_ffn,
                ffn,
                self_attention: context.is_none(),
            },
        ))
    }

    /// Returns `(dx, d_context, grads)`; `d_context` is `None` for self-attention.
    pub fn backward(
        &self,
        dy: &Tensor,
        cache: &BlockCache,
    ) -> Result<(Tensor, Option<Tensor>, TransformerBlock)> {
        let (d_n2, g_ffn) = self.ffn.backward(dy, &cache.ffn)?;
        let (d_x_ffn, g_ln_ffn) = self.ln_ffn.backward(&d_n2, &cache.ln_ffn);
        let mut dx = dy.add(&d_x_ffn)?;
        let (d_nq, d_kv, g_attn) = self.attn.backward(&dx, &cache.attn)?;
        let (d_n, d_ctx) = if cache.self_attention {
            (d_nq.add(&d_kv)?, None)
        } else {
            (d_nq, Some(d_kv))
        };
        let (d_x_attn, g_ln_attn) = self.ln_attn.backward(&d_n, &cache.ln_attn);
        dx.add_assign(&d_x_attn)?;
        Ok((
            dx,
            d_ctx,
            TransformerBlock {
                ln_attn: g_ln_attn,
                attn: g_attn,
                ln_ffn: g_ln_ffn,
                ffn: g_ffn,
            },
        ))
    }
}

impl Params for TransformerBlock {
    fn params(&self) -> Vec<&Tensor> {
        let mut v = self.ln_attn.params();
        v.extend(self.attn.params());
        v.extend(self.ln_ffn.params());
        v.extend(self.ffn.params());
        v
    }
    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut v = self.ln_attn.params_mut();
        v.extend(self.attn.params_mut());
        v.extend(self.ln_ffn.params_mut());
        v.extend(self.ffn.params_mut());
        v
    }
}
