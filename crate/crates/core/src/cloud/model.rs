//! Projection MLP and the toy causal decoder standing in for the LLM.

use esrt_nn::layers::{BlockCache, FeedForwardCache, LayerNormCache};
use esrt_nn::{
    log_softmax_slice, matmul, matmul_nt, matmul_tn, sinusoidal_positions, AdaptedLinear,
    FeedForward, LayerNormLayer, LoraAdapter, ParamRng, Params, Tensor, TransformerBlock,
};
use serde::{Deserialize, Serialize};

use super::vocab::{Vocabulary, VOCAB_SIZE};
use super::CloudError;
use crate::edge::CompressedFeatures;

const EMBED_STD: f32 = 0.4;
const POSITION_SCALE: f32 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CloudConfig {
    pub d_llm: usize,
    pub decoder_layers: usize,
    pub heads: usize,
    pub max_new_tokens: usize,
}

impl Default for CloudConfig {
    fn default() -> Self {
        Self {
            d_llm: 48,
            decoder_layers: 2,
            heads: 2,
            max_new_tokens: 256,
        }
    }
}

impl CloudConfig {
    pub fn validate(&self) -> Result<(), CloudError> {
        if self.d_llm == 0 || self.heads == 0 || self.d_llm % self.heads != 0 {
            return Err(CloudError::Config(format!(
                "d_llm {} must be a positive multiple of heads {}",
                self.d_llm, self.heads
            )));
        }
        Ok(())
    }
}

/// `d_q → 4·d_llm → d_llm` with GELU.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub ffn: FeedForward,
}

impl Mlp {
    pub fn init(d_q: usize, d_llm: usize, seed: u64) -> Self {
        let mut rng = ParamRng::for_component(seed, "mlp");
        let hidden = 4 * d_llm;
        Self {
            ffn: FeedForward {
                up: esrt_nn::LinearLayer::init(&mut rng, d_q, hidden, 1.0 / (d_q as f32).sqrt()),
                down: esrt_nn::LinearLayer::init(&mut rng, hidden, d_llm, 1.0 / (hidden as f32).sqrt()),
            },
        }
    }

    pub fn d_in(&self) -> usize {
        self.ffn.up.d_in()
    }

    pub fn d_out(&self) -> usize {
        self.ffn.down.d_out()
    }

    pub fn project(&self, z: &CompressedFeatures) -> Result<Tensor, CloudError> {
        self.project_cached(z.z()).map(|(y, _)| y)
    }

    pub fn project_cached(&self, z: &Tensor) -> Result<(Tensor, FeedForwardCache), CloudError> {
        if z.rank() != 2 || z.cols() != self.d_in() {
            return Err(CloudError::DimMismatch(format!(
                "mlp expects d_q = {}, got features {:?}",
                self.d_in(),
                z.shape()
            )));
        }
        Ok(self.ffn.forward_cached(z)?)
    }

    /// Returns `(dZ, grads)`.
    pub fn backward(&self, dy: &Tensor, cache: &FeedForwardCache) -> Result<(Tensor, Mlp), CloudError> {
        let (dz, g) = self.ffn.backward(dy, cache)?;
        Ok((dz, Mlp { ffn: g }))
    }
}

impl Params for Mlp {
    fn params(&self) -> Vec<&Tensor> {
        self.ffn.params()
    }
    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        self.ffn.params_mut()
    }
}

/// `X = [Z_mlp; P]`, features first.
#[derive(Debug, Clone, PartialEq)]
pub struct FusedInput {
    pub x: Tensor,
    pub k: usize,
}

impl FusedInput {
    pub fn prompt_len(&self) -> usize {
        self.x.rows() - self.k
    }
}

pub fn fuse(z_mlp: &Tensor, p: &Tensor) -> Result<FusedInput, CloudError> {
    if z_mlp.rank() != 2 || p.rank() != 2 || z_mlp.cols() != p.cols() {
        return Err(CloudError::DimMismatch(format!(
            "cannot fuse features {:?} with prompt {:?}",
            z_mlp.shape(),
            p.shape()
        )));
    }
    let x = if p.rows() == 0 {
        z_mlp.clone()
    } else {
        Tensor::concat_rows(&[z_mlp, p])?
    };
    Ok(FusedInput { x, k: z_mlp.rows() })
}

/// Causal pre-LN transformer with tied input/output embeddings.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyDecoder {
    pub embed: Tensor,
    pub blocks: Vec<TransformerBlock>,
    pub ln_f: LayerNormLayer,
}

pub struct DecoderCache {
    tokens: Vec<u32>,
    n_prefix: usize,
    blocks: Vec<BlockCache>,
    ln_f: LayerNormCache,
    hn: Tensor,
}

impl ToyDecoder {
    pub fn init(cfg: &CloudConfig, seed: u64) -> Result<Self, CloudError> {
        cfg.validate()?;
        let mut rng = ParamRng::for_component(seed, "decoder");
        let d = cfg.d_llm;
        let embed = rng.normal(&[VOCAB_SIZE as usize, d], EMBED_STD);
        let std = 1.0 / (d as f32).sqrt();
        let blocks = (0..cfg.decoder_layers)
            .map(|_| TransformerBlock::init(&mut rng, d, None, cfg.heads, true, std))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self {
            embed,
            blocks,
            ln_f: LayerNormLayer::new(d),
        })
    }

    pub fn d_model(&self) -> usize {
        self.embed.cols()
    }

    pub fn vocab_size(&self) -> usize {
        self.embed.rows()
    }

    pub fn embed_tokens(&self, ids: &[u32]) -> Result<Tensor, CloudError> {
        let d = self.d_model();
        let mut out = Tensor::zeros(&[ids.len(), d]);
        for (i, &id) in ids.iter().enumerate() {
            if id as usize >= self.vocab_size() {
                return Err(CloudError::TokenOutOfRange {
                    id,
                    size: self.vocab_size(),
                });
            }
            out.row_mut(i).copy_from_slice(self.embed.row(id as usize));
        }
        Ok(out)
    }

    fn input_rows(&self, prefix: &Tensor, tokens: &[u32]) -> Result<Tensor, CloudError> {
        if prefix.cols() != self.d_model() {
            return Err(CloudError::DimMismatch(format!(
                "decoder width {} but input rows {:?}",
                self.d_model(),
                prefix.shape()
            )));
        }
        let emb = self.embed_tokens(tokens)?;
        let mut x = if tokens.is_empty() {
            prefix.clone()
        } else if prefix.rows() == 0 {
            emb
        } else {
            Tensor::concat_rows(&[prefix, &emb])?
        };
        x.axpy(POSITION_SCALE, &sinusoidal_positions(x.rows(), self.d_model()))?;
        Ok(x)
    }

    /// Logits `[n × V]` for continuous prefix rows followed by token ids.
    pub fn logits(&self, prefix: &Tensor, tokens: &[u32]) -> Result<Tensor, CloudError> {
        let mut h = self.input_rows(prefix, tokens)?;
        for b in &self.blocks {
            h = b.forward(&h, None)?;
        }
        Ok(matmul_nt(&self.ln_f.forward(&h)?, &self.embed)?)
    }

    /// Log-probabilities of the token following the whole input.
    pub fn next_log_probs(&self, prefix: &Tensor, tokens: &[u32]) -> Result<Vec<f32>, CloudError> {
        let mut h = self.input_rows(prefix, tokens)?;
        for b in &self.blocks {
            h = b.forward(&h, None)?;
        }
        let last = h.slice_rows(h.rows() - 1, h.rows());
        let logits = matmul_nt(&self.ln_f.forward(&last)?, &self.embed)?;
        Ok(log_softmax_slice(logits.data()))
    }

    pub fn forward_cached(
        &self,
        prefix: &Tensor,
        tokens: &[u32],
    ) -> Result<(Tensor, DecoderCache), CloudError> {
        let mut h = self.input_rows(prefix, tokens)?;
        let mut caches = Vec::with_capacity(self.blocks.len());
        for b in &self.blocks {
            let (y, c) = b.forward_cached(&h, None)?;
            h = y;
            caches.push(c);
        }
        let (hn, ln_f) = self.ln_f.forward_cached(&h)?;
        let logits = matmul_nt(&hn, &self.embed)?;
        Ok((
            logits,
            DecoderCache {
                tokens: tokens.to_vec(),
                n_prefix: prefix.rows(),
                blocks: caches,
                ln_f,
                hn,
            },
        ))
    }

    /// Returns `(d_prefix, grads)` for upstream `dL/dlogits`.
    pub fn backward(
        &self,
        dlogits: &Tensor,
        cache: &DecoderCache,
    ) -> Result<(Tensor, ToyDecoder), CloudError> {
        let dhn = matmul(dlogits, &self.embed)?;
        let mut d_embed = matmul_tn(dlogits, &cache.hn)?;
        let (mut dh, g_ln) = self.ln_f.backward(&dhn, &cache.ln_f);
        let mut g_blocks = Vec::with_capacity(self.blocks.len());
        for (b, c) in self.blocks.iter().zip(&cache.blocks).rev() {
            let (dx, _, g) = b.backward(&dh, c)?;
            dh = dx;
            g_blocks.push(g);
        }
        g_blocks.reverse();
        let d = self.d_model();
        for (i, &id) in cache.tokens.iter().enumerate() {
            let src = dh.row(cache.n_prefix + i).to_vec();
            for (g, s) in d_embed.row_mut(id as usize).iter_mut().zip(src) {
                *g += s;
            }
        }
        let d_prefix = if cache.n_prefix == 0 {
            Tensor::zeros(&[0, d])
        } else {
            dh.slice_rows(0, cache.n_prefix)
        };
        Ok((
            d_prefix,
            ToyDecoder {
                embed: d_embed,
                blocks: g_blocks,
                ln_f: g_ln,
            },
        ))
    }

    /// Attaches zero-initialized LoRA adapters to every attention projection.
    pub fn attach_lora(&mut self, r: usize, alpha: f32, seed: u64) -> Result<(), CloudError> {
        let mut rng = ParamRng::for_component(seed, "lora");
        for b in &mut self.blocks {
            for proj in [&mut b.attn.wq, &mut b.attn.wk, &mut b.attn.wv, &mut b.attn.wo] {
                let base = proj.base.clone();
                let adapter = LoraAdapter::init(&mut rng, base.d_in(), base.d_out(), r, alpha);
                *proj = AdaptedLinear::with_adapter(base, adapter)?;
            }
        }
        Ok(())
    }

    pub fn has_lora(&self) -> bool {
        self.blocks.iter().any(|b| b.attn.wq.lora.is_some())
    }

    fn lora_slots(&self) -> Vec<&LoraAdapter> {
        self.blocks
            .iter()
            .flat_map(|b| [&b.attn.wq, &b.attn.wk, &b.attn.wv, &b.attn.wo])
            .filter_map(|p| p.lora.as_ref())
            .collect()
    }

    /// Updates only the adapter tensors; base weights stay frozen.
    pub fn lora_sgd_step(&mut self, grads: &ToyDecoder, lr: f32) {
        let g: Vec<LoraAdapter> = grads.lora_slots().into_iter().cloned().collect();
        let slots = self
            .blocks
            .iter_mut()
            .flat_map(|b| [&mut b.attn.wq, &mut b.attn.wk, &mut b.attn.wv, &mut b.attn.wo])
            .filter_map(|p| p.lora.as_mut());
        for (l, gl) in slots.zip(&g) {
            l.sgd_step(gl, lr);
        }
    }

    /// Adapter tensors in a fixed order, empty before [`Self::attach_lora`].
    pub fn lora_params(&self) -> Vec<&Tensor> {
        self.lora_slots().into_iter().flat_map(|l| [&l.a, &l.b]).collect()
    }

    pub fn lora_params_mut(&mut self) -> Vec<&mut Tensor> {
        self.blocks
            .iter_mut()
            .flat_map(|b| [&mut b.attn.wq, &mut b.attn.wk, &mut b.attn.wv, &mut b.attn.wo])
            .filter_map(|p| p.lora.as_mut())
            .flat_map(|l| [&mut l.a, &mut l.b])
            .collect()
    }

    /// Base weights only (adapters excluded), for immutability checks.
    pub fn base_params(&self) -> Vec<&Tensor> {
        let mut v = vec![&self.embed];
        for b in &self.blocks {
            v.extend(b.ln_attn.params());
            for p in [&b.attn.wq, &b.attn.wk, &b.attn.wv, &b.attn.wo] {
                v.extend(p.base.params());
            }
            v.extend(b.ln_ffn.params());
            v.extend(b.ffn.params());
        }
        v.extend(self.ln_f.params());
        v
    }
}

impl Params for ToyDecoder {
    fn params(&self) -> Vec<&Tensor> {
        let mut v = vec![&self.embed];
        for b in &self.blocks {
            v.extend(b.params());
        }
        v.extend(self.ln_f.params());
        v
    }
    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut v = vec![&mut self.embed];
        for b in &mut self.blocks {
            v.extend(b.params_mut());
        }
        v.extend(self.ln_f.params_mut());
        v
    }
}

/// Cross-entropy averaged over `(row, target)` pairs, with `dL/dlogits`.
pub fn cross_entropy(logits: &Tensor, targets: &[(usize, u32)]) -> (f64, Tensor) {
    let mut grad = Tensor::zeros(logits.shape());
    if targets.is_empty() {
        return (0.0, grad);
    }
    let scale = 1.0 / targets.len() as f32;
    let mut loss = 0.0f64;
    for &(row, tok) in targets {
        let lp = log_softmax_slice(logits.row(row));
        loss -= lp[tok as usize] as f64;
        for (g, l) in grad.row_mut(row).iter_mut().zip(&lp) {
            *g += l.exp() * scale;
        }
        grad.row_mut(row)[tok as usize] -= scale;
    }
    (loss / targets.len() as f64, grad)
}

/// Everything the cloud holds: projection, decoder and vocabulary.
#[derive(Debug, Clone, PartialEq)]
pub struct CloudModel {
    pub cfg: CloudConfig,
    pub mlp: Mlp,
    pub decoder: ToyDecoder,
    pub vocab: Vocabulary,
}

impl CloudModel {
    pub fn init(cfg: CloudConfig, d_q: usize, seed: u64) -> Result<Self, CloudError> {
        Ok(Self {
            mlp: Mlp::init(d_q, cfg.d_llm, seed),
            decoder: ToyDecoder::init(&cfg, seed)?,
            vocab: Vocabulary::expanded(),
            cfg,
        })
    }

    pub fn embed_prompt(&self, ids: &[u32]) -> Result<Tensor, CloudError> {
        self.decoder.embed_tokens(ids)
    }

    pub fn fused_input(&self, z: &CompressedFeatures, prompt: &[u32]) -> Result<FusedInput, CloudError> {
        fuse(&self.mlp.project(z)?, &self.embed_prompt(prompt)?)
    }
}
