use esrt_nn::layers::BlockCache;
use esrt_nn::{LayerNormLayer, ParamRng, Params, Tensor, TransformerBlock};

use super::{AcousticFeatures, CompressedFeatures, EdgeError, EncoderConfig, QFormerConfig};

const QUERY_INIT_STD: f32 = 0.02;

/// `K` learnable queries cross-attending to the encoder output.
#[derive(Debug, Clone, PartialEq)]
pub struct QFormer {
    cfg: QFormerConfig,
    d_context: usize,
    pub queries: Tensor,
    pub blocks: Vec<TransformerBlock>,
    pub ln_out: LayerNormLayer,
}

#[derive(Debug, Clone)]
pub struct QFormerCache {
    blocks: Vec<BlockCache>,
    ln_out: esrt_nn::layers::LayerNormCache,
}

impl QFormer {
    pub fn init(cfg: QFormerConfig, encoder: &EncoderConfig, seed: u64) -> Result<Self, EdgeError> {
        encoder.validate()?;
        cfg.validate(encoder)?;
        let mut rng = ParamRng::for_component(seed, "qformer");
        let queries = rng.normal(&[cfg.k_queries, cfg.d_q], QUERY_INIT_STD);
        let std = 1.0 / (cfg.d_q.max(encoder.d_w) as f32).sqrt();
        let blocks = (0..cfg.layers)
            .map(|_| {
                TransformerBlock::init(&mut rng, cfg.d_q, Some(encoder.d_w), cfg.heads, false, std)
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self {
            cfg,
            d_context: encoder.d_w,
            queries,
            blocks,
            ln_out: LayerNormLayer::new(cfg.d_q),
        })
    }

    pub fn config(&self) -> &QFormerConfig {
        &self.cfg
    }

    pub fn d_context(&self) -> usize {
        self.d_context
    }

    pub fn compress(&self, h: &AcousticFeatures) -> Result<CompressedFeatures, EdgeError> {
        let (z, _) = self.forward_cached(&h.h)?;
        CompressedFeatures::new(z, h.source_key)
    }

    pub fn forward_cached(&self, h: &Tensor) -> Result<(Tensor, QFormerCache), EdgeError> {
        if h.rank() != 2 || h.cols() != self.d_context {
            return Err(EdgeError::WeightMismatch(format!(
                "q-former expects context width {}, got {:?}",
                self.d_context,
                h.shape()
            )));
        }
        let mut x = self.queries.clone();
        let mut caches = Vec::with_capacity(self.blocks.len());
        for block in &self.blocks {
            let (y, c) = block.forward_cached(&x, Some(h))?;
            x = y;
            caches.push(c);
        }
        let (z, ln_out) = self.ln_out.forward_cached(&x)?;
        Ok((
            z,
            QFormerCache {
                blocks: caches,
                ln_out,
            },
        ))
    }

    /// Gradient of all parameters given `dL/dZ`. The context is frozen input.
    pub fn backward(&self, dz: &Tensor, cache: &QFormerCache) -> Result<QFormer, EdgeError> {
        let (mut dx, g_ln) = self.ln_out.backward(dz, &cache.ln_out);
        let mut g_blocks = Vec::with_capacity(self.blocks.len());
        for (block, c) in self.blocks.iter().zip(&cache.blocks).rev() {
            let (d, _, g) = block.backward(&dx, c)?;
            dx = d;
            g_blocks.push(g);
        }
        g_blocks.reverse();
        Ok(QFormer {
            cfg: self.cfg,
            d_context: self.d_context,
            queries: dx,
            blocks: g_blocks,
            ln_out: g_ln,
        })
    }
}

impl Params for QFormer {
    fn params(&self) -> Vec<&Tensor> {
        let mut v = vec![&self.queries];
        for b in &self.blocks {
            v.extend(b.params());
        }
        v.extend(self.ln_out.params());
        v
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut v = vec![&mut self.queries];
        for b in &mut self.blocks {
            v.extend(b.params_mut());
        }
        v.extend(self.ln_out.params_mut());
        v
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::key::CacheKey;
    use esrt_nn::{cross_attention, grad_check, LinearLayer};

    fn context(l: usize, d: usize) -> Tensor {
        Tensor::from_fn(&[l, d], |i| ((i * 37 % 101) as f32 / 50.0) - 1.0)
    }

    #[test]
    fn output_shape_is_independent_of_context_length() {
        let enc = EncoderConfig::default();
        let q = QFormer::init(QFormerConfig::default(), &enc, 5).unwrap();
        for l in [10, 1500] {
            let z = q
                .compress(&AcousticFeatures {
                    h: context(l, 64),
                    source_key: CacheKey::ZERO,
                })
                .unwrap();
            assert_eq!((z.k(), z.d_q()), (8, 32));
            assert!(z.z().is_finite());
        }
    }

    #[test]
    fn wrong_context_width_rejected() {
        let q = QFormer::init(QFormerConfig::default(), &EncoderConfig::default(), 5).unwrap();
        assert!(matches!(
            q.forward_cached(&context(10, 63)),
            Err(EdgeError::WeightMismatch(_))
        ));
    }

    #[test]
    fn single_query_uniform_attention_matches_oracle() {
        let enc = EncoderConfig {
            d_w: 4,
            heads: 1,
            layers: 0,
            downsample: 2,
        };
        let cfg = QFormerConfig {
            k_queries: 1,
            d_q: 4,
            layers: 1,
            heads: 1,
        };
        let mut q = QFormer::init(cfg, &enc, 1).unwrap();
        let block = &mut q.blocks[0];
        // Zero query projection gives uniform attention; identity values.
        block.attn.wq = LinearLayer::zeros(4, 4).into();
        block.attn.wv = LinearLayer::new(Tensor::identity(4), Tensor::zeros(&[4])).unwrap().into();
        block.attn.wo = LinearLayer::new(Tensor::identity(4), Tensor::zeros(&[4])).unwrap().into();
        block.ffn.up = LinearLayer::zeros(4, 16);
        block.ffn.down = LinearLayer::zeros(16, 4);
        let h = context(6, 4);
        let (z, _) = q.forward_cached(&h).unwrap();

        let keys = Tensor::zeros(&[6, 4]);
        let attended = cross_attention(&Tensor::zeros(&[1, 4]), &keys, &h).unwrap();
        let pre = q.queries.add(&attended).unwrap();
        let mean = pre.data().iter().map(|&v| v as f64).sum::<f64>() / 4.0;
        let var = pre.data().iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / 4.0;
        for (i, &got) in z.data().iter().enumerate() {
            let want = (pre.data()[i] as f64 - mean) / (var + 1e-5).sqrt();
            assert!((got as f64 - want).abs() < 1e-5, "{got} vs {want}");
        }
    }

    #[test]
    fn query_gradient_matches_finite_differences() {
        let enc = EncoderConfig {
            d_w: 6,
            heads: 1,
            layers: 0,
            downsample: 2,
        };
        let cfg = QFormerConfig {
            k_queries: 3,
            d_q: 4,
            layers: 2,
            heads: 2,
        };
        let mut q = QFormer::init(cfg, &enc, 2).unwrap();
        q.queries = q.queries.scale(30.0);
        let h = context(7, 6);
        let w = Tensor::from_fn(&[3, 4], |i| (i as f32 * 0.3).sin());
        let loss = |qf: &QFormer| -> f64 {
            let (z, _) = qf.forward_cached(&h).unwrap();
            z.data().iter().zip(w.data()).map(|(&a, &b)| (a * b) as f64).sum()
        };
        let (_, cache) = q.forward_cached(&h).unwrap();
        let g = q.backward(&w, &cache).unwrap();
        let err = grad_check(
            |x: &Tensor| {
                let mut probe = q.clone();
                probe.queries = x.clone();
                loss(&probe)
            },
            &q.queries,
            &g.queries,
            1e-2,
        )
        .unwrap();
        assert!(err < 2e-3, "query gradient error {err}");
    }
}
