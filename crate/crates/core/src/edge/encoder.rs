use esrt_nn::{
    gelu, sinusoidal_positions, LayerNormLayer, LinearLayer, ParamRng, Params, Tensor,
    TransformerBlock,
};

use super::{AcousticFeatures, EdgeError, EncoderConfig};
use crate::audio::{MelSpectrogram, N_FRAMES, N_MELS};

const KERNEL: usize = 3;

/// Anything that maps a log-Mel spectrogram to `[L′ × d_w]` features.
pub trait AcousticEncoder: Send + Sync {
    fn config(&self) -> &EncoderConfig;
    fn encode(&self, mel: &MelSpectrogram) -> Result<AcousticFeatures, EdgeError>;
}

/// Strided 1-D convolution followed by pre-LN transformer blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyEncoder {
    cfg: EncoderConfig,
    /// Convolution as a dense map over `KERNEL` stacked Mel frames.
    pub conv: LinearLayer,
    pub blocks: Vec<TransformerBlock>,
    pub ln_post: LayerNormLayer,
}

impl ToyEncoder {
    pub fn init(cfg: EncoderConfig, seed: u64) -> Result<Self, EdgeError> {
        cfg.validate()?;
        let mut rng = ParamRng::for_component(seed, "encoder");
        let fan_in = KERNEL * N_MELS;
        let conv = LinearLayer::init(&mut rng, fan_in, cfg.d_w, 1.0 / (fan_in as f32).sqrt());
        let std = 1.0 / (cfg.d_w as f32).sqrt();
        let blocks = (0..cfg.layers)
            .map(|_| TransformerBlock::init(&mut rng, cfg.d_w, None, cfg.heads, false, std))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self {
            cfg,
            conv,
            blocks,
            ln_post: LayerNormLayer::new(cfg.d_w),
        })
    }

    fn im2col(&self, mel: &Tensor) -> Tensor {
        let l = self.cfg.seq_len();
        let s = self.cfg.downsample;
        let m = mel.data();
        let mut cols = Tensor::zeros(&[l, KERNEL * N_MELS]);
        for t in 0..l {
            let row = cols.row_mut(t);
            for tap in 0..KERNEL {
                let Some(frame) = (t * s + tap).checked_sub(1) else {
                    continue;
                };
                if frame >= N_FRAMES {
                    continue;
                }
                for bin in 0..N_MELS {
                    // Shift the -10 log floor to roughly zero-centered input.
                    row[tap * N_MELS + bin] = (m[bin * N_FRAMES + frame] + 4.0) / 4.0;
                }
            }
        }
        cols
    }
}

impl AcousticEncoder for ToyEncoder {
    fn config(&self) -> &EncoderConfig {
        &self.cfg
    }

    fn encode(&self, mel: &MelSpectrogram) -> Result<AcousticFeatures, EdgeError> {
        if mel.mel.shape() != [N_MELS, N_FRAMES] {
            return Err(EdgeError::Config(format!(
                "expected a 128 x 3000 spectrogram, got {:?}",
                mel.mel.shape()
            )));
        }
        let mut h = self.conv.forward(&self.im2col(&mel.mel))?.map(gelu);
        h.add_assign(&sinusoidal_positions(h.rows(), self.cfg.d_w))?;
        for block in &self.blocks {
            h = block.forward(&h, None)?;
        }
        Ok(AcousticFeatures {
            h: self.ln_post.forward(&h)?,
            source_key: mel.source_key,
        })
    }
}

impl Params for ToyEncoder {
    fn params(&self) -> Vec<&Tensor> {
        let mut v = self.conv.params();
        for b in &self.blocks {
            v.extend(b.params());
        }
        v.extend(self.ln_post.params());
        v
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut v = self.conv.params_mut();
        for b in &mut self.blocks {
            v.extend(b.params_mut());
        }
        v.extend(self.ln_post.params_mut());
        v
    }
}
