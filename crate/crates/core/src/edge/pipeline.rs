use super::{
    AcousticEncoder, AcousticFeatures, CompressedFeatures, EdgeError, EncoderConfig, QFormer,
    QFormerConfig, ToyEncoder,
};
use crate::audio::{compute_mel, decode_wav, pad_to_window, AudioClip};

/// WAV bytes → Mel → `H` → `Z`, with frozen weights.
#[derive(Debug, Clone)]
pub struct EdgePipeline<E = ToyEncoder> {
    encoder: E,
    qformer: QFormer,
}

impl EdgePipeline<ToyEncoder> {
    pub fn init(enc: EncoderConfig, q: QFormerConfig, seed: u64) -> Result<Self, EdgeError> {
        Self::new(ToyEncoder::init(enc, seed)?, QFormer::init(q, &enc, seed)?)
    }
}

impl<E: AcousticEncoder> EdgePipeline<E> {
    pub fn new(encoder: E, qformer: QFormer) -> Result<Self, EdgeError> {
        if encoder.config().d_w != qformer.d_context() {
            return Err(EdgeError::WeightMismatch(format!(
                "encoder width {} but q-former context width {}",
                encoder.config().d_w,
                qformer.d_context()
            )));
        }
        qformer.config().validate(encoder.config())?;
        Ok(Self { encoder, qformer })
    }

    pub fn encoder(&self) -> &E {
        &self.encoder
    }

    pub fn qformer(&self) -> &QFormer {
        &self.qformer
    }

    pub fn into_parts(self) -> (E, QFormer) {
        (self.encoder, self.qformer)
    }

    pub fn acoustic(&self, clip: &AudioClip) -> Result<AcousticFeatures, EdgeError> {
        let mel = compute_mel(&pad_to_window(clip))?;
        self.encoder.encode(&mel)
    }

    pub fn encode_clip(&self, clip: &AudioClip) -> Result<CompressedFeatures, EdgeError> {
        self.qformer.compress(&self.acoustic(clip)?)
    }

    pub fn encode_wav(&self, bytes: &[u8]) -> Result<CompressedFeatures, EdgeError> {
        self.encode_clip(&decode_wav(bytes)?)
    }
}
