use std::io::{Read, Write};
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread;
use std::time::Duration;

use super::decode::{decode, DecodeMode, DecoderScorer, SrtConstraint};
use super::model::CloudModel;
use super::srt::{parse_srt_output, SrtOutput};
use super::CloudError;
use crate::cache::{resolve_or_request, CacheError, FeatureCache, FeatureSource};
use crate::edge::CompressedFeatures;
use crate::key::CacheKey;
use crate::wire::{
    decode_envelope, encode_envelope, features_from_envelope, read_frame, reference_envelope,
    text_envelope, write_frame, FeatureEnvelope, MsgType, WireError,
};

/// Shared, read-only model plus the feature cache.
#[derive(Debug)]
pub struct CloudService {
    pub model: CloudModel,
    pub cache: FeatureCache,
    pub mode: DecodeMode,
}

impl CloudService {
    pub fn new(model: CloudModel, cache: FeatureCache, mode: DecodeMode) -> Self {
        Self { model, cache, mode }
    }

    fn srt_pair(&self, prompt: &[u32]) -> Result<(u32, u32), CloudError> {
        match prompt {
            [src, tgt] if self.model.vocab.is_language(*src) && self.model.vocab.is_language(*tgt) => {
                Ok((*src, *tgt))
            }
            _ => Err(CloudError::BadRequest(
                "prompt must be a source and a target language token".into(),
            )),
        }
    }

    /// Runs projection, fusion and constrained decoding for one request.
    pub fn infer(&self, z: &CompressedFeatures, prompt: &[u32]) -> Result<SrtOutput, CloudError> {
        let (src, tgt) = self.srt_pair(prompt)?;
        let fused = self.model.fused_input(z, prompt)?;
        let scorer = DecoderScorer {
            decoder: &self.model.decoder,
            x: &fused.x,
        };
        let budget = self.model.cfg.max_new_tokens.max(2);
        let tokens = decode(&scorer, &SrtConstraint { src, tgt }, self.mode, budget)?;
        parse_srt_output(&tokens, &self.model.vocab)
    }

    fn respond(&self, key: CacheKey, prompt: &[u32], z: &CompressedFeatures) -> Vec<u8> {
        match self.infer(z, prompt) {
            Ok(out) => frame(&text_envelope(
                MsgType::Response,
                key,
                prompt,
                &out.render(&self.model.vocab),
            )),
            Err(e) => error_frame(key, &e.to_string()),
        }
    }

    /// Stateless single-frame handler. A CACHE_REF miss yields NEED_FEATURES.
    pub fn handle_request(&self, bytes: &[u8]) -> Vec<u8> {
        let env = match decode_envelope(bytes) {
            Ok(env) => env,
            Err(e) => return error_frame(CacheKey::ZERO, &e.to_string()),
        };
        match env.msg_type {
            MsgType::Features => match self.store(&env) {
                Ok(z) => self.respond(env.cache_key, &env.prompt_token_ids, &z),
                Err(e) => error_frame(env.cache_key, &e.to_string()),
            },
            MsgType::CacheRef => match self.cache.get(&env.cache_key) {
                Some(z) => self.respond(env.cache_key, &env.prompt_token_ids, &z),
                None => frame(&reference_envelope(
                    MsgType::NeedFeatures,
                    env.cache_key,
                    &env.prompt_token_ids,
                )),
            },
            other => error_frame(env.cache_key, &format!("cloud does not accept {other:?} frames")),
        }
    }

    fn store(&self, env: &FeatureEnvelope) -> Result<CompressedFeatures, CloudError> {
        let z = features_from_envelope(env)?;
        if z.d_q() != self.model.mlp.d_in() {
            return Err(CloudError::DimMismatch(format!(
                "features have d_q = {}, model expects {}",
                z.d_q(),
                self.model.mlp.d_in()
            )));
        }
        self.cache.put(env.cache_key, &z)?;
        Ok(self.cache.get(&env.cache_key).unwrap_or(z))
    }

    /// Serves frames on one connection until the peer closes. Cache misses
    /// are renegotiated in-line through [`ConnectionSource`].
    pub fn serve_connection<S: Read + Write>(&self, stream: &mut S) -> Result<(), CloudError> {
        loop {
            let bytes = match read_frame(stream) {
                Ok(Some(b)) => b,
                Ok(None) => return Ok(()),
                Err(e @ WireError::Io(_)) => return Err(e.into()),
                Err(WireError::Truncated { .. }) => return Ok(()),
                Err(e) => {
                    // Unframed garbage: report once, then drop the connection.
                    let _ = write_frame(stream, &error_frame(CacheKey::ZERO, &e.to_string()));
                    return Ok(());
                }
            };
            let reply = match decode_envelope(&bytes) {
                Ok(env) if env.msg_type == MsgType::CacheRef => {
                    let mut source = ConnectionSource { stream: &mut *stream };
                    match resolve_or_request(&self.cache, env.cache_key, &env.prompt_token_ids, &mut source) {
                        Ok(z) => self.respond(env.cache_key, &env.prompt_token_ids, &z),
                        Err(e) => error_frame(env.cache_key, &e.to_string()),
                    }
                }
                _ => self.handle_request(&bytes),
            };
            write_frame(stream, &reply)?;
        }
    }
}

fn frame(env: &FeatureEnvelope) -> Vec<u8> {
    encode_envelope(env).expect("server-built frames are valid")
}

fn error_frame(key: CacheKey, msg: &str) -> Vec<u8> {
    frame(&text_envelope(MsgType::Error, key, &[], msg))
}

/// Asks the edge on the other end of a connection to resend features.
pub struct ConnectionSource<'a, S> {
    pub stream: &'a mut S,
}

impl<S: Read + Write> FeatureSource for ConnectionSource<'_, S> {
    fn request_features(&mut self, key: CacheKey, prompt: &[u32]) -> Result<CompressedFeatures, CacheError> {
        let fail = |e: WireError| CacheError::Source(e.to_string());
        write_frame(self.stream, &frame(&reference_envelope(MsgType::NeedFeatures, key, prompt)))
            .map_err(fail)?;
        let bytes = read_frame(self.stream)
            .map_err(fail)?
            .ok_or_else(|| CacheError::Source("edge closed before resending features".into()))?;
        let env = decode_envelope(&bytes).map_err(fail)?;
        if env.cache_key != key {
            return Err(CacheError::Source(format!(
                "edge resent features for {} instead of {key}",
                env.cache_key
            )));
        }
        features_from_envelope(&env).map_err(fail)
    }
}

/// Thread-per-connection TCP front end.
pub struct CloudServer {
    listener: TcpListener,
    service: Arc<CloudService>,
}

impl CloudServer {
    pub fn bind(addr: &str, service: Arc<CloudService>) -> Result<Self, CloudError> {
        let listener = TcpListener::bind(addr)?;
        listener.set_nonblocking(true)?;
        Ok(Self { listener, service })
    }

    pub fn local_addr(&self) -> Result<SocketAddr, CloudError> {
        Ok(self.listener.local_addr()?)
    }

    /// Accepts until `shutdown` is set, then flushes the cache.
    pub fn run(&self, shutdown: &AtomicBool) -> Result<(), CloudError> {
        while !shutdown.load(Ordering::SeqCst) {
            match self.listener.accept() {
                Ok((stream, peer)) => {
                    let service = Arc::clone(&self.service);
                    thread::spawn(move || handle_stream(&service, stream, peer));
                }
                Err(e) if e.kind() == std::io::ErrorKind::WouldBlock => {
                    thread::sleep(Duration::from_millis(20));
                }
                Err(e) => log::warn!("accept failed: {e}"),
            }
        }
        self.service.cache.flush()?;
        Ok(())
    }
}

fn handle_stream(service: &CloudService, mut stream: TcpStream, peer: SocketAddr) {
    if let Err(e) = stream.set_nonblocking(false) {
        log::warn!("{peer}: {e}");
        return;
    }
    let _ = stream.set_nodelay(true);
    if let Err(e) = service.serve_connection(&mut stream) {
        log::warn!("{peer}: {e}");
    }
}
