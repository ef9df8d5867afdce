use std::net::TcpStream;
use std::time::Duration;

use super::service::CloudService;
use super::srt::{parse_srt_output, SrtOutput};
use super::vocab::Vocabulary;
use super::CloudError;
use crate::edge::CompressedFeatures;
use crate::wire::{
    decode_envelope, encode_envelope, features_envelope, read_frame, reference_envelope,
    text_payload, write_frame, DType, MsgType,
};

/// Sends one frame and returns the peer's reply frame.
pub trait Transport {
    fn round_trip(&mut self, frame: &[u8]) -> Result<Vec<u8>, CloudError>;
}

pub struct TcpTransport {
    stream: TcpStream,
}

impl TcpTransport {
    pub fn connect(addr: &str, timeout: Duration) -> Result<Self, CloudError> {
        let stream = TcpStream::connect(addr)?;
        stream.set_read_timeout(Some(timeout))?;
        stream.set_nodelay(true)?;
        Ok(Self { stream })
    }
}

impl Transport for TcpTransport {
    fn round_trip(&mut self, frame: &[u8]) -> Result<Vec<u8>, CloudError> {
        write_frame(&mut self.stream, frame)?;
        read_frame(&mut self.stream)?
            .ok_or_else(|| CloudError::Protocol("server closed the connection".into()))
    }
}

/// Calls the service directly, no sockets.
pub struct InProcess<'a>(pub &'a CloudService);

impl Transport for InProcess<'_> {
    fn round_trip(&mut self, frame: &[u8]) -> Result<Vec<u8>, CloudError> {
        Ok(self.0.handle_request(frame))
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct TrafficSummary {
    pub frames_sent: u64,
    pub feature_frames: u64,
    pub feature_payload_bytes: u64,
    pub cache_ref_frames: u64,
    pub renegotiations: u64,
    pub bytes_sent: u64,
    pub bytes_received: u64,
}

/// Edge-side requester: features once, cache references afterwards.
pub struct EdgeClient<T> {
    transport: T,
    traffic: TrafficSummary,
    dtype: DType,
}

impl<T: Transport> EdgeClient<T> {
    pub fn new(transport: T) -> Self {
        Self {
            transport,
            traffic: TrafficSummary::default(),
            dtype: DType::Bf16,
        }
    }

    pub fn traffic(&self) -> TrafficSummary {
        self.traffic
    }

    fn send(&mut self, frame: &[u8], msg_type: MsgType, payload: usize) -> Result<Vec<u8>, CloudError> {
        self.traffic.frames_sent += 1;
        self.traffic.bytes_sent += frame.len() as u64;
        match msg_type {
            MsgType::Features => {
                self.traffic.feature_frames += 1;
                self.traffic.feature_payload_bytes += payload as u64;
            }
            MsgType::CacheRef => self.traffic.cache_ref_frames += 1,
            _ => {}
        }
        let reply = self.transport.round_trip(frame)?;
        self.traffic.bytes_received += reply.len() as u64;
        Ok(reply)
    }

    fn send_features(&mut self, z: &CompressedFeatures, prompt: &[u32]) -> Result<Vec<u8>, CloudError> {
        let env = features_envelope(z, prompt, self.dtype)?;
        let bytes = encode_envelope(&env)?;
        self.send(&bytes, MsgType::Features, env.payload.len())
    }

    /// One request per target language over the same clip. Only the first
    /// carries features unless the cloud asks for them again.
    pub fn translate(
        &mut self,
        z: &CompressedFeatures,
        vocab: &Vocabulary,
        src: &str,
        targets: &[&str],
    ) -> Result<Vec<SrtOutput>, CloudError> {
        let src_id = vocab.language_id(src)?;
        let tgt_ids = targets
            .iter()
            .map(|t| vocab.language_id(t))
            .collect::<Result<Vec<_>, _>>()?;
        let mut outputs = Vec::with_capacity(tgt_ids.len());
        for (i, tgt) in tgt_ids.into_iter().enumerate() {
            let prompt = [src_id, tgt];
            let mut reply = if i == 0 {
                self.send_features(z, &prompt)?
            } else {
                let bytes = encode_envelope(&reference_envelope(MsgType::CacheRef, z.cache_key(), &prompt))?;
                self.send(&bytes, MsgType::CacheRef, 0)?
            };
            let mut env = decode_envelope(&reply)?;
            if env.msg_type == MsgType::NeedFeatures {
                self.traffic.renegotiations += 1;
                reply = self.send_features(z, &prompt)?;
                env = decode_envelope(&reply)?;
            }
            match env.msg_type {
                MsgType::Response => {
                    let text = text_payload(&env)?;
                    outputs.push(parse_response_text(text, vocab)?);
                }
                MsgType::Error => return Err(CloudError::Remote(text_payload(&env)?.to_string())),
                other => return Err(CloudError::Protocol(format!("unexpected {other:?} reply"))),
            }
        }
        Ok(outputs)
    }
}

/// Parses `Y1<|src|><|tgt|>Y2` back into tokens and fields.
pub fn parse_response_text(text: &str, vocab: &Vocabulary) -> Result<SrtOutput, CloudError> {
    let mut tokens = Vec::new();
    let mut rest = text;
    while !rest.is_empty() {
        if rest.starts_with("<|") {
            if let Some(end) = rest.find("|>") {
                if let Some(id) = vocab.id_of(&rest[..end + 2]) {
                    tokens.push(id);
                    rest = &rest[end + 2..];
                    continue;
                }
            }
        }
        let ch = rest.chars().next().expect("non-empty");
        let mut buf = [0u8; 4];
        tokens.extend(ch.encode_utf8(&mut buf).bytes().map(u32::from));
        rest = &rest[ch.len_utf8()..];
    }
    parse_srt_output(&tokens, vocab)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn response_text_round_trip() {
        let v = Vocabulary::expanded();
        let out = parse_response_text("héllo<|eng|><|deu|>hallo", &v).unwrap();
        assert_eq!(out.transcript, "héllo");
        assert_eq!(out.tgt_code(&v), Some("deu"));
        assert_eq!(out.render(&v), "héllo<|eng|><|deu|>hallo");
    }
}
