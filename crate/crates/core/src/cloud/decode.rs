//! Greedy and length-normalized beam search over any next-token scorer.

use esrt_nn::Tensor;

use super::model::ToyDecoder;
use super::vocab::{BYTE_TOKENS, EOS_ID};
use super::CloudError;

pub const DEFAULT_BEAM_WIDTH: usize = 5;

/// Log-probabilities of the next token given what has been generated.
pub trait NextTokenScorer {
    fn vocab_size(&self) -> usize;
    fn eos(&self) -> Option<u32>;
    fn log_probs(&self, generated: &[u32]) -> Result<Vec<f32>, CloudError>;
}

/// Restricts which tokens may be emitted at a step.
pub trait TokenConstraint {
    /// `remaining` counts this step.
    fn allowed(&self, generated: &[u32], remaining: usize, token: u32) -> bool;
}

pub struct Unconstrained;

impl TokenConstraint for Unconstrained {
    fn allowed(&self, _: &[u32], _: usize, _: u32) -> bool {
        true
    }
}

/// Forces the `{text}<|src|><|tgt|>{text}<|endoftext|>` shape.
#[derive(Debug, Clone, Copy)]
pub struct SrtConstraint {
    pub src: u32,
    pub tgt: u32,
}

impl TokenConstraint for SrtConstraint {
    fn allowed(&self, generated: &[u32], remaining: usize, token: u32) -> bool {
        let is_byte = token < BYTE_TOKENS;
        match generated.iter().position(|&t| t == self.src) {
            None if remaining <= 2 => token == self.src,
            None => is_byte || token == self.src,
            Some(i) if i + 1 == generated.len() => token == self.tgt,
            Some(_) => is_byte || token == EOS_ID,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DecodeMode {
    Greedy,
    Beam(usize),
}

/// Argmax each step, lowest id on ties. EOS stops and is not returned.
pub fn decode_greedy<S, C>(scorer: &S, constraint: &C, max_new_tokens: usize) -> Result<Vec<u32>, CloudError>
where
    S: NextTokenScorer + ?Sized,
    C: TokenConstraint + ?Sized,
{
    let mut out = Vec::new();
    for step in 0..max_new_tokens {
        let lp = scorer.log_probs(&out)?;
        let remaining = max_new_tokens - step;
        let mut best: Option<(u32, f32)> = None;
        for (tok, &v) in lp.iter().enumerate() {
            let tok = tok as u32;
            if !constraint.allowed(&out, remaining, tok) {
                continue;
            }
            if best.is_none_or(|(_, b)| v > b) {
                best = Some((tok, v));
            }
        }
        let Some((tok, _)) = best else { break };
        if Some(tok) == scorer.eos() {
            break;
        }
        out.push(tok);
    }
    Ok(out)
}

#[derive(Debug, Clone)]
struct Hyp {
    tokens: Vec<u32>,
    score: f64,
}

/// Beam search ranking hypotheses by `Σ log p / length`, where length
/// counts a final EOS. Ended hypotheses leave the beam; survivors at the
/// budget are kept as truncated. EOS is stripped from the result.
pub fn decode_beam<S, C>(
    scorer: &S,
    constraint: &C,
    width: usize,
    max_new_tokens: usize,
) -> Result<Vec<u32>, CloudError>
where
    S: NextTokenScorer + ?Sized,
    C: TokenConstraint + ?Sized,
{
    if width == 0 {
        return Err(CloudError::InvalidBeamWidth);
    }
    let eos = scorer.eos();
    let mut alive = vec![Hyp {
        tokens: Vec::new(),
        score: 0.0,
    }];
    // (tokens without EOS, score, normalizing length)
    let mut finished: Vec<(Vec<u32>, f64, usize)> = Vec::new();
    for step in 0..max_new_tokens {
        let remaining = max_new_tokens - step;
        let mut candidates: Vec<(usize, u32, f64)> = Vec::new();
        for (bi, hyp) in alive.iter().enumerate() {
            let lp = scorer.log_probs(&hyp.tokens)?;
            for (tok, &v) in lp.iter().enumerate() {
                let tok = tok as u32;
                if constraint.allowed(&hyp.tokens, remaining, tok) {
                    candidates.push((bi, tok, hyp.score + v as f64));
                }
            }
        }
        // Stable: ties keep beam order, then token order.
        candidates.sort_by(|a, b| b.2.total_cmp(&a.2));
        candidates.truncate(width);
        let mut next = Vec::with_capacity(width);
        for (bi, tok, score) in candidates {
            let tokens = alive[bi].tokens.clone();
            if Some(tok) == eos {
                let len = tokens.len() + 1;
                finished.push((tokens, score, len));
            } else {
                let mut tokens = tokens;
                tokens.push(tok);
                next.push(Hyp { tokens, score });
            }
        }
        alive = next;
        if alive.is_empty() {
            break;
        }
    }
    for h in alive {
        let len = h.tokens.len();
        finished.push((h.tokens, h.score, len));
    }
    let mut best: Option<(Vec<u32>, f64)> = None;
    for (tokens, score, len) in finished {
        let norm = if len == 0 { 0.0 } else { score / len as f64 };
        if best.as_ref().is_none_or(|(_, b)| norm > *b) {
            best = Some((tokens, norm));
        }
    }
    Ok(best.map(|(t, _)| t).unwrap_or_default())
}

pub fn decode<S, C>(scorer: &S, constraint: &C, mode: DecodeMode, max_new_tokens: usize) -> Result<Vec<u32>, CloudError>
where
    S: NextTokenScorer + ?Sized,
    C: TokenConstraint + ?Sized,
{
    match mode {
        DecodeMode::Greedy => decode_greedy(scorer, constraint, max_new_tokens),
        DecodeMode::Beam(w) => decode_beam(scorer, constraint, w, max_new_tokens),
    }
}

/// The toy decoder conditioned on a fused input `X`.
pub struct DecoderScorer<'a> {
    pub decoder: &'a ToyDecoder,
    pub x: &'a Tensor,
}

impl NextTokenScorer for DecoderScorer<'_> {
    fn vocab_size(&self) -> usize {
        self.decoder.vocab_size()
    }

    fn eos(&self) -> Option<u32> {
        Some(EOS_ID)
    }

    fn log_probs(&self, generated: &[u32]) -> Result<Vec<f32>, CloudError> {
        self.decoder.next_log_probs(self.x, generated)
    }
}
