//! Text-only pretraining for the toy decoder so it arrives at the curriculum
//! with a language prior, the way a pretrained LLM would.

use esrt_nn::{Adam, ParamRng, Tensor};

use super::manifest::SYNTHETIC_WORDS;
use super::{build_prompt, CurriculumError, TaskKind, TrainingExample};
use crate::cloud::vocab::EOS_ID;
use crate::cloud::{cross_entropy, ToyDecoder, Vocabulary};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PretrainOptions {
    pub steps: usize,
    pub lr: f32,
    pub seed: u64,
    /// Probability that the transcript text is placed before the prompt.
    pub context_prob: f64,
}

impl Default for PretrainOptions {
    fn default() -> Self {
        Self {
            steps: 3000,
            lr: 3e-3,
            seed: 0,
            context_prob: 0.5,
        }
    }
}

/// Every two-word sentence over [`SYNTHETIC_WORDS`], as eng/deu examples
/// without audio.
pub fn text_corpus() -> Vec<TrainingExample> {
    let mut out = Vec::new();
    for a in SYNTHETIC_WORDS {
        for b in SYNTHETIC_WORDS {
            out.push(TrainingExample {
                audio_path: String::new(),
                transcript: format!("{} {}", a.0, b.0),
                translation: format!("{} {}", a.1, b.1),
                src: "eng".into(),
                tgt: "deu".into(),
            });
        }
    }
    out
}

/// Tokens and `(row, target)` pairs for one text example. With `context`,
/// the transcript bytes and a separator precede the task prompt.
pub fn text_sequence(
    task: TaskKind,
    ex: &TrainingExample,
    vocab: &Vocabulary,
    context: bool,
) -> Result<(Vec<u32>, Vec<(usize, u32)>), CurriculumError> {
    let (input, mut target) = build_prompt(task, ex, vocab)?;
    target.push(EOS_ID);
    let mut tokens = Vec::new();
    if context {
        tokens.extend(vocab.encode_text(&ex.transcript));
        tokens.push(EOS_ID);
    }
    tokens.extend(&input);
    let first = tokens.len() - 1;
    let pairs = target.iter().enumerate().map(|(j, &t)| (first + j, t)).collect();
    tokens.extend_from_slice(&target[..target.len() - 1]);
    Ok((tokens, pairs))
}

/// Trains every decoder weight on `corpus`; returns the per-step losses.
pub fn pretrain_decoder(
    decoder: &mut ToyDecoder,
    vocab: &Vocabulary,
    corpus: &[TrainingExample],
    opts: &PretrainOptions,
) -> Result<Vec<f64>, CurriculumError> {
    if corpus.is_empty() {
        return Err(CurriculumError::EmptyManifest);
    }
    let mut rng = ParamRng::for_component(opts.seed, "decoder-pretrain");
    let mut adam = Adam::new(opts.lr);
    let empty = Tensor::zeros(&[0, decoder.d_model()]);
    let mut losses = Vec::with_capacity(opts.steps);
    for step in 0..opts.steps {
        let ex = &corpus[rng.below(corpus.len())];
        let task = TaskKind::ALL[rng.below(TaskKind::ALL.len())];
        let context = rng.next_f64() < opts.context_prob;
        let (tokens, targets) = text_sequence(task, ex, vocab, context)?;
        let (logits, cache) = decoder.forward_cached(&empty, &tokens)?;
        let (loss, dlogits) = cross_entropy(&logits, &targets);
        if !loss.is_finite() {
            return Err(CurriculumError::Diverged { step, task, loss });
        }
        let (_, grads) = decoder.backward(&dlogits, &cache)?;
        adam.step(decoder, &grads);
        losses.push(loss);
    }
    Ok(losses)
}
