//! Three-stage multi-task curriculum: prompts, task sampling, weighted loss
//! and the toy training loop.

mod manifest;
mod pretrain;
mod trainer;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use esrt_nn::{AdaptedLinear, LinearLayer, LoraAdapter, NnError, ParamRng, Tensor};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cloud::{CloudError, Vocabulary};
use crate::edge::EdgeError;

pub use pretrain::{pretrain_decoder, text_corpus, text_sequence, PretrainOptions};
pub use manifest::{
    read_manifest, synthesize_clip, synthetic_corpus, write_manifest, write_synthetic_manifest,
    SyntheticPair, SYNTHETIC_WORDS,
};
pub use trainer::{
    MetricRecord, Optimizer, StageMetrics, TrainOptions, Trainer, WeightingMode,
};

#[derive(Debug, Error)]
pub enum CurriculumError {
    #[error("manifest is empty")]
    EmptyManifest,
    #[error("training diverged at step {step} on {task}: loss {loss}")]
    Diverged { step: usize, task: TaskKind, loss: f64 },
    #[error("non-finite loss for {0}")]
    NonFiniteLoss(TaskKind),
    #[error("{task} is not part of stage {stage}")]
    TaskNotInStage { task: TaskKind, stage: StageId },
    #[error("manifest line {line}: {reason}")]
    Manifest { line: usize, reason: String },
    #[error("invalid stage: {0}")]
    Stage(String),
    #[error(transparent)]
    Cloud(#[from] CloudError),
    #[error(transparent)]
    Edge(#[from] EdgeError),
    #[error(transparent)]
    Numerics(#[from] NnError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum TaskKind {
    Asr,
    Smt,
    Srt,
}

impl TaskKind {
    pub const ALL: [TaskKind; 3] = [TaskKind::Asr, TaskKind::Smt, TaskKind::Srt];
}

impl fmt::Display for TaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TaskKind::Asr => "ASR",
            TaskKind::Smt => "SMT",
            TaskKind::Srt => "SRT",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum StageId {
    I,
    II,
    III,
}

impl fmt::Display for StageId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            StageId::I => "I",
            StageId::II => "II",
            StageId::III => "III",
        })
    }
}

impl FromStr for StageId {
    type Err = CurriculumError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_uppercase().as_str() {
            "I" | "1" => Ok(StageId::I),
            "II" | "2" => Ok(StageId::II),
            "III" | "3" => Ok(StageId::III),
            other => Err(CurriculumError::Stage(format!("unknown stage {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CurriculumStage {
    pub stage_id: StageId,
    task_weights: BTreeMap<TaskKind, f64>,
}

impl CurriculumStage {
    pub fn new(stage_id: StageId, weights: &[(TaskKind, f64)]) -> Result<Self, CurriculumError> {
        let mut task_weights = BTreeMap::new();
        for &(t, w) in weights {
            if !(w.is_finite() && w > 0.0) {
                return Err(CurriculumError::Stage(format!("weight {w} for {t} must be positive")));
            }
            if task_weights.insert(t, w).is_some() {
                return Err(CurriculumError::Stage(format!("{t} listed twice")));
            }
        }
        let sum: f64 = task_weights.values().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(CurriculumError::Stage(format!("weights sum to {sum}, not 1")));
        }
        Ok(Self {
            stage_id,
            task_weights,
        })
    }

    pub fn standard(stage_id: StageId) -> Self {
        use TaskKind::*;
        let weights: &[(TaskKind, f64)] = match stage_id {
            StageId::I => &[(Asr, 1.0)],
            StageId::II => &[(Asr, 0.2), (Smt, 0.4), (Srt, 0.4)],
            StageId::III => &[(Asr, 0.2), (Srt, 0.8)],
        };
        Self::new(stage_id, weights).expect("standard weights are valid")
    }

    pub fn weight(&self, task: TaskKind) -> f64 {
        self.task_weights.get(&task).copied().unwrap_or(0.0)
    }

    pub fn tasks(&self) -> impl Iterator<Item = (TaskKind, f64)> + '_ {
        self.task_weights.iter().map(|(&t, &w)| (t, w))
    }

    /// Decoder LoRA adapters train only in the last stage.
    pub fn trains_lora(&self) -> bool {
        self.stage_id == StageId::III
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainingExample {
    pub audio_path: String,
    pub transcript: String,
    pub translation: String,
    pub src: String,
    pub tgt: String,
}

/// `(input ids, target ids)` per task; targets exclude the end token.
pub fn build_prompt(
    task: TaskKind,
    ex: &TrainingExample,
    vocab: &Vocabulary,
) -> Result<(Vec<u32>, Vec<u32>), CurriculumError> {
    let src = vocab.language_id(&ex.src)?;
    let tgt = vocab.language_id(&ex.tgt)?;
    Ok(match task {
        TaskKind::Asr => (vec![src], vocab.encode_text(&ex.transcript)),
        TaskKind::Smt => {
            let mut input = vocab.encode_text(&ex.transcript);
            input.extend([src, tgt]);
            (input, vocab.encode_text(&ex.translation))
        }
        TaskKind::Srt => (
            vec![src, tgt],
            crate::cloud::srt_tokens(vocab, &ex.transcript, src, tgt, &ex.translation),
        ),
    })
}

/// Categorical draw with the stage weights.
pub fn sample_task(stage: &CurriculumStage, rng: &mut ParamRng) -> TaskKind {
    let u = rng.next_f64();
    let mut acc = 0.0;
    let mut last = TaskKind::Asr;
    for (t, w) in stage.tasks() {
        acc += w;
        last = t;
        if u < acc {
            return t;
        }
    }
    last
}

/// `Σ w_t · L_t` over the supplied tasks.
pub fn weighted_loss(
    per_task: &BTreeMap<TaskKind, f64>,
    stage: &CurriculumStage,
) -> Result<f64, CurriculumError> {
    let mut total = 0.0;
    for (&task, &loss) in per_task {
        if !loss.is_finite() {
            return Err(CurriculumError::NonFiniteLoss(task));
        }
        let w = stage.weight(task);
        if w == 0.0 {
            return Err(CurriculumError::TaskNotInStage {
                task,
                stage: stage.stage_id,
            });
        }
        total += w * loss;
    }
    Ok(total)
}

/// Gradient of [`weighted_loss`]: the weight-scaled sum of task gradients.
pub fn weighted_gradient(
    per_task: &BTreeMap<TaskKind, Tensor>,
    stage: &CurriculumStage,
) -> Result<Tensor, CurriculumError> {
    let mut out: Option<Tensor> = None;
    for (&task, g) in per_task {
        let w = stage.weight(task);
        if w == 0.0 {
            return Err(CurriculumError::TaskNotInStage {
                task,
                stage: stage.stage_id,
            });
        }
        match &mut out {
            None => out = Some(g.scale(w as f32)),
            Some(acc) => acc.axpy(w as f32, g)?,
        }
    }
    out.ok_or_else(|| CurriculumError::Stage("no task gradients".into()))
}

/// Wraps a frozen linear layer with an adapter; forward is
/// `base + (alpha/r)·x·a·b`.
pub fn apply_lora(layer: &LinearLayer, adapter: LoraAdapter) -> Result<AdaptedLinear, CurriculumError> {
    Ok(AdaptedLinear::with_adapter(layer.clone(), adapter)?)
}
