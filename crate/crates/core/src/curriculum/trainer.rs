use std::collections::BTreeMap;
use std::path::Path;

use esrt_nn::{Adam, ParamRng, Params, Tensor};

use super::{build_prompt, sample_task, CurriculumError, CurriculumStage, TaskKind, TrainingExample};
use crate::audio::decode_wav;
use crate::cloud::{cross_entropy, CloudModel, Mlp, ToyDecoder};
use crate::edge::{AcousticEncoder, EdgePipeline, QFormer, ToyEncoder};

/// How stage weights enter the objective.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WeightingMode {
    /// One task per step, drawn with the stage weights.
    Sampling,
    /// Every stage task each step, losses mixed by weight.
    Mixing,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Optimizer {
    Sgd,
    Adam,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainOptions {
    pub lr: f32,
    pub optimizer: Optimizer,
    pub seed: u64,
    pub mode: WeightingMode,
    pub lora_rank: usize,
    pub lora_alpha: f32,
}

impl Default for TrainOptions {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            optimizer: Optimizer::Adam,
            seed: 0,
            mode: WeightingMode::Sampling,
            lora_rank: 16,
            lora_alpha: 32.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct MetricRecord {
    pub step: usize,
    pub task: TaskKind,
    pub loss: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StageMetrics {
    pub records: Vec<MetricRecord>,
    /// Teacher-forced next-token accuracy per stage task after training.
    pub accuracy: BTreeMap<TaskKind, f64>,
}

impl StageMetrics {
    pub fn loss_curve(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.loss).collect()
    }
}

struct Prepared {
    example: TrainingExample,
    h: Tensor,
}

struct Grads {
    qformer: QFormer,
    mlp: Mlp,
    decoder: ToyDecoder,
}

/// Frozen encoder, trainable speech adapter (Q-Former + MLP), frozen decoder
/// except for LoRA adapters in the last stage.
pub struct Trainer {
    pub encoder: ToyEncoder,
    pub qformer: QFormer,
    pub cloud: CloudModel,
    data: Vec<Prepared>,
    adam: Option<AdamState>,
}

struct AdamState {
    qformer: Adam,
    mlp: Adam,
    lora: Adam,
}

impl Trainer {
    pub fn new(edge: EdgePipeline, cloud: CloudModel) -> Self {
        let (encoder, qformer) = edge.into_parts();
        Self {
            encoder,
            qformer,
            cloud,
            data: Vec::new(),
            adam: None,
        }
    }

    pub fn into_parts(self) -> (EdgePipeline, CloudModel) {
        let edge = EdgePipeline::new(self.encoder, self.qformer).expect("dimensions unchanged");
        (edge, self.cloud)
    }

    /// Decodes every clip and runs the frozen encoder once.
    pub fn load_examples(&mut self, examples: &[TrainingExample]) -> Result<(), CurriculumError> {
        if examples.is_empty() {
            return Err(CurriculumError::EmptyManifest);
        }
        let mut data = Vec::with_capacity(examples.len());
        for ex in examples {
            for code in [&ex.src, &ex.tgt] {
                self.cloud.vocab.language_id(code)?;
            }
            let bytes = std::fs::read(Path::new(&ex.audio_path))?;
            let clip = decode_wav(&bytes).map_err(crate::edge::EdgeError::from)?;
            let mel = crate::audio::compute_mel(&crate::audio::pad_to_window(&clip))
                .map_err(crate::edge::EdgeError::from)?;
            let h = self.encoder.encode(&mel)?.h;
            data.push(Prepared {
                example: ex.clone(),
                h,
            });
        }
        self.data = data;
        Ok(())
    }

    pub fn num_examples(&self) -> usize {
        self.data.len()
    }

    /// Loss and parameter gradients for one example and task.
    fn loss_and_grads(&self, idx: usize, task: TaskKind) -> Result<(f64, Grads), CurriculumError> {
        let item = &self.data[idx];
        let (z, qcache) = self.qformer.forward_cached(&item.h)?;
        let (zm, mcache) = self.cloud.mlp.project_cached(&z)?;
        let (tokens, targets) = self.sequence(task, &item.example, zm.rows())?;
        let (logits, dcache) = self.cloud.decoder.forward_cached(&zm, &tokens)?;
        let (loss, dlogits) = cross_entropy(&logits, &targets);
        let (dzm, g_dec) = self.cloud.decoder.backward(&dlogits, &dcache)?;
        let (dz, g_mlp) = self.cloud.mlp.backward(&dzm, &mcache)?;
        let g_q = self.qformer.backward(&dz, &qcache)?;
        Ok((
            loss,
            Grads {
                qformer: g_q,
                mlp: g_mlp,
                decoder: g_dec,
            },
        ))
    }

    /// Decoder input ids and `(logit row, target id)` pairs. The target
    /// gets the end token appended; prompt positions carry no loss.
    fn sequence(
        &self,
        task: TaskKind,
        ex: &TrainingExample,
        k: usize,
    ) -> Result<(Vec<u32>, Vec<(usize, u32)>), CurriculumError> {
        let vocab = &self.cloud.vocab;
        let (input, mut target) = build_prompt(task, ex, vocab)?;
        target.push(crate::cloud::vocab::EOS_ID);
        let first = k + input.len() - 1;
        let pairs = target.iter().enumerate().map(|(j, &t)| (first + j, t)).collect();
        let mut tokens = input;
        tokens.extend_from_slice(&target[..target.len() - 1]);
        Ok((tokens, pairs))
    }

    /// Drops optimizer moments; the next Adam step starts fresh.
    pub fn reset_optimizer(&mut self) {
        self.adam = None;
    }

    fn apply(&mut self, g: &Grads, opts: &TrainOptions, lora: bool) {
        let lr = opts.lr;
        match opts.optimizer {
            Optimizer::Sgd => {
                self.qformer.sgd_step(&g.qformer, lr);
                self.cloud.mlp.sgd_step(&g.mlp, lr);
                if lora {
                    self.cloud.decoder.lora_sgd_step(&g.decoder, lr);
                }
            }
            Optimizer::Adam => {
                let st = self.adam.get_or_insert_with(|| AdamState {
                    qformer: Adam::new(lr),
                    mlp: Adam::new(lr),
                    lora: Adam::new(lr),
                });
                for a in [&mut st.qformer, &mut st.mlp, &mut st.lora] {
                    a.lr = lr;
                }
                st.qformer.step(&mut self.qformer, &g.qformer);
                st.mlp.step(&mut self.cloud.mlp, &g.mlp);
                if lora {
                    st.lora
                        .step_tensors(self.cloud.decoder.lora_params_mut(), g.decoder.lora_params());
                }
            }
        }
    }

    /// Runs `steps` updates of the given stage. Deterministic in `opts.seed`.
    pub fn train_stage(
        &mut self,
        stage: &CurriculumStage,
        steps: usize,
        opts: &TrainOptions,
    ) -> Result<StageMetrics, CurriculumError> {
        if self.data.is_empty() {
            return Err(CurriculumError::EmptyManifest);
        }
        let lora = stage.trains_lora();
        if lora && !self.cloud.decoder.has_lora() {
            self.cloud
                .decoder
                .attach_lora(opts.lora_rank, opts.lora_alpha, opts.seed)?;
        }
        let mut rng = ParamRng::for_component(opts.seed, &format!("trainer-{}", stage.stage_id));
        let mut records = Vec::new();
        for step in 0..steps {
            let idx = rng.below(self.data.len());
            match opts.mode {
                WeightingMode::Sampling => {
                    let task = sample_task(stage, &mut rng);
                    let (loss, g) = self.loss_and_grads(idx, task)?;
                    check(step, task, loss)?;
                    records.push(MetricRecord { step, task, loss });
                    self.apply(&g, opts, lora);
                }
                WeightingMode::Mixing => {
                    let mut total: Option<Grads> = None;
                    for (task, w) in stage.tasks() {
                        let (loss, mut g) = self.loss_and_grads(idx, task)?;
                        check(step, task, loss)?;
                        records.push(MetricRecord { step, task, loss });
                        g.qformer.scale_all(w as f32);
                        g.mlp.scale_all(w as f32);
                        g.decoder.scale_all(w as f32);
                        match &mut total {
                            None => total = Some(g),
                            Some(t) => {
                                t.qformer.accumulate(&g.qformer);
                                t.mlp.accumulate(&g.mlp);
                                t.decoder.accumulate(&g.decoder);
                            }
                        }
                    }
                    if let Some(g) = total {
                        self.apply(&g, opts, lora);
                    }
                }
            }
            if step % 200 == 0 {
                log::debug!("stage {} step {step}: loss {:.4}", stage.stage_id, records.last().map_or(0.0, |r| r.loss));
            }
        }
        let mut accuracy = BTreeMap::new();
        for (task, _) in stage.tasks() {
            accuracy.insert(task, self.token_accuracy(task)?);
        }
        Ok(StageMetrics { records, accuracy })
    }

    /// Fraction of target tokens (end token included) whose teacher-forced
    /// argmax is correct, over all loaded examples.
    pub fn token_accuracy(&self, task: TaskKind) -> Result<f64, CurriculumError> {
        let (mut hit, mut total) = (0usize, 0usize);
        for item in &self.data {
            let (z, _) = self.qformer.forward_cached(&item.h)?;
            let (zm, _) = self.cloud.mlp.project_cached(&z)?;
            let (tokens, targets) = self.sequence(task, &item.example, zm.rows())?;
            let logits = self.cloud.decoder.logits(&zm, &tokens)?;
            for (row, tok) in targets {
                let r = logits.row(row);
                let arg = (0..r.len()).fold(0, |b, i| if r[i] > r[b] { i } else { b });
                hit += (arg as u32 == tok) as usize;
                total += 1;
            }
        }
        Ok(hit as f64 / total.max(1) as f64)
    }

    /// Mean loss of one task over all examples, without updating.
    pub fn mean_loss(&self, task: TaskKind) -> Result<f64, CurriculumError> {
        let mut sum = 0.0;
        for i in 0..self.data.len() {
            sum += self.loss_and_grads(i, task)?.0;
        }
        Ok(sum / self.data.len().max(1) as f64)
    }
}

fn check(step: usize, task: TaskKind, loss: f64) -> Result<(), CurriculumError> {
    if !loss.is_finite() {
        return Err(CurriculumError::Diverged { step, task, loss });
    }
    Ok(())
}
