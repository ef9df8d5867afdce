use esrt_core::cloud::{cross_entropy, CloudConfig, CloudModel};
use esrt_core::curriculum::{
    pretrain_decoder, read_manifest, sample_task, text_corpus, weighted_gradient, weighted_loss,
    write_synthetic_manifest, CurriculumError,
    CurriculumStage, Optimizer, PretrainOptions, StageId, TaskKind, TrainOptions, Trainer,
    WeightingMode,
};
use esrt_core::edge::{EdgePipeline, EncoderConfig, QFormerConfig};
use esrt_nn::{Params, Tensor};

fn trainer(dir: &std::path::Path, n: usize, pretrain_steps: usize) -> Trainer {
    write_synthetic_manifest(dir, n, 11).unwrap();
    let examples = read_manifest(&dir.join("manifest.jsonl")).unwrap();
    let q = QFormerConfig::default();
    let edge = EdgePipeline::init(EncoderConfig::default(), q, 5).unwrap();
    let mut cloud = CloudModel::init(CloudConfig::default(), q.d_q, 5).unwrap();
    if pretrain_steps > 0 {
        let vocab = cloud.vocab.clone();
        let opts = PretrainOptions {
            steps: pretrain_steps,
            ..Default::default()
        };
        pretrain_decoder(&mut cloud.decoder, &vocab, &text_corpus(), &opts).unwrap();
    }
    let mut t = Trainer::new(edge, cloud);
    t.load_examples(&examples).unwrap();
    t
}

fn snapshot(ts: Vec<&Tensor>) -> Vec<Tensor> {
    ts.into_iter().cloned().collect()
}

#[test]
fn stage_one_overfits_synthetic_corpus() {
    let dir = tempfile::tempdir().unwrap();
    let mut t = trainer(dir.path(), 32, 3000);
    let stage = CurriculumStage::standard(StageId::I);
    let m = t.train_stage(&stage, 2000, &TrainOptions::default()).unwrap();
    let acc = m.accuracy[&TaskKind::Asr];
    assert!(acc >= 0.95, "token accuracy {acc}");
    assert_eq!(m.records.len(), 2000);
    assert!(m.records.iter().all(|r| r.task == TaskKind::Asr));
}

#[test]
fn same_seed_same_loss_curve() {
    let dir = tempfile::tempdir().unwrap();
    let stage = CurriculumStage::standard(StageId::II);
    let opts = TrainOptions {
        seed: 9,
        ..Default::default()
    };
    let a = trainer(dir.path(), 4, 0).train_stage(&stage, 25, &opts).unwrap();
    let b = trainer(dir.path(), 4, 0).train_stage(&stage, 25, &opts).unwrap();
    assert_eq!(a.loss_curve(), b.loss_curve());
    let other = TrainOptions { seed: 10, ..opts };
    let c = trainer(dir.path(), 4, 0).train_stage(&stage, 25, &other).unwrap();
    assert_ne!(a.loss_curve(), c.loss_curve());
}

#[test]
fn frozen_modules_stay_frozen_across_stages() {
    let dir = tempfile::tempdir().unwrap();
    let mut t = trainer(dir.path(), 4, 0);
    let enc0 = snapshot(t.encoder.params());
    let dec0 = snapshot(t.cloud.decoder.base_params());
    let q0 = snapshot(t.qformer.params());
    let opts = TrainOptions::default();
    for id in [StageId::I, StageId::II] {
        t.train_stage(&CurriculumStage::standard(id), 10, &opts).unwrap();
        assert!(!t.cloud.decoder.has_lora());
    }
    t.train_stage(&CurriculumStage::standard(StageId::III), 10, &opts).unwrap();
    assert!(t.cloud.decoder.has_lora());
    assert_eq!(snapshot(t.encoder.params()), enc0);
    assert_eq!(snapshot(t.cloud.decoder.base_params()), dec0);
    assert_ne!(snapshot(t.qformer.params()), q0);
    assert!(t.cloud.decoder.lora_params().iter().any(|p| p.data().iter().any(|&v| v != 0.0)));
}

#[test]
fn sgd_and_mixing_modes_run() {
    let dir = tempfile::tempdir().unwrap();
    let mut t = trainer(dir.path(), 3, 0);
    let stage = CurriculumStage::standard(StageId::III);
    let opts = TrainOptions {
        optimizer: Optimizer::Sgd,
        lr: 0.01,
        mode: WeightingMode::Mixing,
        ..Default::default()
    };
    let m = t.train_stage(&stage, 5, &opts).unwrap();
    // Mixing records one loss per stage task per step.
    assert_eq!(m.records.len(), 10);
    assert!(m.records.iter().all(|r| r.loss.is_finite()));
    assert_eq!(m.accuracy.len(), 2);
}

#[test]
fn divergence_aborts_with_step() {
    let dir = tempfile::tempdir().unwrap();
    let mut t = trainer(dir.path(), 2, 0);
    let opts = TrainOptions {
        optimizer: Optimizer::Sgd,
        lr: 1e30,
        ..Default::default()
    };
    let err = t
        .train_stage(&CurriculumStage::standard(StageId::I), 50, &opts)
        .unwrap_err();
    assert!(matches!(err, CurriculumError::Diverged { .. }), "{err}");
}

#[test]
fn empty_trainer_and_unknown_language() {
    let q = QFormerConfig::default();
    let edge = EdgePipeline::init(EncoderConfig::default(), q, 1).unwrap();
    let cloud = CloudModel::init(CloudConfig::default(), q.d_q, 1).unwrap();
    let mut t = Trainer::new(edge, cloud);
    let stage = CurriculumStage::standard(StageId::I);
    assert!(matches!(
        t.train_stage(&stage, 1, &TrainOptions::default()),
        Err(CurriculumError::EmptyManifest)
    ));
    assert!(matches!(t.load_examples(&[]), Err(CurriculumError::EmptyManifest)));
    let mut ex = text_corpus().remove(0);
    ex.tgt = "zzz".into();
    assert!(matches!(t.load_examples(&[ex]), Err(CurriculumError::Cloud(_))));
}

#[test]
fn stage_two_sampler_frequencies() {
    let stage = CurriculumStage::standard(StageId::II);
    let mut rng = esrt_nn::ParamRng::new(12);
    let mut counts = std::collections::BTreeMap::new();
    let n = 100_000;
    for _ in 0..n {
        *counts.entry(sample_task(&stage, &mut rng)).or_insert(0usize) += 1;
    }
    for (task, want) in [(TaskKind::Asr, 0.2), (TaskKind::Smt, 0.4), (TaskKind::Srt, 0.4)] {
        let freq = counts[&task] as f64 / n as f64;
        assert!((freq - want).abs() <= 0.02, "{task}: {freq}");
    }
    let weights: f64 = [StageId::I, StageId::II, StageId::III]
        .iter()
        .map(|&id| CurriculumStage::standard(id).tasks().map(|(_, w)| w).sum::<f64>())
        .sum();
    assert_eq!(weights, 3.0);
}

#[test]
fn weighted_loss_gradient_matches_finite_differences() {
    // Two task heads share one parameter matrix; each task is a
    // cross-entropy over its own targets.
    let x = Tensor::from_fn(&[3, 6], |i| ((i * 37 % 11) as f32 - 5.0) * 0.2);
    let targets: [(TaskKind, Vec<(usize, u32)>); 2] = [
        (TaskKind::Asr, vec![(0, 1), (1, 4), (2, 0)]),
        (TaskKind::Srt, vec![(0, 5), (2, 2)]),
    ];
    let stage = CurriculumStage::standard(StageId::III);
    let objective = |p: &Tensor| {
        let losses = targets
            .iter()
            .map(|(t, tg)| (*t, cross_entropy(p, tg).0))
            .collect();
        weighted_loss(&losses, &stage).unwrap()
    };
    let grads = targets
        .iter()
        .map(|(t, tg)| (*t, cross_entropy(&x, tg).1))
        .collect();
    let g = weighted_gradient(&grads, &stage).unwrap();
    let err = esrt_nn::grad_check(objective, &x, &g, 1e-2).unwrap();
    assert!(err < 1e-4, "max abs error {err}");
}
