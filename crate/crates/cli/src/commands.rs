use std::fs;
use std::io::Write;
use std::path::Path;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::time::Duration;

use esrt_core::audio::{compute_mel, decode_wav, pad_to_window, MelSpectrogram};
use esrt_core::bench::{
    bandwidth_report, reconstruct_probe, synthetic_pairs, CorpusStats, ProbeConfig, SizeUnit,
};
use esrt_core::cache::FeatureCache;
use esrt_core::cloud::{CloudServer, CloudService, EdgeClient, TcpTransport, Vocabulary};
use esrt_core::config::{GlobalConfig, CONFIG_ENV};
use esrt_core::curriculum::{
    pretrain_decoder, read_manifest, text_corpus, write_synthetic_manifest, CurriculumStage, Optimizer,
    PretrainOptions, StageId, TrainOptions, Trainer,
};
use esrt_core::edge::{CompressedFeatures, EdgePipeline, EncoderConfig, QFormerConfig};
use esrt_core::weights::Checkpoint;
use esrt_core::wire::{encode_envelope, features_envelope, DType};

use crate::error::CliError;
use crate::{BenchArgs, Cli, Command, GlobalArgs, OptimizerArg, ProbeArgs, TrainArgs, UnitArg};

const CLIENT_TIMEOUT: Duration = Duration::from_secs(120);

pub fn run(cli: Cli) -> Result<(), CliError> {
    let g = &cli.global;
    match cli.command {
        Command::EdgeEncode { wav, out } => edge_encode(g, &wav, &out),
        Command::Serve => serve(g),
        Command::Translate { wav } => translate(g, &wav),
        Command::Train(args) => train(g, &args),
        Command::Bench(args) => bench(g, &args),
        Command::Probe(args) => probe(g, &args),
    }
}

/// Config file (flag, then env), then flag overrides, then validation.
pub fn load_config(g: &GlobalArgs) -> Result<GlobalConfig, CliError> {
    let env = std::env::var(CONFIG_ENV).ok();
    let mut cfg = GlobalConfig::resolve(g.config.as_deref(), env.as_deref())?;
    if let Some(seed) = g.seed {
        cfg.seed = seed;
    }
    if let Some(host) = &g.host {
        cfg.host = host.clone();
    }
    if let Some(port) = g.port {
        cfg.port = port;
    }
    if let Some(beam) = g.beam {
        cfg.beam = beam;
    }
    if let Some(k) = g.tokens() {
        cfg.qformer.k_queries = k;
    }
    if let Some(dir) = &g.cache_dir {
        cfg.cache.dir = Some(dir.clone());
    }
    cfg.validate()?;
    Ok(cfg)
}

fn load_checkpoint(cfg: &GlobalConfig) -> Result<Checkpoint, CliError> {
    match &cfg.weights {
        Some(path) => {
            let ck = Checkpoint::load(path)?;
            ck.check_dims(&cfg.encoder, &cfg.qformer, &cfg.cloud)?;
            Ok(ck)
        }
        None => Ok(Checkpoint::init(cfg.encoder, cfg.qformer, cfg.cloud, cfg.seed)?),
    }
}

/// Source code and target codes, checked against the vocabulary.
fn languages(g: &GlobalArgs, vocab: &Vocabulary) -> Result<(String, Vec<String>), CliError> {
    let src = g.src.clone().unwrap_or_else(|| "eng".into());
    let targets = g.langs.clone().unwrap_or_else(|| vec!["deu".into()]);
    if targets.is_empty() {
        return Err(CliError::Usage("--langs needs at least one code".into()));
    }
    for code in std::iter::once(&src).chain(&targets) {
        vocab.language_id(code)?;
    }
    Ok((src, targets))
}

fn read(path: &Path) -> Result<Vec<u8>, CliError> {
    fs::read(path).map_err(|e| CliError::io(path, e))
}

fn edge_encode(g: &GlobalArgs, wav: &Path, out: &Path) -> Result<(), CliError> {
    let cfg = load_config(g)?;
    let vocab = Vocabulary::expanded();
    let (src, targets) = languages(g, &vocab)?;
    let prompt = [vocab.language_id(&src)?, vocab.language_id(&targets[0])?];
    let bytes = read(wav)?;
    let ck = load_checkpoint(&cfg)?;
    let z = ck.edge.encode_wav(&bytes)?;
    let frame = encode_envelope(&features_envelope(&z, &prompt, DType::Bf16)?)?;
    fs::write(out, &frame).map_err(|e| CliError::io(out, e))?;
    println!("{} bytes, key {}, {}x{} features -> {}", frame.len(), z.cache_key(), z.k(), z.d_q(), out.display());
    Ok(())
}

fn serve(g: &GlobalArgs) -> Result<(), CliError> {
    let cfg = load_config(g)?;
    let ck = load_checkpoint(&cfg)?;
    let cache = FeatureCache::open(&cfg.cache)?;
    if !cache.is_empty() {
        log::info!("restored {} cached entries", cache.len());
    }
    let service = Arc::new(CloudService::new(ck.cloud, cache, cfg.decode_mode()));
    let server = CloudServer::bind(&cfg.addr(), service)?;
    let stop = Arc::new(AtomicBool::new(false));
    let flag = Arc::clone(&stop);
    ctrlc::set_handler(move || flag.store(true, Ordering::SeqCst))?;
    println!("listening on {}", server.local_addr()?);
    let _ = std::io::stdout().flush();
    server.run(&stop)?;
    println!("stopped, cache flushed");
    Ok(())
}

fn translate(g: &GlobalArgs, wav: &Path) -> Result<(), CliError> {
    let cfg = load_config(g)?;
    let vocab = Vocabulary::expanded();
    let (src, targets) = languages(g, &vocab)?;
    let bytes = read(wav)?;
    let ck = load_checkpoint(&cfg)?;
    let z = ck.edge.encode_wav(&bytes)?;
    let mut client = EdgeClient::new(TcpTransport::connect(&cfg.addr(), CLIENT_TIMEOUT)?);
    let codes: Vec<&str> = targets.iter().map(String::as_str).collect();
    let outputs = client.translate(&z, &vocab, &src, &codes)?;
    for (code, out) in codes.iter().zip(&outputs) {
        println!("{code}\ttranscript={:?}\ttranslation={:?}", out.transcript, out.translation);
    }
    let t = client.traffic();
    println!(
        "traffic\tframes_sent={} feature_frames={} feature_payload_bytes={} cache_ref_frames={} renegotiations={} bytes_sent={} bytes_received={}",
        t.frames_sent,
        t.feature_frames,
        t.feature_payload_bytes,
        t.cache_ref_frames,
        t.renegotiations,
        t.bytes_sent,
        t.bytes_received
    );
    Ok(())
}

fn train(g: &GlobalArgs, args: &TrainArgs) -> Result<(), CliError> {
    let cfg = load_config(g)?;
    let stage_id: StageId = args.stage.parse().map_err(|e: esrt_core::curriculum::CurriculumError| CliError::Usage(e.to_string()))?;
    let stage = CurriculumStage::standard(stage_id);
    if args.steps == 0 {
        return Ok(());
    }

    let scratch;
    let examples = match &args.manifest {
        Some(path) => read_manifest(path)?,
        None => {
            let dir = match &args.data_dir {
                Some(d) => d.clone(),
                None => {
                    scratch = tempfile::tempdir().map_err(|e| CliError::io(std::env::temp_dir(), e))?;
                    scratch.path().to_path_buf()
                }
            };
            write_synthetic_manifest(&dir, args.synthetic, cfg.seed)?;
            read_manifest(&dir.join("manifest.jsonl"))?
        }
    };

    let mut ck = load_checkpoint(&cfg)?;
    let pretrain_steps = args
        .pretrain_steps
        .unwrap_or(if cfg.weights.is_none() { PretrainOptions::default().steps } else { 0 });
    if pretrain_steps > 0 {
        let opts = PretrainOptions {
            steps: pretrain_steps,
            seed: cfg.seed,
            ..Default::default()
        };
        let vocab = ck.cloud.vocab.clone();
        pretrain_decoder(&mut ck.cloud.decoder, &vocab, &text_corpus(), &opts)?;
    }

    let seed = ck.seed;
    let mut trainer = Trainer::new(ck.edge, ck.cloud);
    trainer.load_examples(&examples)?;
    let opts = TrainOptions {
        lr: args.lr,
        optimizer: match args.optimizer {
            OptimizerArg::Adam => Optimizer::Adam,
            OptimizerArg::Sgd => Optimizer::Sgd,
        },
        seed: cfg.seed,
        ..Default::default()
    };
    let metrics = trainer.train_stage(&stage, args.steps, &opts)?;
    for record in &metrics.records {
        println!("{}", serde_json::to_string(record).expect("metric serializes"));
    }
    for (task, acc) in &metrics.accuracy {
        eprintln!("stage {stage_id} {task} token accuracy {acc:.4}");
    }

    if let Some(out) = &args.out {
        let (edge, cloud) = trainer.into_parts();
        Checkpoint { seed, edge, cloud }.save(out)?;
        eprintln!("weights written to {}", out.display());
    }
    Ok(())
}

fn bench(g: &GlobalArgs, args: &BenchArgs) -> Result<(), CliError> {
    let tokens = g.tokens().unwrap_or(80) as u64;
    let n_languages = g.langs.as_ref().map_or(1, Vec::len) as u64;
    let unit = match args.units {
        UnitArg::Binary => SizeUnit::Binary,
        UnitArg::Decimal => SizeUnit::Decimal,
    };
    let stats = CorpusStats::from_mb(args.clips, args.audio_mb, unit, tokens, args.d_q)?;
    let r = bandwidth_report(&stats, n_languages, args.link_mbps, unit)?;
    let rows: Vec<(&str, String)> = vec![
        ("units", unit.label().to_string()),
        ("clips", args.clips.to_string()),
        ("tokens", tokens.to_string()),
        ("d_q", args.d_q.to_string()),
        ("languages", n_languages.to_string()),
        ("link_mbps", format!("{}", args.link_mbps)),
        ("audio_mb", format!("{:.2}", r.mb(r.audio_bytes))),
        ("audio_b64_mb", format!("{:.2}", r.mb(r.audio_b64_bytes))),
        ("tensor_mb", format!("{:.2}", r.mb(r.tensor_bytes))),
        ("tensor_frames_mb", format!("{:.2}", r.mb(r.tensor_frame_bytes))),
        ("tensor_b64_mb", format!("{:.2}", r.mb(r.tensor_b64_bytes))),
        ("audio_time_s", format!("{:.2}", r.audio_time_s)),
        ("tensor_time_s", format!("{:.2}", r.tensor_time_s)),
        ("compression", format!("{:.2}x", r.compression_ratio)),
        ("audio_total_mb", format!("{:.2}", r.mb(r.audio_total_bytes))),
        ("tensor_total_mb", format!("{:.2}", r.mb(r.tensor_total_bytes))),
        ("cache_ref_mb", format!("{:.4}", r.mb(r.cache_ref_bytes))),
    ];
    for (k, v) in rows {
        println!("{k:<18}{v}");
    }
    Ok(())
}

fn parse_pairs(spec: &str) -> Result<PairSource<'_>, CliError> {
    match spec.split_once(':') {
        Some(("synthetic", n)) => Ok(PairSource::Synthetic(n.parse()?)),
        Some(("manifest", path)) if !path.is_empty() => Ok(PairSource::Manifest(Path::new(path))),
        _ => Err(CliError::Usage(format!(
            "--pairs expects synthetic:N or manifest:PATH, got {spec:?}"
        ))),
    }
}

enum PairSource<'a> {
    Synthetic(usize),
    Manifest(&'a Path),
}

fn manifest_pairs(path: &Path, pipeline: &EdgePipeline) -> Result<Vec<(CompressedFeatures, MelSpectrogram)>, CliError> {
    let mut pairs = Vec::new();
    for ex in read_manifest(path)? {
        let bytes = read(Path::new(&ex.audio_path))?;
        let clip = decode_wav(&bytes).map_err(esrt_core::edge::EdgeError::from)?;
        let mel = compute_mel(&pad_to_window(&clip)).map_err(esrt_core::edge::EdgeError::from)?;
        pairs.push((pipeline.encode_clip(&clip)?, mel));
    }
    Ok(pairs)
}

fn probe(g: &GlobalArgs, args: &ProbeArgs) -> Result<(), CliError> {
    let source = parse_pairs(&args.pairs)?;
    let cfg = load_config(g)?;
    let pipeline = if args.full_size {
        let k = g.tokens().unwrap_or(40);
        EdgePipeline::init(EncoderConfig::full_size(), QFormerConfig::full_size(k), cfg.seed)?
    } else {
        load_checkpoint(&cfg)?.edge
    };
    let pairs = match source {
        PairSource::Synthetic(n) => synthetic_pairs(n, &pipeline, cfg.seed)?,
        PairSource::Manifest(path) => manifest_pairs(path, &pipeline)?,
    };
    let mut probe_cfg = ProbeConfig::default();
    if let Some(e) = args.epochs {
        probe_cfg.epochs = e;
    }
    if let Some(h) = args.hidden {
        probe_cfg.hidden = h;
    }
    let report = reconstruct_probe(&pairs, &probe_cfg, cfg.seed)?;
    for (k, v) in report.to_records() {
        println!("{k:<20}{v}");
    }
    Ok(())
}
