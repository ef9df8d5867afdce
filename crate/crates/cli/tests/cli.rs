use std::collections::HashMap;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};
use std::process::{Child, Command, Output, Stdio};
use std::time::Duration;

use esrt_core::audio::encode_wav;
use esrt_core::cache::FeatureCache;
use esrt_core::cloud::{CloudService, EdgeClient, InProcess, TcpTransport, Transport};
use esrt_core::config::GlobalConfig;
use esrt_core::weights::Checkpoint;
use esrt_core::wire::{decode_envelope, encode_envelope, features_envelope, reference_envelope, DType, MsgType};

fn esrt() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_esrt"));
    cmd.env_remove("ESRT_CONFIG");
    cmd
}

fn run(args: &[&str]) -> Output {
    esrt().args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

/// `d_q` 768 so a 40-token frame carries the full-size payload.
const CONFIG: &str = r#"
seed = 3
beam = 2

[qformer]
k_queries = 40
d_q = 768
layers = 1
heads = 2

[cloud]
max_new_tokens = 6
"#;

struct Fixture {
    dir: tempfile::TempDir,
}

impl Fixture {
    fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("esrt.toml"), CONFIG).unwrap();
        let tone: Vec<i16> = (0..16_000 * 30)
            .map(|i| (3000.0 * (i as f64 * 0.07).sin() + 500.0 * (i as f64 * 0.31).cos()) as i16)
            .collect();
        std::fs::write(dir.path().join("clip.wav"), encode_wav(&tone, 16_000, 1)).unwrap();
        std::fs::write(dir.path().join("stereo.wav"), encode_wav(&vec![0; 3200], 16_000, 2)).unwrap();
        Self { dir }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn arg(&self, name: &str) -> String {
        self.path(name).display().to_string()
    }

    fn config(&self) -> GlobalConfig {
        GlobalConfig::load(&self.path("esrt.toml")).unwrap()
    }
}

fn records(out: &str) -> HashMap<String, String> {
    out.lines()
        .filter_map(|l| l.split_once(char::is_whitespace))
        .map(|(k, v)| (k.to_string(), v.trim().to_string()))
        .collect()
}

fn within(got: f64, want: f64, tol: f64) -> bool {
    ((got - want) / want).abs() <= tol
}

#[test]
fn bench_reproduces_the_eighty_token_row() {
    let o = run(&["bench", "--clips", "647", "--audio-mb", "392", "--tokens", "80"]);
    assert!(o.status.success());
    let r = records(&stdout(&o));
    let num = |k: &str| r[k].trim_end_matches('x').parse::<f64>().unwrap();
    assert!(within(num("audio_b64_mb"), 521.0, 0.01));
    assert!(within(num("tensor_mb"), 77.0, 0.05));
    assert!(within(num("tensor_b64_mb"), 102.0, 0.05));
    assert!(within(num("audio_time_s"), 41.7, 0.02));
    assert!(within(num("tensor_time_s"), 8.2, 0.02));
    assert!(within(num("compression"), 5.1, 0.05));
}

#[test]
fn bench_scales_audio_with_languages() {
    let o = run(&["bench", "--clips", "647", "--audio-mb", "392", "--tokens", "40", "--langs", "deu,fra,spa"]);
    let r = records(&stdout(&o));
    let num = |k: &str| r[k].parse::<f64>().unwrap();
    assert_eq!(r["languages"], "3");
    assert!((num("audio_total_mb") - 3.0 * num("audio_b64_mb")).abs() < 0.02);
    assert_eq!(num("tensor_total_mb"), num("tensor_b64_mb"));
}

#[test]
fn train_with_zero_steps_prints_no_metrics() {
    let o = run(&["train", "--stage", "I", "--steps", "0"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(o.stdout.is_empty());
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(run(&["bench", "--clips", "1", "--audio-mb", "1", "--tokens", "50"]).status.code(), Some(1));
    assert_eq!(run(&["train", "--stage", "IV", "--steps", "1"]).status.code(), Some(1));
    assert_eq!(run(&["probe", "--pairs", "random:4"]).status.code(), Some(1));
    assert_eq!(run(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(run(&["--config", "/nonexistent/esrt.toml", "serve"]).status.code(), Some(1));
}

#[test]
fn edge_encode_writes_the_client_frame() {
    let fx = Fixture::new();
    let cfg = fx.arg("esrt.toml");
    let o = run(&["--config", &cfg, "edge-encode", &fx.arg("clip.wav"), &fx.arg("a.bin")]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let a = std::fs::read(fx.path("a.bin")).unwrap();
    assert_eq!(a.len(), 48 + 2 * 4 + 4 + 40 * 768 * 2);
    assert_eq!(a.len(), 61_500);

    // Config through the environment instead of the flag.
    let o = esrt()
        .env("ESRT_CONFIG", &cfg)
        .args(["edge-encode", &fx.arg("clip.wav"), &fx.arg("b.bin")])
        .output()
        .unwrap();
    assert!(o.status.success());
    assert_eq!(std::fs::read(fx.path("b.bin")).unwrap(), a);

    // Library path with the same config.
    let c = fx.config();
    let ck = Checkpoint::init(c.encoder, c.qformer, c.cloud, c.seed).unwrap();
    let z = ck.edge.encode_wav(&std::fs::read(fx.path("clip.wav")).unwrap()).unwrap();
    let prompt = [ck.cloud.vocab.language_id("eng").unwrap(), ck.cloud.vocab.language_id("deu").unwrap()];
    let lib = encode_envelope(&features_envelope(&z, &prompt, DType::Bf16).unwrap()).unwrap();
    assert_eq!(lib, a);
}

#[test]
fn seed_flag_changes_weights_deterministically() {
    let fx = Fixture::new();
    let cfg = fx.arg("esrt.toml");
    let encode = |seed: &str, out: &str| {
        let o = run(&["--config", &cfg, "--seed", seed, "edge-encode", &fx.arg("clip.wav"), &fx.arg(out)]);
        assert!(o.status.success());
        std::fs::read(fx.path(out)).unwrap()
    };
    let a = encode("11", "a.bin");
    assert_eq!(a, encode("11", "b.bin"));
    assert_ne!(a, encode("12", "c.bin"));
}

#[test]
fn stereo_wav_is_a_data_error() {
    let fx = Fixture::new();
    let o = run(&["edge-encode", &fx.arg("stereo.wav"), &fx.arg("out.bin")]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("unsupported audio format"));
    assert!(!fx.path("out.bin").exists());
}

#[test]
fn unknown_target_fails_before_connecting() {
    let fx = Fixture::new();
    // Nothing listens on this port; a send attempt would be a network error.
    let port = std::net::TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port().to_string();
    let o = run(&["--port", &port, "--langs", "deu,xx", "translate", &fx.arg("clip.wav")]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("unknown language"));
    let o = run(&["--port", &port, "translate", &fx.arg("clip.wav")]);
    assert_eq!(o.status.code(), Some(3));
}

struct Server {
    child: Child,
    addr: String,
}

impl Server {
    fn start(config: &str, cache_dir: &Path) -> Self {
        let mut child = esrt()
            .args(["--config", config, "--port", "0", "--cache-dir"])
            .arg(cache_dir)
            .arg("serve")
            .stdout(Stdio::piped())
            .spawn()
            .unwrap();
        let mut line = String::new();
        BufReader::new(child.stdout.as_mut().unwrap()).read_line(&mut line).unwrap();
        let addr = line.trim().strip_prefix("listening on ").expect("listen line").to_string();
        Self { child, addr }
    }

    fn port(&self) -> String {
        self.addr.rsplit(':').next().unwrap().to_string()
    }

    fn interrupt(self) -> String {
        let status = Command::new("kill")
            .args(["-INT", &self.child.id().to_string()])
            .status()
            .unwrap();
        assert!(status.success());
        let out = self.child.wait_with_output().unwrap();
        assert!(out.status.success(), "server exit {:?}", out.status);
        stdout(&out)
    }
}

#[test]
fn serve_translate_and_restart() {
    let fx = Fixture::new();
    let cfg = fx.arg("esrt.toml");
    let cache = fx.path("cache");
    let server = Server::start(&cfg, &cache);

    let o = run(&["--config", &cfg, "--port", &server.port(), "--langs", "deu,fra,cmn", "translate", &fx.arg("clip.wav")]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = stdout(&o);
    let traffic = text.lines().find(|l| l.starts_with("traffic")).unwrap();
    assert!(traffic.contains("feature_frames=1 "), "{traffic}");
    assert!(traffic.contains("cache_ref_frames=2 "), "{traffic}");
    assert!(traffic.contains("feature_payload_bytes=61440 "), "{traffic}");

    // Same request through the library, no sockets.
    let c = fx.config();
    let ck = Checkpoint::init(c.encoder, c.qformer, c.cloud, c.seed).unwrap();
    let vocab = ck.cloud.vocab.clone();
    let z = ck.edge.encode_wav(&std::fs::read(fx.path("clip.wav")).unwrap()).unwrap();
    let svc = CloudService::new(ck.cloud, FeatureCache::in_memory(1 << 24), c.decode_mode());
    let targets = ["deu", "fra", "cmn"];
    let outputs = EdgeClient::new(InProcess(&svc)).translate(&z, &vocab, "eng", &targets).unwrap();
    for (code, out) in targets.iter().zip(&outputs) {
        let want = format!("{code}\ttranscript={:?}\ttranslation={:?}", out.transcript, out.translation);
        assert!(text.lines().any(|l| l == want), "missing {want:?} in\n{text}");
    }

    // A malformed frame gets an error reply; the server keeps serving.
    let mut t = TcpTransport::connect(&server.addr, Duration::from_secs(30)).unwrap();
    let bad = encode_envelope(&reference_envelope(MsgType::Response, z.cache_key(), &[])).unwrap();
    assert_eq!(decode_envelope(&t.round_trip(&bad).unwrap()).unwrap().msg_type, MsgType::Error);
    drop(t);

    let out = server.interrupt();
    assert!(out.contains("cache flushed"));

    // After a restart a bare cache reference is answered from disk.
    let server = Server::start(&cfg, &cache);
    let prompt = [vocab.language_id("eng").unwrap(), vocab.language_id("spa").unwrap()];
    let mut t = TcpTransport::connect(&server.addr, Duration::from_secs(30)).unwrap();
    let frame = encode_envelope(&reference_envelope(MsgType::CacheRef, z.cache_key(), &prompt)).unwrap();
    assert_eq!(decode_envelope(&t.round_trip(&frame).unwrap()).unwrap().msg_type, MsgType::Response);
    drop(t);
    server.interrupt();
}

#[test]
fn probe_emits_a_report() {
    let o = run(&["--seed", "5", "probe", "--pairs", "synthetic:64"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let r = records(&stdout(&o));
    assert_eq!(r["pairs_train"].parse::<usize>().unwrap() + r["pairs_val"].parse::<usize>().unwrap(), 64);
    assert_eq!(r["output_shape"], "128x3000");
    for k in ["train_mse", "val_mse", "baseline_train_mse", "baseline_val_mse"] {
        let v: f64 = r[k].parse().unwrap();
        assert!(v.is_finite() && v >= 0.0, "{k} = {v}");
    }
}

#[test]
fn train_prints_one_metric_line_per_step_and_saves_weights() {
    let fx = Fixture::new();
    let weights = fx.arg("w.bin");
    let o = run(&[
        "train", "--stage", "I", "--steps", "5", "--synthetic", "4", "--pretrain-steps", "10", "--data-dir",
        &fx.arg("data"), "--out", &weights,
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let lines: Vec<String> = stdout(&o).lines().map(str::to_string).collect();
    assert_eq!(lines.len(), 5);
    for (i, l) in lines.iter().enumerate() {
        assert!(l.starts_with(&format!("{{\"step\":{i},\"task\":\"Asr\"")), "{l}");
    }

    // The saved weights drive later commands through the config.
    std::fs::write(fx.path("trained.toml"), "weights = \"w.bin\"\n").unwrap();
    let o = run(&["--config", &fx.arg("trained.toml"), "edge-encode", &fx.arg("clip.wav"), &fx.arg("f.bin")]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let o = run(&["--config", &fx.arg("trained.toml"), "--tokens", "40", "edge-encode", &fx.arg("clip.wav"), &fx.arg("g.bin")]);
    assert_eq!(o.status.code(), Some(2));
}
