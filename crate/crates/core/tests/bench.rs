use esrt_core::bench::{
    bandwidth_report, reconstruct_probe, simulate_session, synthetic_pairs, AudioMode, CorpusStats,
    ProbeConfig, SessionSpec, SizeUnit,
};
use esrt_core::edge::{EdgePipeline, EncoderConfig, QFormerConfig};

fn within(got: f64, want: f64, tol: f64) -> bool {
    ((got - want) / want).abs() <= tol
}

/// Published figures per token count: tensor MB, tensor Base64 MB, time and ratio.
const PUBLISHED: [(u64, f64, f64, f64, f64); 2] = [(80, 77.0, 102.0, 8.2, 5.1), (40, 38.0, 51.0, 4.1, 10.2)];

#[test]
fn published_figures_in_binary_units() {
    let mib = 1_048_576.0;
    for (tokens, t_mb, t64_mb, t_s, ratio) in PUBLISHED {
        let stats = CorpusStats::from_mb(647, 392.0, SizeUnit::Binary, tokens, 768).unwrap();
        let r = bandwidth_report(&stats, 1, 100.0, SizeUnit::Binary).unwrap();
        // Independent arithmetic.
        let audio = (392.0 * mib) as u64;
        let audio_b64 = audio.div_ceil(3) * 4;
        let tensor = 647 * tokens * 768 * 2;
        let tensor_b64 = tensor.div_ceil(3) * 4;
        assert_eq!(r.audio_b64_bytes, audio_b64);
        assert_eq!(r.tensor_bytes, tensor);
        assert_eq!(r.tensor_b64_bytes, tensor_b64);
        assert!(within(r.mb(r.audio_b64_bytes), 521.0, 0.01), "{}", r.mb(r.audio_b64_bytes));
        assert!(within(r.mb(r.tensor_bytes), t_mb, 0.05));
        assert!(within(r.mb(r.tensor_b64_bytes), t64_mb, 0.05));
        assert!(within(r.audio_time_s, 41.7, 0.02), "{}", r.audio_time_s);
        assert!(within(r.tensor_time_s, t_s, 0.02), "{}", r.tensor_time_s);
        assert!(within(r.compression_ratio, ratio, 0.05));
    }
}

#[test]
fn decimal_units_miss_the_time_tolerance() {
    let stats = CorpusStats::from_mb(647, 392.0, SizeUnit::Decimal, 80, 768).unwrap();
    let r = bandwidth_report(&stats, 1, 100.0, SizeUnit::Decimal).unwrap();
    let expected = 647.0 * 80.0 * 768.0 * 2.0 * 4.0 / 3.0 * 8.0 / 1e8;
    assert!((r.tensor_time_s - expected).abs() < 1e-6);
    assert!(!within(r.tensor_time_s, 8.2, 0.02));
    assert!(within(r.mb(r.tensor_b64_bytes), 102.0, 0.05));
}

#[test]
fn audio_scales_with_languages_tensor_does_not() {
    let stats = CorpusStats::from_mb(647, 392.0, SizeUnit::Binary, 40, 768).unwrap();
    let one = bandwidth_report(&stats, 1, 100.0, SizeUnit::Binary).unwrap();
    for n in [2, 3, 7] {
        let r = bandwidth_report(&stats, n, 100.0, SizeUnit::Binary).unwrap();
        assert_eq!(r.audio_total_bytes, n * one.audio_b64_bytes);
        assert_eq!(r.tensor_total_bytes, one.tensor_total_bytes);
        assert_eq!(r.cache_ref_bytes, (n - 1) * 647 * 80);
    }
}

#[test]
fn fair_share_link_closed_forms() {
    let bytes = 960_000u64.div_ceil(3) * 4;
    for clients in [1usize, 2, 8] {
        let spec = SessionSpec::new(clients, 100.0, AudioMode::Audio, vec![30.0]);
        let r = simulate_session(&spec).unwrap();
        let want = (clients as u64 * bytes) as f64 * 8.0 / 1e8;
        assert!((r.total_time_s - want).abs() < 1e-9, "{clients}: {}", r.total_time_s);
        assert!((r.throughput_mbps - 100.0).abs() < 1e-6);
    }
    // Unequal queues: the short client leaves early and the rest speed up.
    let mut spec = SessionSpec::new(2, 8.0, AudioMode::TensorCached, vec![1.0]);
    spec.n_languages = 3;
    let r = simulate_session(&spec).unwrap();
    assert_eq!(r.bytes_delivered, 2 * (82_000 + 80 + 80));
    assert!((r.total_time_s - r.bytes_delivered as f64 * 8.0 / 8e6).abs() < 1e-9);
}

#[test]
fn probe_smoke_at_toy_dims() {
    let q = QFormerConfig::default();
    let pipe = EdgePipeline::init(EncoderConfig::default(), q, 1).unwrap();
    let pairs = synthetic_pairs(16, &pipe, 3).unwrap();
    let cfg = ProbeConfig {
        epochs: 5,
        ..Default::default()
    };
    let r = reconstruct_probe(&pairs, &cfg, 0).unwrap();
    assert_eq!(r.n_train + r.n_val, 16);
    assert_eq!(r.input_shape, [q.k_queries, q.d_q]);
    assert_eq!(r.output_shape, [128, 3000]);
    assert!(r.val_mse.is_finite() && r.val_mse >= 0.0);
    assert!(r.train_mse.is_finite() && r.baseline_train_mse > 0.0);
    let again = reconstruct_probe(&pairs, &cfg, 0).unwrap();
    assert_eq!(again, r);
}
