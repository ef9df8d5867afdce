use esrt_core::cache::{CacheConfig, CacheError, FeatureCache, PutOutcome};
use esrt_core::cloud::{CloudConfig, CloudModel, CloudService, DecodeMode, EdgeClient, InProcess};
use esrt_core::edge::CompressedFeatures;
use esrt_core::wire::{decode_envelope, encode_envelope, quantize_bf16, reference_envelope, MsgType};
use esrt_core::CacheKey;
use esrt_nn::Tensor;
use proptest::prelude::*;

fn feat(id: u8, k: usize, d: usize) -> CompressedFeatures {
    let z = Tensor::from_fn(&[k, d], |i| ((i * 7 + id as usize) % 13) as f32 * 0.25 - 1.5);
    CompressedFeatures::new(z, CacheKey([id; 32])).unwrap()
}

#[derive(Debug, Clone)]
enum Op {
    Put { id: u8, k: usize },
    Get { id: u8 },
}

fn op() -> impl Strategy<Value = Op> {
    prop_oneof![
        (0u8..12, 1usize..6).prop_map(|(id, k)| Op::Put { id, k }),
        (0u8..12).prop_map(|id| Op::Get { id }),
    ]
}

/// Brute-force LRU: a list ordered least to most recent.
#[derive(Default)]
struct Oracle {
    order: Vec<(u8, usize)>,
    capacity: usize,
}

impl Oracle {
    fn resident(&self) -> usize {
        self.order.iter().map(|e| e.1).sum()
    }

    fn bump(&mut self, id: u8) -> bool {
        match self.order.iter().position(|e| e.0 == id) {
            Some(i) => {
                let e = self.order.remove(i);
                self.order.push(e);
                true
            }
            None => false,
        }
    }

    /// `None` for oversize entries, else the keys evicted.
    fn put(&mut self, id: u8, size: usize) -> Option<Vec<u8>> {
        if self.bump(id) {
            return Some(vec![]);
        }
        if size > self.capacity {
            return None;
        }
        let mut evicted = vec![];
        while self.resident() + size > self.capacity {
            evicted.push(self.order.remove(0).0);
        }
        self.order.push((id, size));
        Some(evicted)
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn lru_matches_oracle(ops in prop::collection::vec(op(), 1..60), cap_entries in 1usize..8) {
        // Each row of d = 4 BF16 values is 8 bytes.
        let capacity = cap_entries * 16;
        let cache = FeatureCache::in_memory(capacity);
        let mut oracle = Oracle { capacity, ..Default::default() };
        let mut shapes = std::collections::HashMap::new();
        for op in ops {
            match op {
                Op::Put { id, k } => {
                    // Content addressing: a key always maps to the same features.
                    let k = *shapes.entry(id).or_insert(k);
                    let f = feat(id, k, 4);
                    let got = cache.put(f.cache_key(), &f);
                    match oracle.put(id, k * 8) {
                        None => {
                            let too_large = matches!(got, Err(CacheError::EntryTooLarge { .. }));
                            prop_assert!(too_large);
                        }
                        Some(ev) => {
                            let ev: Vec<CacheKey> = ev.into_iter().map(|i| CacheKey([i; 32])).collect();
                            match got.unwrap() {
                                PutOutcome::Stored { evicted } => prop_assert_eq!(evicted, ev),
                                PutOutcome::AlreadyPresent => prop_assert!(ev.is_empty()),
                            }
                        }
                    }
                }
                Op::Get { id } => {
                    let hit = cache.get(&CacheKey([id; 32])).is_some();
                    prop_assert_eq!(hit, oracle.bump(id));
                }
            }
            let want: Vec<CacheKey> = oracle.order.iter().map(|e| CacheKey([e.0; 32])).collect();
            prop_assert_eq!(cache.keys_lru_order(), want);
            prop_assert_eq!(cache.resident_bytes(), oracle.resident());
            prop_assert!(cache.resident_bytes() <= capacity);
        }
    }
}

#[test]
fn restart_keeps_entries() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = CacheConfig {
        capacity_bytes: 10_000,
        dir: Some(dir.path().to_path_buf()),
    };
    let fs: Vec<_> = (1..=3).map(|i| feat(i, 5, 8)).collect();
    {
        let cache = FeatureCache::open(&cfg).unwrap();
        for f in &fs {
            cache.put(f.cache_key(), f).unwrap();
        }
        cache.flush().unwrap();
    }
    let cache = FeatureCache::open(&cfg).unwrap();
    assert_eq!(cache.len(), 3);
    for f in &fs {
        let got = cache.get(&f.cache_key()).unwrap();
        assert_eq!(got.z().data(), quantize_bf16(f.z().data()).as_slice());
    }
}

#[test]
fn evicted_entries_leave_disk() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = CacheConfig {
        capacity_bytes: 2 * 80,
        dir: Some(dir.path().to_path_buf()),
    };
    let cache = FeatureCache::open(&cfg).unwrap();
    for i in 1..=3 {
        let f = feat(i, 5, 8);
        cache.put(f.cache_key(), &f).unwrap();
    }
    let files = std::fs::read_dir(dir.path()).unwrap().count();
    assert_eq!(files, 2);
    assert!(!dir.path().join(CacheKey([1; 32]).to_hex()).exists());
    drop(cache);
    let reopened = FeatureCache::open(&cfg).unwrap();
    assert_eq!(reopened.len(), 2);
    assert!(!reopened.contains(&CacheKey([1; 32])));
}

#[test]
fn corrupt_cache_file_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join(CacheKey([9; 32]).to_hex()), b"junk").unwrap();
    let cfg = CacheConfig {
        capacity_bytes: 1000,
        dir: Some(dir.path().to_path_buf()),
    };
    assert!(matches!(FeatureCache::open(&cfg), Err(CacheError::Corrupt { .. })));
}

fn service(capacity: usize) -> CloudService {
    let cfg = CloudConfig {
        max_new_tokens: 6,
        ..Default::default()
    };
    let model = CloudModel::init(cfg, 8, 1).unwrap();
    CloudService::new(model, FeatureCache::in_memory(capacity), DecodeMode::Greedy)
}

#[test]
fn one_feature_upload_for_any_number_of_targets() {
    let svc = service(1 << 20);
    let vocab = svc.model.vocab.clone();
    let all = ["deu", "fra", "cmn", "jpn", "spa"];
    for n in [1usize, 2, 5] {
        let z = feat(40 + n as u8, 4, 8);
        let mut client = EdgeClient::new(InProcess(&svc));
        let out = client.translate(&z, &vocab, "eng", &all[..n]).unwrap();
        assert_eq!(out.len(), n);
        let t = client.traffic();
        assert_eq!(t.feature_frames, 1, "n = {n}");
        assert_eq!(t.feature_payload_bytes, 4 * 8 * 2);
        assert_eq!(t.cache_ref_frames, n as u64 - 1);
        assert_eq!(t.renegotiations, 0);
        for (o, tgt) in out.iter().zip(&all) {
            assert_eq!(o.tgt_token, vocab.language_id(tgt).unwrap());
        }
    }
}

#[test]
fn evicted_key_gets_need_features() {
    // Room for exactly one 4x8 entry.
    let svc = service(64);
    let vocab = svc.model.vocab.clone();
    let a = feat(1, 4, 8);
    let b = feat(2, 4, 8);
    let mut client = EdgeClient::new(InProcess(&svc));
    client.translate(&a, &vocab, "eng", &["deu"]).unwrap();
    client.translate(&b, &vocab, "eng", &["deu"]).unwrap();
    assert!(!svc.cache.contains(&a.cache_key()));

    let prompt = [vocab.language_id("eng").unwrap(), vocab.language_id("fra").unwrap()];
    let reference = encode_envelope(&reference_envelope(MsgType::CacheRef, a.cache_key(), &prompt)).unwrap();
    let reply = decode_envelope(&svc.handle_request(&reference)).unwrap();
    assert_eq!(reply.msg_type, MsgType::NeedFeatures);
    assert_eq!(reply.cache_key, a.cache_key());
    assert_eq!(reply.prompt_token_ids, prompt);

    let reference = encode_envelope(&reference_envelope(MsgType::CacheRef, b.cache_key(), &prompt)).unwrap();
    let reply = decode_envelope(&svc.handle_request(&reference)).unwrap();
    assert_eq!(reply.msg_type, MsgType::Response);
}

#[test]
fn concurrent_puts_and_gets_stay_consistent() {
    let cache = std::sync::Arc::new(FeatureCache::in_memory(20 * 64));
    let handles: Vec<_> = (0..4u8)
        .map(|t| {
            let cache = cache.clone();
            std::thread::spawn(move || {
                for i in 0..200u8 {
                    let f = feat((t * 50).wrapping_add(i % 50), 4, 8);
                    cache.put(f.cache_key(), &f).unwrap();
                    if let Some(g) = cache.get(&f.cache_key()) {
                        assert_eq!(g.cache_key(), f.cache_key());
                    }
                }
            })
        })
        .collect();
    for h in handles {
        h.join().unwrap();
    }
    assert!(cache.resident_bytes() <= cache.capacity_bytes());
    assert_eq!(cache.resident_bytes(), cache.len() * 64);
    assert_eq!(cache.keys_lru_order().len(), cache.len());
}
