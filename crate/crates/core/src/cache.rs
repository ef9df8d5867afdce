//! Content-addressed feature store with a byte-budget LRU and optional
//! write-through persistence (one FEATURES frame per file, named by hex key).

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::Instant;

use esrt_nn::Tensor;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::edge::CompressedFeatures;
use crate::key::CacheKey;
use crate::wire::{
    decode_envelope, encode_envelope, features_envelope, features_from_envelope, quantize_bf16,
    DType, WireError,
};

#[derive(Debug, Error)]
pub enum CacheError {
    #[error("entry of {size} bytes exceeds cache capacity {capacity}")]
    EntryTooLarge { size: usize, capacity: usize },
    #[error("key {given} does not match features key {actual}")]
    KeyMismatch { given: CacheKey, actual: CacheKey },
    #[error("cache directory i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("corrupt cache file {path}: {source}")]
    Corrupt { path: PathBuf, source: WireError },
    #[error("feature source failed: {0}")]
    Source(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CacheConfig {
    pub capacity_bytes: usize,
    pub dir: Option<PathBuf>,
}

impl Default for CacheConfig {
    fn default() -> Self {
        Self {
            capacity_bytes: 64 << 20,
            dir: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct CacheEntry {
    pub key: CacheKey,
    pub features: CompressedFeatures,
    pub created_at: Instant,
    pub size_bytes: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum PutOutcome {
    Stored { evicted: Vec<CacheKey> },
    AlreadyPresent,
}

#[derive(Debug, Default)]
struct Inner {
    entries: HashMap<CacheKey, (CacheEntry, u64)>,
    recency: BTreeMap<u64, CacheKey>,
    tick: u64,
    resident: usize,
}

impl Inner {
    fn touch(&mut self, key: &CacheKey) {
        self.tick += 1;
        let tick = self.tick;
        if let Some((_, t)) = self.entries.get_mut(key) {
            self.recency.remove(t);
            *t = tick;
            self.recency.insert(tick, *key);
        }
    }

    fn pop_lru(&mut self) -> Option<CacheKey> {
        let (_, key) = self.recency.pop_first()?;
        let (entry, _) = self.entries.remove(&key).expect("recency index in sync");
        self.resident -= entry.size_bytes;
        Some(key)
    }
}

/// Size at rest of a `K × d_q` entry stored as BF16.
pub fn entry_size(features: &CompressedFeatures) -> usize {
    features.k() * features.d_q() * 2
}

#[derive(Debug)]
pub struct FeatureCache {
    capacity: usize,
    dir: Option<PathBuf>,
    inner: Mutex<Inner>,
}

impl FeatureCache {
    pub fn in_memory(capacity_bytes: usize) -> Self {
        Self {
            capacity: capacity_bytes,
            dir: None,
            inner: Mutex::new(Inner::default()),
        }
    }

    /// Opens a cache, reloading any entries persisted in `cfg.dir`
    /// (oldest file first, so recency survives a restart).
    pub fn open(cfg: &CacheConfig) -> Result<Self, CacheError> {
        let mut cache = Self::in_memory(cfg.capacity_bytes);
        let Some(dir) = &cfg.dir else {
            return Ok(cache);
        };
        fs::create_dir_all(dir)?;
        let mut files = Vec::new();
        for entry in fs::read_dir(dir)? {
            let entry = entry?;
            let name = entry.file_name().to_string_lossy().into_owned();
            let Ok(key) = CacheKey::from_hex(&name) else {
                continue;
            };
            files.push((entry.metadata()?.modified()?, name, key, entry.path()));
        }
        files.sort();
        for (_, _, key, path) in files {
            let bytes = fs::read(&path)?;
            let features = decode_envelope(&bytes)
                .and_then(|env| features_from_envelope(&env))
                .map_err(|source| CacheError::Corrupt {
                    path: path.clone(),
                    source,
                })?;
            if features.cache_key() != key {
                return Err(CacheError::Corrupt {
                    path,
                    source: WireError::Invalid("file name does not match key".into()),
                });
            }
            let evicted = cache.insert(features)?;
            for k in evicted {
                let _ = fs::remove_file(dir.join(k.to_hex()));
            }
        }
        cache.dir = Some(dir.clone());
        Ok(cache)
    }

    pub fn capacity_bytes(&self) -> usize {
        self.capacity
    }

    pub fn resident_bytes(&self) -> usize {
        self.lock().resident
    }

    pub fn len(&self) -> usize {
        self.lock().entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn contains(&self, key: &CacheKey) -> bool {
        self.lock().entries.contains_key(key)
    }

    /// Keys from least to most recently used.
    pub fn keys_lru_order(&self) -> Vec<CacheKey> {
        self.lock().recency.values().copied().collect()
    }

    fn lock(&self) -> std::sync::MutexGuard<'_, Inner> {
        self.inner.lock().unwrap_or_else(|p| p.into_inner())
    }

    /// Stores features under `key`. Values are rounded to BF16 at rest.
    pub fn put(&self, key: CacheKey, features: &CompressedFeatures) -> Result<PutOutcome, CacheError> {
        if key != features.cache_key() {
            return Err(CacheError::KeyMismatch {
                given: key,
                actual: features.cache_key(),
            });
        }
        if self.contains(&key) {
            self.lock().touch(&key);
            return Ok(PutOutcome::AlreadyPresent);
        }
        let z = Tensor::new(features.z().shape().to_vec(), quantize_bf16(features.z().data()))
            .expect("same shape");
        let stored = CompressedFeatures::new(z, key).expect("already valid");
        if let Some(dir) = &self.dir {
            write_entry(dir, &stored)?;
        }
        let evicted = self.insert(stored)?;
        if let Some(dir) = &self.dir {
            for k in &evicted {
                remove_entry(dir, k)?;
            }
        }
        Ok(PutOutcome::Stored { evicted })
    }

    fn insert(&self, features: CompressedFeatures) -> Result<Vec<CacheKey>, CacheError> {
        let size = entry_size(&features);
        if size > self.capacity {
            return Err(CacheError::EntryTooLarge {
                size,
                capacity: self.capacity,
            });
        }
        let key = features.cache_key();
        let mut inner = self.lock();
        if inner.entries.contains_key(&key) {
            inner.touch(&key);
            return Ok(Vec::new());
        }
        let mut evicted = Vec::new();
        while inner.resident + size > self.capacity {
            evicted.extend(inner.pop_lru());
        }
        inner.tick += 1;
        let tick = inner.tick;
        inner.resident += size;
        inner.recency.insert(tick, key);
        inner.entries.insert(
            key,
            (
                CacheEntry {
                    key,
                    features,
                    created_at: Instant::now(),
                    size_bytes: size,
                },
                tick,
            ),
        );
        Ok(evicted)
    }

    /// A hit refreshes recency; a miss is `None`.
    pub fn get(&self, key: &CacheKey) -> Option<CompressedFeatures> {
        let mut inner = self.lock();
        let hit = inner.entries.get(key).map(|(e, _)| e.features.clone());
        if hit.is_some() {
            inner.touch(key);
        }
        hit
    }

    pub fn entry(&self, key: &CacheKey) -> Option<CacheEntry> {
        self.lock().entries.get(key).map(|(e, _)| e.clone())
    }

    /// Makes sure every resident entry has a file on disk.
    pub fn flush(&self) -> Result<(), CacheError> {
        let Some(dir) = &self.dir else {
            return Ok(());
        };
        let entries: Vec<CompressedFeatures> = {
            let inner = self.lock();
            inner
                .recency
                .values()
                .map(|k| inner.entries[k].0.features.clone())
                .collect()
        };
        for f in entries {
            if !dir.join(f.cache_key().to_hex()).exists() {
                write_entry(dir, &f)?;
            }
        }
        Ok(())
    }
}

fn write_entry(dir: &Path, features: &CompressedFeatures) -> Result<(), CacheError> {
    let env = features_envelope(features, &[], DType::Bf16).map_err(|source| CacheError::Corrupt {
        path: dir.to_path_buf(),
        source,
    })?;
    let bytes = encode_envelope(&env).map_err(|source| CacheError::Corrupt {
        path: dir.to_path_buf(),
        source,
    })?;
    let name = features.cache_key().to_hex();
    let tmp = dir.join(format!(".{name}.tmp"));
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, dir.join(name))?;
    Ok(())
}

fn remove_entry(dir: &Path, key: &CacheKey) -> Result<(), CacheError> {
    match fs::remove_file(dir.join(key.to_hex())) {
        Err(e) if e.kind() != std::io::ErrorKind::NotFound => Err(e.into()),
        _ => Ok(()),
    }
}

/// Where the cloud gets features it does not hold.
pub trait FeatureSource {
    fn request_features(&mut self, key: CacheKey, prompt: &[u32]) -> Result<CompressedFeatures, CacheError>;
}

/// Cache hit: no traffic. Miss: ask the source once, store, return.
pub fn resolve_or_request<S: FeatureSource + ?Sized>(
    cache: &FeatureCache,
    key: CacheKey,
    prompt: &[u32],
    source: &mut S,
) -> Result<CompressedFeatures, CacheError> {
    if let Some(f) = cache.get(&key) {
        return Ok(f);
    }
    let f = source.request_features(key, prompt)?;
    cache.put(key, &f)?;
    Ok(cache.get(&key).unwrap_or(f))
}
