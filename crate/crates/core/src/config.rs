//! Shared TOML configuration for every subcommand.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cache::CacheConfig;
use crate::cloud::{CloudConfig, DecodeMode, DEFAULT_BEAM_WIDTH};
use crate::edge::{EncoderConfig, QFormerConfig};

pub const CONFIG_ENV: &str = "ESRT_CONFIG";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("cannot parse config {path}: {source}")]
    Parse {
        path: PathBuf,
        source: toml::de::Error,
    },
    #[error("inconsistent config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GlobalConfig {
    pub seed: u64,
    pub host: String,
    pub port: u16,
    /// 0 selects greedy decoding.
    pub beam: usize,
    /// Weight file; fresh seeded weights when absent.
    pub weights: Option<PathBuf>,
    pub encoder: EncoderConfig,
    pub qformer: QFormerConfig,
    pub cloud: CloudConfig,
    pub cache: CacheConfig,
}

impl Default for GlobalConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            host: "127.0.0.1".into(),
            port: 7341,
            beam: DEFAULT_BEAM_WIDTH,
            weights: None,
            encoder: EncoderConfig::default(),
            qformer: QFormerConfig::default(),
            cloud: CloudConfig::default(),
            cache: CacheConfig::default(),
        }
    }
}

impl GlobalConfig {
    pub fn from_toml(text: &str, origin: &Path) -> Result<Self, ConfigError> {
        let cfg: Self = toml::from_str(text).map_err(|source| ConfigError::Parse {
            path: origin.to_path_buf(),
            source,
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut cfg = Self::from_toml(&text, path)?;
        // Relative weight and cache paths are relative to the config file.
        if let Some(base) = path.parent() {
            if let Some(w) = cfg.weights.as_mut().filter(|w| w.is_relative()) {
                *w = base.join(&*w);
            }
            if let Some(d) = cfg.cache.dir.as_mut().filter(|d| d.is_relative()) {
                *d = base.join(&*d);
            }
        }
        Ok(cfg)
    }

    /// `--config` wins, then `ESRT_CONFIG`, then built-in defaults.
    pub fn resolve(flag: Option<&Path>, env: Option<&str>) -> Result<Self, ConfigError> {
        match config_path(flag, env) {
            Some(p) => Self::load(&p),
            None => Ok(Self::default()),
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn decode_mode(&self) -> DecodeMode {
        match self.beam {
            0 => DecodeMode::Greedy,
            w => DecodeMode::Beam(w),
        }
    }

    pub fn addr(&self) -> String {
        format!("{}:{}", self.host, self.port)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |e: &dyn std::fmt::Display| ConfigError::Invalid(e.to_string());
        self.encoder.validate().map_err(|e| invalid(&e))?;
        self.qformer.validate(&self.encoder).map_err(|e| invalid(&e))?;
        self.cloud.validate().map_err(|e| invalid(&e))?;
        if self.host.is_empty() {
            return Err(ConfigError::Invalid("host is empty".into()));
        }
        let frame = crate::wire::frame_len(2, self.qformer.numel() * 2);
        if self.cache.capacity_bytes < frame {
            return Err(ConfigError::Invalid(format!(
                "cache capacity {} cannot hold one {}x{} entry",
                self.cache.capacity_bytes, self.qformer.k_queries, self.qformer.d_q
            )));
        }
        Ok(())
    }
}

pub fn config_path(flag: Option<&Path>, env: Option<&str>) -> Option<PathBuf> {
    flag.map(Path::to_path_buf)
        .or_else(|| env.filter(|s| !s.is_empty()).map(PathBuf::from))
}
