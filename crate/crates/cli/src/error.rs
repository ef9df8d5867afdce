use std::process::ExitCode;

use esrt_core::bench::BenchError;
use esrt_core::cache::CacheError;
use esrt_core::cloud::CloudError;
use esrt_core::config::ConfigError;
use esrt_core::curriculum::CurriculumError;
use esrt_core::edge::EdgeError;
use esrt_core::weights::WeightsError;
use esrt_core::wire::WireError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Edge(#[from] EdgeError),
    #[error(transparent)]
    Wire(#[from] WireError),
    #[error(transparent)]
    Cache(#[from] CacheError),
    #[error(transparent)]
    Cloud(#[from] CloudError),
    #[error(transparent)]
    Weights(#[from] WeightsError),
    #[error(transparent)]
    Curriculum(#[from] CurriculumError),
    #[error(transparent)]
    Bench(#[from] BenchError),
    #[error("cannot install signal handler: {0}")]
    Signal(#[from] ctrlc::Error),
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
}

impl CliError {
    pub fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }

    /// 1 usage, 2 data, 3 network.
    pub fn exit_code(&self) -> ExitCode {
        let code = match self {
            CliError::Usage(_) | CliError::Config(_) => 1,
            CliError::Cloud(CloudError::UnknownLanguage(_)) => 1,
            CliError::Cloud(e) if e.is_network() => 3,
            CliError::Curriculum(CurriculumError::Cloud(e)) if e.is_network() => 3,
            _ => 2,
        };
        ExitCode::from(code)
    }
}
