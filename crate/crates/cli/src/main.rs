//! `esrt`: edge encoding, cloud serving, translation requests, curriculum
//! training, bandwidth benches and reconstruction probes.

mod commands;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use error::CliError;

#[derive(Debug, Parser)]
#[command(name = "esrt", version, about = "Edge/cloud split speech recognition and translation")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

/// Overrides applied on top of the config file.
#[derive(Debug, Clone, Default, Args)]
pub struct GlobalArgs {
    /// TOML config; falls back to $ESRT_CONFIG.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true)]
    pub host: Option<String>,
    #[arg(long, global = true)]
    pub port: Option<u16>,
    /// Query tokens per clip.
    #[arg(long, global = true, value_parser = ["40", "80"])]
    pub tokens: Option<String>,
    /// Beam width; 0 is greedy.
    #[arg(long, global = true)]
    pub beam: Option<usize>,
    #[arg(long, global = true)]
    pub cache_dir: Option<PathBuf>,
    /// Source language code.
    #[arg(long, global = true)]
    pub src: Option<String>,
    /// Comma-separated target language codes.
    #[arg(long, global = true, value_delimiter = ',')]
    pub langs: Option<Vec<String>>,
}

impl GlobalArgs {
    pub fn tokens(&self) -> Option<usize> {
        self.tokens.as_deref().map(|t| t.parse().expect("validated by clap"))
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Encode a WAV file into the FEATURES frame the client would send.
    EdgeEncode {
        wav: PathBuf,
        /// Output frame file.
        out: PathBuf,
    },
    /// Run the cloud service until interrupted.
    Serve,
    /// Encode a WAV locally and request every target language from a server.
    Translate { wav: PathBuf },
    /// Run one curriculum stage.
    Train(TrainArgs),
    /// Audio versus compressed-feature bandwidth over a corpus.
    Bench(BenchArgs),
    /// Reconstruction probe from compressed features back to Mel.
    Probe(ProbeArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum OptimizerArg {
    Adam,
    Sgd,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// I, II or III.
    #[arg(long)]
    pub stage: String,
    #[arg(long)]
    pub steps: usize,
    /// JSON-lines manifest; synthetic data when absent.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// Synthetic examples when no manifest is given.
    #[arg(long, default_value_t = 32)]
    pub synthetic: usize,
    /// Where synthetic clips are written; a temporary directory otherwise.
    #[arg(long)]
    pub data_dir: Option<PathBuf>,
    /// Text-only decoder steps before the stage; defaults to 3000 for fresh
    /// weights and 0 for loaded ones.
    #[arg(long)]
    pub pretrain_steps: Option<usize>,
    #[arg(long, value_enum, default_value_t = OptimizerArg::Adam)]
    pub optimizer: OptimizerArg,
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f32,
    /// Save the trained weights here.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum UnitArg {
    /// 2^20 bytes per MB, 2^20 bit/s per Mbit/s.
    Binary,
    /// 10^6 bytes per MB, 10^6 bit/s per Mbit/s.
    Decimal,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[arg(long)]
    pub clips: u64,
    /// Total corpus audio size in MB.
    #[arg(long)]
    pub audio_mb: f64,
    #[arg(long, default_value_t = 768)]
    pub d_q: u64,
    #[arg(long, default_value_t = 100.0)]
    pub link_mbps: f64,
    #[arg(long, value_enum, default_value_t = UnitArg::Binary)]
    pub units: UnitArg,
}

#[derive(Debug, Args)]
pub struct ProbeArgs {
    /// `synthetic:N` or `manifest:PATH`.
    #[arg(long)]
    pub pairs: String,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub hidden: Option<usize>,
    /// Use the full-size encoder and Q-Former output shapes.
    #[arg(long)]
    pub full_size: bool,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("esrt: {e}");
            e.exit_code()
        }
    }
}

impl From<std::num::ParseIntError> for CliError {
    fn from(e: std::num::ParseIntError) -> Self {
        CliError::Usage(e.to_string())
    }
}
