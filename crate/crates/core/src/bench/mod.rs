//! Bandwidth accounting, wire inspection, link simulation and the
//! reconstruction probe.

mod bandwidth;
mod inspect;
mod probe;
mod sim;

use esrt_nn::NnError;
use thiserror::Error;

use crate::audio::AudioError;
use crate::edge::EdgeError;
use crate::wire::WireError;

pub use bandwidth::{bandwidth_report, transfer_time_s, BandwidthReport, CorpusStats, SizeUnit};
pub use inspect::{bottleneck_ratio, inspect_wire, Check, Finding, Status};
pub use probe::{
    mean_element_variance, reconstruct_probe, synthetic_pairs, ProbeConfig, ProbeReport, MIN_PAIRS,
};
pub use sim::{simulate_session, AudioMode, SessionReport, SessionSpec};

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("invalid bench input: {0}")]
    Invalid(String),
    #[error("probe needs at least {need} pairs, got {got}")]
    TooFewPairs { got: usize, need: usize },
    #[error(transparent)]
    Edge(#[from] EdgeError),
    #[error(transparent)]
    Audio(#[from] AudioError),
    #[error(transparent)]
    Wire(#[from] WireError),
    #[error(transparent)]
    Numerics(#[from] NnError),
}
