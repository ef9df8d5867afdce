use std::collections::BTreeMap;
use std::fmt;

use serde::Serialize;

use crate::cloud::LANGUAGES;
use crate::edge::MEL_ELEMENTS;
use crate::wire::{decode_envelope, frame_len, MsgType, WireError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Check {
    LanguageLeak,
    LengthIdentical,
    IndependentOfDecoder,
    Bottleneck,
}

impl fmt::Display for Check {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Check::LanguageLeak => "language leak",
            Check::LengthIdentical => "length-identical",
            Check::IndependentOfDecoder => "decoder-independent",
            Check::Bottleneck => "bottleneck ratio",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Status {
    Pass,
    Fail,
    Info,
}

impl fmt::Display for Status {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Status::Pass => "pass",
            Status::Fail => "fail",
            Status::Info => "info",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Finding {
    pub check: Check,
    pub status: Status,
    pub detail: String,
}

impl fmt::Display for Finding {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {} ({})", self.check, self.status, self.detail)
    }
}

fn find_code(region: &[u8]) -> Option<&'static str> {
    LANGUAGES
        .iter()
        .map(|l| l.code)
        .find(|code| region.windows(3).any(|w| w == code.as_bytes()))
}

/// Looks at captured frames the way an on-path observer would.
pub fn inspect_wire(frames: &[Vec<u8>]) -> Result<Vec<Finding>, WireError> {
    let mut envs = Vec::with_capacity(frames.len());
    for f in frames {
        envs.push(decode_envelope(f)?);
    }

    // Everything except the payload is header material.
    let mut leaks = Vec::new();
    for (i, (f, e)) in frames.iter().zip(&envs).enumerate() {
        let header_end = f.len() - e.payload.len();
        if let Some(code) = find_code(&f[..header_end]) {
            leaks.push(format!("frame {i} carries {code:?}"));
        }
    }
    let leak = Finding {
        check: Check::LanguageLeak,
        status: if leaks.is_empty() { Status::Pass } else { Status::Fail },
        detail: if leaks.is_empty() {
            format!("no language code in {} headers", frames.len())
        } else {
            leaks.join("; ")
        },
    };

    let mut lengths: BTreeMap<(u16, u16, usize), Vec<usize>> = BTreeMap::new();
    for (f, e) in frames.iter().zip(&envs) {
        if e.msg_type == MsgType::Features {
            lengths
                .entry((e.k, e.d, e.prompt_token_ids.len()))
                .or_default()
                .push(f.len());
        }
    }
    let mut mismatched = Vec::new();
    for ((k, d, p), ls) in &lengths {
        if ls.iter().any(|&l| l != ls[0]) {
            mismatched.push(format!("K={k} D={d} prompt={p}: lengths {ls:?}"));
        }
    }
    let compared: usize = lengths.values().map(Vec::len).sum();
    let same_len = Finding {
        check: Check::LengthIdentical,
        status: if mismatched.is_empty() { Status::Pass } else { Status::Fail },
        detail: if mismatched.is_empty() {
            format!("{compared} feature frames in {} shape groups", lengths.len())
        } else {
            mismatched.join("; ")
        },
    };

    // A feature frame is a function of (K, D_q, prompt) alone: the header has no
    // field for the decoder width and the length is fully determined.
    let mut undetermined = Vec::new();
    for (i, (f, e)) in frames.iter().zip(&envs).enumerate() {
        if e.msg_type != MsgType::Features {
            continue;
        }
        let want = frame_len(
            e.prompt_token_ids.len(),
            e.n as usize * e.k as usize * e.d as usize * e.dtype.bytes_per_element(),
        );
        if f.len() != want {
            undetermined.push(format!("frame {i}: {} bytes, shape implies {want}", f.len()));
        }
    }
    let independent = Finding {
        check: Check::IndependentOfDecoder,
        status: if undetermined.is_empty() { Status::Pass } else { Status::Fail },
        detail: if undetermined.is_empty() {
            "frame length determined by K, D_q and prompt".into()
        } else {
            undetermined.join("; ")
        },
    };

    let mut ratios: Vec<String> = lengths
        .keys()
        .map(|(k, d, _)| (*k as usize * *d as usize, *k, *d))
        .filter(|(n, _, _)| *n > 0)
        .map(|(n, k, d)| format!("{k}x{d}: {}x", MEL_ELEMENTS as f64 / n as f64))
        .collect();
    ratios.dedup();
    let bottleneck = Finding {
        check: Check::Bottleneck,
        status: Status::Info,
        detail: if ratios.is_empty() {
            "no feature frames".into()
        } else {
            format!("mel elements / feature elements = {}", ratios.join(", "))
        },
    };
    Ok(vec![leak, same_len, independent, bottleneck])
}

/// Bottleneck ratio `128·3000 / (K·D_q)`.
pub fn bottleneck_ratio(k: usize, d_q: usize) -> f64 {
    MEL_ELEMENTS as f64 / (k * d_q) as f64
}
