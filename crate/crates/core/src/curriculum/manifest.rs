//! Line-delimited JSON manifests and a deterministic synthetic corpus whose
//! audio encodes each character of the transcript as a short tone.

use std::collections::HashSet;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use esrt_nn::ParamRng;

use super::{CurriculumError, TrainingExample};
use crate::audio::{encode_wav, SAMPLE_RATE_HZ};

/// English / German word pairs the synthetic sentences draw from.
pub const SYNTHETIC_WORDS: [(&str, &str); 16] = [
    ("one", "eins"),
    ("two", "zwei"),
    ("red", "rot"),
    ("cat", "katze"),
    ("dog", "hund"),
    ("sun", "sonne"),
    ("day", "tag"),
    ("big", "gross"),
    ("old", "alt"),
    ("man", "mann"),
    ("yes", "ja"),
    ("no", "nein"),
    ("good", "gut"),
    ("new", "neu"),
    ("hand", "hand"),
    ("house", "haus"),
];

const SAMPLES_PER_CHAR: usize = 32000;
const LEAD_IN: usize = 1600;

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticPair {
    pub transcript: String,
    pub translation: String,
    pub samples: Vec<i16>,
}

/// One tone per letter (300 Hz + 100 Hz per letter index), silence for spaces.
pub fn synthesize_clip(text: &str) -> Vec<i16> {
    let mut out = vec![0i16; LEAD_IN];
    for ch in text.chars() {
        let idx = match ch {
            'a'..='z' => Some(ch as u32 - 'a' as u32),
            _ => None,
        };
        for n in 0..SAMPLES_PER_CHAR {
            let v = match idx {
                None => 0.0,
                Some(i) => {
                    let f = 300.0 + 100.0 * i as f64;
                    let t = n as f64 / SAMPLE_RATE_HZ as f64;
                    // Short ramps avoid clicks between letters.
                    let edge = (n.min(SAMPLES_PER_CHAR - 1 - n) as f64 / 400.0).min(1.0);
                    8000.0 * edge * (2.0 * std::f64::consts::PI * f * t).sin()
                }
            };
            out.push(v.round() as i16);
        }
    }
    out.extend(std::iter::repeat_n(0, LEAD_IN));
    out
}

/// `n` distinct two-word sentences with translations and audio.
pub fn synthetic_corpus(n: usize, seed: u64) -> Vec<SyntheticPair> {
    let max = SYNTHETIC_WORDS.len() * SYNTHETIC_WORDS.len();
    let mut rng = ParamRng::for_component(seed, "synthetic-corpus");
    let mut seen = HashSet::new();
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let (a, b) = (rng.below(SYNTHETIC_WORDS.len()), rng.below(SYNTHETIC_WORDS.len()));
        if seen.len() < max && !seen.insert((a, b)) {
            continue;
        }
        let transcript = format!("{} {}", SYNTHETIC_WORDS[a].0, SYNTHETIC_WORDS[b].0);
        let translation = format!("{} {}", SYNTHETIC_WORDS[a].1, SYNTHETIC_WORDS[b].1);
        let samples = synthesize_clip(&transcript);
        out.push(SyntheticPair {
            transcript,
            translation,
            samples,
        });
    }
    out
}

/// Writes `clip_XXXX.wav` files and `manifest.jsonl` into `dir`.
pub fn write_synthetic_manifest(dir: &Path, n: usize, seed: u64) -> Result<Vec<TrainingExample>, CurriculumError> {
    fs::create_dir_all(dir)?;
    let mut examples = Vec::with_capacity(n);
    for (i, pair) in synthetic_corpus(n, seed).into_iter().enumerate() {
        let name = format!("clip_{i:04}.wav");
        fs::write(dir.join(&name), encode_wav(&pair.samples, SAMPLE_RATE_HZ, 1))?;
        examples.push(TrainingExample {
            audio_path: name,
            transcript: pair.transcript,
            translation: pair.translation,
            src: "eng".into(),
            tgt: "deu".into(),
        });
    }
    write_manifest(&dir.join("manifest.jsonl"), &examples)?;
    Ok(examples)
}

pub fn write_manifest(path: &Path, examples: &[TrainingExample]) -> Result<(), CurriculumError> {
    let mut f = fs::File::create(path)?;
    for ex in examples {
        let line = serde_json::to_string(ex).expect("plain struct serializes");
        writeln!(f, "{line}")?;
    }
    Ok(())
}

/// Reads a manifest; relative audio paths resolve against its directory.
pub fn read_manifest(path: &Path) -> Result<Vec<TrainingExample>, CurriculumError> {
    let base = path.parent().unwrap_or(Path::new("."));
    let reader = BufReader::new(fs::File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let mut ex: TrainingExample = serde_json::from_str(&line).map_err(|e| CurriculumError::Manifest {
            line: i + 1,
            reason: e.to_string(),
        })?;
        if Path::new(&ex.audio_path).is_relative() {
            ex.audio_path = base.join(&ex.audio_path).to_string_lossy().into_owned();
        }
        out.push(ex);
    }
    if out.is_empty() {
        return Err(CurriculumError::EmptyManifest);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn corpus_is_deterministic_and_distinct() {
        let a = synthetic_corpus(32, 1);
        assert_eq!(a, synthetic_corpus(32, 1));
        let uniq: HashSet<_> = a.iter().map(|p| p.transcript.clone()).collect();
        assert_eq!(uniq.len(), 32);
        assert!(a.iter().all(|p| p.samples.len() <= 480_000));
    }

    #[test]
    fn manifest_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let written = write_synthetic_manifest(dir.path(), 3, 7).unwrap();
        let read = read_manifest(&dir.path().join("manifest.jsonl")).unwrap();
        assert_eq!(read.len(), 3);
        assert_eq!(read[0].transcript, written[0].transcript);
        assert!(Path::new(&read[0].audio_path).exists());
    }

    #[test]
    fn bad_and_empty_manifests() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.jsonl");
        fs::write(&p, "\n").unwrap();
        assert!(matches!(read_manifest(&p), Err(CurriculumError::EmptyManifest)));
        fs::write(&p, "{\"audio_path\": 3}\n").unwrap();
        assert!(matches!(read_manifest(&p), Err(CurriculumError::Manifest { line: 1, .. })));
    }
}
