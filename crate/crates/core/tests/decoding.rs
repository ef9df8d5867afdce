use esrt_core::cloud::{
    decode_beam, decode_greedy, CloudConfig, CloudError, CloudModel, DecoderScorer, NextTokenScorer,
    SrtConstraint, Unconstrained,
};
use esrt_core::edge::CompressedFeatures;
use esrt_core::CacheKey;
use esrt_nn::{log_softmax_slice, ParamRng};

/// Context-dependent next-token distribution over a tiny vocabulary.
struct Table {
    vocab: usize,
    eos: u32,
    salt: u64,
}

impl NextTokenScorer for Table {
    fn vocab_size(&self) -> usize {
        self.vocab
    }
    fn eos(&self) -> Option<u32> {
        Some(self.eos)
    }
    fn log_probs(&self, generated: &[u32]) -> Result<Vec<f32>, CloudError> {
        let mut h = self.salt.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ 0xD1B5_4A32_D192_ED03;
        for &t in generated {
            h = (h ^ (t as u64 + 1)).wrapping_mul(0x1000_0000_01B3);
            h ^= h >> 29;
        }
        let logits: Vec<f32> = (0..self.vocab as u64)
            .map(|i| {
                let mut v = h ^ i.wrapping_mul(0xBF58_476D_1CE4_E5B9);
                v ^= v >> 31;
                v = v.wrapping_mul(0x94D0_49BB_1331_11EB);
                (v >> 40) as f32 / (1u64 << 24) as f32 * 5.0
            })
            .collect();
        Ok(log_softmax_slice(&logits))
    }
}

/// Best length-normalized score over every sequence of at most `max_len`
/// tokens: ones that stop with EOS (length counts it) and ones cut at the
/// budget.
fn exhaustive(s: &Table, max_len: usize) -> (Vec<u32>, f64) {
    let mut best: (Vec<u32>, f64) = (vec![], f64::NEG_INFINITY);
    let mut stack = vec![(Vec::<u32>::new(), 0.0f64)];
    while let Some((seq, score)) = stack.pop() {
        if seq.len() == max_len {
            if !seq.is_empty() && score / seq.len() as f64 > best.1 {
                best = (seq, score / max_len as f64);
            }
            continue;
        }
        let lp = s.log_probs(&seq).unwrap();
        for (tok, &v) in lp.iter().enumerate() {
            let total = score + v as f64;
            if tok as u32 == s.eos {
                let norm = total / (seq.len() + 1) as f64;
                if norm > best.1 {
                    best = (seq.clone(), norm);
                }
            } else {
                let mut next = seq.clone();
                next.push(tok as u32);
                stack.push((next, total));
            }
        }
    }
    best
}

fn normalized_score(s: &Table, seq: &[u32], max_len: usize) -> f64 {
    let mut total = 0.0;
    for i in 0..seq.len() {
        total += s.log_probs(&seq[..i]).unwrap()[seq[i] as usize] as f64;
    }
    if seq.len() < max_len {
        total += s.log_probs(seq).unwrap()[s.eos as usize] as f64;
        total / (seq.len() + 1) as f64
    } else {
        total / seq.len() as f64
    }
}

#[test]
fn beam_matches_exhaustive_search() {
    for vocab in [3usize, 5, 10] {
        for max_len in 1..=4 {
            for salt in 0..8 {
                let s = Table {
                    vocab,
                    eos: (salt % vocab as u64) as u32,
                    salt,
                };
                let (want, want_score) = exhaustive(&s, max_len);
                let full = vocab.pow(max_len as u32);
                let got = decode_beam(&s, &Unconstrained, full, max_len).unwrap();
                let got_score = normalized_score(&s, &got, max_len);
                assert!(
                    (got_score - want_score).abs() < 1e-9,
                    "V={vocab} L={max_len} salt={salt}: beam {got:?} ({got_score}) vs {want:?} ({want_score})"
                );
                assert_eq!(got, want);
                let narrow = decode_beam(&s, &Unconstrained, vocab, max_len).unwrap();
                assert_eq!(narrow, want, "width = vocab, V={vocab} L={max_len} salt={salt}");
            }
        }
    }
}

#[test]
fn beam_one_is_greedy_on_table_scorers() {
    for salt in 0..200 {
        let s = Table { vocab: 10, eos: 0, salt };
        assert_eq!(
            decode_beam(&s, &Unconstrained, 1, 8).unwrap(),
            decode_greedy(&s, &Unconstrained, 8).unwrap()
        );
    }
}

#[test]
fn beam_one_is_greedy_on_the_toy_decoder() {
    let cfg = CloudConfig {
        max_new_tokens: 10,
        ..Default::default()
    };
    let model = CloudModel::init(cfg, 8, 4).unwrap();
    let vocab = &model.vocab;
    let langs: Vec<u32> = vocab.language_ids().collect();
    let mut rng = ParamRng::new(77);
    for i in 0..200 {
        let z = CompressedFeatures::new(rng.normal(&[4, 8], 1.0), CacheKey([i as u8; 32])).unwrap();
        let src = langs[rng.below(langs.len())];
        let tgt = langs[rng.below(langs.len())];
        let fused = model.fused_input(&z, &[src, tgt]).unwrap();
        let scorer = DecoderScorer {
            decoder: &model.decoder,
            x: &fused.x,
        };
        // Half constrained to the SRT shape, half free.
        let (g, b) = if i % 2 == 0 {
            let c = SrtConstraint { src, tgt };
            (decode_greedy(&scorer, &c, 10).unwrap(), decode_beam(&scorer, &c, 1, 10).unwrap())
        } else {
            (
                decode_greedy(&scorer, &Unconstrained, 10).unwrap(),
                decode_beam(&scorer, &Unconstrained, 1, 10).unwrap(),
            )
        };
        assert_eq!(g, b, "input {i}");
    }
}

#[test]
fn wider_beam_never_scores_worse_than_greedy() {
    for salt in 0..50 {
        let s = Table { vocab: 6, eos: 1, salt };
        let g = decode_greedy(&s, &Unconstrained, 4).unwrap();
        let b = decode_beam(&s, &Unconstrained, 6usize.pow(4), 4).unwrap();
        assert!(normalized_score(&s, &b, 4) >= normalized_score(&s, &g, 4) - 1e-12);
    }
}
