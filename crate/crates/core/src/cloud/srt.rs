use super::vocab::{Vocabulary, BYTE_TOKENS, EOS_ID};
use super::CloudError;

/// A parsed `{transcript}<|src|><|tgt|>{translation}` sequence.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SrtOutput {
    pub transcript: String,
    pub src_token: u32,
    pub tgt_token: u32,
    pub translation: String,
    pub raw_tokens: Vec<u32>,
}

impl SrtOutput {
    /// Wire text form `Y1<|src|><|tgt|>Y2`.
    pub fn render(&self, vocab: &Vocabulary) -> String {
        format!(
            "{}{}{}{}",
            self.transcript,
            vocab.token(self.src_token).unwrap_or("<?>"),
            vocab.token(self.tgt_token).unwrap_or("<?>"),
            self.translation
        )
    }

    pub fn src_code(&self, vocab: &Vocabulary) -> Option<&'static str> {
        vocab.language_code(self.src_token)
    }

    pub fn tgt_code(&self, vocab: &Vocabulary) -> Option<&'static str> {
        vocab.language_code(self.tgt_token)
    }
}

pub fn srt_tokens(vocab: &Vocabulary, transcript: &str, src: u32, tgt: u32, translation: &str) -> Vec<u32> {
    let mut out = vocab.encode_text(transcript);
    out.push(src);
    out.push(tgt);
    out.extend(vocab.encode_text(translation));
    out
}

/// Splits a generated sequence at its single adjacent language-token pair.
/// A trailing EOS is ignored.
pub fn parse_srt_output(tokens: &[u32], vocab: &Vocabulary) -> Result<SrtOutput, CloudError> {
    let body = match tokens.last() {
        Some(&EOS_ID) => &tokens[..tokens.len() - 1],
        _ => tokens,
    };
    let lang_positions: Vec<usize> = body
        .iter()
        .enumerate()
        .filter(|(_, &t)| vocab.is_language(t))
        .map(|(i, _)| i)
        .collect();
    let at = match lang_positions.as_slice() {
        [] => return Err(CloudError::Format("no language tokens in output".into())),
        [a, b] if b == &(a + 1) => *a,
        [_] => return Err(CloudError::Format("a single language token is not a pair".into())),
        _ => {
            return Err(CloudError::Format(format!(
                "expected one language-token pair, found {} language tokens",
                lang_positions.len()
            )))
        }
    };
    let text = |part: &[u32]| -> Result<String, CloudError> {
        if let Some(&bad) = part.iter().find(|&&t| t >= BYTE_TOKENS) {
            return Err(CloudError::Format(format!(
                "unexpected special token {} inside text",
                vocab.token(bad).unwrap_or("<?>")
            )));
        }
        let bytes: Vec<u8> = part.iter().map(|&t| t as u8).collect();
        Ok(String::from_utf8_lossy(&bytes).into_owned())
    };
    Ok(SrtOutput {
        transcript: text(&body[..at])?,
        src_token: body[at],
        tgt_token: body[at + 1],
        translation: text(&body[at + 2..])?,
        raw_tokens: body.to_vec(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hello_hallo() {
        let v = Vocabulary::expanded();
        let (eng, deu) = (v.language_id("eng").unwrap(), v.language_id("deu").unwrap());
        let toks = srt_tokens(&v, "hello", eng, deu, "hallo");
        let out = parse_srt_output(&toks, &v).unwrap();
        assert_eq!(out.transcript, "hello");
        assert_eq!(out.translation, "hallo");
        assert_eq!((out.src_token, out.tgt_token), (eng, deu));
        assert_eq!(out.raw_tokens, toks);
        assert_eq!(out.render(&v), "hello<|eng|><|deu|>hallo");
        let mut with_eos = toks.clone();
        with_eos.push(EOS_ID);
        assert_eq!(parse_srt_output(&with_eos, &v).unwrap(), out);
    }

    #[test]
    fn malformed_sequences() {
        let v = Vocabulary::expanded();
        let eng = v.language_id("eng").unwrap();
        let deu = v.language_id("deu").unwrap();
        assert!(parse_srt_output(&v.encode_text("plain"), &v).is_err());
        assert!(parse_srt_output(&[104, eng, 105], &v).is_err());
        assert!(parse_srt_output(&[eng, deu, 104, eng, deu], &v).is_err());
        assert!(parse_srt_output(&[104, eng, deu, 257], &v).is_err());
        assert!(parse_srt_output(&[eng, deu], &v).is_ok());
    }
}
