//! Byte-level vocabulary with specials and reserved slots, some of which are
//! repurposed as language tokens.

use std::collections::HashMap;

use super::CloudError;

pub const BYTE_TOKENS: u32 = 256;
pub const EOS_ID: u32 = 256;
pub const PAD_ID: u32 = 257;
pub const FIRST_RESERVED_ID: u32 = 258;
pub const RESERVED_SLOTS: u32 = 102;
pub const VOCAB_SIZE: u32 = FIRST_RESERVED_ID + RESERVED_SLOTS;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ResourceLevel {
    High,
    Medium,
    Low,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LanguageInfo {
    pub code: &'static str,
    pub name: &'static str,
    pub family: &'static str,
    pub resource: ResourceLevel,
    pub hours: f64,
}

const fn lang(
    code: &'static str,
    name: &'static str,
    family: &'static str,
    resource: ResourceLevel,
    hours: f64,
) -> LanguageInfo {
    LanguageInfo {
        code,
        name,
        family,
        resource,
        hours,
    }
}

use ResourceLevel::{High, Low, Medium};

/// The 45 supported languages, in table order.
pub const LANGUAGES: [LanguageInfo; 45] = [
    lang("ara", "Arabic", "Afro-Asiatic", High, 6.0),
    lang("heb", "Hebrew", "Afro-Asiatic", Low, 9.5),
    lang("khm", "Khmer", "Austroasiatic", Low, 7.1),
    lang("vie", "Vietnamese", "Austroasiatic", Medium, 9.1),
    lang("ind", "Indonesian", "Austronesian", Medium, 9.1),
    lang("msa", "Malay", "Austronesian", Low, 9.5),
    lang("tgl", "Tagalog", "Austronesian", Medium, 7.7),
    lang("tam", "Tamil", "Dravidian", Medium, 8.7),
    lang("ben", "Bengali", "Indo-European", High, 10.7),
    lang("bul", "Bulgarian", "Indo-European", Low, 9.5),
    lang("cat", "Catalan", "Indo-European", High, 7.4),
    lang("ces", "Czech", "Indo-European", High, 8.4),
    lang("dan", "Danish", "Indo-European", Medium, 7.5),
    lang("deu", "German", "Indo-European", High, 9.0),
    lang("ell", "Greek", "Indo-European", Medium, 10.0),
    lang("eng", "English", "Indo-European", High, 7.5),
    lang("fas", "Persian", "Indo-European", Low, 12.1),
    lang("fra", "French", "Indo-European", High, 10.3),
    lang("hin", "Hindi", "Indo-European", Medium, 6.7),
    lang("hrv", "Croatian", "Indo-European", Medium, 11.8),
    lang("ita", "Italian", "Indo-European", High, 9.0),
    lang("nld", "Dutch", "Indo-European", High, 7.7),
    lang("nob", "Norwegian", "Indo-European", Low, 10.9),
    lang("pol", "Polish", "Indo-European", High, 9.2),
    lang("por", "Portuguese", "Indo-European", Medium, 10.2),
    lang("ron", "Romanian", "Indo-European", High, 10.1),
    lang("rus", "Russian", "Indo-European", Medium, 8.1),
    lang("slk", "Slovak", "Indo-European", Medium, 5.9),
    lang("slv", "Slovenian", "Indo-European", Low, 7.8),
    lang("spa", "Spanish", "Indo-European", High, 8.8),
    lang("swe", "Swedish", "Indo-European", Low, 8.4),
    lang("urd", "Urdu", "Indo-European", Medium, 7.0),
    lang("jpn", "Japanese", "Japonic", High, 7.4),
    lang("kor", "Korean", "Koreanic", Medium, 7.9),
    lang("lao", "Lao", "Kra-Dai", Low, 7.3),
    lang("tha", "Thai", "Kra-Dai", Medium, 8.5),
    lang("cmn", "Chinese", "Sino-Tibetan", High, 9.7),
    lang("mya", "Burmese", "Sino-Tibetan", Low, 12.1),
    lang("yue", "Cantonese", "Sino-Tibetan", Low, 7.3),
    lang("azj", "Azerbaijani", "Turkic", Low, 9.3),
    lang("kaz", "Kazakh", "Turkic", Medium, 11.8),
    lang("tur", "Turkish", "Turkic", Medium, 8.3),
    lang("uzb", "Uzbek", "Turkic", Medium, 10.1),
    lang("fin", "Finnish", "Uralic", High, 8.8),
    lang("hun", "Hungarian", "Uralic", Medium, 9.3),
];

#[derive(Debug, Clone, PartialEq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    by_string: HashMap<String, u32>,
    language_ids: HashMap<&'static str, u32>,
}

impl Default for Vocabulary {
    fn default() -> Self {
        Self::expanded()
    }
}

impl Vocabulary {
    /// Base vocabulary with the first 45 reserved slots turned into
    /// `<|code|>` language tokens.
    pub fn expanded() -> Self {
        let mut tokens: Vec<String> = (0..BYTE_TOKENS).map(|b| format!("<0x{b:02X}>")).collect();
        tokens.push("<|endoftext|>".into());
        tokens.push("<|pad|>".into());
        let mut language_ids = HashMap::new();
        for slot in 0..RESERVED_SLOTS {
            let id = FIRST_RESERVED_ID + slot;
            match LANGUAGES.get(slot as usize) {
                Some(l) => {
                    tokens.push(format!("<|{}|>", l.code));
                    language_ids.insert(l.code, id);
                }
                None => tokens.push(format!("<unused_{slot}>")),
            }
        }
        let by_string = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as u32))
            .collect();
        Self {
            tokens,
            by_string,
            language_ids,
        }
    }

    pub fn size(&self) -> usize {
        self.tokens.len()
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn id_of(&self, token: &str) -> Option<u32> {
        self.by_string.get(token).copied()
    }

    pub fn language_id(&self, code: &str) -> Result<u32, CloudError> {
        self.language_ids
            .get(code)
            .copied()
            .ok_or_else(|| CloudError::UnknownLanguage(code.to_string()))
    }

    pub fn language_code(&self, id: u32) -> Option<&'static str> {
        let slot = id.checked_sub(FIRST_RESERVED_ID)? as usize;
        LANGUAGES.get(slot).map(|l| l.code)
    }

    pub fn is_language(&self, id: u32) -> bool {
        self.language_code(id).is_some()
    }

    pub fn language_ids(&self) -> impl Iterator<Item = u32> + '_ {
        (0..LANGUAGES.len() as u32).map(|i| FIRST_RESERVED_ID + i)
    }

    pub fn encode_text(&self, text: &str) -> Vec<u32> {
        text.bytes().map(u32::from).collect()
    }

    /// Byte tokens decoded as UTF-8 (lossy); other ids rendered by name.
    pub fn decode_text(&self, ids: &[u32]) -> String {
        let mut out = String::new();
        let mut bytes = Vec::new();
        for &id in ids {
            if id < BYTE_TOKENS {
                bytes.push(id as u8);
                continue;
            }
            out.push_str(&String::from_utf8_lossy(&bytes));
            bytes.clear();
            out.push_str(self.token(id).unwrap_or("<?>"));
        }
        out.push_str(&String::from_utf8_lossy(&bytes));
        out
    }
}
