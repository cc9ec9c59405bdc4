//! Label normalization and tokenization shared by the tree, the prompts and
//! the quality filter.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use unicode_normalization::UnicodeNormalization;

/// Language of a tag, prompt template or record.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Lang {
    Zh,
    En,
}

impl Lang {
    pub const ALL: [Lang; 2] = [Lang::Zh, Lang::En];

    pub fn as_str(self) -> &'static str {
        match self {
            Lang::Zh => "zh",
            Lang::En => "en",
        }
    }
}

impl fmt::Display for Lang {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Lang {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "zh" | "zh-cn" | "cn" | "chinese" => Ok(Lang::Zh),
            "en" | "en-us" | "english" => Ok(Lang::En),
            other => Err(format!("unknown language `{other}` (expected zh or en)")),
        }
    }
}

/// Canonical form used for label equality: NFC, lowercased, internal
/// whitespace collapsed to single spaces, trimmed.
pub fn normalize_label(label: &str) -> String {
    let nfc: String = label.nfc().collect();
    let folded = nfc.to_lowercase();
    folded.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// True for characters that are written without spaces between words
/// (Han ideographs, kana, hangul). Each such character is its own token.
pub fn is_cjk(c: char) -> bool {
    matches!(c as u32,
        0x3040..=0x30FF      // hiragana, katakana
        | 0x3400..=0x4DBF    // CJK ext A
        | 0x4E00..=0x9FFF    // CJK unified
        | 0xAC00..=0xD7AF    // hangul syllables
        | 0xF900..=0xFAFF    // CJK compatibility
        | 0x20000..=0x2FA1F) // CJK ext B..
}

/// Splits text into word tokens. Whitespace separates tokens; every CJK
/// character is a token on its own; leading and trailing punctuation is
/// stripped from non-CJK tokens. Tokens are lowercased.
pub fn word_tokens(text: &str) -> Vec<String> {
    let mut tokens = Vec::new();
    let mut current = String::new();
    let flush = |current: &mut String, tokens: &mut Vec<String>| {
        let trimmed = current.trim_matches(|c: char| !c.is_alphanumeric());
        if !trimmed.is_empty() {
            tokens.push(trimmed.to_lowercase());
        }
        current.clear();
    };
    for c in text.chars() {
        if c.is_whitespace() {
            flush(&mut current, &mut tokens);
        } else if is_cjk(c) {
            flush(&mut current, &mut tokens);
            tokens.push(c.to_string());
        } else {
            current.push(c);
        }
    }
    flush(&mut current, &mut tokens);
    tokens
}

/// Token set of a normalized label, used for root assignment by overlap.
pub fn label_token_set(label: &str) -> std::collections::BTreeSet<String> {
    word_tokens(&normalize_label(label)).into_iter().collect()
}

/// Jaccard overlap of two token sets; 0 when both are empty.
pub fn jaccard(
    a: &std::collections::BTreeSet<String>,
    b: &std::collections::BTreeSet<String>,
) -> f64 {
    let union = a.union(b).count();
    if union == 0 {
        return 0.0;
    }
    a.intersection(b).count() as f64 / union as f64
}

/// `ceil(proportion * n)`, treating products within 1e-9 of an integer as
/// exact so that e.g. `0.1 * 4250` yields 425 rather than 426.
pub fn proportional_count(proportion: f64, n: usize) -> usize {
    let x = proportion * n as f64;
    let r = x.round();
    let k = if (x - r).abs() < 1e-9 { r } else { x.ceil() };
    (k.max(0.0) as usize).min(n)
}
