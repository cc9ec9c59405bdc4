//! Guard against degenerate model output.

use std::collections::HashMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::prompts::Difficulty;
use crate::text::word_tokens;

/// Length of the word n-grams checked for repetition.
pub const REPEAT_NGRAM: usize = 8;
/// An n-gram seen this many times marks the text as looping.
pub const REPEAT_LIMIT: usize = 3;
/// Longest tolerated run of one repeated character.
pub const MAX_CHAR_RUN: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RejectReason {
    TooShort,
    CharRun,
    Repetition,
}

impl RejectReason {
    pub fn as_str(self) -> &'static str {
        match self {
            RejectReason::TooShort => "too_short",
            RejectReason::CharRun => "char_run",
            RejectReason::Repetition => "repetition",
        }
    }
}

impl fmt::Display for RejectReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    Accept,
    Reject(RejectReason),
}

impl Verdict {
    pub fn is_accept(self) -> bool {
        self == Verdict::Accept
    }
}

/// Minimum word count for a question or answer at this difficulty.
pub fn min_words(difficulty: Difficulty) -> usize {
    match difficulty {
        Difficulty::Easy => 3,
        Difficulty::Medium | Difficulty::Hard => 10,
    }
}

/// Rejects text that is one character repeated, contains a run of more than
/// [`MAX_CHAR_RUN`] identical letters or digits, repeats a word 8-gram three
/// or more times, or is shorter than [`min_words`].
pub fn quality_filter(text: &str, difficulty: Difficulty) -> Verdict {
    let trimmed = text.trim();
    if has_char_run(trimmed) {
        return Verdict::Reject(RejectReason::CharRun);
    }
    let words = word_tokens(trimmed);
    if has_repeated_ngram(&words) {
        return Verdict::Reject(RejectReason::Repetition);
    }
    if words.len() < min_words(difficulty) {
        return Verdict::Reject(RejectReason::TooShort);
    }
    Verdict::Accept
}

fn has_char_run(text: &str) -> bool {
    let mut chars = text.chars();
    if let Some(first) = chars.clone().next() {
        if text.chars().count() > MAX_CHAR_RUN && chars.all(|c| c == first) {
            return true;
        }
    }
    let mut prev = None;
    let mut run = 0usize;
    for c in text.chars() {
        if Some(c) == prev {
            run += 1;
        } else {
            prev = Some(c);
            run = 1;
        }
        if run > MAX_CHAR_RUN && c.is_alphanumeric() {
            return true;
        }
    }
    false
}

fn has_repeated_ngram(words: &[String]) -> bool {
    if words.len() < REPEAT_NGRAM {
        return false;
    }
    let mut seen: HashMap<&[String], usize> = HashMap::new();
    for gram in words.windows(REPEAT_NGRAM) {
        let n = seen.entry(gram).or_default();
        *n += 1;
        if *n >= REPEAT_LIMIT {
            return true;
        }
    }
    false
}
