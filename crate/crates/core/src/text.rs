//! Token normalization: punctuation removal, lowercasing, numeral replacement.

use std::collections::HashMap;
use std::fmt;
use std::io::BufRead;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Lowercase tokens with no whitespace, punctuation or symbols.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TokenSequence(Vec<String>);

impl TokenSequence {
    pub fn tokens(&self) -> &[String] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &str> {
        self.0.iter().map(String::as_str)
    }

    /// Tokens joined by single spaces; the canonical normalized name form.
    pub fn joined(&self) -> String {
        self.0.join(" ")
    }

    /// First `n` tokens.
    pub fn truncated(&self, n: usize) -> TokenSequence {
        TokenSequence(self.0.iter().take(n).cloned().collect())
    }

    /// Builds a sequence from tokens that are already normalized.
    ///
    /// Only for tokens produced by [`normalize_text`] or equivalent fixtures;
    /// panics if a token is empty or contains whitespace.
    pub fn from_normalized<I, S>(tokens: I) -> TokenSequence
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let v: Vec<String> = tokens.into_iter().map(Into::into).collect();
        assert!(
            v.iter().all(|t| !t.is_empty() && !t.chars().any(char::is_whitespace)),
            "tokens must be non-empty and whitespace-free: {v:?}"
        );
        TokenSequence(v)
    }
}

impl fmt::Display for TokenSequence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.joined())
    }
}

const UNITS: [&str; 21] = [
    "zero",
    "one",
    "two",
    "three",
    "four",
    "five",
    "six",
    "seven",
    "eight",
    "nine",
    "ten",
    "eleven",
    "twelve",
    "thirteen",
    "fourteen",
    "fifteen",
    "sixteen",
    "seventeen",
    "eighteen",
    "nineteen",
    "twenty",
];

const ORDINALS: [&str; 20] = [
    "first",
    "second",
    "third",
    "fourth",
    "fifth",
    "sixth",
    "seventh",
    "eighth",
    "ninth",
    "tenth",
    "eleventh",
    "twelfth",
    "thirteenth",
    "fourteenth",
    "fifteenth",
    "sixteenth",
    "seventeenth",
    "eighteenth",
    "nineteenth",
    "twentieth",
];

const ROMAN: [&str; 20] = [
    "i", "ii", "iii", "iv", "v", "vi", "vii", "viii", "ix", "x", "xi", "xii", "xiii", "xiv", "xv", "xvi", "xvii",
    "xviii", "xix", "xx",
];

/// Maps numeral forms (Arabic, Roman, ordinal suffixes) to spelled-out English.
///
/// Keys are lowercase whole tokens.
#[derive(Debug, Clone)]
pub struct NumeralDictionary {
    map: HashMap<String, String>,
}

impl NumeralDictionary {
    pub fn empty() -> Self {
        NumeralDictionary { map: HashMap::new() }
    }

    /// 0-20 in Arabic digits, Roman numerals i-xx, and 1st-20th.
    pub fn builtin() -> Self {
        let mut map = HashMap::new();
        for (n, word) in UNITS.iter().enumerate() {
            map.insert(n.to_string(), word.to_string());
        }
        for (i, roman) in ROMAN.iter().enumerate() {
            map.insert(roman.to_string(), UNITS[i + 1].to_string());
        }
        for (i, ord) in ORDINALS.iter().enumerate() {
            let n = i + 1;
            let suffix = match (n % 10, n % 100) {
                (_, 11..=13) => "th",
                (1, _) => "st",
                (2, _) => "nd",
                (3, _) => "rd",
                _ => "th",
            };
            map.insert(format!("{n}{suffix}"), ord.to_string());
        }
        NumeralDictionary { map }
    }

    pub fn insert(&mut self, form: &str, english: &str) {
        self.map.insert(form.to_lowercase(), english.to_lowercase());
    }

    /// Adds `form<TAB>english` rows; later rows override earlier ones.
    pub fn extend_from_tsv(&mut self, reader: impl BufRead, source_name: &str) -> Result<usize> {
        let mut added = 0;
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let mut parts = line.split('\t');
            match (parts.next(), parts.next(), parts.next()) {
                (Some(form), Some(english), None) if !form.is_empty() && !english.is_empty() => {
                    self.insert(form.trim(), english.trim());
                    added += 1;
                }
                _ => return Err(Error::format(source_name, i + 1, "expected `form<TAB>english`")),
            }
        }
        Ok(added)
    }

    pub fn get(&self, token: &str) -> Option<&str> {
        self.map.get(token).map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }
}

impl Default for NumeralDictionary {
    fn default() -> Self {
        Self::builtin()
    }
}

fn punctuation() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"[\p{P}\p{S}]").expect("valid regex"))
}

/// Replaces punctuation and symbols with spaces, lowercases, splits on
/// whitespace and maps each token through the numeral dictionary.
pub fn normalize_text(raw: &str, numerals: &NumeralDictionary) -> TokenSequence {
    let cleaned = punctuation().replace_all(raw, " ").to_lowercase();
    let tokens = cleaned
        .split_whitespace()
        .flat_map(|tok| {
            let mapped = numerals.get(tok).unwrap_or(tok);
            // A user-supplied image may itself contain spaces.
            mapped.split_whitespace().map(str::to_string).collect::<Vec<_>>()
        })
        .collect();
    TokenSequence(tokens)
}
