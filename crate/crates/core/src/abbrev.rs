//! Abbreviation dictionary, in-document abbreviation harvesting and mention expansion.

use std::collections::HashMap;
use std::io::BufRead;
use std::sync::OnceLock;

use regex::Regex;

use crate::corpus::Document;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AbbrevSource {
    Global,
    DocumentLocal,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AbbrevEntry {
    pub long: String,
    pub source: AbbrevSource,
}

/// Case-sensitive short form to long form map.
///
/// When a short form is inserted twice, the first entry is kept.
#[derive(Debug, Clone, Default)]
pub struct AbbreviationDictionary {
    entries: HashMap<String, AbbrevEntry>,
}

impl AbbreviationDictionary {
    pub fn new() -> Self {
        Self::default()
    }

    /// Returns false when the entry was rejected (self-mapping or duplicate).
    pub fn insert(&mut self, short: &str, long: &str, source: AbbrevSource) -> bool {
        let (short, long) = (short.trim(), long.trim());
        if short.is_empty() || long.is_empty() || short.to_lowercase() == long.to_lowercase() {
            return false;
        }
        if self.entries.contains_key(short) {
            return false;
        }
        self.entries.insert(
            short.to_string(),
            AbbrevEntry {
                long: long.to_string(),
                source,
            },
        );
        true
    }

    pub fn from_tsv(reader: impl BufRead, source_name: &str) -> Result<Self> {
        let mut dict = Self::new();
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let mut parts = line.split('\t');
            match (parts.next(), parts.next(), parts.next()) {
                (Some(short), Some(long), None) if !short.trim().is_empty() && !long.trim().is_empty() => {
                    dict.insert(short, long, AbbrevSource::Global);
                }
                _ => return Err(Error::format(source_name, i + 1, "expected `short<TAB>long`")),
            }
        }
        Ok(dict)
    }

    pub fn get(&self, short: &str) -> Option<&AbbrevEntry> {
        self.entries.get(short)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

fn parenthetical() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"\(([^()]*)\)").expect("valid regex"))
}

fn is_short_form(s: &str) -> bool {
    let n = s.chars().count();
    if !(2..=10).contains(&n) || s.chars().any(char::is_whitespace) {
        return false;
    }
    if !s.chars().next().is_some_and(char::is_alphanumeric) || !s.chars().any(char::is_uppercase) {
        return false;
    }
    let strong = s.chars().filter(|c| c.is_uppercase() || c.is_ascii_digit()).count();
    2 * strong >= n
}

/// Candidate long form for `short` from the words preceding its parenthesis.
///
/// The long form takes one word per uppercase letter of the short form (at
/// most 8, stopping at clause punctuation). It is accepted when at least half
/// of those words have initials that match, greedily and left to right, into
/// the short form.
fn long_form(before: &str, short: &str) -> Option<String> {
    let clause_start = before
        .rfind(['.', ',', ';', ':', '!', '?', '(', ')', '[', ']', '\n'])
        .map(|i| i + 1)
        .unwrap_or(0);
    let words: Vec<String> = before[clause_start..]
        .split_whitespace()
        .map(|w| w.trim_matches(|c: char| !c.is_alphanumeric()).to_lowercase())
        .filter(|w| !w.is_empty())
        .collect();
    let wanted = short.chars().filter(|c| c.is_uppercase()).count().clamp(1, 8);
    let n = wanted.min(words.len());
    if n == 0 {
        return None;
    }
    let chosen = &words[words.len() - n..];
    let target: Vec<char> = short.to_lowercase().chars().collect();
    let mut pos = 0;
    let mut matched = 0;
    for w in chosen {
        let initial = w.chars().next()?;
        if let Some(off) = target[pos..].iter().position(|&c| c == initial) {
            matched += 1;
            pos += off + 1;
        }
    }
    (matched >= 1 && 2 * matched >= n).then(|| chosen.join(" "))
}

/// Harvests `Long Form (SHORT)` definitions from the document text.
pub fn detect_local_abbreviations(doc: &Document) -> AbbreviationDictionary {
    let mut dict = AbbreviationDictionary::new();
    for cap in parenthetical().captures_iter(&doc.text) {
        let whole = cap.get(0).expect("group 0");
        let short = cap[1].trim();
        if !is_short_form(short) {
            continue;
        }
        if let Some(long) = long_form(&doc.text[..whole.start()], short) {
            dict.insert(short, &long, AbbrevSource::DocumentLocal);
        }
    }
    dict
}

/// Expands the whole string, or else its first token that is a known short form.
/// `local` entries win over `global` ones.
pub fn expand_string(s: &str, local: &AbbreviationDictionary, global: &AbbreviationDictionary) -> String {
    let lookup = |key: &str| local.get(key).or_else(|| global.get(key)).map(|e| e.long.clone());
    let trimmed = s.trim();
    if let Some(long) = lookup(trimmed) {
        return long;
    }
    let tokens: Vec<&str> = trimmed.split_whitespace().collect();
    for (i, tok) in tokens.iter().enumerate() {
        let core = tok.trim_matches(|c: char| !c.is_alphanumeric());
        if core.is_empty() {
            continue;
        }
        if let Some(long) = lookup(core) {
            let mut out: Vec<String> = tokens.iter().map(|t| t.to_string()).collect();
            out[i] = tok.replacen(core, &long, 1);
            return out.join(" ");
        }
    }
    s.to_string()
}

/// Sets each mention's working string; spans, surfaces and text are untouched.
pub fn expand_abbreviations(doc: &mut Document, global: &AbbreviationDictionary) {
    let local = detect_local_abbreviations(doc);
    for m in &mut doc.mentions {
        m.working = expand_string(&m.surface, &local, global);
    }
}
