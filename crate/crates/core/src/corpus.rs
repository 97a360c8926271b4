//! Documents, tagged mentions and the JSON Lines corpus format.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::text::TokenSequence;

/// Reserved gold label for unlinkable mentions.
pub const NIL: &str = "NIL";

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Gold {
    Entity(String),
    Nil,
    Unlabeled,
}

impl Gold {
    fn from_field(field: Option<String>) -> Gold {
        match field {
            None => Gold::Unlabeled,
            Some(s) if s == NIL => Gold::Nil,
            Some(s) => Gold::Entity(s),
        }
    }

    fn to_field(&self) -> Option<String> {
        match self {
            Gold::Entity(id) => Some(id.clone()),
            Gold::Nil => Some(NIL.to_string()),
            Gold::Unlabeled => None,
        }
    }

    pub fn entity(&self) -> Option<&str> {
        match self {
            Gold::Entity(id) => Some(id),
            _ => None,
        }
    }

    pub fn is_labeled(&self) -> bool {
        !matches!(self, Gold::Unlabeled)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MentionRecord {
    pub start: usize,
    pub end: usize,
    pub surface: String,
    /// Surface after abbreviation expansion.
    pub working: String,
    pub tokens: TokenSequence,
    /// Normalized tokens of the sentence containing the mention.
    pub context: TokenSequence,
    pub gold: Gold,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Document {
    pub doc_id: String,
    pub text: String,
    pub mentions: Vec<MentionRecord>,
}

/// Mention address inside a corpus: document position and mention position.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct MentionRef {
    pub doc: usize,
    pub mention: usize,
}

impl Document {
    /// Validates spans and fills `surface`; preprocessing fields start empty.
    pub fn new(doc_id: impl Into<String>, text: impl Into<String>, spans: Vec<(usize, usize, Gold)>) -> Result<Self> {
        let doc_id = doc_id.into();
        let text = text.into();
        let mut mentions = Vec::with_capacity(spans.len());
        for (i, (start, end, gold)) in spans.into_iter().enumerate() {
            if start >= end || end > text.len() {
                return Err(Error::Invalid(format!(
                    "document `{doc_id}` mention {i}: span [{start}, {end}) outside text of {} bytes",
                    text.len()
                )));
            }
            if !text.is_char_boundary(start) || !text.is_char_boundary(end) {
                return Err(Error::Invalid(format!(
                    "document `{doc_id}` mention {i}: span [{start}, {end}) splits a UTF-8 character"
                )));
            }
            let surface = text[start..end].to_string();
            mentions.push(MentionRecord {
                start,
                end,
                working: surface.clone(),
                surface,
                tokens: TokenSequence::default(),
                context: TokenSequence::default(),
                gold,
            });
        }
        Ok(Document { doc_id, text, mentions })
    }

    /// Gold ids as stored in the corpus file.
    pub fn spans(&self) -> Vec<(usize, usize, Gold)> {
        self.mentions.iter().map(|m| (m.start, m.end, m.gold.clone())).collect()
    }
}

#[derive(Serialize, Deserialize)]
struct RawMention {
    start: usize,
    end: usize,
    gold: Option<String>,
}

#[derive(Serialize, Deserialize)]
struct RawDocument {
    doc_id: String,
    text: String,
    mentions: Vec<RawMention>,
}

/// Reads one document per line; blank lines are skipped.
pub fn read_corpus(reader: impl BufRead, source_name: &str) -> Result<Vec<Document>> {
    let mut docs = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let raw: RawDocument =
            serde_json::from_str(&line).map_err(|e| Error::format(source_name, i + 1, e.to_string()))?;
        let spans = raw
            .mentions
            .into_iter()
            .map(|m| (m.start, m.end, Gold::from_field(m.gold)))
            .collect();
        let doc =
            Document::new(raw.doc_id, raw.text, spans).map_err(|e| Error::format(source_name, i + 1, e.to_string()))?;
        docs.push(doc);
    }
    Ok(docs)
}

pub fn write_corpus(mut writer: impl Write, docs: &[Document]) -> Result<()> {
    for d in docs {
        let raw = RawDocument {
            doc_id: d.doc_id.clone(),
            text: d.text.clone(),
            mentions: d
                .mentions
                .iter()
                .map(|m| RawMention {
                    start: m.start,
                    end: m.end,
                    gold: m.gold.to_field(),
                })
                .collect(),
        };
        serde_json::to_writer(&mut writer, &raw)?;
        writer.write_all(b"\n")?;
    }
    Ok(())
}

/// All mention references in corpus order.
pub fn mention_refs(docs: &[Document]) -> Vec<MentionRef> {
    docs.iter()
        .enumerate()
        .flat_map(|(d, doc)| (0..doc.mentions.len()).map(move |m| MentionRef { doc: d, mention: m }))
        .collect()
}

/// Byte range of the sentence containing `offset`; boundaries are `.`, `!`, `?` and newline.
pub fn sentence_bounds(text: &str, offset: usize) -> (usize, usize) {
    let is_boundary = |c: char| matches!(c, '.' | '!' | '?' | '\n');
    let start = text[..offset]
        .char_indices()
        .rev()
        .find(|&(_, c)| is_boundary(c))
        .map(|(i, c)| i + c.len_utf8())
        .unwrap_or(0);
    let end = text[offset..]
        .char_indices()
        .find(|&(_, c)| is_boundary(c))
        .map(|(i, _)| offset + i)
        .unwrap_or(text.len());
    (start, end)
}

#[cfg(test)]
mod tests {
    use super::*;

    const LINE: &str = r#"{"doc_id": "d1", "text": "Pt has DM. No fever.", "mentions": [{"start": 7, "end": 9, "gold": "E1"}, {"start": 14, "end": 19, "gold": "NIL"}, {"start": 0, "end": 2, "gold": null}]}"#;

    #[test]
    fn parses_gold_variants() {
        let docs = read_corpus(LINE.as_bytes(), "c.jsonl").unwrap();
        let m = &docs[0].mentions;
        assert_eq!(m[0].surface, "DM");
        assert_eq!(m[0].gold, Gold::Entity("E1".into()));
        assert_eq!(m[1].gold, Gold::Nil);
        assert_eq!(m[2].gold, Gold::Unlabeled);
    }

    #[test]
    fn rejects_out_of_bounds_span_with_line_number() {
        let bad = r#"{"doc_id": "d", "text": "abc", "mentions": [{"start": 1, "end": 9, "gold": null}]}"#;
        let input = format!("{LINE}\n{bad}\n");
        let err = read_corpus(input.as_bytes(), "c.jsonl").unwrap_err().to_string();
        assert!(err.starts_with("c.jsonl:2:"), "{err}");
    }

    #[test]
    fn rejects_empty_span() {
        assert!(Document::new("d", "abc", vec![(1, 1, Gold::Nil)]).is_err());
    }

    #[test]
    fn write_then_read_preserves_bytes() {
        let docs = read_corpus(LINE.as_bytes(), "c.jsonl").unwrap();
        let mut a = Vec::new();
        write_corpus(&mut a, &docs).unwrap();
        let again = read_corpus(a.as_slice(), "c.jsonl").unwrap();
        let mut b = Vec::new();
        write_corpus(&mut b, &again).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn sentence_splitting() {
        let text = "First one. Second has the mention! Third";
        let off = text.find("mention").unwrap();
        let (s, e) = sentence_bounds(text, off);
        assert_eq!(&text[s..e], " Second has the mention");
        assert_eq!(sentence_bounds(text, 0), (0, 9));
    }
}
