//! Pre-trained vectors in word2vec text format and the character vocabulary.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::{BufRead, Write};

use crate::error::{Error, Result};

/// Word (or entity) vectors; unknown tokens map to the zero vector.
#[derive(Debug, Clone)]
pub struct WordEmbeddingTable {
    dim: usize,
    tokens: Vec<String>,
    index: HashMap<String, usize>,
    vectors: Vec<f32>,
    zero: Vec<f32>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct EmbeddingLoadReport {
    pub declared_count: usize,
    pub loaded: usize,
    pub duplicates: usize,
    pub warnings: Vec<String>,
}

impl WordEmbeddingTable {
    pub fn new(dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Invalid("embedding dimension must be positive".into()));
        }
        Ok(WordEmbeddingTable {
            dim,
            tokens: Vec::new(),
            index: HashMap::new(),
            vectors: Vec::new(),
            zero: vec![0.0; dim],
        })
    }

    /// Returns false (and keeps the existing vector) for a duplicate token.
    pub fn insert(&mut self, token: &str, vector: &[f32]) -> Result<bool> {
        if vector.len() != self.dim {
            return Err(Error::Invalid(format!(
                "vector for `{token}` has {} components, expected {}",
                vector.len(),
                self.dim
            )));
        }
        if vector.iter().any(|x| !x.is_finite()) {
            return Err(Error::Invalid(format!(
                "vector for `{token}` has non-finite components"
            )));
        }
        if token.is_empty() || self.index.contains_key(token) {
            return Ok(false);
        }
        self.index.insert(token.to_string(), self.tokens.len());
        self.tokens.push(token.to_string());
        self.vectors.extend_from_slice(vector);
        Ok(true)
    }

    /// Parses word2vec text format: a `count dim` header, then
    /// `token v1 .. v_dim` per line. Errors carry 1-based line numbers.
    pub fn read_word2vec(reader: impl BufRead, source_name: &str) -> Result<(Self, EmbeddingLoadReport)> {
        let mut lines = reader.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::format(source_name, 1, "missing `count dim` header"))??;
        let mut fields = header.split_whitespace();
        let parse = |s: Option<&str>| s.and_then(|v| v.parse::<usize>().ok());
        let (count, dim) = match (parse(fields.next()), parse(fields.next()), fields.next()) {
            (Some(c), Some(d), None) if d > 0 => (c, d),
            _ => return Err(Error::format(source_name, 1, format!("malformed header `{header}`"))),
        };
        let mut table = WordEmbeddingTable::new(dim)?;
        let mut report = EmbeddingLoadReport {
            declared_count: count,
            ..Default::default()
        };
        let mut buf = Vec::with_capacity(dim);
        for (i, line) in lines.enumerate() {
            let lineno = i + 2;
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let mut parts = line.split_whitespace();
            let token = parts.next().expect("non-empty line");
            buf.clear();
            for p in parts {
                let v: f32 = p
                    .parse()
                    .map_err(|_| Error::format(source_name, lineno, format!("cannot parse `{p}` as a number")))?;
                if !v.is_finite() {
                    return Err(Error::format(source_name, lineno, format!("non-finite value `{p}`")));
                }
                buf.push(v);
            }
            if buf.len() != dim {
                return Err(Error::format(
                    source_name,
                    lineno,
                    format!("`{token}` has {} values, header declares {dim}", buf.len()),
                ));
            }
            if table.insert(token, &buf)? {
                report.loaded += 1;
            } else {
                report.duplicates += 1;
                report
                    .warnings
                    .push(format!("line {lineno}: duplicate token `{token}` ignored"));
            }
        }
        if report.loaded + report.duplicates != count {
            report.warnings.push(format!(
                "header declares {count} rows, file has {}",
                report.loaded + report.duplicates
            ));
        }
        Ok((table, report))
    }

    pub fn write_word2vec(&self, mut w: impl Write) -> Result<()> {
        writeln!(w, "{} {}", self.tokens.len(), self.dim)?;
        for (i, t) in self.tokens.iter().enumerate() {
            write!(w, "{t}")?;
            for v in &self.vectors[i * self.dim..(i + 1) * self.dim] {
                write!(w, " {v}")?;
            }
            writeln!(w)?;
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn get(&self, token: &str) -> Option<&[f32]> {
        self.index
            .get(token)
            .map(|&i| &self.vectors[i * self.dim..(i + 1) * self.dim])
    }

    /// Stored vector and `true`, or the zero vector and `false`.
    pub fn lookup(&self, token: &str) -> (&[f32], bool) {
        match self.get(token) {
            Some(v) => (v, true),
            None => (&self.zero, false),
        }
    }

    /// Component-wise mean of all vectors (zero for an empty table).
    pub fn mean(&self) -> Vec<f32> {
        let mut acc = vec![0.0f64; self.dim];
        for row in self.vectors.chunks_exact(self.dim) {
            for (a, &v) in acc.iter_mut().zip(row) {
                *a += v as f64;
            }
        }
        let n = self.tokens.len().max(1) as f64;
        acc.into_iter().map(|a| (a / n) as f32).collect()
    }
}

/// Character to index map; index 0 is reserved for unknown characters.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CharVocab {
    chars: BTreeMap<char, usize>,
}

impl CharVocab {
    pub const UNKNOWN: usize = 0;

    pub fn from_chars(chars: impl IntoIterator<Item = char>) -> Self {
        let set: BTreeSet<char> = chars.into_iter().collect();
        let chars = set.into_iter().enumerate().map(|(i, c)| (c, i + 1)).collect();
        CharVocab { chars }
    }

    pub fn index(&self, c: char) -> usize {
        self.chars.get(&c).copied().unwrap_or(Self::UNKNOWN)
    }

    /// Number of rows in the character embedding matrix (including unknown).
    pub fn len(&self) -> usize {
        self.chars.len() + 1
    }

    pub fn is_empty(&self) -> bool {
        self.chars.is_empty()
    }

    /// Known characters in index order, for persistence.
    pub fn as_string(&self) -> String {
        self.chars.keys().collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn loads_simple_file() {
        let (t, r) = WordEmbeddingTable::read_word2vec("2 3\na 1 0 0\nb 0 1 0.5\n".as_bytes(), "w.vec").unwrap();
        assert_eq!((t.len(), t.dim()), (2, 3));
        assert_eq!(t.get("b").unwrap(), &[0.0, 1.0, 0.5]);
        assert!(r.warnings.is_empty());
    }

    #[test]
    fn short_row_errors_at_that_row() {
        let err = WordEmbeddingTable::read_word2vec("2 3\na 1 0 0\nb 0 1\n".as_bytes(), "w.vec").unwrap_err();
        assert!(err.to_string().starts_with("w.vec:3:"), "{err}");
    }

    #[test]
    fn malformed_header_and_non_finite() {
        assert!(WordEmbeddingTable::read_word2vec("two 3\n".as_bytes(), "w").is_err());
        assert!(WordEmbeddingTable::read_word2vec("".as_bytes(), "w").is_err());
        let err = WordEmbeddingTable::read_word2vec("1 2\na NaN 1\n".as_bytes(), "w").unwrap_err();
        assert!(err.to_string().starts_with("w:2:"));
        assert!(WordEmbeddingTable::read_word2vec("1 2\na inf 1\n".as_bytes(), "w").is_err());
    }

    #[test]
    fn duplicate_keeps_first() {
        let (t, r) = WordEmbeddingTable::read_word2vec("3 2\na 1 0\nb 0 1\na 5 5\n".as_bytes(), "w").unwrap();
        assert_eq!(r.duplicates, 1);
        assert_eq!(t.get("a").unwrap(), &[1.0, 0.0]);
    }

    #[test]
    fn lookup_policy() {
        let (t, _) = WordEmbeddingTable::read_word2vec("1 2\na 1 2\n".as_bytes(), "w").unwrap();
        assert_eq!(t.lookup("a"), (&[1.0f32, 2.0][..], true));
        assert_eq!(t.lookup("zz"), (&[0.0f32, 0.0][..], false));
        assert_eq!(t.lookup(""), (&[0.0f32, 0.0][..], false));
    }

    #[test]
    fn write_then_read() {
        let (t, _) = WordEmbeddingTable::read_word2vec("2 2\na 1 0.25\nb -3 1e-3\n".as_bytes(), "w").unwrap();
        let mut buf = Vec::new();
        t.write_word2vec(&mut buf).unwrap();
        let (u, _) = WordEmbeddingTable::read_word2vec(buf.as_slice(), "w").unwrap();
        assert_eq!(u.get("b"), t.get("b"));
    }

    #[test]
    fn char_vocab_reserves_zero() {
        let v = CharVocab::from_chars("abca".chars());
        assert_eq!(v.len(), 4);
        assert_eq!(v.index('a'), 1);
        assert_eq!(v.index('c'), 3);
        assert_eq!(v.index('Z'), CharVocab::UNKNOWN);
        assert_eq!(CharVocab::from_chars(v.as_string().chars()), v);
    }
}
