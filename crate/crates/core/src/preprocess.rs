//! Mention and name preprocessing shared by every pipeline stage.

use crate::abbrev::{expand_abbreviations, expand_string, AbbreviationDictionary};
use crate::corpus::{sentence_bounds, Document};
use crate::text::{normalize_text, NumeralDictionary, TokenSequence};

#[derive(Debug, Clone, Default)]
pub struct Preprocessor {
    pub numerals: NumeralDictionary,
    pub abbreviations: AbbreviationDictionary,
}

impl Preprocessor {
    pub fn new(numerals: NumeralDictionary, abbreviations: AbbreviationDictionary) -> Self {
        Preprocessor {
            numerals,
            abbreviations,
        }
    }

    pub fn normalize(&self, raw: &str) -> TokenSequence {
        normalize_text(raw, &self.numerals)
    }

    /// KB names go through global abbreviation expansion and normalization.
    pub fn normalize_name(&self, raw: &str) -> TokenSequence {
        let expanded = expand_string(raw, &AbbreviationDictionary::new(), &self.abbreviations);
        self.normalize(&expanded)
    }

    /// Expands abbreviations, normalizes each mention and its sentence.
    pub fn document(&self, doc: &mut Document) {
        expand_abbreviations(doc, &self.abbreviations);
        for m in &mut doc.mentions {
            m.tokens = self.normalize(&m.working);
            let (s, e) = sentence_bounds(&doc.text, m.start);
            m.context = self.normalize(&doc.text[s..e]);
        }
    }

    pub fn corpus(&self, docs: &mut [Document]) {
        for d in docs {
            self.document(d);
        }
    }
}
