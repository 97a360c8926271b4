//! Knowledge base: entities with canonical names, synonyms and names
//! learned from training links.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{BufRead, Write};

use crate::corpus::{Document, Gold, NIL};
use crate::error::{Error, Result};
use crate::preprocess::Preprocessor;
use crate::text::TokenSequence;

#[derive(Debug, Clone, PartialEq)]
pub struct Entity {
    pub id: String,
    /// Raw names; the first is canonical.
    pub names: Vec<String>,
    pub augmented_names: Vec<String>,
    /// Normalized forms of `names` followed by `augmented_names`.
    normalized: Vec<TokenSequence>,
}

impl Entity {
    pub fn canonical(&self) -> &str {
        &self.names[0]
    }

    /// Normalized token sequences of every name, original names first.
    pub fn name_tokens(&self) -> &[TokenSequence] {
        &self.normalized
    }

    fn has_normalized(&self, joined: &str) -> bool {
        self.normalized.iter().any(|t| t.joined() == joined)
    }
}

#[derive(Debug, Clone, Default)]
pub struct LoadReport {
    pub entities: usize,
    pub names: usize,
    pub duplicate_names: usize,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct AugmentReport {
    pub added: usize,
    pub skipped_unknown: usize,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, Default)]
pub struct KnowledgeBase {
    entities: BTreeMap<String, Entity>,
    name_index: BTreeMap<String, BTreeSet<String>>,
}

impl KnowledgeBase {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds an entity. Names whose normalized form is empty or repeats an
    /// earlier name of the same entity are dropped; returns how many.
    pub fn add_entity(&mut self, id: &str, names: &[&str], pre: &Preprocessor) -> Result<usize> {
        if id.is_empty() || id == NIL {
            return Err(Error::Invalid(format!("`{id}` is not a valid entity id")));
        }
        if self.entities.contains_key(id) {
            return Err(Error::Invalid(format!("duplicate entity id `{id}`")));
        }
        let mut entity = Entity {
            id: id.to_string(),
            names: Vec::new(),
            augmented_names: Vec::new(),
            normalized: Vec::new(),
        };
        let mut dropped = 0;
        for name in names {
            let toks = pre.normalize_name(name);
            if toks.is_empty() || entity.has_normalized(&toks.joined()) {
                dropped += 1;
                continue;
            }
            entity.names.push(name.to_string());
            entity.normalized.push(toks);
        }
        if entity.names.is_empty() {
            return Err(Error::Invalid(format!("entity `{id}` has no usable names")));
        }
        for t in &entity.normalized {
            self.name_index.entry(t.joined()).or_default().insert(id.to_string());
        }
        self.entities.insert(id.to_string(), entity);
        Ok(dropped)
    }

    /// Reads `entity_id<TAB>name<TAB>flag` rows, flag `C` (canonical) or `S`
    /// (synonym). The first row of every id must be `C`.
    pub fn from_tsv(reader: impl BufRead, source_name: &str, pre: &Preprocessor) -> Result<(Self, LoadReport)> {
        let mut order: Vec<String> = Vec::new();
        let mut names: BTreeMap<String, Vec<String>> = BTreeMap::new();
        let mut first_line: BTreeMap<String, usize> = BTreeMap::new();
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            let lineno = i + 1;
            if line.trim().is_empty() {
                continue;
            }
            let parts: Vec<&str> = line.split('\t').collect();
            let [id, name, flag] = parts[..] else {
                return Err(Error::format(
                    source_name,
                    lineno,
                    "expected `entity_id<TAB>name<TAB>flag`",
                ));
            };
            if id.is_empty() || name.trim().is_empty() {
                return Err(Error::format(source_name, lineno, "empty entity id or name"));
            }
            if id == NIL {
                return Err(Error::format(
                    source_name,
                    lineno,
                    "`NIL` is reserved and cannot be an entity id",
                ));
            }
            match (flag, names.contains_key(id)) {
                ("C", false) => {
                    order.push(id.to_string());
                    first_line.insert(id.to_string(), lineno);
                    names.insert(id.to_string(), vec![name.to_string()]);
                }
                ("C", true) => {
                    return Err(Error::format(
                        source_name,
                        lineno,
                        format!("second canonical name for `{id}`"),
                    ));
                }
                ("S", true) => names.get_mut(id).expect("present").push(name.to_string()),
                ("S", false) => {
                    return Err(Error::format(
                        source_name,
                        lineno,
                        format!("first row for `{id}` must be canonical (C)"),
                    ));
                }
                _ => return Err(Error::format(source_name, lineno, format!("unknown flag `{flag}`"))),
            }
        }
        let mut kb = KnowledgeBase::new();
        let mut report = LoadReport::default();
        for id in order {
            let list = &names[&id];
            let refs: Vec<&str> = list.iter().map(String::as_str).collect();
            let dropped = kb
                .add_entity(&id, &refs, pre)
                .map_err(|e| Error::format(source_name, first_line[&id], e.to_string()))?;
            if dropped > 0 {
                report
                    .warnings
                    .push(format!("`{id}`: {dropped} duplicate or empty name(s) dropped"));
            }
            report.duplicate_names += dropped;
            report.entities += 1;
            report.names += list.len() - dropped;
        }
        Ok((kb, report))
    }

    /// Writes the KB back as TSV; augmented names are written as synonyms.
    pub fn write_tsv(&self, mut w: impl Write) -> Result<()> {
        for e in self.entities.values() {
            for (i, n) in e.names.iter().chain(&e.augmented_names).enumerate() {
                writeln!(w, "{}\t{}\t{}", e.id, n, if i == 0 { "C" } else { "S" })?;
            }
        }
        Ok(())
    }

    pub fn get(&self, id: &str) -> Option<&Entity> {
        self.entities.get(id)
    }

    pub fn contains(&self, id: &str) -> bool {
        self.entities.contains_key(id)
    }

    /// Entities in ascending id order.
    pub fn entities(&self) -> impl Iterator<Item = &Entity> {
        self.entities.values()
    }

    pub fn len(&self) -> usize {
        self.entities.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entities.is_empty()
    }

    pub fn name_count(&self) -> usize {
        self.entities.values().map(|e| e.normalized.len()).sum()
    }

    /// Entity ids having a name whose normalized form is `joined`.
    pub fn lookup_name(&self, joined: &str) -> Option<&BTreeSet<String>> {
        self.name_index.get(joined)
    }

    /// Adds every linked training mention (after preprocessing) as a name of
    /// its gold entity, unless that entity already has the normalized form.
    pub fn augment(&mut self, training_docs: &[Document]) -> AugmentReport {
        let mut report = AugmentReport::default();
        for doc in training_docs {
            for (i, m) in doc.mentions.iter().enumerate() {
                let Gold::Entity(id) = &m.gold else { continue };
                if m.tokens.is_empty() {
                    continue;
                }
                let Some(entity) = self.entities.get_mut(id) else {
                    report.skipped_unknown += 1;
                    report.warnings.push(format!(
                        "document `{}` mention {i}: gold `{id}` not in knowledge base",
                        doc.doc_id
                    ));
                    continue;
                };
                let joined = m.tokens.joined();
                if entity.has_normalized(&joined) {
                    continue;
                }
                entity.augmented_names.push(joined.clone());
                entity.normalized.push(m.tokens.clone());
                self.name_index.entry(joined).or_default().insert(id.clone());
                report.added += 1;
            }
        }
        report
    }

    /// Every distinct character in any normalized name.
    pub fn characters(&self) -> BTreeSet<char> {
        self.entities
            .values()
            .flat_map(|e| e.normalized.iter())
            .flat_map(|t| t.iter().flat_map(str::chars).collect::<Vec<_>>())
            .collect()
    }
}
