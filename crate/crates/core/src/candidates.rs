//! Candidate generation by aligned cosine similarity over word vectors.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashMap};
use std::io::{BufRead, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{mention_refs, Document, Gold, MentionRecord};
use crate::embeddings::WordEmbeddingTable;
use crate::error::{Error, Result};
use crate::kb::KnowledgeBase;
use crate::text::TokenSequence;

/// Scores at or above this count as exact name matches.
pub const EXACT_MATCH: f64 = 1.0 - 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct Candidate {
    pub entity: String,
    pub name: TokenSequence,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CandidateSet {
    pub doc_id: String,
    pub mention: usize,
    pub items: Vec<Candidate>,
    pub k: usize,
    /// Set when the mention had no tokens to score.
    pub unlinkable: bool,
}

impl CandidateSet {
    pub fn contains(&self, entity: &str) -> bool {
        self.items.iter().any(|c| c.entity == entity)
    }

    pub fn has_exact_match(&self) -> bool {
        self.items.first().is_some_and(|c| c.score >= EXACT_MATCH)
    }
}

/// A token with its unit-normalized vector, if it has a non-zero one.
#[derive(Debug, Clone)]
struct TokenVec {
    text: String,
    unit: Option<Vec<f64>>,
}

impl TokenVec {
    fn new(text: &str, table: &WordEmbeddingTable) -> Self {
        let unit = table.get(text).and_then(|v| {
            let norm = v.iter().map(|&x| x as f64 * x as f64).sum::<f64>().sqrt();
            (norm > 0.0).then(|| v.iter().map(|&x| x as f64 / norm).collect())
        });
        TokenVec {
            text: text.to_string(),
            unit,
        }
    }
}

fn pair_cos(a: &TokenVec, b: &TokenVec) -> f64 {
    if a.text == b.text {
        return 1.0;
    }
    match (&a.unit, &b.unit) {
        (Some(u), Some(v)) => u.iter().zip(v).map(|(x, y)| x * y).sum::<f64>().clamp(-1.0, 1.0),
        _ => 0.0,
    }
}

fn acos_vec(m: &TokenVec, s: &[&TokenVec]) -> f64 {
    s.iter().map(|t| pair_cos(m, t)).fold(f64::NEG_INFINITY, f64::max)
}

fn sim_vec(m: &[&TokenVec], s: &[&TokenVec]) -> f64 {
    let mut terms: Vec<f64> = m.iter().map(|t| acos_vec(t, s)).collect();
    terms.extend(s.iter().map(|t| acos_vec(t, m)));
    // Summing in sorted order makes the result independent of token order
    // and of argument order, bit for bit.
    terms.sort_by(f64::total_cmp);
    terms.iter().sum::<f64>() / terms.len() as f64
}

/// Best cosine between `token` and any token of `name`.
pub fn acos(token: &str, name: &TokenSequence, table: &WordEmbeddingTable) -> Result<f64> {
    if name.is_empty() {
        return Err(Error::Empty("name"));
    }
    let m = TokenVec::new(token, table);
    let s: Vec<TokenVec> = name.iter().map(|t| TokenVec::new(t, table)).collect();
    Ok(acos_vec(&m, &s.iter().collect::<Vec<_>>()))
}

/// Mean of the aligned cosines in both directions.
pub fn name_similarity(mention: &TokenSequence, name: &TokenSequence, table: &WordEmbeddingTable) -> Result<f64> {
    if mention.is_empty() {
        return Err(Error::Empty("mention"));
    }
    if name.is_empty() {
        return Err(Error::Empty("name"));
    }
    let m: Vec<TokenVec> = mention.iter().map(|t| TokenVec::new(t, table)).collect();
    let s: Vec<TokenVec> = name.iter().map(|t| TokenVec::new(t, table)).collect();
    Ok(sim_vec(&m.iter().collect::<Vec<_>>(), &s.iter().collect::<Vec<_>>()))
}

/// Ranking order: higher score first, then smaller entity id, then smaller name.
fn rank_order(a: &Candidate, b: &Candidate) -> Ordering {
    b.score
        .total_cmp(&a.score)
        .then_with(|| a.entity.cmp(&b.entity))
        .then_with(|| a.name.joined().cmp(&b.name.joined()))
}

/// Heap entry ordered so that the worst-ranked candidate is the maximum.
struct Worst(Candidate);

impl PartialEq for Worst {
    fn eq(&self, other: &Self) -> bool {
        rank_order(&self.0, &other.0) == Ordering::Equal
    }
}
impl Eq for Worst {}
impl PartialOrd for Worst {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Worst {
    fn cmp(&self, other: &Self) -> Ordering {
        rank_order(&self.0, &other.0)
    }
}

struct IndexedName {
    tokens: TokenSequence,
    joined: String,
    ids: Vec<usize>,
}

struct IndexedEntity {
    id: String,
    names: Vec<IndexedName>,
}

/// Knowledge base names with precomputed token vectors.
pub struct CandidateIndex {
    vocab: Vec<TokenVec>,
    entities: Vec<IndexedEntity>,
}

impl CandidateIndex {
    pub fn new(kb: &KnowledgeBase, table: &WordEmbeddingTable) -> Self {
        let mut lookup: HashMap<String, usize> = HashMap::new();
        let mut vocab = Vec::new();
        let entities = kb
            .entities()
            .map(|e| IndexedEntity {
                id: e.id.clone(),
                names: e
                    .name_tokens()
                    .iter()
                    .filter(|n| !n.is_empty())
                    .map(|n| IndexedName {
                        tokens: n.clone(),
                        joined: n.joined(),
                        ids: n
                            .iter()
                            .map(|t| {
                                *lookup.entry(t.to_string()).or_insert_with(|| {
                                    vocab.push(TokenVec::new(t, table));
                                    vocab.len() - 1
                                })
                            })
                            .collect(),
                    })
                    .collect(),
            })
            .collect();
        CandidateIndex { vocab, entities }
    }

    pub fn entity_count(&self) -> usize {
        self.entities.len()
    }

    /// Top-`k` entities for a token sequence, optionally applying the
    /// exact-match filter. Returns `None` for an empty sequence.
    pub fn rank(
        &self,
        mention: &TokenSequence,
        k: usize,
        table: &WordEmbeddingTable,
        exact_filter: bool,
    ) -> Option<Vec<Candidate>> {
        if mention.is_empty() {
            return None;
        }
        let m: Vec<TokenVec> = mention.iter().map(|t| TokenVec::new(t, table)).collect();
        let m: Vec<&TokenVec> = m.iter().collect();
        let mut heap: BinaryHeap<Worst> = BinaryHeap::with_capacity(k + 1);
        let mut s: Vec<&TokenVec> = Vec::new();
        for e in &self.entities {
            let mut best: Option<(f64, &IndexedName)> = None;
            for name in &e.names {
                s.clear();
                s.extend(name.ids.iter().map(|&i| &self.vocab[i]));
                let score = sim_vec(&m, &s);
                let better = match best {
                    None => true,
                    Some((b, bn)) => score > b || (score == b && name.joined < bn.joined),
                };
                if better {
                    best = Some((score, name));
                }
            }
            let Some((score, name)) = best else { continue };
            let cand = Candidate {
                entity: e.id.clone(),
                name: name.tokens.clone(),
                score,
            };
            if heap.len() < k {
                heap.push(Worst(cand));
            } else if let Some(worst) = heap.peek() {
                if rank_order(&cand, &worst.0) == Ordering::Less {
                    heap.pop();
                    heap.push(Worst(cand));
                }
            }
        }
        let mut items: Vec<Candidate> = heap.into_iter().map(|w| w.0).collect();
        items.sort_by(rank_order);
        if exact_filter && items.first().is_some_and(|c| c.score >= EXACT_MATCH) {
            items.retain(|c| c.score >= EXACT_MATCH);
        }
        Some(items)
    }

    pub fn generate(
        &self,
        doc_id: &str,
        index: usize,
        mention: &MentionRecord,
        k: usize,
        table: &WordEmbeddingTable,
        exact_filter: bool,
    ) -> CandidateSet {
        let ranked = self.rank(&mention.tokens, k, table, exact_filter);
        CandidateSet {
            doc_id: doc_id.to_string(),
            mention: index,
            unlinkable: ranked.is_none(),
            items: ranked.unwrap_or_default(),
            k,
        }
    }

    /// Candidate sets for every mention, in corpus order. Mentions are scored
    /// in parallel on the current rayon pool.
    pub fn generate_all(
        &self,
        docs: &[Document],
        k: usize,
        table: &WordEmbeddingTable,
        exact_filter: bool,
    ) -> Vec<CandidateSet> {
        mention_refs(docs)
            .par_iter()
            .map(|r| {
                let doc = &docs[r.doc];
                self.generate(&doc.doc_id, r.mention, &doc.mentions[r.mention], k, table, exact_filter)
            })
            .collect()
    }
}

/// Candidate set for a single mention with the exact-match filter applied.
pub fn generate_candidates(
    doc_id: &str,
    index: usize,
    mention: &MentionRecord,
    kb: &KnowledgeBase,
    table: &WordEmbeddingTable,
    k: usize,
) -> Result<CandidateSet> {
    check_args(kb, k)?;
    Ok(CandidateIndex::new(kb, table).generate(doc_id, index, mention, k, table, true))
}

fn check_args(kb: &KnowledgeBase, k: usize) -> Result<()> {
    if kb.is_empty() {
        return Err(Error::Empty("knowledge base"));
    }
    if k == 0 {
        return Err(Error::Invalid("k must be at least 1".into()));
    }
    Ok(())
}

/// Fraction of mentions with a gold entity whose entity is among the
/// candidates. `sets` must be aligned with [`mention_refs`] of `docs`.
pub fn recall_from_sets(docs: &[Document], sets: &[CandidateSet]) -> Result<f64> {
    let refs = mention_refs(docs);
    if refs.len() != sets.len() {
        return Err(Error::Invalid(format!(
            "{} mentions but {} candidate sets",
            refs.len(),
            sets.len()
        )));
    }
    let mut total = 0usize;
    let mut hit = 0usize;
    for (r, set) in refs.iter().zip(sets) {
        if let Gold::Entity(id) = &docs[r.doc].mentions[r.mention].gold {
            total += 1;
            hit += set.contains(id) as usize;
        }
    }
    if total == 0 {
        return Err(Error::Empty("set of mentions with gold entities"));
    }
    Ok(hit as f64 / total as f64)
}

pub fn recall_at_k(docs: &[Document], kb: &KnowledgeBase, table: &WordEmbeddingTable, k: usize) -> Result<f64> {
    check_args(kb, k)?;
    let sets = CandidateIndex::new(kb, table).generate_all(docs, k, table, true);
    recall_from_sets(docs, &sets)
}

#[derive(Serialize, Deserialize)]
struct CacheItem {
    entity: String,
    name: String,
    score: f64,
}

#[derive(Serialize, Deserialize)]
struct CacheRecord {
    doc_id: String,
    mention: usize,
    candidates: Vec<CacheItem>,
}

pub fn write_candidate_cache(mut w: impl Write, sets: &[CandidateSet]) -> Result<()> {
    for s in sets {
        let rec = CacheRecord {
            doc_id: s.doc_id.clone(),
            mention: s.mention,
            candidates: s
                .items
                .iter()
                .map(|c| CacheItem {
                    entity: c.entity.clone(),
                    name: c.name.joined(),
                    score: c.score,
                })
                .collect(),
        };
        serde_json::to_writer(&mut w, &rec)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

/// Reads a cache written by [`write_candidate_cache`]. An empty candidate
/// list is read back as unlinkable.
pub fn read_candidate_cache(reader: impl BufRead, source_name: &str, k: usize) -> Result<Vec<CandidateSet>> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: CacheRecord =
            serde_json::from_str(&line).map_err(|e| Error::format(source_name, i + 1, e.to_string()))?;
        if rec.candidates.len() > k {
            return Err(Error::format(
                source_name,
                i + 1,
                format!("{} candidates exceed k = {k}", rec.candidates.len()),
            ));
        }
        let items = rec
            .candidates
            .into_iter()
            .map(|c| {
                if !c.score.is_finite() {
                    return Err(Error::format(source_name, i + 1, "non-finite score"));
                }
                Ok(Candidate {
                    entity: c.entity,
                    name: TokenSequence::from_normalized(c.name.split_whitespace()),
                    score: c.score,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        out.push(CandidateSet {
            doc_id: rec.doc_id,
            mention: rec.mention,
            unlinkable: items.is_empty(),
            items,
            k,
        });
    }
    Ok(out)
}
