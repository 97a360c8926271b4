//! Generated linking task with a known answer, used for end-to-end checks
//! and demos.
//!
//! Words come in synonym groups whose vectors share a direction. Each entity
//! is a set of groups (two entities share at most one group) and each of its
//! names picks one synonym per group. Mentions perturb a name by synonym
//! swaps, word reordering and single-character typos.

use std::collections::BTreeSet;
use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::corpus::{write_corpus, Document, Gold};
use crate::embeddings::WordEmbeddingTable;
use crate::error::{Error, Result};
use crate::kb::KnowledgeBase;
use crate::linker::typo;
use crate::model::ModelConfig;
use crate::preprocess::Preprocessor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticConfig {
    pub entities: usize,
    pub names_per_entity: usize,
    pub groups: usize,
    pub synonyms_per_group: usize,
    pub groups_per_entity: usize,
    pub word_dim: usize,
    /// Scale of per-word noise added to the unit group direction.
    pub noise: f64,
    pub entity_dim: usize,
    pub train_mentions: usize,
    pub test_mentions: usize,
    pub mentions_per_doc: usize,
    pub swap_prob: f64,
    pub reorder_prob: f64,
    pub typo_prob: f64,
    /// Probability that a mention is made of unrelated words and labeled NIL.
    pub nil_prob: f64,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            entities: 50,
            names_per_entity: 3,
            groups: 40,
            synonyms_per_group: 3,
            groups_per_entity: 4,
            word_dim: 16,
            noise: 0.3,
            entity_dim: 8,
            train_mentions: 200,
            test_mentions: 50,
            mentions_per_doc: 5,
            swap_prob: 0.5,
            reorder_prob: 0.5,
            typo_prob: 0.2,
            nil_prob: 0.0,
            seed: 7,
        }
    }
}

/// A small model sized for the generated task.
pub fn model_config(word_dim: usize, entity_dim: usize) -> ModelConfig {
    ModelConfig {
        word_dim,
        char_emb_dim: 16,
        char_lstm_dim: 16,
        cnn_feature_maps: 32,
        cnn_windows: vec![1, 2, 3],
        context_lstm_dim: 8,
        entity_emb_dim: entity_dim,
        hidden_dim: 64,
        dropout: 0.1,
        max_tokens: 20,
        max_chars: 25,
        ..ModelConfig::default()
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticTask {
    pub config: SyntheticConfig,
    /// `(entity id, names)` in id order.
    pub entity_names: Vec<(String, Vec<String>)>,
    pub kb: KnowledgeBase,
    pub words: WordEmbeddingTable,
    pub entity_vectors: WordEmbeddingTable,
    /// Raw documents; run them through a [`Preprocessor`] before use.
    pub train_docs: Vec<Document>,
    pub test_docs: Vec<Document>,
}

fn pronounceable(rng: &mut ChaCha8Rng, taken: &mut BTreeSet<String>) -> String {
    const CONSONANTS: &[u8] = b"bcdfghklmnprstvz";
    const VOWELS: &[u8] = b"aeiou";
    loop {
        let len = rng.gen_range(4..=8);
        let w: String = (0..len)
            .map(|i| {
                let set = if i % 2 == 0 { CONSONANTS } else { VOWELS };
                set[rng.gen_range(0..set.len())] as char
            })
            .collect();
        if taken.insert(w.clone()) {
            return w;
        }
    }
}

fn unit_gaussian(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    let v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.into_iter().map(|x| x / n).collect()
}

fn capitalize(w: &str) -> String {
    let mut c = w.chars();
    match c.next() {
        Some(f) => f.to_uppercase().chain(c).collect(),
        None => String::new(),
    }
}

impl SyntheticTask {
    pub fn generate(config: &SyntheticConfig) -> Result<Self> {
        let c = config;
        if c.groups_per_entity < 2 || c.groups_per_entity > c.groups {
            return Err(Error::Invalid("groups_per_entity must lie in [2, groups]".into()));
        }
        if c.mentions_per_doc == 0 || c.names_per_entity == 0 || c.synonyms_per_group == 0 {
            return Err(Error::Invalid(
                "mentions_per_doc, names_per_entity and synonyms_per_group must be positive".into(),
            ));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(c.seed);
        let mut taken = BTreeSet::new();
        let mut words = WordEmbeddingTable::new(c.word_dim)?;

        let mut groups: Vec<Vec<String>> = Vec::with_capacity(c.groups);
        for _ in 0..c.groups {
            let base = unit_gaussian(&mut rng, c.word_dim);
            let mut members = Vec::with_capacity(c.synonyms_per_group);
            for _ in 0..c.synonyms_per_group {
                let w = pronounceable(&mut rng, &mut taken);
                let v: Vec<f32> = base
                    .iter()
                    .map(|b| {
                        (b + c.noise * Distribution::<f64>::sample(&StandardNormal, &mut rng)
                            / (c.word_dim as f64).sqrt()) as f32
                    })
                    .collect();
                words.insert(&w, &v)?;
                members.push(w);
            }
            groups.push(members);
        }
        let fillers: Vec<String> = (0..30)
            .map(|_| {
                let w = pronounceable(&mut rng, &mut taken);
                let v: Vec<f32> = unit_gaussian(&mut rng, c.word_dim)
                    .into_iter()
                    .map(|x| x as f32)
                    .collect();
                words.insert(&w, &v).expect("fresh word");
                w
            })
            .collect();

        // Group sets with pairwise overlap of at most one group.
        let mut signatures: Vec<Vec<usize>> = Vec::with_capacity(c.entities);
        let mut attempts = 0;
        while signatures.len() < c.entities {
            attempts += 1;
            if attempts > 100_000 {
                return Err(Error::Invalid(
                    "cannot place that many entities over so few groups".into(),
                ));
            }
            let mut sig: Vec<usize> = rand::seq::index::sample(&mut rng, c.groups, c.groups_per_entity).into_vec();
            sig.sort_unstable();
            let ok = signatures
                .iter()
                .all(|s| s.iter().filter(|g| sig.contains(g)).count() <= 1);
            if ok {
                signatures.push(sig);
            }
        }

        let pre = Preprocessor::default();
        let mut kb = KnowledgeBase::new();
        let mut entity_names = Vec::with_capacity(c.entities);
        let mut entity_vectors = WordEmbeddingTable::new(c.entity_dim)?;
        let width = c.entities.to_string().len().max(3);
        for (i, sig) in signatures.iter().enumerate() {
            let id = format!("E{:0width$}", i + 1);
            let mut names: Vec<String> = Vec::new();
            let max_distinct = c.synonyms_per_group.pow(sig.len() as u32);
            let wanted = c.names_per_entity.min(max_distinct);
            while names.len() < wanted {
                let mut ws: Vec<&str> = sig
                    .iter()
                    .map(|&g| groups[g].choose(&mut rng).expect("non-empty").as_str())
                    .collect();
                ws.shuffle(&mut rng);
                let name = capitalize(&ws.join(" "));
                if !names.iter().any(|n| n.to_lowercase() == name.to_lowercase()) {
                    names.push(name);
                }
            }
            let refs: Vec<&str> = names.iter().map(String::as_str).collect();
            kb.add_entity(&id, &refs, &pre)?;
            let v: Vec<f32> = unit_gaussian(&mut rng, c.entity_dim)
                .into_iter()
                .map(|x| x as f32)
                .collect();
            entity_vectors.insert(&id, &v)?;
            entity_names.push((id, names));
        }

        let make_docs = |prefix: &str, n_mentions: usize, rng: &mut ChaCha8Rng| -> Result<Vec<Document>> {
            let mut docs = Vec::new();
            let mut made = 0;
            while made < n_mentions {
                let in_doc = c.mentions_per_doc.min(n_mentions - made);
                let mut text = String::new();
                let mut spans = Vec::with_capacity(in_doc);
                for j in 0..in_doc {
                    if j > 0 {
                        text.push(' ');
                    }
                    let f1 = fillers.choose(rng).expect("fillers");
                    let f2 = fillers.choose(rng).expect("fillers");
                    text.push_str(&capitalize(f1));
                    text.push(' ');
                    text.push_str(f2);
                    text.push(' ');
                    let (surface, gold) = if rng.gen_bool(c.nil_prob) {
                        let ws: Vec<&str> = (0..c.groups_per_entity)
                            .map(|_| fillers.choose(rng).expect("fillers").as_str())
                            .collect();
                        (ws.join(" "), Gold::Nil)
                    } else {
                        let e = rng.gen_range(0..signatures.len());
                        (
                            perturb(&entity_names[e].1, &signatures[e], &groups, c, rng),
                            Gold::Entity(entity_names[e].0.clone()),
                        )
                    };
                    let start = text.len();
                    text.push_str(&surface);
                    spans.push((start, text.len(), gold));
                    text.push(' ');
                    text.push_str(fillers.choose(rng).expect("fillers"));
                    text.push('.');
                }
                docs.push(Document::new(format!("{prefix}{:03}", docs.len() + 1), text, spans)?);
                made += in_doc;
            }
            Ok(docs)
        };
        let train_docs = make_docs("train", c.train_mentions, &mut rng)?;
        let test_docs = make_docs("test", c.test_mentions, &mut rng)?;
        Ok(SyntheticTask {
            config: c.clone(),
            entity_names,
            kb,
            words,
            entity_vectors,
            train_docs,
            test_docs,
        })
    }

    /// Writes `kb.tsv`, `train.jsonl`, `test.jsonl`, `words.vec` and
    /// `entities.vec` into `dir`.
    pub fn write_files(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        let mut kb = BufWriter::new(File::create(dir.join("kb.tsv"))?);
        for (id, names) in &self.entity_names {
            for (i, n) in names.iter().enumerate() {
                use std::io::Write;
                writeln!(kb, "{id}\t{n}\t{}", if i == 0 { "C" } else { "S" })?;
            }
        }
        write_corpus(BufWriter::new(File::create(dir.join("train.jsonl"))?), &self.train_docs)?;
        write_corpus(BufWriter::new(File::create(dir.join("test.jsonl"))?), &self.test_docs)?;
        self.words
            .write_word2vec(BufWriter::new(File::create(dir.join("words.vec"))?))?;
        self.entity_vectors
            .write_word2vec(BufWriter::new(File::create(dir.join("entities.vec"))?))?;
        Ok(())
    }
}

fn perturb(
    names: &[String],
    sig: &[usize],
    groups: &[Vec<String>],
    c: &SyntheticConfig,
    rng: &mut ChaCha8Rng,
) -> String {
    let name = names.choose(rng).expect("entity has names").to_lowercase();
    let mut ws: Vec<String> = name.split_whitespace().map(str::to_string).collect();
    if rng.gen_bool(c.swap_prob) {
        let i = rng.gen_range(0..ws.len());
        if let Some(g) = sig.iter().map(|&g| &groups[g]).find(|g| g.contains(&ws[i])) {
            let others: Vec<&String> = g.iter().filter(|w| **w != ws[i]).collect();
            if let Some(w) = others.choose(rng) {
                ws[i] = (*w).clone();
            }
        }
    }
    if rng.gen_bool(c.reorder_prob) {
        ws.shuffle(rng);
    }
    if rng.gen_bool(c.typo_prob) {
        let i = rng.gen_range(0..ws.len());
        ws[i] = typo(&ws[i], rng);
    }
    let s = ws.join(" ");
    if rng.gen_bool(0.5) {
        capitalize(&s)
    } else {
        s
    }
}
