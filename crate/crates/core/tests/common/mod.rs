#![allow(dead_code)]

use std::io::Write;

use lightlink_core::candidates::EXACT_MATCH;
use lightlink_core::corpus::{Gold, MentionRecord};
use lightlink_core::embeddings::{CharVocab, WordEmbeddingTable};
use lightlink_core::kb::KnowledgeBase;
use lightlink_core::model::{Architecture, FeatureToggles, ModelConfig};
use lightlink_core::preprocess::Preprocessor;
use lightlink_core::text::TokenSequence;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Writes straight to the process stderr so the line shows up even when
/// the test harness captures output.
pub fn report(id: u32, title: &str, pass: bool, detail: &str) {
    let line = format!(
        "criterion {id} [{}] {title}: {detail}\n",
        if pass { "PASS" } else { "FAIL" }
    );
    let _ = std::io::stderr().write_all(line.as_bytes());
}

pub fn seq(tokens: &[&str]) -> TokenSequence {
    TokenSequence::from_normalized(tokens.iter().copied())
}

pub fn mention(tokens: &TokenSequence) -> MentionRecord {
    let text = tokens.joined();
    MentionRecord {
        start: 0,
        end: text.len(),
        surface: text.clone(),
        working: text,
        tokens: tokens.clone(),
        context: tokens.clone(),
        gold: Gold::Unlabeled,
    }
}

fn unit(v: &[f32]) -> Option<Vec<f64>> {
    let norm = v.iter().map(|&x| x as f64 * x as f64).sum::<f64>().sqrt();
    if norm == 0.0 {
        None
    } else {
        Some(v.iter().map(|&x| x as f64 / norm).collect())
    }
}

/// Token cosine written out directly from the definition.
pub fn oracle_cos(a: &str, b: &str, table: &WordEmbeddingTable) -> f64 {
    if a == b {
        return 1.0;
    }
    match (table.get(a).and_then(unit), table.get(b).and_then(unit)) {
        (Some(u), Some(v)) => {
            let mut dot = 0.0;
            for i in 0..u.len() {
                dot += u[i] * v[i];
            }
            dot.clamp(-1.0, 1.0)
        }
        _ => 0.0,
    }
}

pub fn oracle_sim(m: &[String], s: &[String], table: &WordEmbeddingTable) -> f64 {
    let mut terms = Vec::new();
    for a in m {
        let mut best = f64::NEG_INFINITY;
        for b in s {
            best = best.max(oracle_cos(a, b, table));
        }
        terms.push(best);
    }
    for b in s {
        let mut best = f64::NEG_INFINITY;
        for a in m {
            best = best.max(oracle_cos(b, a, table));
        }
        terms.push(best);
    }
    terms.sort_by(f64::total_cmp);
    let mut sum = 0.0;
    for t in &terms {
        sum += t;
    }
    sum / terms.len() as f64
}

/// Exhaustive ranking: score every name, keep each entity's best name, sort
/// everything and cut at `k`, then apply the exact-match filter.
pub fn brute_force(
    m: &TokenSequence,
    kb: &KnowledgeBase,
    table: &WordEmbeddingTable,
    k: usize,
) -> Vec<(String, String, f64)> {
    let mut all = Vec::new();
    for e in kb.entities() {
        let mut best: Option<(f64, String)> = None;
        for name in e.name_tokens() {
            if name.is_empty() {
                continue;
            }
            let score = oracle_sim(m.tokens(), name.tokens(), table);
            let joined = name.joined();
            best = match best {
                Some((b, bn)) if b > score || (b == score && bn <= joined) => Some((b, bn)),
                _ => Some((score, joined)),
            };
        }
        if let Some((score, name)) = best {
            all.push((e.id.clone(), name, score));
        }
    }
    all.sort_by(|a, b| {
        b.2.total_cmp(&a.2)
            .then_with(|| a.0.cmp(&b.0))
            .then_with(|| a.1.cmp(&b.1))
    });
    all.truncate(k);
    if all.first().is_some_and(|c| c.2 >= EXACT_MATCH) {
        all.retain(|c| c.2 >= EXACT_MATCH);
    }
    all
}

const CONSONANTS: &[char] = &['b', 'd', 'f', 'g', 'k', 'l', 'n', 'p', 'r', 's', 't'];
const VOWELS: &[char] = &['a', 'e', 'o', 'u'];

fn syllable(rng: &mut ChaCha8Rng) -> String {
    let c = CONSONANTS[rng.gen_range(0..CONSONANTS.len())];
    let v = VOWELS[rng.gen_range(0..VOWELS.len())];
    format!("{c}{v}{c}")
}

pub struct TinyCase {
    pub kb: KnowledgeBase,
    pub table: WordEmbeddingTable,
    pub mentions: Vec<TokenSequence>,
}

/// A small random knowledge base over a handful of tokens. Vectors are
/// often small integers so that exact score ties are common; some tokens
/// have no vector or a zero vector.
pub fn random_tiny_case(rng: &mut ChaCha8Rng) -> TinyCase {
    let dim = rng.gen_range(2..=4);
    let n_vocab = rng.gen_range(3..=10);
    let mut vocab: Vec<String> = Vec::new();
    while vocab.len() < n_vocab {
        let w = syllable(rng);
        if !vocab.contains(&w) {
            vocab.push(w);
        }
    }
    let integer = rng.gen_bool(0.5);
    let mut table = WordEmbeddingTable::new(dim).expect("dim > 0");
    for w in &vocab {
        let r: f64 = rng.gen();
        if r < 0.15 {
            continue;
        }
        let v: Vec<f32> = if r < 0.2 {
            vec![0.0; dim]
        } else if integer {
            (0..dim).map(|_| rng.gen_range(-2..=2) as f32).collect()
        } else {
            (0..dim).map(|_| rng.gen_range(-1.0f32..1.0)).collect()
        };
        table.insert(w, &v).expect("valid vector");
    }
    let pre = Preprocessor::default();
    let mut kb = KnowledgeBase::new();
    let n_entities = rng.gen_range(1..=30);
    let mut ids: Vec<usize> = (0..n_entities).collect();
    ids.shuffle(rng);
    let mut budget = 100;
    for id in ids {
        if budget == 0 {
            break;
        }
        let n_names = rng.gen_range(1..=4usize).min(budget);
        budget -= n_names;
        let names: Vec<String> = (0..n_names)
            .map(|_| {
                let len = rng.gen_range(1..=3);
                (0..len)
                    .map(|_| vocab[rng.gen_range(0..vocab.len())].clone())
                    .collect::<Vec<_>>()
                    .join(" ")
            })
            .collect();
        let refs: Vec<&str> = names.iter().map(String::as_str).collect();
        kb.add_entity(&format!("C{id:03}"), &refs, &pre).expect("fresh id");
    }
    let mentions = (0..5)
        .map(|_| {
            let len = rng.gen_range(1..=3);
            let toks: Vec<String> = (0..len)
                .map(|_| {
                    if rng.gen_bool(0.1) {
                        "zzq".to_string()
                    } else {
                        vocab[rng.gen_range(0..vocab.len())].clone()
                    }
                })
                .collect();
            TokenSequence::from_normalized(toks)
        })
        .collect();
    TinyCase { kb, table, mentions }
}

/// Vocabulary and word vectors for the tiny gradient-check model.
pub struct TinyModel {
    pub config: ModelConfig,
    pub chars: CharVocab,
    pub table: WordEmbeddingTable,
}

pub fn tiny_model(features: FeatureToggles, architecture: Architecture) -> TinyModel {
    let mut table = WordEmbeddingTable::new(3).unwrap();
    table.insert("renal", &[0.3, -0.8, 0.5]).unwrap();
    table.insert("kidney", &[0.4, -0.7, 0.6]).unwrap();
    table.insert("failure", &[-0.9, 0.2, 0.1]).unwrap();
    table.insert("acute", &[0.1, 0.5, -0.6]).unwrap();
    table.insert("injury", &[-0.5, 0.4, 0.3]).unwrap();
    let chars = CharVocab::from_chars("renalkidyfuctj".chars());
    let config = ModelConfig {
        word_dim: 3,
        char_emb_dim: 3,
        char_lstm_dim: 2,
        cnn_feature_maps: 3,
        cnn_windows: vec![1, 2],
        context_lstm_dim: 2,
        entity_emb_dim: 2,
        hidden_dim: 4,
        dropout: 0.1,
        max_tokens: 20,
        max_chars: 25,
        features,
        architecture,
    };
    TinyModel { config, chars, table }
}

pub fn all_features() -> FeatureToggles {
    FeatureToggles {
        prior: true,
        context: true,
        coherence: true,
    }
}
