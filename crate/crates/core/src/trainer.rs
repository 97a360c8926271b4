//! Triplet-loss training with negatives drawn from candidate sets, early
//! stopping on a document-level hold-out split, and the NIL threshold search.

use std::time::Instant;

use lightlink_autodiff::optim::{Adam, AdamConfig};
use lightlink_autodiff::Graph;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::candidates::{name_similarity, CandidateIndex, CandidateSet};
use crate::corpus::{mention_refs, Document, Gold, MentionRef};
use crate::embeddings::{CharVocab, WordEmbeddingTable};
use crate::error::{Error, Result};
use crate::kb::{AugmentReport, KnowledgeBase};
use crate::linker::{is_correct, link, neighbor_spans, LinkContext, LinkResult};
use crate::model::{EntityEmbeddings, ModelConfig, ParamLedgerEntry, PriorTable, RankingModel, Scorer};
use crate::text::TokenSequence;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub margin: f64,
    pub adam: AdamConfig,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    /// Candidate set capacity.
    pub k: usize,
    pub holdout_fraction: f64,
    pub seed: u64,
    /// Neighbor cap for the coherence feature.
    pub max_neighbors: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            margin: 0.1,
            adam: AdamConfig::default(),
            batch_size: 64,
            max_epochs: 30,
            patience: 5,
            k: 20,
            holdout_fraction: 0.1,
            seed: 42,
            max_neighbors: 10,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.margin.is_nan() || self.margin <= 0.0 {
            return Err(Error::Invalid(format!("margin must be positive, got {}", self.margin)));
        }
        if !(self.holdout_fraction > 0.0 && self.holdout_fraction < 0.5) {
            return Err(Error::Invalid(format!(
                "holdout_fraction must lie in (0, 0.5), got {}",
                self.holdout_fraction
            )));
        }
        for (name, v) in [
            ("batch_size", self.batch_size),
            ("max_epochs", self.max_epochs),
            ("k", self.k),
        ] {
            if v == 0 {
                return Err(Error::Invalid(format!("{name} must be at least 1")));
            }
        }
        if self.adam.learning_rate.is_nan() || self.adam.learning_rate < 0.0 {
            return Err(Error::Invalid("learning rate must be non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Triplet {
    pub mention: MentionRef,
    pub positive: (String, TokenSequence),
    pub negative: (String, TokenSequence),
}

/// `max(0, margin - positive + negative)`.
pub fn triplet_loss(score_pos: f64, score_neg: f64, margin: f64) -> f64 {
    (margin - score_pos + score_neg).max(0.0)
}

/// One triplet per candidate other than the gold entity, for every mention
/// linked to an entity. The positive name is the one candidate generation
/// picked for the gold entity, or else the gold entity's most similar name.
pub fn build_triplets(
    docs: &[Document],
    sets: &[CandidateSet],
    kb: &KnowledgeBase,
    table: &WordEmbeddingTable,
) -> (Vec<Triplet>, Vec<String>) {
    let mut triplets = Vec::new();
    let mut warnings = Vec::new();
    for (r, set) in mention_refs(docs).into_iter().zip(sets) {
        let doc = &docs[r.doc];
        let m = &doc.mentions[r.mention];
        let Gold::Entity(gold) = &m.gold else { continue };
        if m.tokens.is_empty() {
            continue;
        }
        let positive = match set.items.iter().find(|c| &c.entity == gold) {
            Some(c) => c.name.clone(),
            None => {
                let best = kb.get(gold).and_then(|e| {
                    e.name_tokens()
                        .iter()
                        .filter(|n| !n.is_empty())
                        .filter_map(|n| name_similarity(&m.tokens, n, table).ok().map(|s| (s, n)))
                        .max_by(|a, b| a.0.total_cmp(&b.0).then_with(|| b.1.joined().cmp(&a.1.joined())))
                });
                match best {
                    Some((_, n)) => n.clone(),
                    None => {
                        warnings.push(format!(
                            "document `{}` mention {}: gold `{gold}` has no usable name, skipped",
                            doc.doc_id, r.mention
                        ));
                        continue;
                    }
                }
            }
        };
        for c in set.items.iter().filter(|c| &c.entity != gold) {
            triplets.push(Triplet {
                mention: r,
                positive: (gold.clone(), positive.clone()),
                negative: (c.entity.clone(), c.name.clone()),
            });
        }
    }
    (triplets, warnings)
}

/// Top candidate and gold label of one hold-out mention.
#[derive(Debug, Clone, PartialEq)]
pub struct TauSample {
    pub top: Option<(String, f64)>,
    pub gold: Gold,
}

pub fn tau_samples(docs: &[Document], results: &[LinkResult]) -> Vec<TauSample> {
    mention_refs(docs)
        .into_iter()
        .zip(results)
        .map(|(r, res)| TauSample {
            top: res.ranked.first().cloned(),
            gold: docs[r.doc].mentions[r.mention].gold.clone(),
        })
        .collect()
}

/// Candidate thresholds `0.00, 0.05, ..., 0.95`.
pub fn tau_grid() -> impl Iterator<Item = f64> {
    (0..20).map(|i| i as f64 / 20.0)
}

fn accuracy_at(samples: &[TauSample], tau: f64) -> (usize, usize) {
    let mut n = 0;
    let mut correct = 0;
    for s in samples {
        let pred = match &s.top {
            Some((e, score)) if *score >= tau => Some(e.as_str()),
            _ => None,
        };
        if let Some(ok) = is_correct(&s.gold, pred) {
            n += 1;
            correct += ok as usize;
        }
    }
    (correct, n)
}

/// Threshold maximizing hold-out accuracy; the smallest on ties. Zero when
/// no labeled mention is NIL, the largest grid point when all are.
pub fn grid_search_tau(samples: &[TauSample]) -> f64 {
    let labeled: Vec<&TauSample> = samples.iter().filter(|s| s.gold.is_labeled()).collect();
    let nil = labeled.iter().filter(|s| s.gold == Gold::Nil).count();
    if nil == 0 {
        return 0.0;
    }
    if nil == labeled.len() {
        return tau_grid().last().expect("non-empty grid");
    }
    let mut best: Option<(usize, f64)> = None;
    for tau in tau_grid() {
        let (c, _) = accuracy_at(samples, tau);
        if best.is_none_or(|(b, _)| c > b) {
            best = Some((c, tau));
        }
    }
    best.expect("non-empty grid").1
}

/// Hold-out accuracy at the best grid threshold, and that threshold.
pub fn best_accuracy(samples: &[TauSample]) -> (f64, f64) {
    let tau = grid_search_tau(samples);
    let (c, n) = accuracy_at(samples, tau);
    (if n == 0 { 0.0 } else { c as f64 / n as f64 }, tau)
}

/// Training inputs derived from the labeled corpus.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub train_docs: Vec<Document>,
    pub holdout_docs: Vec<Document>,
    /// Knowledge base augmented with the training split only.
    pub kb: KnowledgeBase,
    pub augment: AugmentReport,
    pub prior: PriorTable,
    /// Against the original knowledge base, without the exact-match filter.
    pub train_sets: Vec<CandidateSet>,
    /// Against the augmented knowledge base, filtered as at inference.
    pub holdout_sets: Vec<CandidateSet>,
    pub chars: CharVocab,
}

/// Index of the first hold-out document: the last `ceil(fraction * n)`
/// documents are held out, at least one and never all. Needs `n >= 2`.
pub fn holdout_start(n_docs: usize, holdout_fraction: f64) -> usize {
    let n_hold = ((n_docs as f64 * holdout_fraction).ceil() as usize).clamp(1, n_docs.saturating_sub(1).max(1));
    n_docs - n_hold
}

/// Splits off the last `holdout_fraction` of documents, augments the
/// knowledge base with the rest and generates candidates for both parts.
///
/// Training candidates come from the original knowledge base without the
/// exact-match filter: against the augmented one every training mention
/// matches its own added name exactly and the filter would leave no
/// negatives.
pub fn prepare(
    docs: &[Document],
    kb: &KnowledgeBase,
    table: &WordEmbeddingTable,
    config: &TrainConfig,
) -> Result<Prepared> {
    config.validate()?;
    if docs.len() < 2 {
        return Err(Error::Invalid("training needs at least two documents".into()));
    }
    if kb.is_empty() {
        return Err(Error::Empty("knowledge base"));
    }
    let split = holdout_start(docs.len(), config.holdout_fraction);
    let train_docs = docs[..split].to_vec();
    let holdout_docs = docs[split..].to_vec();
    let mut augmented = kb.clone();
    let augment = augmented.augment(&train_docs);
    for w in &augment.warnings {
        log::warn!("{w}");
    }
    let prior = PriorTable::from_docs(&train_docs);
    let train_sets = CandidateIndex::new(kb, table).generate_all(&train_docs, config.k, table, false);
    let holdout_sets = CandidateIndex::new(&augmented, table).generate_all(&holdout_docs, config.k, table, true);
    let mut chars = augmented.characters();
    for m in train_docs.iter().flat_map(|d| &d.mentions) {
        chars.extend(m.tokens.iter().flat_map(str::chars));
    }
    Ok(Prepared {
        train_docs,
        holdout_docs,
        kb: augmented,
        augment,
        prior,
        train_sets,
        holdout_sets,
        chars: CharVocab::from_chars(chars),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochReport {
    pub epoch: usize,
    pub mean_loss: f64,
    pub holdout_accuracy: f64,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs: Vec<EpochReport>,
    pub best_epoch: usize,
    pub tau: f64,
    pub triplets: usize,
    pub parameter_count: usize,
    pub parameters: Vec<ParamLedgerEntry>,
    /// Fraction of training mentions whose gold entity ranks first in their
    /// training candidate set.
    pub train_accuracy: f64,
    pub wall_seconds: f64,
    pub stopped_early: bool,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: RankingModel,
    pub tau: f64,
    pub report: TrainReport,
}

fn evaluate_holdout(
    model: &RankingModel,
    data: &Prepared,
    table: &WordEmbeddingTable,
    entities: Option<&EntityEmbeddings>,
    config: &TrainConfig,
) -> Result<(f64, f64)> {
    let ctx = LinkContext {
        model,
        table,
        prior: &data.prior,
        entities,
        max_neighbors: config.max_neighbors,
    };
    let results = link(&ctx, &data.holdout_docs, &data.holdout_sets, 0.0)?;
    Ok(best_accuracy(&tau_samples(&data.holdout_docs, &results)))
}

/// Ranking accuracy of `model` on the training split's own candidate sets.
pub fn training_accuracy(
    model: &RankingModel,
    data: &Prepared,
    table: &WordEmbeddingTable,
    entities: Option<&EntityEmbeddings>,
    config: &TrainConfig,
) -> Result<f64> {
    let ctx = LinkContext {
        model,
        table,
        prior: &data.prior,
        entities,
        max_neighbors: config.max_neighbors,
    };
    let results = link(&ctx, &data.train_docs, &data.train_sets, 0.0)?;
    let mut n = 0;
    let mut ok = 0;
    for (r, res) in mention_refs(&data.train_docs).into_iter().zip(&results) {
        if let Gold::Entity(id) = &data.train_docs[r.doc].mentions[r.mention].gold {
            n += 1;
            ok += (res.predicted.as_deref() == Some(id.as_str())) as usize;
        }
    }
    if n == 0 {
        return Err(Error::Empty("set of linked training mentions"));
    }
    Ok(ok as f64 / n as f64)
}

/// Trains a freshly initialized model.
///
/// Each epoch shuffles all triplets, takes Adam steps on mean batch loss and
/// scores the hold-out split at its best threshold. The returned parameters
/// come from the epoch with the highest hold-out accuracy, ties going to the
/// lower training loss; training stops after `patience` epochs without such
/// an improvement. Runs on one thread and is reproducible from `seed`.
pub fn train(
    model_config: &ModelConfig,
    data: &Prepared,
    base_kb: &KnowledgeBase,
    table: &WordEmbeddingTable,
    entities: Option<&EntityEmbeddings>,
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    config.validate()?;
    let start = Instant::now();
    let mut model = RankingModel::new(model_config.clone(), data.chars.clone(), config.seed)?;
    {
        let ctx = LinkContext {
            model: &model,
            table,
            prior: &data.prior,
            entities,
            max_neighbors: config.max_neighbors,
        };
        ctx.check()?;
    }
    let (triplets, warnings) = build_triplets(&data.train_docs, &data.train_sets, base_kb, table);
    for w in &warnings {
        log::warn!("{w}");
    }
    if triplets.is_empty() {
        return Err(Error::Empty("triplet list"));
    }
    let neighbors = neighbor_spans(&data.train_docs, &data.train_sets);
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(config.seed);
    shuffle_rng.set_stream(1);
    let mut dropout_rng = ChaCha8Rng::seed_from_u64(config.seed);
    dropout_rng.set_stream(2);
    let mut adam = Adam::new(config.adam);
    let mut order: Vec<usize> = (0..triplets.len()).collect();
    let mut epochs = Vec::new();
    let mut best: Option<(f64, f64, usize, RankingModel)> = None;
    let mut since_best = 0;
    let mut stopped_early = false;

    for epoch in 1..=config.max_epochs {
        let epoch_start = Instant::now();
        order.shuffle(&mut shuffle_rng);
        let mut loss_sum = 0.0;
        for batch in order.chunks(config.batch_size) {
            let graph = Graph::<f32>::training(dropout_rng.gen());
            let ctx = LinkContext {
                model: &model,
                table,
                prior: &data.prior,
                entities,
                max_neighbors: config.max_neighbors,
            };
            let mut scorer = Scorer::new(&model.config, &model.chars, &model.params, table, graph)?;
            let mut losses = Vec::with_capacity(batch.len());
            for &i in batch {
                let t = &triplets[i];
                let doc = &data.train_docs[t.mention.doc];
                let nb = &neighbors[t.mention.doc];
                let pos_in = ctx.pair(doc, t.mention.mention, nb, &t.positive.0, &t.positive.1);
                let neg_in = ctx.pair(doc, t.mention.mention, nb, &t.negative.0, &t.negative.1);
                let pos = scorer.score(&pos_in)?;
                let neg = scorer.score(&neg_in)?;
                let g = &mut scorer.graph;
                let diff = g.sub(neg, pos)?;
                let shifted = g.add_scalar(diff, config.margin as f32)?;
                losses.push(g.relu(shifted)?);
            }
            let g = &mut scorer.graph;
            let all = g.concat_cols(&losses)?;
            let total = g.sum_all(all)?;
            loss_sum += g.value(total).item() as f64;
            let mean = g.scale(total, 1.0 / batch.len() as f32)?;
            g.backward(mean)?;
            let grads = g.param_grads();
            if !grads.all_finite() {
                return Err(Error::Invalid(format!("non-finite gradient in epoch {epoch}")));
            }
            drop(scorer);
            adam.step(&mut model.params, &grads);
        }
        let mean_loss = loss_sum / triplets.len() as f64;
        let (acc, _) = evaluate_holdout(&model, data, table, entities, config)?;
        epochs.push(EpochReport {
            epoch,
            mean_loss,
            holdout_accuracy: acc,
            seconds: epoch_start.elapsed().as_secs_f64(),
        });
        log::info!("epoch {epoch}: loss {mean_loss:.5}, hold-out accuracy {acc:.4}");
        let improved = match &best {
            None => true,
            Some((b_acc, b_loss, _, _)) => acc > *b_acc || (acc == *b_acc && mean_loss < *b_loss),
        };
        if improved {
            best = Some((acc, mean_loss, epoch, model.clone()));
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= config.patience {
                stopped_early = epoch < config.max_epochs;
                break;
            }
        }
    }

    let (_, _, best_epoch, model) = best.expect("at least one epoch");
    let (_, tau) = evaluate_holdout(&model, data, table, entities, config)?;
    let train_accuracy = training_accuracy(&model, data, table, entities, config)?;
    let report = TrainReport {
        epochs,
        best_epoch,
        tau,
        triplets: triplets.len(),
        parameter_count: model.count_parameters(),
        parameters: model.parameter_ledger(),
        train_accuracy,
        wall_seconds: start.elapsed().as_secs_f64(),
        stopped_early,
        warnings,
    };
    Ok(TrainOutcome { model, tau, report })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::candidates::Candidate;

    fn ts(s: &str) -> TokenSequence {
        TokenSequence::from_normalized(s.split_whitespace())
    }

    #[test]
    fn loss_examples() {
        assert_eq!(triplet_loss(0.9, 0.2, 0.1), 0.0);
        assert!((triplet_loss(0.5, 0.5, 0.1) - 0.1).abs() < 1e-12);
        assert!((triplet_loss(0.5, 0.55, 0.1) - 0.15).abs() < 1e-12);
    }

    fn sample(top: Option<f64>, gold: Gold) -> TauSample {
        TauSample {
            top: top.map(|s| ("E1".to_string(), s)),
            gold,
        }
    }

    #[test]
    fn tau_without_nil_is_zero() {
        let s = vec![
            sample(Some(0.3), Gold::Entity("E1".into())),
            sample(Some(0.9), Gold::Entity("E2".into())),
        ];
        assert_eq!(grid_search_tau(&s), 0.0);
    }

    #[test]
    fn tau_all_nil_is_max() {
        let s = vec![sample(Some(0.3), Gold::Nil), sample(Some(0.97), Gold::Nil)];
        assert_eq!(grid_search_tau(&s), 0.95);
    }

    #[test]
    fn tau_smallest_optimal_grid_point() {
        // Linked mentions score above 0.8; NIL tops reach 0.6 exactly, so
        // 0.6 still links one NIL and 0.65 is the first perfect threshold.
        let s = vec![
            sample(Some(0.85), Gold::Entity("E1".into())),
            sample(Some(0.91), Gold::Entity("E1".into())),
            sample(Some(0.6), Gold::Nil),
            sample(Some(0.2), Gold::Nil),
            sample(None, Gold::Nil),
        ];
        assert_eq!(grid_search_tau(&s), 0.65);
    }

    #[test]
    fn triplets_from_three_candidates() {
        let doc = {
            let mut d = Document::new("d", "heart attack", vec![(0, 12, Gold::Entity("E2".into()))]).unwrap();
            d.mentions[0].tokens = ts("heart attack");
            d
        };
        let set = CandidateSet {
            doc_id: "d".into(),
            mention: 0,
            items: vec![
                Candidate {
                    entity: "E1".into(),
                    name: ts("heart"),
                    score: 0.9,
                },
                Candidate {
                    entity: "E2".into(),
                    name: ts("myocardial infarction"),
                    score: 0.8,
                },
                Candidate {
                    entity: "E3".into(),
                    name: ts("attack"),
                    score: 0.5,
                },
            ],
            k: 3,
            unlinkable: false,
        };
        let table = WordEmbeddingTable::new(2).unwrap();
        let (t, w) = build_triplets(&[doc], &[set], &KnowledgeBase::new(), &table);
        assert!(w.is_empty());
        let negs: Vec<&str> = t.iter().map(|t| t.negative.0.as_str()).collect();
        assert_eq!(negs, vec!["E1", "E3"]);
        assert!(t
            .iter()
            .all(|t| t.positive == ("E2".to_string(), ts("myocardial infarction"))));
    }

    #[test]
    fn nil_mentions_make_no_triplets() {
        let mut d = Document::new("d", "foo", vec![(0, 3, Gold::Nil)]).unwrap();
        d.mentions[0].tokens = ts("foo");
        let set = CandidateSet {
            doc_id: "d".into(),
            mention: 0,
            items: vec![Candidate {
                entity: "E1".into(),
                name: ts("foo"),
                score: 1.0,
            }],
            k: 1,
            unlinkable: false,
        };
        let table = WordEmbeddingTable::new(2).unwrap();
        assert!(build_triplets(&[d], &[set], &KnowledgeBase::new(), &table).0.is_empty());
    }
}
