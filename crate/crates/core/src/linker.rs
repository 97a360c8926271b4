//! Linking with a trained model, accuracy evaluation, robustness simulators,
//! ablations and learning curves.

use std::io::Write;
use std::time::Instant;

use lightlink_autodiff::{Graph, Real};
use rand::seq::{index, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::candidates::{CandidateIndex, CandidateSet};
use crate::corpus::{mention_refs, Document, Gold};
use crate::embeddings::WordEmbeddingTable;
use crate::error::{Error, Result};
use crate::kb::KnowledgeBase;
use crate::model::{coherence_feature, EntityEmbeddings, ModelConfig, PairInput, PriorTable, RankingModel, Scorer};
use crate::text::TokenSequence;
use crate::trainer::{self, TrainConfig, TrainReport};

/// Two-sided z for a 98% interval.
pub const Z_98: f64 = 2.326;

/// Everything needed to score candidates besides the candidate sets.
#[derive(Clone, Copy)]
pub struct LinkContext<'a> {
    pub model: &'a RankingModel,
    pub table: &'a WordEmbeddingTable,
    pub prior: &'a PriorTable,
    pub entities: Option<&'a EntityEmbeddings>,
    pub max_neighbors: usize,
}

/// `(start, end, top-1 entity)` for every mention of a document.
pub type NeighborSpans = Vec<(usize, usize, Option<String>)>;

/// Top-1 generation candidates laid out per document, for the coherence feature.
pub fn neighbor_spans(docs: &[Document], sets: &[CandidateSet]) -> Vec<NeighborSpans> {
    let mut out: Vec<NeighborSpans> = docs.iter().map(|d| Vec::with_capacity(d.mentions.len())).collect();
    for (r, set) in mention_refs(docs).into_iter().zip(sets) {
        let m = &docs[r.doc].mentions[r.mention];
        out[r.doc].push((m.start, m.end, set.items.first().map(|c| c.entity.clone())));
    }
    out
}

fn check_aligned(docs: &[Document], sets: &[CandidateSet]) -> Result<()> {
    let refs = mention_refs(docs);
    if refs.len() != sets.len() {
        return Err(Error::Invalid(format!(
            "{} mentions but {} candidate sets",
            refs.len(),
            sets.len()
        )));
    }
    for (r, s) in refs.iter().zip(sets) {
        if docs[r.doc].doc_id != s.doc_id || r.mention != s.mention {
            return Err(Error::Invalid(format!(
                "candidate set for `{}` mention {} does not match corpus position `{}` mention {}",
                s.doc_id, s.mention, docs[r.doc].doc_id, r.mention
            )));
        }
    }
    Ok(())
}

impl<'a> LinkContext<'a> {
    pub fn check(&self) -> Result<()> {
        let f = self.model.config.features;
        if f.coherence {
            let e = self
                .entities
                .ok_or_else(|| Error::Invalid("the coherence feature needs entity embeddings".into()))?;
            if e.dim() != self.model.config.entity_emb_dim {
                return Err(Error::Invalid(format!(
                    "entity embeddings have dimension {}, model expects {}",
                    e.dim(),
                    self.model.config.entity_emb_dim
                )));
            }
        }
        if self.table.dim() != self.model.config.word_dim {
            return Err(Error::Invalid(format!(
                "word vectors have dimension {}, model expects {}",
                self.table.dim(),
                self.model.config.word_dim
            )));
        }
        Ok(())
    }

    /// Prior and coherence values for one (mention, entity) pair; zero for
    /// disabled features.
    pub fn extras(&self, doc: &Document, mention: usize, neighbors: &NeighborSpans, entity: &str) -> (f64, f64) {
        let f = self.model.config.features;
        let prior = if f.prior {
            self.prior.feature(&doc.mentions[mention].tokens.joined(), entity)
        } else {
            0.0
        };
        let coherence = match (f.coherence, self.entities) {
            (true, Some(e)) => {
                let spans: Vec<(usize, usize, Option<&str>)> =
                    neighbors.iter().map(|(s, t, top)| (*s, *t, top.as_deref())).collect();
                coherence_feature(mention, &spans, entity, e, self.max_neighbors)
            }
            _ => 0.0,
        };
        (prior, coherence)
    }

    pub fn pair<'b>(
        &self,
        doc: &'b Document,
        mention: usize,
        neighbors: &NeighborSpans,
        entity: &str,
        name: &'b TokenSequence,
    ) -> PairInput<'b> {
        let (prior, coherence) = self.extras(doc, mention, neighbors, entity);
        let m = &doc.mentions[mention];
        PairInput {
            mention: &m.tokens,
            context: &m.context,
            name,
            prior,
            coherence,
        }
    }

    /// Scores of every candidate, best first; ties go to the smaller entity id.
    pub fn rank<T: Real>(
        &self,
        scorer: &mut Scorer<'_, T>,
        doc: &Document,
        mention: usize,
        neighbors: &NeighborSpans,
        set: &CandidateSet,
    ) -> Result<Vec<(String, f64)>> {
        let mut ranked = set
            .items
            .iter()
            .map(|c| {
                let input = self.pair(doc, mention, neighbors, &c.entity, &c.name);
                Ok((c.entity.clone(), scorer.score_value(&input)?))
            })
            .collect::<Result<Vec<_>>>()?;
        ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        Ok(ranked)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkResult {
    pub doc_id: String,
    pub mention: usize,
    /// `None` means NIL.
    pub predicted: Option<String>,
    pub top_score: Option<f64>,
    pub ranked: Vec<(String, f64)>,
}

impl LinkResult {
    /// Prediction under another threshold.
    pub fn at_threshold(&self, tau: f64) -> Option<&str> {
        match (self.ranked.first(), self.top_score) {
            (Some((e, _)), Some(s)) if s >= tau => Some(e),
            _ => None,
        }
    }
}

/// Scores every candidate of every mention and applies the threshold.
/// Mentions run in parallel on the current rayon pool; results keep corpus
/// order and do not depend on the number of threads.
pub fn link(ctx: &LinkContext<'_>, docs: &[Document], sets: &[CandidateSet], tau: f64) -> Result<Vec<LinkResult>> {
    ctx.check()?;
    check_aligned(docs, sets)?;
    let neighbors = neighbor_spans(docs, sets);
    let refs = mention_refs(docs);
    refs.par_iter()
        .zip(sets.par_iter())
        .map(|(r, set)| {
            let doc = &docs[r.doc];
            let model = ctx.model;
            let mut scorer = Scorer::new(
                &model.config,
                &model.chars,
                &model.params,
                ctx.table,
                Graph::<f32>::new(),
            )?;
            let ranked = ctx.rank(&mut scorer, doc, r.mention, &neighbors[r.doc], set)?;
            let top_score = ranked.first().map(|x| x.1);
            let mut result = LinkResult {
                doc_id: doc.doc_id.clone(),
                mention: r.mention,
                predicted: None,
                top_score,
                ranked,
            };
            result.predicted = result.at_threshold(tau).map(str::to_string);
            Ok(result)
        })
        .collect()
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub accuracy: f64,
    pub n_mentions: usize,
    pub n_correct: usize,
    pub ci_halfwidth: f64,
    pub nil_predictions: usize,
    pub inference_seconds: f64,
    pub per_mention_ms: f64,
}

/// Normal-approximation 98% interval half-width.
pub fn accuracy_ci(n_correct: usize, n: usize) -> Result<(f64, f64)> {
    if n == 0 {
        return Err(Error::Empty("evaluation set"));
    }
    if n_correct > n {
        return Err(Error::Invalid(format!("{n_correct} correct out of {n}")));
    }
    let p = n_correct as f64 / n as f64;
    Ok((p, Z_98 * (p * (1.0 - p) / n as f64).sqrt()))
}

pub fn is_correct(gold: &Gold, predicted: Option<&str>) -> Option<bool> {
    match gold {
        Gold::Entity(id) => Some(predicted == Some(id.as_str())),
        Gold::Nil => Some(predicted.is_none()),
        Gold::Unlabeled => None,
    }
}

/// Accuracy over labeled mentions at threshold `tau`.
pub fn evaluate_at(docs: &[Document], results: &[LinkResult], tau: f64) -> Result<EvalReport> {
    let mut n = 0;
    let mut correct = 0;
    let mut nil = 0;
    for (r, res) in mention_refs(docs).into_iter().zip(results) {
        let pred = res.at_threshold(tau);
        nil += pred.is_none() as usize;
        if let Some(ok) = is_correct(&docs[r.doc].mentions[r.mention].gold, pred) {
            n += 1;
            correct += ok as usize;
        }
    }
    let (accuracy, ci_halfwidth) = accuracy_ci(correct, n)?;
    Ok(EvalReport {
        accuracy,
        n_mentions: n,
        n_correct: correct,
        ci_halfwidth,
        nil_predictions: nil,
        ..Default::default()
    })
}

/// Links and evaluates, recording inference wall time.
pub fn link_and_evaluate(
    ctx: &LinkContext<'_>,
    docs: &[Document],
    sets: &[CandidateSet],
    tau: f64,
) -> Result<(Vec<LinkResult>, EvalReport)> {
    let start = Instant::now();
    let results = link(ctx, docs, sets, tau)?;
    let secs = start.elapsed().as_secs_f64();
    let mut report = evaluate_at(docs, &results, tau)?;
    report.inference_seconds = secs;
    report.per_mention_ms = 1000.0 * secs / results.len().max(1) as f64;
    Ok((results, report))
}

/// `doc_id<TAB>mention<TAB>entity or NIL<TAB>score`; the score is the top
/// candidate score, or 0 without candidates.
pub fn write_predictions(mut w: impl Write, results: &[LinkResult]) -> Result<()> {
    for r in results {
        writeln!(
            w,
            "{}\t{}\t{}\t{}",
            r.doc_id,
            r.mention,
            r.predicted.as_deref().unwrap_or(crate::corpus::NIL),
            r.top_score.unwrap_or(0.0)
        )?;
    }
    Ok(())
}

/// Rebuilds a raw document with new text and spans (gold labels kept).
fn rebuild(doc: &Document, text: String, spans: Vec<(usize, usize, Gold)>) -> Document {
    Document::new(doc.doc_id.clone(), text, spans).expect("simulator keeps spans valid")
}

/// Replaces the byte range of mention `i` with `replacement`, shifting later spans.
fn replace_mention(doc: &Document, i: usize, replacement: &str) -> Document {
    let m = &doc.mentions[i];
    let (start, end) = (m.start, m.end);
    let mut text = String::with_capacity(doc.text.len() + 1);
    text.push_str(&doc.text[..start]);
    text.push_str(replacement);
    text.push_str(&doc.text[end..]);
    let delta = replacement.len() as isize - (end - start) as isize;
    let spans = doc
        .mentions
        .iter()
        .enumerate()
        .map(|(j, o)| {
            let shift = |p: usize| {
                if p >= end && j != i {
                    (p as isize + delta) as usize
                } else {
                    p
                }
            };
            if j == i {
                (start, start + replacement.len(), o.gold.clone())
            } else if o.start >= end {
                (shift(o.start), shift(o.end), o.gold.clone())
            } else {
                (o.start, o.end, o.gold.clone())
            }
        })
        .collect();
    rebuild(doc, text, spans)
}

fn word_ranges(s: &str) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    let mut start = None;
    for (i, c) in s.char_indices() {
        match (c.is_whitespace(), start) {
            (true, Some(st)) => {
                out.push((st, i));
                start = None;
            }
            (false, None) => start = Some(i),
            _ => {}
        }
    }
    if let Some(st) = start {
        out.push((st, s.len()));
    }
    out
}

fn random_letter(rng: &mut ChaCha8Rng, not: Option<char>) -> char {
    loop {
        let c = (b'a' + rng.gen_range(0..26u8)) as char;
        if Some(c) != not {
            return c;
        }
    }
}

/// One single-character edit (substitute, delete, insert or transpose,
/// chosen uniformly) to `word`. Deletion needs two characters and
/// transposition two distinct neighbors; otherwise a substitution is made.
pub fn typo(word: &str, rng: &mut ChaCha8Rng) -> String {
    let mut chars: Vec<char> = word.chars().collect();
    let n = chars.len();
    let op = rng.gen_range(0..4);
    let swappable: Vec<usize> = (0..n.saturating_sub(1)).filter(|&i| chars[i] != chars[i + 1]).collect();
    match op {
        1 if n >= 2 => {
            chars.remove(rng.gen_range(0..n));
        }
        2 => {
            let c = random_letter(rng, None);
            chars.insert(rng.gen_range(0..=n), c);
        }
        3 if !swappable.is_empty() => {
            let i = swappable[rng.gen_range(0..swappable.len())];
            chars.swap(i, i + 1);
        }
        _ => {
            let i = rng.gen_range(0..n);
            chars[i] = random_letter(rng, Some(chars[i]));
        }
    }
    chars.into_iter().collect()
}

/// Raw corpus with one typo in each of `ceil(rate * mentions)` mentions
/// chosen uniformly. Output needs preprocessing again.
pub fn simulate_typos(docs: &[Document], rate: f64, seed: u64) -> Result<Vec<Document>> {
    check_rate(rate)?;
    let refs = mention_refs(docs);
    let count = (rate * refs.len() as f64).ceil() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut chosen: Vec<usize> = index::sample(&mut rng, refs.len(), count.min(refs.len())).into_vec();
    chosen.sort_unstable();
    let mut out: Vec<Document> = docs.iter().map(|d| rebuild(d, d.text.clone(), d.spans())).collect();
    for i in chosen {
        let r = refs[i];
        let doc = &out[r.doc];
        let surface = &doc.mentions[r.mention].surface;
        let words = word_ranges(surface);
        let (ws, we) = words[rng.gen_range(0..words.len())];
        let edited = format!(
            "{}{}{}",
            &surface[..ws],
            typo(&surface[ws..we], &mut rng),
            &surface[we..]
        );
        out[r.doc] = replace_mention(doc, r.mention, &edited);
    }
    Ok(out)
}

/// Raw corpus where `ceil(rate * multi-word mentions)` multi-word mentions
/// get their words in a random non-identity order, joined by single spaces.
/// Single-word mentions are never touched.
pub fn simulate_reordering(docs: &[Document], rate: f64, seed: u64) -> Result<Vec<Document>> {
    check_rate(rate)?;
    let eligible: Vec<_> = mention_refs(docs)
        .into_iter()
        .filter(|r| word_ranges(&docs[r.doc].mentions[r.mention].surface).len() >= 2)
        .collect();
    let count = (rate * eligible.len() as f64).ceil() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut chosen: Vec<usize> = index::sample(&mut rng, eligible.len(), count.min(eligible.len())).into_vec();
    chosen.sort_unstable();
    let mut out: Vec<Document> = docs.iter().map(|d| rebuild(d, d.text.clone(), d.spans())).collect();
    for i in chosen {
        let r = eligible[i];
        let doc = &out[r.doc];
        let surface = &doc.mentions[r.mention].surface;
        let words: Vec<&str> = word_ranges(surface).into_iter().map(|(s, e)| &surface[s..e]).collect();
        // Repeated words can make a non-identity permutation look unchanged.
        let mut permuted = words.clone();
        if words.iter().any(|w| *w != words[0]) {
            while permuted == words {
                permuted.shuffle(&mut rng);
            }
        }
        let permuted = permuted.join(" ");
        out[r.doc] = replace_mention(doc, r.mention, &permuted);
    }
    Ok(out)
}

fn check_rate(rate: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&rate) {
        return Err(Error::Invalid(format!("rate {rate} outside [0, 1]")));
    }
    Ok(())
}

/// Inputs shared by experiments that train and evaluate a model.
#[derive(Clone, Copy)]
pub struct Experiment<'a> {
    /// Preprocessed training documents (hold-out split is taken from these).
    pub train_docs: &'a [Document],
    /// Preprocessed test documents.
    pub test_docs: &'a [Document],
    pub kb: &'a KnowledgeBase,
    pub table: &'a WordEmbeddingTable,
    pub entities: Option<&'a EntityEmbeddings>,
    pub model: &'a ModelConfig,
    pub train: &'a TrainConfig,
}

#[derive(Debug, Clone)]
pub struct ExperimentResult {
    pub model: RankingModel,
    pub tau: f64,
    pub train_report: TrainReport,
    pub test_sets: Vec<CandidateSet>,
    pub results: Vec<LinkResult>,
    pub eval: EvalReport,
    /// The knowledge base augmented with the training split.
    pub kb: KnowledgeBase,
    pub prior: PriorTable,
}

impl<'a> Experiment<'a> {
    pub fn with_model(&self, model: &'a ModelConfig) -> Self {
        Experiment { model, ..*self }
    }

    /// Trains from scratch, generates test candidates against the augmented
    /// knowledge base and links the test set.
    pub fn run(&self) -> Result<ExperimentResult> {
        let data = trainer::prepare(self.train_docs, self.kb, self.table, self.train)?;
        let outcome = trainer::train(self.model, &data, self.kb, self.table, self.entities, self.train)?;
        let index = CandidateIndex::new(&data.kb, self.table);
        let test_sets = index.generate_all(self.test_docs, self.train.k, self.table, true);
        let ctx = LinkContext {
            model: &outcome.model,
            table: self.table,
            prior: &data.prior,
            entities: self.entities,
            max_neighbors: self.train.max_neighbors,
        };
        let (results, eval) = link_and_evaluate(&ctx, self.test_docs, &test_sets, outcome.tau)?;
        Ok(ExperimentResult {
            model: outcome.model,
            tau: outcome.tau,
            train_report: outcome.report,
            test_sets,
            results,
            eval,
            kb: data.kb,
            prior: data.prior,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AblationVariant {
    WithoutChar,
    WithoutAlignment,
    WithoutCnn,
    WithPrior,
    WithContext,
    WithCoherence,
}

impl AblationVariant {
    pub const REMOVALS: [AblationVariant; 3] = [Self::WithoutChar, Self::WithoutAlignment, Self::WithoutCnn];
    pub const ADDITIONS: [AblationVariant; 3] = [Self::WithPrior, Self::WithContext, Self::WithCoherence];

    pub fn label(self) -> &'static str {
        match self {
            Self::WithoutChar => "- char feature",
            Self::WithoutAlignment => "- alignment layer",
            Self::WithoutCnn => "- CNN layer",
            Self::WithPrior => "+ prior",
            Self::WithContext => "+ context",
            Self::WithCoherence => "+ coherence",
        }
    }

    pub fn apply(self, base: &ModelConfig) -> ModelConfig {
        let mut c = base.clone();
        match self {
            Self::WithoutChar => c.architecture.char_feature = false,
            Self::WithoutAlignment => c.architecture.alignment = false,
            Self::WithoutCnn => c.architecture.cnn = false,
            Self::WithPrior => c.features.prior = true,
            Self::WithContext => c.features.context = true,
            Self::WithCoherence => c.features.coherence = true,
        }
        c
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub variant: AblationVariant,
    pub label: String,
    pub accuracy: f64,
    pub delta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub base_accuracy: f64,
    pub rows: Vec<AblationRow>,
}

/// Retrains from scratch, with the same seed, once for the base
/// configuration and once per variant; deltas are variant minus base.
pub fn ablation(exp: &Experiment<'_>, variants: &[AblationVariant]) -> Result<AblationReport> {
    let base = exp.run()?.eval.accuracy;
    let mut rows = Vec::with_capacity(variants.len());
    for &v in variants {
        let config = v.apply(exp.model);
        let acc = exp.with_model(&config).run()?.eval.accuracy;
        rows.push(AblationRow {
            variant: v,
            label: v.label().to_string(),
            accuracy: acc,
            delta: acc - base,
        });
    }
    Ok(AblationReport {
        base_accuracy: base,
        rows,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub fraction: f64,
    pub train_docs: usize,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LearningCurve {
    pub points: Vec<CurvePoint>,
    /// Number of consecutive points where accuracy went down.
    pub decreases: usize,
    /// Last accuracy minus first.
    pub overall_change: f64,
}

/// Trains on seeded document subsamples of the training split and
/// evaluates each on the full test split. Fraction 1 uses every training
/// document in its original order, reproducing the standard run.
pub fn learning_curve(exp: &Experiment<'_>, fractions: &[f64], seed: u64) -> Result<LearningCurve> {
    let mut points = Vec::with_capacity(fractions.len());
    for &f in fractions {
        if !(f > 0.0 && f <= 1.0) {
            return Err(Error::Invalid(format!("fraction {f} outside (0, 1]")));
        }
        let n = exp.train_docs.len();
        let take = ((f * n as f64).ceil() as usize).clamp(1, n);
        let subset: Vec<Document> = if take == n {
            exp.train_docs.to_vec()
        } else {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream((f * 1e6) as u64);
            let mut picked = index::sample(&mut rng, n, take).into_vec();
            picked.sort_unstable();
            picked.into_iter().map(|i| exp.train_docs[i].clone()).collect()
        };
        let acc = Experiment {
            train_docs: &subset,
            ..*exp
        }
        .run()?
        .eval
        .accuracy;
        points.push(CurvePoint {
            fraction: f,
            train_docs: take,
            accuracy: acc,
        });
    }
    let decreases = points.windows(2).filter(|w| w[1].accuracy < w[0].accuracy).count();
    let overall_change = match (points.first(), points.last()) {
        (Some(a), Some(b)) => b.accuracy - a.accuracy,
        _ => 0.0,
    };
    Ok(LearningCurve {
        points,
        decreases,
        overall_change,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn doc() -> Document {
        Document::new(
            "d",
            "Acute heart attack and renal failure. Fever.",
            vec![
                (0, 18, Gold::Entity("E1".into())),
                (23, 36, Gold::Nil),
                (38, 43, Gold::Unlabeled),
            ],
        )
        .unwrap()
    }

    #[test]
    fn ci_examples() {
        assert_eq!(accuracy_ci(10, 10).unwrap().1, 0.0);
        assert!((accuracy_ci(50, 100).unwrap().1 - 0.1163).abs() < 1e-12);
        let (p, h) = accuracy_ci(859, 964).unwrap();
        assert!((p - 0.8911).abs() < 1e-4);
        assert!((h - 0.0234).abs() < 5e-4, "{h}");
        assert!(accuracy_ci(0, 0).is_err());
    }

    #[test]
    fn ci_shrinks_with_n() {
        let mut last = f64::INFINITY;
        for n in [10, 20, 40, 80, 160] {
            let h = accuracy_ci(n * 3 / 4, n).unwrap().1;
            assert!(h < last);
            last = h;
        }
    }

    #[test]
    fn zero_rate_simulators_are_identity() {
        let d = vec![doc()];
        assert_eq!(simulate_typos(&d, 0.0, 1).unwrap(), d);
        assert_eq!(simulate_reordering(&d, 0.0, 1).unwrap(), d);
    }

    #[test]
    fn full_rate_typos_touch_every_mention_once() {
        let d = vec![doc()];
        let out = simulate_typos(&d, 1.0, 3).unwrap();
        for (a, b) in d[0].mentions.iter().zip(&out[0].mentions) {
            assert_ne!(a.surface, b.surface);
            assert_eq!(a.gold, b.gold);
            let diff = (a.surface.len() as isize - b.surface.len() as isize).abs();
            assert!(diff <= 1);
        }
    }

    #[test]
    fn reordering_permutes_multiword_only() {
        let d = vec![doc()];
        let out = simulate_reordering(&d, 1.0, 5).unwrap();
        let m = &out[0].mentions;
        assert_ne!(m[0].surface, "Acute heart attack");
        let mut a: Vec<&str> = m[0].surface.split(' ').collect();
        a.sort();
        assert_eq!(a, vec!["Acute", "attack", "heart"]);
        assert_eq!(m[2].surface, "Fever");
        for mm in m {
            assert_eq!(&out[0].text[mm.start..mm.end], mm.surface);
        }
        let single = vec![Document::new("s", "fever and cough", vec![(0, 5, Gold::Nil), (10, 15, Gold::Nil)]).unwrap()];
        assert_eq!(simulate_reordering(&single, 1.0, 2).unwrap(), single);
    }

    #[test]
    fn typo_is_single_edit() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for w in ["a", "aa", "heart", "xy"] {
            for _ in 0..50 {
                let t = typo(w, &mut rng);
                assert_ne!(t, w);
                assert!(!t.is_empty());
            }
        }
    }

    #[test]
    fn threshold_rule() {
        let r = LinkResult {
            doc_id: "d".into(),
            mention: 0,
            predicted: None,
            top_score: Some(0.4),
            ranked: vec![("E1".into(), 0.4)],
        };
        assert_eq!(r.at_threshold(0.0), Some("E1"));
        assert_eq!(r.at_threshold(0.4), Some("E1"));
        assert_eq!(r.at_threshold(0.45), None);
        let empty = LinkResult {
            doc_id: "d".into(),
            mention: 0,
            predicted: None,
            top_score: None,
            ranked: vec![],
        };
        assert_eq!(empty.at_threshold(0.0), None);
    }
}
