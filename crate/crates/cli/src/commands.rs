use std::io::Write;

use lightlink_autodiff::gradcheck::GradcheckConfig;
use lightlink_core::candidates::{
    read_candidate_cache, recall_from_sets, write_candidate_cache, CandidateIndex, CandidateSet,
};
use lightlink_core::corpus::{mention_refs, write_corpus, Document, Gold, NIL};
use lightlink_core::diagnostics::check_tiny_model;
use lightlink_core::embeddings::{CharVocab, WordEmbeddingTable};
use lightlink_core::linker::{
    ablation, link, link_and_evaluate, simulate_reordering, simulate_typos, write_predictions, AblationVariant,
    EvalReport, Experiment, LinkContext, LinkResult,
};
use lightlink_core::model::{EntityEmbeddings, PriorTable, RankingModel};
use lightlink_core::trainer::{prepare, train};
use serde_json::{json, Value};

use crate::config::{AblationSet, Simulation};
use crate::error::CliError;
use crate::run::{reader, write_json, Run};

fn gold_field(gold: &Gold) -> Value {
    match gold {
        Gold::Entity(id) => json!(id),
        Gold::Nil => json!(NIL),
        Gold::Unlabeled => Value::Null,
    }
}

pub fn preprocess(run: &mut Run) -> Result<(), CliError> {
    let pre = run.preprocessor()?;
    let docs = run.corpus("corpus", &pre)?;
    let out = run.output("output")?;
    let mut n = 0;
    run.write_with_sidecar(&out, |w| {
        for d in &docs {
            for (i, m) in d.mentions.iter().enumerate() {
                let rec = json!({
                    "doc_id": d.doc_id,
                    "mention": i,
                    "surface": m.surface,
                    "expanded": m.working,
                    "tokens": m.tokens.tokens(),
                    "context": m.context.tokens(),
                    "gold": gold_field(&m.gold),
                });
                writeln!(w, "{rec}")?;
                n += 1;
            }
        }
        Ok(())
    })?;
    println!(
        "preprocessed {n} mentions in {} documents -> {}",
        docs.len(),
        out.display()
    );
    Ok(())
}

pub fn gen_candidates(run: &mut Run) -> Result<(), CliError> {
    let pre = run.preprocessor()?;
    let kb = run.kb(&pre)?;
    let words = run.words()?;
    let docs = run.corpus("corpus", &pre)?;
    let (kb, _) = run.inference_kb(kb, &pre)?;
    let out = run.output("output")?;
    let k = run.config.train.k;
    let sets = CandidateIndex::new(&kb, &words).generate_all(&docs, k, &words, true);
    run.write_with_sidecar(&out, |w| write_candidate_cache(w, &sets))?;
    print!("{} candidate sets (k = {k}) -> {}", sets.len(), out.display());
    match recall_from_sets(&docs, &sets) {
        Ok(r) if has_gold_entities(&docs) => println!("; recall@{k} {r:.4}"),
        _ => println!(),
    }
    Ok(())
}

fn has_gold_entities(docs: &[Document]) -> bool {
    docs.iter().flat_map(|d| &d.mentions).any(|m| m.gold.entity().is_some())
}

pub fn train_model(run: &mut Run) -> Result<(), CliError> {
    let pre = run.preprocessor()?;
    let kb = run.kb(&pre)?;
    let words = run.words()?;
    let docs = run.corpus("train", &pre)?;
    let entities = run.entities()?;
    check_word_dim(run.config.model.word_dim, &words)?;
    let checkpoint = run.output("checkpoint")?;
    let report_path = run.optional_output("report")?;
    let config = &run.config;
    let data = prepare(&docs, &kb, &words, &config.train)?;
    let outcome = train(&config.model, &data, &kb, &words, entities.as_ref(), &config.train)?;
    let mut meta = run.echo();
    meta["tau"] = json!(outcome.tau);
    meta["best_epoch"] = json!(outcome.report.best_epoch);
    outcome.model.save(&checkpoint, &meta)?;
    if let Some(path) = report_path {
        let mut report = run.echo();
        report["checkpoint"] = json!(checkpoint);
        report["training"] = json!(outcome.report);
        write_json(&path, &report)?;
    }
    let r = &outcome.report;
    println!(
        "trained {} epochs (best {}), hold-out accuracy {:.4}, tau {:.2}, {} parameters -> {}",
        r.epochs.len(),
        r.best_epoch,
        r.epochs
            .iter()
            .find(|e| e.epoch == r.best_epoch)
            .map_or(0.0, |e| e.holdout_accuracy),
        outcome.tau,
        r.parameter_count,
        checkpoint.display()
    );
    Ok(())
}

fn check_word_dim(word_dim: usize, words: &WordEmbeddingTable) -> Result<(), CliError> {
    if word_dim != words.dim() {
        return Err(CliError::Validation(format!(
            "word_dim is {word_dim} but the word vectors have dimension {}",
            words.dim()
        )));
    }
    Ok(())
}

struct Linked {
    docs: Vec<Document>,
    sets: Vec<CandidateSet>,
    model: RankingModel,
    words: WordEmbeddingTable,
    prior: PriorTable,
    entities: Option<EntityEmbeddings>,
    tau: f64,
}

impl Linked {
    fn context(&self, max_neighbors: usize) -> LinkContext<'_> {
        LinkContext {
            model: &self.model,
            table: &self.words,
            prior: &self.prior,
            entities: self.entities.as_ref(),
            max_neighbors,
        }
    }
}

/// Loads everything `link` and `eval` need. Candidates come from the cache
/// when one is given, otherwise they are generated.
fn load_for_linking(run: &mut Run) -> Result<Linked, CliError> {
    let checkpoint = run.input("checkpoint")?;
    let (model, meta) = RankingModel::load(&checkpoint)?;
    // The checkpoint decides the architecture and features.
    run.config.model = model.config.clone();
    let words = run.words()?;
    check_word_dim(model.config.word_dim, &words)?;
    let pre = run.preprocessor()?;
    let docs = run.corpus("corpus", &pre)?;
    let entities = run.entities()?;
    let k = run.config.train.k;
    let (sets, prior) = match run.optional_input("candidates")? {
        Some(path) => {
            let sets = read_candidate_cache(reader(&path)?, &path.display().to_string(), k)?;
            let prior = if run.config.paths.train.is_some() {
                let kb = run.kb(&pre)?;
                run.inference_kb(kb, &pre)?.1
            } else {
                PriorTable::default()
            };
            (sets, prior)
        }
        None => {
            let kb = run.kb(&pre)?;
            let (kb, prior) = run.inference_kb(kb, &pre)?;
            (
                CandidateIndex::new(&kb, &words).generate_all(&docs, k, &words, true),
                prior,
            )
        }
    };
    let tau = match (run.config.tau, meta.get("tau").and_then(Value::as_f64)) {
        (Some(t), _) | (None, Some(t)) => t,
        (None, None) => {
            return Err(CliError::Validation(
                "the checkpoint records no threshold; set `tau`".into(),
            ))
        }
    };
    Ok(Linked {
        docs,
        sets,
        model,
        words,
        prior,
        entities,
        tau,
    })
}

fn write_results(run: &Run, path: &std::path::Path, results: &[LinkResult]) -> Result<(), CliError> {
    run.write_with_sidecar(path, |w| write_predictions(w, results))
}

pub fn link_corpus(run: &mut Run) -> Result<(), CliError> {
    let linked = load_for_linking(run)?;
    let out = run.output("output")?;
    let ctx = linked.context(run.config.train.max_neighbors);
    let results = link(&ctx, &linked.docs, &linked.sets, linked.tau)?;
    write_results(run, &out, &results)?;
    let nil = results.iter().filter(|r| r.predicted.is_none()).count();
    println!(
        "linked {} mentions at tau {:.2} ({nil} NIL) -> {}",
        results.len(),
        linked.tau,
        out.display()
    );
    Ok(())
}

pub fn evaluate(run: &mut Run) -> Result<(), CliError> {
    let linked = load_for_linking(run)?;
    let report_path = run.output("report")?;
    let predictions = run.optional_output("output")?;
    let ctx = linked.context(run.config.train.max_neighbors);
    let (results, eval) = link_and_evaluate(&ctx, &linked.docs, &linked.sets, linked.tau)?;
    if let Some(path) = &predictions {
        write_results(run, path, &results)?;
    }
    let recall = recall_from_sets(&linked.docs, &linked.sets)?;
    let mut report = run.echo();
    report["tau"] = json!(linked.tau);
    report["candidate_recall"] = json!(recall);
    report["eval"] = json!(eval);
    write_json(&report_path, &report)?;
    print_eval(&eval, linked.tau);
    Ok(())
}

fn print_eval(eval: &EvalReport, tau: f64) {
    println!(
        "accuracy {:.4} ± {:.4} ({}/{} correct, {} NIL predicted, tau {:.2}, {:.3} ms per mention)",
        eval.accuracy,
        eval.ci_halfwidth,
        eval.n_correct,
        eval.n_mentions,
        eval.nil_predictions,
        tau,
        eval.per_mention_ms
    );
}

pub fn ablate(run: &mut Run) -> Result<(), CliError> {
    let pre = run.preprocessor()?;
    let kb = run.kb(&pre)?;
    let words = run.words()?;
    let train_docs = run.corpus("train", &pre)?;
    let test_docs = run.corpus("test", &pre)?;
    let entities = run.entities()?;
    check_word_dim(run.config.model.word_dim, &words)?;
    let report_path = run.output("report")?;
    let variants: Vec<AblationVariant> = match run.config.ablation {
        AblationSet::Removals => AblationVariant::REMOVALS.to_vec(),
        AblationSet::Additions => AblationVariant::ADDITIONS.to_vec(),
        AblationSet::All => AblationVariant::REMOVALS
            .iter()
            .chain(&AblationVariant::ADDITIONS)
            .copied()
            .collect(),
    };
    if entities.is_none() && variants.contains(&AblationVariant::WithCoherence) {
        return Err(CliError::Validation(
            "the coherence variant needs the `entities` input path".into(),
        ));
    }
    let exp = Experiment {
        train_docs: &train_docs,
        test_docs: &test_docs,
        kb: &kb,
        table: &words,
        entities: entities.as_ref(),
        model: &run.config.model,
        train: &run.config.train,
    };
    let rep = ablation(&exp, &variants)?;
    let mut report = run.echo();
    report["ablation"] = json!(rep);
    write_json(&report_path, &report)?;
    println!("base accuracy {:.4}", rep.base_accuracy);
    for row in &rep.rows {
        println!("{:<20} {:.4} ({:+.4})", row.label, row.accuracy, row.delta);
    }
    Ok(())
}

pub fn simulate(run: &mut Run) -> Result<(), CliError> {
    let docs = run.raw_corpus("corpus")?;
    let out = run.output("output")?;
    let (rate, seed) = (run.config.rate, run.config.seed);
    let perturbed = match run.config.simulation {
        Simulation::Typos => simulate_typos(&docs, rate, seed)?,
        Simulation::Reordering => simulate_reordering(&docs, rate, seed)?,
    };
    run.write_with_sidecar(&out, |w| write_corpus(w, &perturbed))?;
    let changed = docs
        .iter()
        .zip(&perturbed)
        .flat_map(|(a, b)| a.mentions.iter().zip(&b.mentions))
        .filter(|(a, b)| a.surface != b.surface)
        .count();
    println!(
        "{} of {} mentions changed -> {}",
        changed,
        mention_refs(&docs).len(),
        out.display()
    );
    Ok(())
}

pub fn gradcheck(run: &mut Run) -> Result<(), CliError> {
    let report_path = run.optional_output("report")?;
    let report = check_tiny_model(run.config.seed, GradcheckConfig::default())?;
    for p in &report.params {
        let status = if p.passed(report.config.tolerance) {
            "ok"
        } else {
            "FAIL"
        };
        println!(
            "{status:<4} {:<24} {:>5} elements  max relative error {:.3e}",
            p.name, p.elements, p.max_rel_error
        );
    }
    println!(
        "{} parameters, max relative error {:.3e} (tolerance {:.0e})",
        report.parameter_count(),
        report.max_rel_error(),
        report.config.tolerance
    );
    if let Some(path) = report_path {
        let mut out = run.echo();
        out["gradcheck"] = json!(report);
        out["passed"] = json!(report.passed());
        write_json(&path, &out)?;
    }
    if !report.passed() {
        return Err(CliError::Failed("gradient check failed".into()));
    }
    Ok(())
}

/// Lowercase letters, digits and `-+/`, plus the unknown row: 40 rows.
fn default_chars() -> CharVocab {
    CharVocab::from_chars(('a'..='z').chain('0'..='9').chain(['-', '+', '/']))
}

pub fn count_params(run: &mut Run) -> Result<(), CliError> {
    let report_path = run.optional_output("report")?;
    let model = if let Some(path) = run.optional_input("checkpoint")? {
        RankingModel::load(&path)?.0
    } else {
        let chars = if run.config.paths.kb.is_some() {
            let pre = run.preprocessor()?;
            CharVocab::from_chars(run.kb(&pre)?.characters())
        } else {
            default_chars()
        };
        RankingModel::new(run.config.model.clone(), chars, run.config.seed)?
    };
    let ledger = model.parameter_ledger();
    for e in &ledger {
        println!("{:<28} {:>14} {:>10}", e.name, format!("{:?}", e.shape), e.count);
    }
    println!(
        "total {} parameters ({} character rows)",
        model.count_parameters(),
        model.chars.len()
    );
    if let Some(path) = report_path {
        let mut out = run.echo();
        out["parameters"] = json!(ledger);
        out["total"] = json!(model.count_parameters());
        out["char_rows"] = json!(model.chars.len());
        write_json(&path, &out)?;
    }
    Ok(())
}
