//! Trains on the generated task, evaluates it, and re-links perturbed copies
//! of the test set.
//!
//! ```text
//! cargo run --release -p lightlink-core --example synthetic_run -- [seed] [--ablate]
//! ```

use lightlink_core::candidates::{recall_from_sets, CandidateIndex};
use lightlink_core::linker::{
    ablation, link_and_evaluate, simulate_reordering, simulate_typos, AblationVariant, Experiment, LinkContext,
};
use lightlink_core::model::EntityEmbeddings;
use lightlink_core::preprocess::Preprocessor;
use lightlink_core::synthetic::{model_config, SyntheticConfig, SyntheticTask};
use lightlink_core::trainer::TrainConfig;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    env_logger::init();
    let args: Vec<String> = std::env::args().skip(1).collect();
    let seed = args
        .iter()
        .find_map(|a| a.parse().ok())
        .unwrap_or(SyntheticConfig::default().seed);
    let task = SyntheticTask::generate(&SyntheticConfig {
        seed,
        ..SyntheticConfig::default()
    })?;

    let pre = Preprocessor::default();
    let prepared = |docs: Vec<_>| {
        let mut docs = docs;
        pre.corpus(&mut docs);
        docs
    };
    let train = prepared(task.train_docs.clone());
    let test = prepared(task.test_docs.clone());
    let entities = EntityEmbeddings::new(task.entity_vectors.clone());
    let model = model_config(task.config.word_dim, task.config.entity_dim);
    let config = TrainConfig::default();
    let exp = Experiment {
        train_docs: &train,
        test_docs: &test,
        kb: &task.kb,
        table: &task.words,
        entities: Some(&entities),
        model: &model,
        train: &config,
    };

    let r = exp.run()?;
    for e in &r.train_report.epochs {
        println!(
            "epoch {:2}  loss {:.5}  hold-out {:.3}  {:.1}s",
            e.epoch, e.mean_loss, e.holdout_accuracy, e.seconds
        );
    }
    println!(
        "best epoch {}, tau {:.2}, {} parameters",
        r.train_report.best_epoch, r.tau, r.train_report.parameter_count
    );
    println!(
        "test accuracy {:.3} ± {:.3}, recall@{} {:.3}",
        r.eval.accuracy,
        r.eval.ci_halfwidth,
        config.k,
        recall_from_sets(&test, &r.test_sets)?
    );

    let ctx = LinkContext {
        model: &r.model,
        table: &task.words,
        prior: &r.prior,
        entities: Some(&entities),
        max_neighbors: config.max_neighbors,
    };
    let index = CandidateIndex::new(&r.kb, &task.words);
    let perturbed = [
        ("typos", prepared(simulate_typos(&task.test_docs, 0.9, seed)?)),
        ("reordering", prepared(simulate_reordering(&task.test_docs, 0.9, seed)?)),
    ];
    for (label, docs) in &perturbed {
        let sets = index.generate_all(docs, config.k, &task.words, true);
        let (_, eval) = link_and_evaluate(&ctx, docs, &sets, r.tau)?;
        println!("{label:<10} accuracy {:.3}", eval.accuracy);
    }

    if args.iter().any(|a| a == "--ablate") {
        let report = ablation(&exp, &AblationVariant::REMOVALS)?;
        for row in &report.rows {
            println!("{:<18} accuracy {:.3} ({:+.3})", row.label, row.accuracy, row.delta);
        }
    }
    Ok(())
}
