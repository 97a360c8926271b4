//! A tiny built-in model for checking gradients of the full scoring path.

use lightlink_autodiff::gradcheck::{gradcheck, GradcheckConfig, GradcheckReport};
use lightlink_autodiff::{AutodiffError, Graph, ParamStore};

use crate::embeddings::{CharVocab, WordEmbeddingTable};
use crate::error::Result;
use crate::model::{Architecture, FeatureToggles, ModelConfig, PairInput, RankingModel, Scorer};
use crate::text::TokenSequence;

pub struct TinyModel {
    pub model: RankingModel,
    pub table: WordEmbeddingTable,
}

/// A model with every feature and layer switched on and a few hundred
/// parameters, over a five-word vocabulary.
pub fn tiny_model(seed: u64) -> Result<TinyModel> {
    let mut table = WordEmbeddingTable::new(3)?;
    table.insert("renal", &[0.3, -0.8, 0.5])?;
    table.insert("kidney", &[0.4, -0.7, 0.6])?;
    table.insert("failure", &[-0.9, 0.2, 0.1])?;
    table.insert("acute", &[0.1, 0.5, -0.6])?;
    table.insert("injury", &[-0.5, 0.4, 0.3])?;
    let config = ModelConfig {
        word_dim: 3,
        char_emb_dim: 3,
        char_lstm_dim: 2,
        cnn_feature_maps: 3,
        cnn_windows: vec![1, 2],
        context_lstm_dim: 2,
        entity_emb_dim: 2,
        hidden_dim: 4,
        features: FeatureToggles {
            prior: true,
            context: true,
            coherence: true,
        },
        architecture: Architecture::default(),
        ..ModelConfig::default()
    };
    let chars = CharVocab::from_chars("renalkidyfuctj".chars());
    Ok(TinyModel {
        model: RankingModel::new(config, chars, seed)?,
        table,
    })
}

fn seq(tokens: &[&str]) -> TokenSequence {
    TokenSequence::from_normalized(tokens.iter().copied())
}

/// Central-difference check of the summed scores of a few pairs (one with
/// an out-of-vocabulary token and an unknown character) at `f64`.
pub fn check_tiny_model(seed: u64, config: GradcheckConfig) -> Result<GradcheckReport> {
    let tiny = tiny_model(seed)?;
    let store: ParamStore<f64> = tiny.model.params.cast();
    let context = seq(&["patient", "developed", "acute", "kidny", "failure"]);
    let pairs = [
        (
            seq(&["acute", "kidny", "failure"]),
            seq(&["renal", "failure", "acute"]),
            0.69,
            0.42,
        ),
        (seq(&["injury"]), seq(&["kidney", "injury"]), 0.0, -0.3),
    ];
    let report = gradcheck(
        &store,
        |g: &mut Graph<f64>, p: &ParamStore<f64>| {
            let to_ad = |e: crate::Error| AutodiffError::InvalidArgument {
                op: "score",
                message: e.to_string(),
            };
            let mut scorer =
                Scorer::new(&tiny.model.config, &tiny.model.chars, p, &tiny.table, std::mem::take(g)).map_err(to_ad)?;
            let mut scores = Vec::new();
            for (mention, name, prior, coherence) in &pairs {
                let input = PairInput {
                    mention,
                    context: &context,
                    name,
                    prior: *prior,
                    coherence: *coherence,
                };
                scores.push(scorer.score(&input).map_err(to_ad)?);
            }
            let all = scorer.graph.concat_cols(&scores);
            let out = all.and_then(|v| scorer.graph.sum_all(v));
            *g = scorer.graph;
            out
        },
        config,
    )?;
    Ok(report)
}
