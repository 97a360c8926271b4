//! Ranking network: character-aware token representations, alignment
//! attention between a mention and an entity name, per-side CNN encoders and
//! a two-layer scorer.

use std::collections::HashMap;
use std::path::Path;

use lightlink_autodiff::{checkpoint, Graph, ParamStore, Real, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::embeddings::{CharVocab, WordEmbeddingTable};
use crate::error::{Error, Result};
use crate::text::TokenSequence;

/// Optional inputs appended to the pooled pair features.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct FeatureToggles {
    pub prior: bool,
    pub context: bool,
    pub coherence: bool,
}

impl FeatureToggles {
    pub fn count(&self) -> usize {
        self.prior as usize + self.context as usize + self.coherence as usize
    }
}

/// Switches for the ablation variants. With everything off the network
/// reduces to mean-pooled word vectors fed to the scorer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture {
    pub char_feature: bool,
    pub alignment: bool,
    pub cnn: bool,
}

impl Default for Architecture {
    fn default() -> Self {
        Architecture {
            char_feature: true,
            alignment: true,
            cnn: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub word_dim: usize,
    pub char_emb_dim: usize,
    /// Per direction; the character feature is twice this wide.
    pub char_lstm_dim: usize,
    pub cnn_feature_maps: usize,
    pub cnn_windows: Vec<usize>,
    /// Per direction.
    pub context_lstm_dim: usize,
    pub entity_emb_dim: usize,
    pub hidden_dim: usize,
    pub dropout: f64,
    pub max_tokens: usize,
    pub max_chars: usize,
    pub features: FeatureToggles,
    pub architecture: Architecture,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            word_dim: 200,
            char_emb_dim: 128,
            char_lstm_dim: 64,
            cnn_feature_maps: 32,
            cnn_windows: vec![1, 2, 3],
            context_lstm_dim: 32,
            entity_emb_dim: 50,
            hidden_dim: 64,
            dropout: 0.1,
            max_tokens: 20,
            max_chars: 25,
            features: FeatureToggles::default(),
            architecture: Architecture::default(),
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("word_dim", self.word_dim),
            ("char_emb_dim", self.char_emb_dim),
            ("char_lstm_dim", self.char_lstm_dim),
            ("cnn_feature_maps", self.cnn_feature_maps),
            ("context_lstm_dim", self.context_lstm_dim),
            ("entity_emb_dim", self.entity_emb_dim),
            ("hidden_dim", self.hidden_dim),
            ("max_tokens", self.max_tokens),
            ("max_chars", self.max_chars),
        ];
        if let Some((name, _)) = dims.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Invalid(format!("{name} must be positive")));
        }
        if self.cnn_windows.is_empty() || self.cnn_windows[0] == 0 || self.cnn_windows.windows(2).any(|w| w[0] >= w[1])
        {
            return Err(Error::Invalid(format!(
                "cnn_windows must be non-empty, positive and strictly ascending, got {:?}",
                self.cnn_windows
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Invalid(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        Ok(())
    }

    /// Width of one token row after the representation layer.
    pub fn token_width(&self) -> usize {
        self.word_dim
            + if self.architecture.char_feature {
                2 * self.char_lstm_dim
            } else {
                0
            }
    }

    /// Width of one row after the alignment layer.
    pub fn aligned_width(&self) -> usize {
        self.token_width() * if self.architecture.alignment { 4 } else { 1 }
    }

    /// Width of one side's pooled encoding.
    pub fn encoded_width(&self) -> usize {
        if self.architecture.cnn {
            self.cnn_feature_maps * self.cnn_windows.len()
        } else {
            self.aligned_width()
        }
    }

    /// Width of the scorer input: both encodings plus enabled extras.
    pub fn pair_feature_width(&self) -> usize {
        2 * self.encoded_width() + self.features.count()
    }
}

pub mod names {
    pub const CHAR_EMBEDDING: &str = "char.embedding";
    pub const MLP_W1: &str = "mlp.w1";
    pub const MLP_B1: &str = "mlp.b1";
    pub const MLP_W2: &str = "mlp.w2";
    pub const MLP_B2: &str = "mlp.b2";

    pub fn lstm(prefix: &str, part: &str) -> String {
        format!("{prefix}.{part}")
    }

    pub fn cnn(side: &str, window: usize, part: &str) -> String {
        format!("cnn.{side}.w{window}.{part}")
    }
}

const CHAR_FWD: &str = "char.fwd";
const CHAR_BWD: &str = "char.bwd";
const CTX_SENT_FWD: &str = "ctx.sentence.fwd";
const CTX_SENT_BWD: &str = "ctx.sentence.bwd";
const CTX_NAME_FWD: &str = "ctx.entity.fwd";
const CTX_NAME_BWD: &str = "ctx.entity.bwd";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Side {
    Mention,
    Entity,
}

impl Side {
    fn label(self) -> &'static str {
        match self {
            Side::Mention => "mention",
            Side::Entity => "entity",
        }
    }
}

fn glorot(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor<f32> {
    let limit = (6.0 / (rows + cols) as f64).sqrt();
    let data = (0..rows * cols).map(|_| rng.gen_range(-limit..limit) as f32).collect();
    Tensor::matrix(rows, cols, data).expect("sized buffer")
}

fn insert_lstm(
    store: &mut ParamStore<f32>,
    rng: &mut ChaCha8Rng,
    prefix: &str,
    input: usize,
    hidden: usize,
) -> Result<()> {
    store.insert(names::lstm(prefix, "w_ih"), glorot(rng, input, 4 * hidden))?;
    store.insert(names::lstm(prefix, "w_hh"), glorot(rng, hidden, 4 * hidden))?;
    let mut bias = vec![0.0f32; 4 * hidden];
    bias[hidden..2 * hidden].fill(1.0);
    store.insert(names::lstm(prefix, "bias"), Tensor::row(bias)?)?;
    Ok(())
}

fn build_params(config: &ModelConfig, n_chars: usize, seed: u64) -> Result<ParamStore<f32>> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    let arch = config.architecture;
    if arch.char_feature {
        let std = (2.0 / n_chars as f64).sqrt();
        let normal = Normal::new(0.0, std).expect("positive std");
        let data = (0..n_chars * config.char_emb_dim)
            .map(|_| normal.sample(&mut rng) as f32)
            .collect();
        store.insert(
            names::CHAR_EMBEDDING,
            Tensor::matrix(n_chars, config.char_emb_dim, data)?,
        )?;
        insert_lstm(
            &mut store,
            &mut rng,
            CHAR_FWD,
            config.char_emb_dim,
            config.char_lstm_dim,
        )?;
        insert_lstm(
            &mut store,
            &mut rng,
            CHAR_BWD,
            config.char_emb_dim,
            config.char_lstm_dim,
        )?;
    }
    if arch.cnn {
        let width = config.aligned_width();
        for side in [Side::Mention, Side::Entity] {
            for &w in &config.cnn_windows {
                store.insert(
                    names::cnn(side.label(), w, "weight"),
                    glorot(&mut rng, w * width, config.cnn_feature_maps),
                )?;
                store.insert(
                    names::cnn(side.label(), w, "bias"),
                    Tensor::zeros(&[1, config.cnn_feature_maps]),
                )?;
            }
        }
    }
    if config.features.context {
        for prefix in [CTX_SENT_FWD, CTX_SENT_BWD, CTX_NAME_FWD, CTX_NAME_BWD] {
            insert_lstm(&mut store, &mut rng, prefix, config.word_dim, config.context_lstm_dim)?;
        }
    }
    let f_out = config.pair_feature_width();
    store.insert(names::MLP_W1, glorot(&mut rng, f_out, config.hidden_dim))?;
    store.insert(names::MLP_B1, Tensor::zeros(&[1, config.hidden_dim]))?;
    store.insert(names::MLP_W2, glorot(&mut rng, config.hidden_dim, 1))?;
    store.insert(names::MLP_B2, Tensor::zeros(&[1, 1]))?;
    Ok(store)
}

/// One row of the parameter ledger.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamLedgerEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub count: usize,
}

#[derive(Debug, Clone)]
pub struct RankingModel {
    pub config: ModelConfig,
    pub chars: CharVocab,
    pub params: ParamStore<f32>,
}

impl RankingModel {
    /// Freshly initialized model; all randomness comes from `seed`.
    pub fn new(config: ModelConfig, chars: CharVocab, seed: u64) -> Result<Self> {
        let params = build_params(&config, chars.len(), seed)?;
        Ok(RankingModel { config, chars, params })
    }

    pub fn parameter_ledger(&self) -> Vec<ParamLedgerEntry> {
        self.params
            .iter()
            .map(|(_, name, t)| ParamLedgerEntry {
                name: name.to_string(),
                shape: t.shape().to_vec(),
                count: t.len(),
            })
            .collect()
    }

    pub fn count_parameters(&self) -> usize {
        self.params.scalar_count()
    }

    fn metadata(&self, run: &Value) -> Value {
        json!({
            "model": self.config,
            "chars": self.chars.as_string(),
            "run": run,
        })
    }

    pub fn to_bytes(&self, run: &Value) -> Result<Vec<u8>> {
        Ok(checkpoint::to_bytes(&self.params, &self.metadata(run))?)
    }

    pub fn save(&self, path: impl AsRef<Path>, run: &Value) -> Result<()> {
        Ok(checkpoint::save(path, &self.params, &self.metadata(run))?)
    }

    /// Restores a model and the run metadata stored with it. Tensor names and
    /// shapes must match the architecture recorded in the manifest.
    pub fn from_bytes(bytes: &[u8]) -> Result<(Self, Value)> {
        Self::from_checkpoint(checkpoint::from_bytes(bytes)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<(Self, Value)> {
        Self::from_checkpoint(checkpoint::load(path)?)
    }

    fn from_checkpoint(ck: checkpoint::Checkpoint) -> Result<(Self, Value)> {
        let mut meta = ck.metadata;
        let config: ModelConfig = serde_json::from_value(meta["model"].take())
            .map_err(|e| Error::Invalid(format!("checkpoint model config: {e}")))?;
        let chars = meta["chars"]
            .as_str()
            .ok_or_else(|| Error::Invalid("checkpoint lacks the character vocabulary".into()))?;
        let chars = CharVocab::from_chars(chars.chars());
        let expected = build_params(&config, chars.len(), 0)?;
        let got: Vec<(&str, &[usize])> = ck.params.iter().map(|(_, n, t)| (n, t.shape())).collect();
        let want: Vec<(&str, &[usize])> = expected.iter().map(|(_, n, t)| (n, t.shape())).collect();
        if got != want {
            return Err(Error::Invalid(
                "checkpoint tensors do not match the recorded architecture".into(),
            ));
        }
        let run = meta["run"].take();
        Ok((
            RankingModel {
                config,
                chars,
                params: ck.params,
            },
            run,
        ))
    }
}

/// Inputs for scoring one (mention, entity name) pair.
#[derive(Debug, Clone, Copy)]
pub struct PairInput<'b> {
    pub mention: &'b TokenSequence,
    /// Sentence around the mention; used only by the context feature.
    pub context: &'b TokenSequence,
    pub name: &'b TokenSequence,
    pub prior: f64,
    pub coherence: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
struct PairKey {
    mention: TokenSequence,
    context: TokenSequence,
    name: TokenSequence,
    prior: u64,
    coherence: u64,
}

/// Builds scoring subgraphs on one [`Graph`], reusing shared pieces.
///
/// Character features, sequence representations, context encodings and
/// whole pair scores are memoized, so scoring many pairs that share a
/// mention or a name stays cheap, and repeated pairs share one node.
pub struct Scorer<'a, T: Real> {
    config: &'a ModelConfig,
    chars: &'a CharVocab,
    params: &'a ParamStore<T>,
    table: &'a WordEmbeddingTable,
    pub graph: Graph<T>,
    char_cache: HashMap<String, Var>,
    repr_cache: HashMap<TokenSequence, Var>,
    sentence_cache: HashMap<TokenSequence, Option<Var>>,
    name_ctx_cache: HashMap<TokenSequence, Var>,
    pair_cache: HashMap<PairKey, Var>,
}

impl<'a, T: Real> Scorer<'a, T> {
    pub fn new(
        config: &'a ModelConfig,
        chars: &'a CharVocab,
        params: &'a ParamStore<T>,
        table: &'a WordEmbeddingTable,
        graph: Graph<T>,
    ) -> Result<Self> {
        if table.dim() != config.word_dim {
            return Err(Error::Invalid(format!(
                "word vectors have dimension {}, model expects {}",
                table.dim(),
                config.word_dim
            )));
        }
        Ok(Scorer {
            config,
            chars,
            params,
            table,
            graph,
            char_cache: HashMap::new(),
            repr_cache: HashMap::new(),
            sentence_cache: HashMap::new(),
            name_ctx_cache: HashMap::new(),
            pair_cache: HashMap::new(),
        })
    }

    fn p(&mut self, name: &str) -> Result<Var> {
        Ok(self.graph.param_by_name(self.params, name)?)
    }

    fn zeros(&mut self, rows: usize, cols: usize) -> Result<Var> {
        Ok(self.graph.constant(Tensor::zeros(&[rows, cols]))?)
    }

    fn word_rows(&mut self, tokens: &[String]) -> Result<Var> {
        let d = self.config.word_dim;
        let mut data = Vec::with_capacity(tokens.len() * d);
        for t in tokens {
            data.extend(self.table.lookup(t).0.iter().map(|&x| T::of(x as f64)));
        }
        Ok(self.graph.constant(Tensor::matrix(tokens.len(), d, data)?)?)
    }

    /// Runs one LSTM direction over the rows of `input` in the given order
    /// and returns the hidden state after each step, in processing order.
    fn lstm(&mut self, prefix: &str, input: Var, order: &[usize], hidden: usize) -> Result<Vec<Var>> {
        let w_ih = self.p(&names::lstm(prefix, "w_ih"))?;
        let w_hh = self.p(&names::lstm(prefix, "w_hh"))?;
        let bias = self.p(&names::lstm(prefix, "bias"))?;
        let mut h = self.zeros(1, hidden)?;
        let mut c = h;
        let mut states = Vec::with_capacity(order.len());
        for &t in order {
            let x = self.graph.gather(input, &[t])?;
            let hc = self.graph.lstm_cell(x, h, c, w_ih, w_hh, bias)?;
            h = self.graph.slice_cols(hc, 0, hidden)?;
            c = self.graph.slice_cols(hc, hidden, 2 * hidden)?;
            states.push(h);
        }
        Ok(states)
    }

    /// Last forward and backward character LSTM states of one token, `[1, 2h]`.
    pub fn char_feature(&mut self, token: &str) -> Result<Var> {
        if let Some(&v) = self.char_cache.get(token) {
            return Ok(v);
        }
        let idx: Vec<usize> = token
            .chars()
            .take(self.config.max_chars)
            .map(|c| self.chars.index(c))
            .collect();
        if idx.is_empty() {
            return Err(Error::Invalid("empty token".into()));
        }
        let table = self.p(names::CHAR_EMBEDDING)?;
        let emb = self.graph.gather(table, &idx)?;
        let h = self.config.char_lstm_dim;
        let fwd: Vec<usize> = (0..idx.len()).collect();
        let bwd: Vec<usize> = (0..idx.len()).rev().collect();
        let f = *self.lstm(CHAR_FWD, emb, &fwd, h)?.last().expect("non-empty");
        let b = *self.lstm(CHAR_BWD, emb, &bwd, h)?.last().expect("non-empty");
        let v = self.graph.concat_cols(&[f, b])?;
        self.char_cache.insert(token.to_string(), v);
        Ok(v)
    }

    /// Token rows `[n, token_width]` for at most `max_tokens` tokens.
    pub fn represent(&mut self, tokens: &TokenSequence) -> Result<Var> {
        if tokens.is_empty() {
            return Err(Error::Empty("token sequence"));
        }
        let tokens = tokens.truncated(self.config.max_tokens);
        if let Some(&v) = self.repr_cache.get(&tokens) {
            return Ok(v);
        }
        let words = self.word_rows(tokens.tokens())?;
        let v = if self.config.architecture.char_feature {
            let rows = tokens
                .iter()
                .map(|t| self.char_feature(t))
                .collect::<Result<Vec<_>>>()?;
            let chars = self.graph.concat_rows(&rows)?;
            self.graph.concat_cols(&[words, chars])?
        } else {
            words
        };
        self.repr_cache.insert(tokens, v);
        Ok(v)
    }

    /// Soft alignment of each side against the other; returns the expanded
    /// `[m̄, m̃, (m̄ - m̃)², m̄ ⊙ m̃]` rows for both sides.
    pub fn align(&mut self, mention: Var, name: Var) -> Result<(Var, Var)> {
        let g = &mut self.graph;
        let name_t = g.transpose(name)?;
        let affinity = g.matmul(mention, name_t)?;
        let to_name = g.row_softmax(affinity)?;
        let mention_tilde = g.matmul(to_name, name)?;
        let affinity_t = g.transpose(affinity)?;
        let to_mention = g.row_softmax(affinity_t)?;
        let name_tilde = g.matmul(to_mention, mention)?;
        Ok((expand(g, mention, mention_tilde)?, expand(g, name, name_tilde)?))
    }

    /// Attention matrices of [`Scorer::align`], for inspection.
    pub fn alignment_weights(&mut self, mention: Var, name: Var) -> Result<(Var, Var)> {
        let g = &mut self.graph;
        let name_t = g.transpose(name)?;
        let affinity = g.matmul(mention, name_t)?;
        let to_name = g.row_softmax(affinity)?;
        let affinity_t = g.transpose(affinity)?;
        let to_mention = g.row_softmax(affinity_t)?;
        Ok((to_name, to_mention))
    }

    /// Pooled encoding `[1, encoded_width]` of one side.
    pub fn encode(&mut self, rows: Var, side: Side) -> Result<Var> {
        if !self.config.architecture.cnn {
            return Ok(self.graph.mean_rows(rows)?);
        }
        let (len, width) = (self.graph.shape(rows)[0], self.graph.shape(rows)[1]);
        let windows = self.config.cnn_windows.clone();
        let mut pooled = Vec::with_capacity(windows.len());
        for w in windows {
            let input = if len < w {
                let pad = self.zeros(w - len, width)?;
                self.graph.concat_rows(&[rows, pad])?
            } else {
                rows
            };
            let weight = self.p(&names::cnn(side.label(), w, "weight"))?;
            let bias = self.p(&names::cnn(side.label(), w, "bias"))?;
            let conv = self.graph.conv1d(input, weight, bias, w)?;
            let act = self.graph.relu(conv)?;
            pooled.push(self.graph.max_over_time(act)?);
        }
        Ok(self.graph.concat_cols(&pooled)?)
    }

    fn sentence_states(&mut self, sentence: &TokenSequence) -> Result<Option<Var>> {
        if let Some(&v) = self.sentence_cache.get(sentence) {
            return Ok(v);
        }
        let v = if sentence.is_empty() {
            None
        } else {
            let h = self.config.context_lstm_dim;
            let words = self.word_rows(sentence.tokens())?;
            let n = sentence.len();
            let fwd = self.lstm(CTX_SENT_FWD, words, &(0..n).collect::<Vec<_>>(), h)?;
            let mut bwd = self.lstm(CTX_SENT_BWD, words, &(0..n).rev().collect::<Vec<_>>(), h)?;
            bwd.reverse();
            let rows = fwd
                .into_iter()
                .zip(bwd)
                .map(|(f, b)| self.graph.concat_cols(&[f, b]))
                .collect::<std::result::Result<Vec<_>, _>>()?;
            Some(self.graph.concat_rows(&rows)?)
        };
        self.sentence_cache.insert(sentence.clone(), v);
        Ok(v)
    }

    fn name_context(&mut self, name: &TokenSequence) -> Result<Var> {
        if let Some(&v) = self.name_ctx_cache.get(name) {
            return Ok(v);
        }
        let h = self.config.context_lstm_dim;
        let words = self.word_rows(name.tokens())?;
        let n = name.len();
        let f = *self
            .lstm(CTX_NAME_FWD, words, &(0..n).collect::<Vec<_>>(), h)?
            .last()
            .expect("non-empty");
        let b = *self
            .lstm(CTX_NAME_BWD, words, &(0..n).rev().collect::<Vec<_>>(), h)?
            .last()
            .expect("non-empty");
        let v = self.graph.concat_cols(&[f, b])?;
        self.name_ctx_cache.insert(name.clone(), v);
        Ok(v)
    }

    /// Cosine between the attended sentence encoding and the name encoding;
    /// a constant 0 for an empty sentence.
    pub fn context_feature(&mut self, sentence: &TokenSequence, name: &TokenSequence) -> Result<Var> {
        if name.is_empty() {
            return Err(Error::Empty("entity name"));
        }
        let Some(states) = self.sentence_states(sentence)? else {
            log::warn!("empty sentence context; context feature set to 0");
            return Ok(self.graph.constant(Tensor::scalar(T::zero()))?);
        };
        let name = name.truncated(self.config.max_tokens);
        let target = self.name_context(&name)?;
        let g = &mut self.graph;
        let target_t = g.transpose(target)?;
        let logits = g.matmul(states, target_t)?;
        let logits = g.transpose(logits)?;
        let weights = g.row_softmax(logits)?;
        let attended = g.matmul(weights, states)?;
        Ok(g.cosine(attended, target)?)
    }

    /// Pre-dropout scorer input `[1, pair_feature_width]`.
    pub fn pair_features(&mut self, input: &PairInput<'_>) -> Result<Var> {
        let m_bar = self.represent(input.mention)?;
        let s_bar = self.represent(input.name)?;
        let (m_hat, s_hat) = if self.config.architecture.alignment {
            self.align(m_bar, s_bar)?
        } else {
            (m_bar, s_bar)
        };
        let f_m = self.encode(m_hat, Side::Mention)?;
        let f_e = self.encode(s_hat, Side::Entity)?;
        let mut parts = vec![f_m, f_e];
        let features = self.config.features;
        if features.prior {
            parts.push(self.graph.constant(Tensor::scalar(T::of(input.prior)))?);
        }
        if features.context {
            parts.push(self.context_feature(input.context, input.name)?);
        }
        if features.coherence {
            parts.push(self.graph.constant(Tensor::scalar(T::of(input.coherence)))?);
        }
        let f_out = self.graph.concat_cols(&parts)?;
        let width = self.graph.shape(f_out)[1];
        if width != self.config.pair_feature_width() {
            return Err(Error::Invalid(format!(
                "pair features have width {width}, expected {}",
                self.config.pair_feature_width()
            )));
        }
        Ok(f_out)
    }

    /// Pair score in (0, 1) as a `[1, 1]` node.
    pub fn score(&mut self, input: &PairInput<'_>) -> Result<Var> {
        let key = PairKey {
            mention: input.mention.clone(),
            context: if self.config.features.context {
                input.context.clone()
            } else {
                TokenSequence::default()
            },
            name: input.name.clone(),
            prior: input.prior.to_bits(),
            coherence: input.coherence.to_bits(),
        };
        if let Some(&v) = self.pair_cache.get(&key) {
            return Ok(v);
        }
        let f_out = self.pair_features(input)?;
        let x = self.graph.dropout(f_out, self.config.dropout)?;
        let w1 = self.p(names::MLP_W1)?;
        let b1 = self.p(names::MLP_B1)?;
        let w2 = self.p(names::MLP_W2)?;
        let b2 = self.p(names::MLP_B2)?;
        let g = &mut self.graph;
        let hidden = g.matmul(x, w1)?;
        let hidden = g.add_row(hidden, b1)?;
        let hidden = g.relu(hidden)?;
        let out = g.matmul(hidden, w2)?;
        let out = g.add_row(out, b2)?;
        let v = g.sigmoid(out)?;
        self.pair_cache.insert(key, v);
        Ok(v)
    }

    pub fn score_value(&mut self, input: &PairInput<'_>) -> Result<f64> {
        let v = self.score(input)?;
        Ok(self.graph.value(v).item().as_f64())
    }
}

fn expand<T: Real>(g: &mut Graph<T>, rows: Var, aligned: Var) -> Result<Var> {
    let diff = g.sub(rows, aligned)?;
    let sq = g.mul(diff, diff)?;
    let prod = g.mul(rows, aligned)?;
    Ok(g.concat_cols(&[rows, aligned, sq, prod])?)
}

/// Inference-time scoring of a single pair with a fresh graph.
pub fn score_pair(model: &RankingModel, table: &WordEmbeddingTable, input: &PairInput<'_>) -> Result<f64> {
    let mut s = Scorer::new(&model.config, &model.chars, &model.params, table, Graph::new())?;
    s.score_value(input)
}

/// Mention-to-entity link counts from training data, keyed by the
/// normalized mention string.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct PriorTable {
    counts: HashMap<String, HashMap<String, u32>>,
}

impl PriorTable {
    pub fn from_docs(docs: &[crate::corpus::Document]) -> Self {
        let mut t = PriorTable::default();
        for m in docs.iter().flat_map(|d| &d.mentions) {
            if let (Some(id), false) = (m.gold.entity(), m.tokens.is_empty()) {
                t.add(&m.tokens.joined(), id);
            }
        }
        t
    }

    pub fn add(&mut self, mention: &str, entity: &str) {
        *self
            .counts
            .entry(mention.to_string())
            .or_default()
            .entry(entity.to_string())
            .or_default() += 1;
    }

    pub fn count(&self, mention: &str, entity: &str) -> u32 {
        self.counts
            .get(mention)
            .and_then(|m| m.get(entity))
            .copied()
            .unwrap_or(0)
    }

    /// `ln(1 + count)`.
    pub fn feature(&self, mention: &str, entity: &str) -> f64 {
        (self.count(mention, entity) as f64).ln_1p()
    }
}

fn cosine64(a: &[f32], b: &[f32]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(&x, &y)| x as f64 * y as f64).sum();
    let na = a.iter().map(|&x| x as f64 * x as f64).sum::<f64>().sqrt();
    let nb = b.iter().map(|&x| x as f64 * x as f64).sum::<f64>().sqrt();
    if na > 0.0 && nb > 0.0 {
        dot / (na * nb)
    } else {
        0.0
    }
}

/// Entity vectors for the coherence feature, with the mean vector standing
/// in for entities that have none.
#[derive(Debug, Clone)]
pub struct EntityEmbeddings {
    table: WordEmbeddingTable,
    mean: Vec<f32>,
}

impl EntityEmbeddings {
    pub fn new(table: WordEmbeddingTable) -> Self {
        let mean = table.mean();
        EntityEmbeddings { table, mean }
    }

    pub fn dim(&self) -> usize {
        self.table.dim()
    }

    pub fn vector(&self, entity: &str) -> &[f32] {
        self.table.get(entity).unwrap_or(&self.mean)
    }
}

/// Mean cosine between `entity` and the presumed entities of up to
/// `max_neighbors` other mentions, nearest by character distance between
/// spans (ties by mention order). `neighbors` holds `(start, end, top-1
/// entity)` for every mention of the document, `None` where generation
/// produced nothing; `self_index` is skipped. Returns 0 with no neighbors.
pub fn coherence_feature(
    self_index: usize,
    spans: &[(usize, usize, Option<&str>)],
    entity: &str,
    embeddings: &EntityEmbeddings,
    max_neighbors: usize,
) -> f64 {
    let (s0, e0, _) = spans[self_index];
    let mut others: Vec<(usize, usize, &str)> = spans
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != self_index)
        .filter_map(|(i, &(s, e, top))| {
            // Character gap between the spans; 0 when they overlap.
            let dist = s0.saturating_sub(e).max(s.saturating_sub(e0));
            top.map(|t| (dist, i, t))
        })
        .collect();
    others.sort();
    others.truncate(max_neighbors);
    if others.is_empty() {
        return 0.0;
    }
    let target = embeddings.vector(entity);
    let total: f64 = others
        .iter()
        .map(|&(_, _, t)| cosine64(embeddings.vector(t), target))
        .sum();
    total / others.len() as f64
}
