//! Run configuration: a `key = value` file plus command-line overrides.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use lightlink_core::model::ModelConfig;
use lightlink_core::trainer::TrainConfig;
use serde::Serialize;

use crate::error::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Simulation {
    Typos,
    Reordering,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum AblationSet {
    Removals,
    Additions,
    All,
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct Paths {
    pub kb: Option<PathBuf>,
    pub train: Option<PathBuf>,
    pub test: Option<PathBuf>,
    pub corpus: Option<PathBuf>,
    pub words: Option<PathBuf>,
    pub entities: Option<PathBuf>,
    pub abbreviations: Option<PathBuf>,
    pub numerals: Option<PathBuf>,
    pub candidates: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub output: Option<PathBuf>,
    pub report: Option<PathBuf>,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunConfig {
    pub paths: Paths,
    pub seed: u64,
    /// Worker threads; 0 lets the pool pick one per core.
    pub threads: usize,
    /// Overrides the threshold stored with the checkpoint.
    pub tau: Option<f64>,
    pub rate: f64,
    pub simulation: Simulation,
    pub ablation: AblationSet,
    pub model: ModelConfig,
    pub train: TrainConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        let train = TrainConfig::default();
        RunConfig {
            paths: Paths::default(),
            seed: train.seed,
            threads: 1,
            tau: None,
            rate: 0.9,
            simulation: Simulation::Typos,
            ablation: AblationSet::Removals,
            model: ModelConfig::default(),
            train,
        }
    }
}

/// Every recognized key with a one-line description, in help order.
pub const KEYS: &[(&str, &str)] = &[
    ("kb", "knowledge base TSV (id, name, C|S)"),
    ("train", "labeled training corpus, JSON Lines"),
    ("test", "labeled test corpus, JSON Lines"),
    ("corpus", "corpus to preprocess, link, evaluate or perturb"),
    ("words", "word vectors, word2vec text format"),
    (
        "entities",
        "entity vectors for the coherence feature, word2vec text format",
    ),
    ("abbreviations", "global abbreviation dictionary TSV (short, long)"),
    ("numerals", "extra numeral forms TSV (form, english)"),
    ("candidates", "candidate cache, JSON Lines"),
    ("checkpoint", "model checkpoint"),
    ("output", "main output file of the command"),
    ("report", "JSON report of the command"),
    (
        "seed",
        "single seed for initialization, shuffling, dropout and simulators",
    ),
    ("threads", "worker threads (1 = deterministic mode, 0 = one per core)"),
    ("k", "candidate set size"),
    ("tau", "NIL threshold; defaults to the one tuned during training"),
    ("rate", "fraction of mentions perturbed by `simulate`"),
    ("simulation", "typos | reordering"),
    ("ablation", "removals | additions | all"),
    ("word_dim", "word vector dimension"),
    ("char_emb_dim", "character embedding dimension"),
    ("char_lstm_dim", "character LSTM size per direction"),
    ("cnn_feature_maps", "feature maps per CNN window"),
    ("cnn_windows", "comma-separated CNN window sizes"),
    ("context_lstm_dim", "context LSTM size per direction"),
    ("entity_emb_dim", "entity vector dimension"),
    ("hidden_dim", "scorer hidden layer size"),
    ("dropout", "dropout rate on the scorer input"),
    ("max_tokens", "tokens kept per mention or name"),
    ("max_chars", "characters kept per token"),
    ("use_prior", "add the mention-entity prior feature (true | false)"),
    ("use_context", "add the sentence context feature (true | false)"),
    ("use_coherence", "add the document coherence feature (true | false)"),
    ("char_feature", "character BiLSTM features (true | false)"),
    ("alignment", "alignment layer (true | false)"),
    ("cnn", "CNN encoder; mean pooling when false (true | false)"),
    ("margin", "triplet loss margin"),
    ("learning_rate", "Adam learning rate"),
    ("beta1", "Adam first moment decay"),
    ("beta2", "Adam second moment decay"),
    ("epsilon", "Adam epsilon"),
    ("batch_size", "triplets per batch"),
    ("max_epochs", "epoch limit"),
    ("patience", "epochs without hold-out improvement before stopping"),
    ("holdout_fraction", "fraction of training documents held out"),
    ("max_neighbors", "mentions considered by the coherence feature"),
];

/// Where a setting came from, for error messages.
#[derive(Debug, Clone)]
pub enum Origin {
    File { path: PathBuf, line: usize },
    Flag,
}

impl fmt::Display for Origin {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Origin::File { path, line } => write!(f, "{}:{line}", path.display()),
            Origin::Flag => write!(f, "command line"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Setting {
    pub key: String,
    pub value: String,
    pub origin: Origin,
}

/// Parses a config file. Blank lines and lines starting with `#` are
/// skipped; relative paths are taken relative to the file's directory.
pub fn read_config_file(path: &Path) -> Result<Vec<Setting>, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Validation(format!("cannot read config file {}: {e}", path.display())))?;
    let base = path.parent().unwrap_or(Path::new("."));
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let origin = Origin::File {
            path: path.to_path_buf(),
            line: i + 1,
        };
        let Some((key, value)) = line.split_once('=') else {
            return Err(CliError::Validation(format!(
                "{origin}: expected `key = value`, got `{line}`"
            )));
        };
        let key = key.trim().to_string();
        let mut value = value.trim().to_string();
        if is_path_key(&key) && !value.is_empty() && Path::new(&value).is_relative() {
            value = base.join(&value).to_string_lossy().into_owned();
        }
        out.push(Setting { key, value, origin });
    }
    Ok(out)
}

fn is_path_key(key: &str) -> bool {
    matches!(
        key,
        "kb" | "train"
            | "test"
            | "corpus"
            | "words"
            | "entities"
            | "abbreviations"
            | "numerals"
            | "candidates"
            | "checkpoint"
            | "output"
            | "report"
    )
}

fn parse<T: FromStr>(s: &Setting) -> Result<T, CliError>
where
    T::Err: fmt::Display,
{
    s.value
        .parse()
        .map_err(|e| CliError::Validation(format!("{}: bad value `{}` for `{}`: {e}", s.origin, s.value, s.key)))
}

fn invalid(s: &Setting, expected: &str) -> CliError {
    CliError::Validation(format!(
        "{}: bad value `{}` for `{}`: expected {expected}",
        s.origin, s.value, s.key
    ))
}

impl RunConfig {
    /// Applies settings in order, so later ones (flags) win.
    pub fn from_settings(settings: &[Setting]) -> Result<Self, CliError> {
        let mut c = RunConfig::default();
        for s in settings {
            c.set(s)?;
        }
        c.train.seed = c.seed;
        c.model
            .validate()
            .map_err(|e| CliError::Validation(format!("model settings: {e}")))?;
        c.train
            .validate()
            .map_err(|e| CliError::Validation(format!("training settings: {e}")))?;
        if !(0.0..=1.0).contains(&c.rate) {
            return Err(CliError::Validation(format!("rate must lie in [0, 1], got {}", c.rate)));
        }
        Ok(c)
    }

    fn set(&mut self, s: &Setting) -> Result<(), CliError> {
        let path = || Some(PathBuf::from(&s.value));
        let m = &mut self.model;
        let t = &mut self.train;
        match s.key.as_str() {
            "kb" => self.paths.kb = path(),
            "train" => self.paths.train = path(),
            "test" => self.paths.test = path(),
            "corpus" => self.paths.corpus = path(),
            "words" => self.paths.words = path(),
            "entities" => self.paths.entities = path(),
            "abbreviations" => self.paths.abbreviations = path(),
            "numerals" => self.paths.numerals = path(),
            "candidates" => self.paths.candidates = path(),
            "checkpoint" => self.paths.checkpoint = path(),
            "output" => self.paths.output = path(),
            "report" => self.paths.report = path(),
            "seed" => self.seed = parse(s)?,
            "threads" => self.threads = parse(s)?,
            "k" => t.k = parse(s)?,
            "tau" => {
                let tau: f64 = parse(s)?;
                if !(0.0..=1.0).contains(&tau) {
                    return Err(invalid(s, "a number in [0, 1]"));
                }
                self.tau = Some(tau);
            }
            "rate" => self.rate = parse(s)?,
            "simulation" => {
                self.simulation = match s.value.as_str() {
                    "typos" => Simulation::Typos,
                    "reordering" => Simulation::Reordering,
                    _ => return Err(invalid(s, "`typos` or `reordering`")),
                }
            }
            "ablation" => {
                self.ablation = match s.value.as_str() {
                    "removals" => AblationSet::Removals,
                    "additions" => AblationSet::Additions,
                    "all" => AblationSet::All,
                    _ => return Err(invalid(s, "`removals`, `additions` or `all`")),
                }
            }
            "word_dim" => m.word_dim = parse(s)?,
            "char_emb_dim" => m.char_emb_dim = parse(s)?,
            "char_lstm_dim" => m.char_lstm_dim = parse(s)?,
            "cnn_feature_maps" => m.cnn_feature_maps = parse(s)?,
            "cnn_windows" => {
                m.cnn_windows = s
                    .value
                    .split(',')
                    .map(|w| w.trim().parse::<usize>())
                    .collect::<Result<_, _>>()
                    .map_err(|_| invalid(s, "a comma-separated list of window sizes"))?
            }
            "context_lstm_dim" => m.context_lstm_dim = parse(s)?,
            "entity_emb_dim" => m.entity_emb_dim = parse(s)?,
            "hidden_dim" => m.hidden_dim = parse(s)?,
            "dropout" => m.dropout = parse(s)?,
            "max_tokens" => m.max_tokens = parse(s)?,
            "max_chars" => m.max_chars = parse(s)?,
            "use_prior" => m.features.prior = parse(s)?,
            "use_context" => m.features.context = parse(s)?,
            "use_coherence" => m.features.coherence = parse(s)?,
            "char_feature" => m.architecture.char_feature = parse(s)?,
            "alignment" => m.architecture.alignment = parse(s)?,
            "cnn" => m.architecture.cnn = parse(s)?,
            "margin" => t.margin = parse(s)?,
            "learning_rate" => t.adam.learning_rate = parse(s)?,
            "beta1" => t.adam.beta1 = parse(s)?,
            "beta2" => t.adam.beta2 = parse(s)?,
            "epsilon" => t.adam.epsilon = parse(s)?,
            "batch_size" => t.batch_size = parse(s)?,
            "max_epochs" => t.max_epochs = parse(s)?,
            "patience" => t.patience = parse(s)?,
            "holdout_fraction" => t.holdout_fraction = parse(s)?,
            "max_neighbors" => t.max_neighbors = parse(s)?,
            _ => return Err(CliError::Validation(format!("{}: unknown key `{}`", s.origin, s.key))),
        }
        Ok(())
    }
}
