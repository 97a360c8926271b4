//! `lightlink`: command-line front end for the entity linking pipeline.

mod commands;
mod config;
mod error;
mod run;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};

use config::{read_config_file, Origin, RunConfig, Setting, KEYS};
use error::CliError;
use run::Run;

fn keys_help() -> String {
    let mut s = String::from(
        "Configuration keys (config file lines `key = value`, or `--set key=value`; flags override the file):\n",
    );
    for (key, doc) in KEYS {
        s.push_str(&format!("  {key:<18} {doc}\n"));
    }
    s.push_str("\nExit status: 0 success, 1 invalid configuration or arguments, 2 failure while running.");
    s
}

#[derive(Parser)]
#[command(
    name = "lightlink",
    version,
    about = "Biomedical entity linking with a small alignment + CNN ranker"
)]
#[command(after_long_help = keys_help(), after_help = "Run with --help to list every configuration key.")]
struct Cli {
    #[command(subcommand)]
    command: Command,

    #[command(flatten)]
    options: Options,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Normalize a corpus and write one JSON line per mention [corpus, output]
    Preprocess,
    /// Write candidate sets for a corpus [kb, words, corpus, output; train augments the knowledge base]
    GenCandidates,
    /// Train a ranking model [kb, train, words, checkpoint; report]
    Train,
    /// Link a corpus with a trained model [checkpoint, words, corpus, output, kb or candidates; train]
    Link,
    /// Link a labeled corpus and report accuracy [checkpoint, words, corpus, report, kb or candidates; train, output]
    Eval,
    /// Retrain with layers removed or features added and compare [kb, train, test, words, report]
    Ablate,
    /// Add typos to, or reorder the words of, corpus mentions [corpus, output]
    Simulate,
    /// Check gradients of a built-in tiny model against finite differences [report]
    Gradcheck,
    /// Print the parameter ledger of the configured model or of a checkpoint [checkpoint or kb; report]
    CountParams,
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Command::Preprocess => "preprocess",
            Command::GenCandidates => "gen-candidates",
            Command::Train => "train",
            Command::Link => "link",
            Command::Eval => "eval",
            Command::Ablate => "ablate",
            Command::Simulate => "simulate",
            Command::Gradcheck => "gradcheck",
            Command::CountParams => "count-params",
        }
    }
}

#[derive(Args)]
struct Options {
    /// Configuration file of `key = value` lines; relative paths in it are
    /// resolved against its directory
    #[arg(short, long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    /// Set any configuration key; may be repeated
    #[arg(short, long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,

    /// Knowledge base TSV
    #[arg(long, global = true, value_name = "PATH")]
    kb: Option<String>,

    /// Labeled training corpus (JSON Lines)
    #[arg(long, global = true, value_name = "PATH")]
    train: Option<String>,

    /// Labeled test corpus (JSON Lines)
    #[arg(long, global = true, value_name = "PATH")]
    test: Option<String>,

    /// Corpus to preprocess, link, evaluate or perturb (JSON Lines)
    #[arg(long, global = true, value_name = "PATH")]
    corpus: Option<String>,

    /// Word vectors in word2vec text format
    #[arg(long, global = true, value_name = "PATH")]
    words: Option<String>,

    /// Entity vectors in word2vec text format
    #[arg(long, global = true, value_name = "PATH")]
    entities: Option<String>,

    /// Abbreviation dictionary TSV
    #[arg(long, global = true, value_name = "PATH")]
    abbreviations: Option<String>,

    /// Extra numeral forms TSV
    #[arg(long, global = true, value_name = "PATH")]
    numerals: Option<String>,

    /// Candidate cache (JSON Lines) to link from
    #[arg(long, global = true, value_name = "PATH")]
    candidates: Option<String>,

    /// Model checkpoint (written by train, read by link and eval)
    #[arg(long, global = true, value_name = "PATH")]
    checkpoint: Option<String>,

    /// Main output file of the command
    #[arg(short, long, global = true, value_name = "PATH")]
    output: Option<String>,

    /// JSON report file
    #[arg(long, global = true, value_name = "PATH")]
    report: Option<String>,

    /// The single seed behind every random choice
    #[arg(long, global = true, value_name = "N")]
    seed: Option<u64>,

    /// Worker threads; 1 (the default) gives bit-reproducible runs, 0 uses every core
    #[arg(long, global = true, value_name = "N")]
    threads: Option<usize>,

    /// Candidate set size
    #[arg(short, long, global = true, value_name = "N")]
    k: Option<usize>,

    /// NIL threshold, overriding the one stored with the checkpoint
    #[arg(long, global = true, value_name = "X")]
    tau: Option<f64>,

    /// Fraction of mentions to perturb in `simulate`
    #[arg(long, global = true, value_name = "X")]
    rate: Option<f64>,

    /// Perturbation for `simulate`: typos or reordering
    #[arg(long, global = true, value_name = "KIND")]
    simulation: Option<String>,

    /// Variants for `ablate`: removals, additions or all
    #[arg(long, global = true, value_name = "SET")]
    ablation: Option<String>,

    /// More log output (-v info, -vv debug)
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,

    /// Only log errors
    #[arg(short, long, global = true)]
    quiet: bool,
}

impl Options {
    fn settings(&self) -> Result<Vec<Setting>, CliError> {
        let mut out = match &self.config {
            Some(path) => read_config_file(path)?,
            None => Vec::new(),
        };
        let flag = |key: &str, value: String| Setting {
            key: key.to_string(),
            value,
            origin: Origin::Flag,
        };
        for kv in &self.set {
            let Some((k, v)) = kv.split_once('=') else {
                return Err(CliError::Validation(format!("--set expects KEY=VALUE, got `{kv}`")));
            };
            out.push(flag(k.trim(), v.trim().to_string()));
        }
        let paths = [
            ("kb", &self.kb),
            ("train", &self.train),
            ("test", &self.test),
            ("corpus", &self.corpus),
            ("words", &self.words),
            ("entities", &self.entities),
            ("abbreviations", &self.abbreviations),
            ("numerals", &self.numerals),
            ("candidates", &self.candidates),
            ("checkpoint", &self.checkpoint),
            ("output", &self.output),
            ("report", &self.report),
            ("simulation", &self.simulation),
            ("ablation", &self.ablation),
        ];
        for (key, value) in paths {
            if let Some(v) = value {
                out.push(flag(key, v.clone()));
            }
        }
        let numbers = [
            ("seed", self.seed.map(|v| v.to_string())),
            ("threads", self.threads.map(|v| v.to_string())),
            ("k", self.k.map(|v| v.to_string())),
            ("tau", self.tau.map(|v| v.to_string())),
            ("rate", self.rate.map(|v| v.to_string())),
        ];
        for (key, value) in numbers {
            if let Some(v) = value {
                out.push(flag(key, v));
            }
        }
        Ok(out)
    }

    fn log_level(&self) -> log::LevelFilter {
        if self.quiet {
            return log::LevelFilter::Error;
        }
        match self.verbose {
            0 => log::LevelFilter::Warn,
            1 => log::LevelFilter::Info,
            _ => log::LevelFilter::Debug,
        }
    }
}

fn execute(cli: Cli) -> Result<(), CliError> {
    let config = RunConfig::from_settings(&cli.options.settings()?)?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(config.threads)
        .build_global()
        .map_err(|e| CliError::Failed(format!("thread pool: {e}")))?;
    let mut run = Run::new(cli.command.name(), config);
    match cli.command {
        Command::Preprocess => commands::preprocess(&mut run),
        Command::GenCandidates => commands::gen_candidates(&mut run),
        Command::Train => commands::train_model(&mut run),
        Command::Link => commands::link_corpus(&mut run),
        Command::Eval => commands::evaluate(&mut run),
        Command::Ablate => commands::ablate(&mut run),
        Command::Simulate => commands::simulate(&mut run),
        Command::Gradcheck => commands::gradcheck(&mut run),
        Command::CountParams => commands::count_params(&mut run),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };
    // Builder::new does not read the environment.
    env_logger::Builder::new()
        .filter_level(cli.options.log_level())
        .format_timestamp(None)
        .init();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
