//! Input loading, hashing and output writing shared by the subcommands.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use lightlink_core::abbrev::AbbreviationDictionary;
use lightlink_core::corpus::{read_corpus, Document};
use lightlink_core::embeddings::WordEmbeddingTable;
use lightlink_core::kb::KnowledgeBase;
use lightlink_core::model::{EntityEmbeddings, PriorTable};
use lightlink_core::preprocess::Preprocessor;
use lightlink_core::text::NumeralDictionary;
use lightlink_core::trainer::holdout_start;
use serde::Serialize;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::config::RunConfig;
use crate::error::CliError;

#[derive(Debug, Clone, Serialize)]
pub struct InputRecord {
    pub path: PathBuf,
    pub sha256: String,
}

pub struct Run {
    pub command: &'static str,
    pub config: RunConfig,
    inputs: BTreeMap<&'static str, InputRecord>,
}

fn io_err(path: &Path, e: std::io::Error) -> CliError {
    CliError::Failed(format!("{}: {e}", path.display()))
}

fn sha256_file(path: &Path) -> Result<String, CliError> {
    let mut hasher = Sha256::new();
    let mut f = File::open(path).map_err(|e| io_err(path, e))?;
    std::io::copy(&mut f, &mut hasher).map_err(|e| io_err(path, e))?;
    Ok(hasher.finalize().iter().map(|b| format!("{b:02x}")).collect())
}

fn path_of<'a>(config: &'a RunConfig, key: &str) -> Option<&'a PathBuf> {
    let p = &config.paths;
    match key {
        "kb" => p.kb.as_ref(),
        "train" => p.train.as_ref(),
        "test" => p.test.as_ref(),
        "corpus" => p.corpus.as_ref(),
        "words" => p.words.as_ref(),
        "entities" => p.entities.as_ref(),
        "abbreviations" => p.abbreviations.as_ref(),
        "numerals" => p.numerals.as_ref(),
        "candidates" => p.candidates.as_ref(),
        "checkpoint" => p.checkpoint.as_ref(),
        "output" => p.output.as_ref(),
        "report" => p.report.as_ref(),
        _ => unreachable!("not a path key: {key}"),
    }
}

impl Run {
    pub fn new(command: &'static str, config: RunConfig) -> Self {
        Run {
            command,
            config,
            inputs: BTreeMap::new(),
        }
    }

    /// Path of a required input; records its content hash.
    pub fn input(&mut self, key: &'static str) -> Result<PathBuf, CliError> {
        self.optional_input(key)?
            .ok_or_else(|| CliError::Validation(format!("`{}` needs the `{key}` input path", self.command)))
    }

    pub fn optional_input(&mut self, key: &'static str) -> Result<Option<PathBuf>, CliError> {
        let Some(path) = path_of(&self.config, key).cloned() else {
            return Ok(None);
        };
        if !path.is_file() {
            return Err(CliError::Validation(format!(
                "{key} file {} does not exist",
                path.display()
            )));
        }
        let sha256 = sha256_file(&path)?;
        self.inputs.insert(
            key,
            InputRecord {
                path: path.clone(),
                sha256,
            },
        );
        Ok(Some(path))
    }

    /// Path of a required output; its directory is created if needed.
    pub fn output(&self, key: &'static str) -> Result<PathBuf, CliError> {
        self.optional_output(key)?
            .ok_or_else(|| CliError::Validation(format!("`{}` needs the `{key}` output path", self.command)))
    }

    pub fn optional_output(&self, key: &'static str) -> Result<Option<PathBuf>, CliError> {
        let Some(path) = path_of(&self.config, key).cloned() else {
            return Ok(None);
        };
        if path.is_dir() {
            return Err(CliError::Validation(format!(
                "{key} path {} is a directory",
                path.display()
            )));
        }
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(|e| {
                CliError::Validation(format!("cannot create directory for {key}: {}: {e}", dir.display()))
            })?;
        }
        Ok(Some(path))
    }

    /// Command, full configuration and input hashes.
    pub fn echo(&self) -> Value {
        json!({
            "command": self.command,
            "config": self.config,
            "inputs": self.inputs,
        })
    }

    pub fn preprocessor(&mut self) -> Result<Preprocessor, CliError> {
        let mut numerals = NumeralDictionary::builtin();
        if let Some(path) = self.optional_input("numerals")? {
            numerals.extend_from_tsv(reader(&path)?, &path.display().to_string())?;
        }
        let abbreviations = match self.optional_input("abbreviations")? {
            Some(path) => AbbreviationDictionary::from_tsv(reader(&path)?, &path.display().to_string())?,
            None => AbbreviationDictionary::new(),
        };
        Ok(Preprocessor::new(numerals, abbreviations))
    }

    pub fn kb(&mut self, pre: &Preprocessor) -> Result<KnowledgeBase, CliError> {
        let path = self.input("kb")?;
        let (kb, report) = KnowledgeBase::from_tsv(reader(&path)?, &path.display().to_string(), pre)?;
        for w in &report.warnings {
            log::warn!("{w}");
        }
        log::info!("knowledge base: {} entities, {} names", kb.len(), kb.name_count());
        Ok(kb)
    }

    pub fn raw_corpus(&mut self, key: &'static str) -> Result<Vec<Document>, CliError> {
        let path = self.input(key)?;
        Ok(read_corpus(reader(&path)?, &path.display().to_string())?)
    }

    pub fn corpus(&mut self, key: &'static str, pre: &Preprocessor) -> Result<Vec<Document>, CliError> {
        let mut docs = self.raw_corpus(key)?;
        pre.corpus(&mut docs);
        Ok(docs)
    }

    pub fn words(&mut self) -> Result<WordEmbeddingTable, CliError> {
        let path = self.input("words")?;
        vectors(&path)
    }

    pub fn entities(&mut self) -> Result<Option<EntityEmbeddings>, CliError> {
        let needed = self.config.model.features.coherence;
        match self.optional_input("entities")? {
            Some(path) => Ok(Some(EntityEmbeddings::new(vectors(&path)?))),
            None if needed => Err(CliError::Validation(
                "the coherence feature needs the `entities` input path".into(),
            )),
            None => Ok(None),
        }
    }

    /// Knowledge base and prior for inference. With a training corpus the
    /// knowledge base is augmented with its training split, exactly as
    /// during training.
    pub fn inference_kb(
        &mut self,
        kb: KnowledgeBase,
        pre: &Preprocessor,
    ) -> Result<(KnowledgeBase, PriorTable), CliError> {
        if path_of(&self.config, "train").is_none() {
            if self.config.model.features.prior {
                log::warn!("no training corpus given; the prior feature will be 0 everywhere");
            }
            return Ok((kb, PriorTable::default()));
        }
        let docs = self.corpus("train", pre)?;
        let split = holdout_start(docs.len(), self.config.train.holdout_fraction);
        let mut kb = kb;
        let report = kb.augment(&docs[..split]);
        for w in &report.warnings {
            log::warn!("{w}");
        }
        Ok((kb, PriorTable::from_docs(&docs[..split])))
    }

    /// Writes an output file and its `.meta.json` sidecar.
    pub fn write_with_sidecar(
        &self,
        path: &Path,
        write: impl FnOnce(&mut BufWriter<File>) -> lightlink_core::Result<()>,
    ) -> Result<(), CliError> {
        let mut w = BufWriter::new(File::create(path).map_err(|e| io_err(path, e))?);
        write(&mut w)?;
        w.flush().map_err(|e| io_err(path, e))?;
        let mut meta = self.echo();
        meta["output"] = json!({ "path": path, "sha256": sha256_file(path)? });
        write_json(&sidecar_path(path), &meta)
    }
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".meta.json");
    PathBuf::from(s)
}

pub fn reader(path: &Path) -> Result<BufReader<File>, CliError> {
    Ok(BufReader::new(File::open(path).map_err(|e| io_err(path, e))?))
}

fn vectors(path: &Path) -> Result<WordEmbeddingTable, CliError> {
    let (table, report) = WordEmbeddingTable::read_word2vec(reader(path)?, &path.display().to_string())?;
    for w in &report.warnings {
        log::warn!("{w}");
    }
    log::info!(
        "{}: {} vectors of dimension {}",
        path.display(),
        table.len(),
        table.dim()
    );
    Ok(table)
}

pub fn write_json(path: &Path, value: &Value) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::Failed(e.to_string()))?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| io_err(path, e))
}
