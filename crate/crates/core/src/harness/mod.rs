//! Batch drivers behind the command-line tool: mining, benchmark
//! compilation, scoring, evaluation with bootstrap intervals and toy
//! training. Every command writes into a run directory together with a
//! `run_manifest.json` (config hash, seed, versions, input and output
//! digests). Nothing time-dependent is written, so reruns are byte-identical.

mod bootstrap;
mod eval;
mod mine;
mod score;
mod train;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::llm::{
    Backend, BackendKind, ClientOptions, CompletionClient, LlmError, MockFixture, PromptTemplate, RemoteConfig,
    ResponseCache, TemplateId,
};
use crate::miner::{BenchmarkBundle, BUNDLE_FILES};
use crate::model::{Corpus, ModelError, Split, VqaSample};
use crate::obs::{LexicalMatcher, LlmMatcher, Matcher, MatcherBackend, SHIPPED_SYNONYMS_VERSION};
use crate::rewards::RewardConfig;
use crate::trainkit::TrainConfig;

pub use bootstrap::{bootstrap_ci, BOOTSTRAP_METHOD};
pub use eval::{
    cmd_eval, render_table, run_eval, BootstrapInfo, Cell, EvalConfig, EvalReport, EvalRow, Grouping, MacroRow,
    EVAL_REPORT_FILE, EVAL_TABLE_FILE,
};
pub use mine::{
    assemble_bundle, cmd_compile_bench, cmd_mine, run_compile_bench, run_mine, MineOutcome, MiningConfig, CHAINS_FILE,
    REJECTIONS_FILE,
};
pub use score::{
    cmd_score, run_score, OutcomeRecord, OutputRecord, ScoreErrorRecord, ScoreOutcome, ScoreRecord, OUTCOMES_FILE,
    SCORES_FILE, SCORE_ERRORS_FILE,
};
pub use train::{
    cmd_train_toy, effective_train_config, run_train_toy, TrainOutcomeSummary, CHECKPOINT_FILE, STATS_FILE, TRACES_FILE,
};

/// Exit status for a clean run.
pub const EXIT_OK: i32 = 0;
/// Exit status for fatal I/O or configuration errors.
pub const EXIT_FATAL: i32 = 1;
/// Exit status for a run that finished but logged per-sample errors.
pub const EXIT_SAMPLE_ERRORS: i32 = 2;

pub const RUN_MANIFEST_FILE: &str = "run_manifest.json";

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("io error on {path}: {message}")]
    Io { path: String, message: String },
    #[error("malformed record at {path}:{line}: {message}")]
    Malformed { path: String, line: usize, message: String },
    #[error("configuration error: {0}")]
    Config(String),
    #[error("{0} is empty")]
    Empty(String),
    #[error("unknown grouping {0:?} (expected task or source)")]
    UnknownGrouping(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Llm(#[from] LlmError),
    #[error(transparent)]
    Miner(#[from] crate::miner::MinerError),
    #[error(transparent)]
    Train(#[from] crate::trainkit::TrainError),
}

impl HarnessError {
    pub(crate) fn io(path: &Path, e: impl std::fmt::Display) -> Self {
        HarnessError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        }
    }
}

/// Settings shared by all commands. Loaded from TOML; every field has a
/// default.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub backend: BackendKind,
    /// Mock responses keyed by idempotency key (mock backend).
    pub mock_fixture: Option<PathBuf>,
    /// Response cache directory (remote and cache-only backends).
    pub cache_dir: Option<PathBuf>,
    pub remote: Option<RemoteConfig>,
    pub client: ClientOptions,
    pub mining: MiningConfig,
    pub eval: EvalConfig,
    pub reward: RewardConfig,
    pub train: TrainConfig,
    /// Directory that relative paths resolve against: the config file's
    /// directory when loaded from a file. Not part of the hash.
    #[serde(skip)]
    pub base_dir: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            backend: BackendKind::Mock,
            mock_fixture: None,
            cache_dir: None,
            remote: None,
            client: ClientOptions::default(),
            mining: MiningConfig::default(),
            eval: EvalConfig::default(),
            reward: RewardConfig::default(),
            train: TrainConfig::default(),
            base_dir: None,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
        let mut cfg: RunConfig =
            toml::from_str(&text).map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))?;
        cfg.base_dir = path.parent().map(Path::to_path_buf);
        Ok(cfg)
    }

    /// Resolves a configured path against `base_dir`.
    pub fn resolve(&self, path: &Path) -> PathBuf {
        match &self.base_dir {
            Some(base) if path.is_relative() => base.join(path),
            _ => path.to_path_buf(),
        }
    }

    /// SHA-256 of the canonical JSON form. Paths are part of the hash;
    /// worker counts are not part of the config at all.
    pub fn hash(&self) -> String {
        sha256_hex(serde_json::to_string(self).expect("config serializes").as_bytes())
    }

    /// Builds the completion client for the configured backend.
    pub fn client(&self) -> Result<CompletionClient, HarnessError> {
        let cache = self
            .cache_dir
            .as_ref()
            .map(|p| ResponseCache::open(self.resolve(p)))
            .transpose()?;
        let backend = match self.backend {
            BackendKind::Mock => {
                let fixture = match &self.mock_fixture {
                    Some(p) => MockFixture::load(self.resolve(p))?,
                    None => MockFixture::default(),
                };
                Backend::Mock(fixture)
            }
            BackendKind::CacheOnly => {
                if cache.is_none() {
                    return Err(HarnessError::Config("cache-only backend needs cache_dir".into()));
                }
                Backend::CacheOnly
            }
            BackendKind::Remote => {
                let remote = self
                    .remote
                    .as_ref()
                    .ok_or_else(|| HarnessError::Config("remote backend needs a [remote] section".into()))?;
                Backend::remote(remote)?
            }
        };
        Ok(CompletionClient::new(backend, cache, self.client.clone()))
    }

    /// Builds the observation matcher selected by `reward.matcher`, which
    /// mining, scoring and rewards share.
    pub fn matcher(&self, client: Option<Arc<CompletionClient>>) -> Result<Arc<dyn Matcher>, HarnessError> {
        build_matcher(self.reward.matcher, || self.client(), client)
    }
}

pub(crate) fn build_matcher(
    backend: MatcherBackend,
    make_client: impl FnOnce() -> Result<CompletionClient, HarnessError>,
    client: Option<Arc<CompletionClient>>,
) -> Result<Arc<dyn Matcher>, HarnessError> {
    Ok(match backend {
        MatcherBackend::Lexical => Arc::new(LexicalMatcher::default()),
        MatcherBackend::Llm => {
            let client = match client {
                Some(c) => c,
                None => Arc::new(make_client()?),
            };
            Arc::new(LlmMatcher::new(client))
        }
    })
}

/// Written next to every command's outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub config_hash: String,
    pub seed: u64,
    pub backend: BackendKind,
    pub matcher: MatcherBackend,
    pub template_versions: BTreeMap<String, u32>,
    pub synonyms_version: u32,
    /// Command-specific settings (preset, grouping, bootstrap method, ...).
    pub settings: BTreeMap<String, String>,
    /// Input file name to SHA-256 of its bytes.
    pub inputs: BTreeMap<String, String>,
    /// Output file name to SHA-256 of its bytes.
    pub outputs: BTreeMap<String, String>,
}

impl RunManifest {
    pub fn new(command: &str, cfg: &RunConfig) -> Self {
        Self {
            tool: "radr".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            command: command.into(),
            config_hash: cfg.hash(),
            seed: cfg.seed,
            backend: cfg.backend,
            matcher: cfg.reward.matcher,
            template_versions: TemplateId::ALL
                .iter()
                .map(|&id| (id.as_str().to_string(), PromptTemplate::shipped(id).version))
                .collect(),
            synonyms_version: SHIPPED_SYNONYMS_VERSION,
            settings: BTreeMap::new(),
            inputs: BTreeMap::new(),
            outputs: BTreeMap::new(),
        }
    }

    pub fn setting(mut self, key: &str, value: impl ToString) -> Self {
        self.settings.insert(key.into(), value.to_string());
        self
    }

    /// Records an input file (or every bundle file of an input directory).
    pub fn input(&mut self, path: &Path) -> Result<(), HarnessError> {
        if path.is_dir() {
            for name in BUNDLE_FILES {
                let p = path.join(name);
                if p.exists() {
                    self.inputs
                        .insert(format!("{}/{name}", file_name(path)), file_digest(&p)?);
                }
            }
        } else {
            self.inputs.insert(file_name(path), file_digest(path)?);
        }
        Ok(())
    }

    /// Writes the manifest after digesting the listed outputs in `dir`.
    pub fn finish(mut self, dir: &Path, outputs: &[&str]) -> Result<(), HarnessError> {
        for name in outputs {
            self.outputs.insert((*name).to_string(), file_digest(&dir.join(name))?);
        }
        write_json(&dir.join(RUN_MANIFEST_FILE), &self)
    }
}

fn file_name(path: &Path) -> String {
    path.file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string())
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn file_digest(path: &Path) -> Result<String, HarnessError> {
    Ok(sha256_hex(&std::fs::read(path).map_err(|e| HarnessError::io(path, e))?))
}

pub fn ensure_dir(dir: &Path) -> Result<(), HarnessError> {
    std::fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))
}

pub fn write_text(path: &Path, text: &str) -> Result<(), HarnessError> {
    std::fs::write(path, text).map_err(|e| HarnessError::io(path, e))
}

/// Pretty JSON with a trailing newline.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), HarnessError> {
    let mut text = serde_json::to_string_pretty(value).expect("value serializes");
    text.push('\n');
    write_text(path, &text)
}

pub fn write_jsonl<T: Serialize>(path: &Path, records: &[T]) -> Result<(), HarnessError> {
    write_text(path, &crate::model::write_jsonl(records))
}

/// Reads line-delimited JSON records, skipping blank lines.
pub fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>, HarnessError> {
    let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(line).map_err(|e| HarnessError::Malformed {
            path: path.display().to_string(),
            line: i + 1,
            message: e.to_string(),
        })?);
    }
    Ok(out)
}

/// Loads a corpus from a JSONL file, or from a bundle directory (all four
/// split files, merged and sorted by id). Provenance is the file or
/// directory name, so outputs do not depend on where the input lives.
pub fn load_input_corpus(path: &Path) -> Result<Corpus, HarnessError> {
    let mut corpus = if path.is_dir() {
        let mut samples: Vec<VqaSample> = Vec::new();
        for split in [Split::Train, Split::Test] {
            samples.extend(BenchmarkBundle::load_split(path, split)?.samples);
        }
        samples.sort_by(|a, b| a.id.cmp(&b.id));
        Corpus::new(samples, "")?
    } else {
        crate::model::load_corpus(path)?
    };
    corpus.provenance = file_name(path);
    Ok(corpus)
}
