use std::collections::HashSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{
    ensure_dir, load_input_corpus, read_jsonl, write_jsonl, HarnessError, RunConfig, RunManifest, EXIT_OK,
    EXIT_SAMPLE_ERRORS,
};
use crate::miner::{
    balance, compile_benchmark, default_label, filter_by_factuality, label_counts, BenchmarkBundle, MineStage,
    MinedChain, Miner, Rejection, RejectionKind, BUNDLE_FILES, MANIFEST_FILE,
};
use crate::model::{Corpus, TaskType};
use crate::obs::Matcher;
use crate::trainkit::derive_seed;

pub const CHAINS_FILE: &str = "chains.jsonl";
pub const REJECTIONS_FILE: &str = "rejections.jsonl";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MiningConfig {
    /// Chains with factuality below this are dropped.
    pub factuality_threshold: f64,
    /// Down-sample over-represented answers within each task.
    pub balance: bool,
}

impl Default for MiningConfig {
    fn default() -> Self {
        Self {
            factuality_threshold: 1.0,
            balance: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MineOutcome {
    /// Every chain the miner produced, before filtering.
    pub chains: Vec<MinedChain>,
    /// Mining, filter and balancing rejections, sorted by sample id.
    pub rejections: Vec<Rejection>,
    pub bundle: BenchmarkBundle,
}

impl MineOutcome {
    pub fn exit_code(&self) -> i32 {
        if self.rejections.iter().any(|r| r.kind == RejectionKind::Failed) {
            EXIT_SAMPLE_ERRORS
        } else {
            EXIT_OK
        }
    }
}

/// Balances answer labels within each task; tasks with fewer than two
/// distinct labels are left as they are. Task `k` (in declaration order)
/// samples with `derive_seed(seed, k, 0)`.
fn balance_by_task(
    corpus: &Corpus,
    matcher: &dyn Matcher,
    seed: u64,
) -> Result<(Corpus, Vec<Rejection>), HarnessError> {
    let label_of = |s: &crate::model::VqaSample| default_label(s, matcher);
    let mut keep: HashSet<String> = HashSet::new();
    let mut dropped = Vec::new();
    for (k, task) in TaskType::ALL.into_iter().enumerate() {
        let group = Corpus::new(
            corpus.samples.iter().filter(|s| s.task == task).cloned().collect(),
            corpus.provenance.clone(),
        )?;
        if label_counts(&group, label_of).len() < 2 {
            keep.extend(group.samples.iter().map(|s| s.id.clone()));
            continue;
        }
        let kept = balance(&group, label_of, derive_seed(seed, k as u64, 0))?;
        let kept_ids: HashSet<&str> = kept.samples.iter().map(|s| s.id.as_str()).collect();
        for s in &group.samples {
            if !kept_ids.contains(s.id.as_str()) {
                dropped.push(Rejection {
                    sample_id: s.id.clone(),
                    stage: MineStage::Balance,
                    kind: RejectionKind::Rejected,
                    reason: format!("down-sampled label {:?} in {task}", label_of(s)),
                });
            }
        }
        keep.extend(kept_ids.into_iter().map(String::from));
    }
    let samples = corpus
        .samples
        .iter()
        .filter(|s| keep.contains(&s.id))
        .cloned()
        .collect();
    Ok((Corpus::new(samples, corpus.provenance.clone())?, dropped))
}

/// Filter, balance and compile: the post-mining half of the pipeline.
/// Returns the bundle and the filter and balancing rejections.
pub fn assemble_bundle(
    corpus: &Corpus,
    chains: &[MinedChain],
    cfg: &MiningConfig,
    matcher: &dyn Matcher,
    seed: u64,
) -> Result<(BenchmarkBundle, Vec<Rejection>), HarnessError> {
    let (kept, mut rejections) = filter_by_factuality(chains.to_vec(), cfg.factuality_threshold);
    let (balanced, dropped) = if cfg.balance {
        balance_by_task(corpus, matcher, seed)?
    } else {
        (corpus.clone(), Vec::new())
    };
    rejections.extend(dropped);
    let ids: HashSet<&str> = balanced.samples.iter().map(|s| s.id.as_str()).collect();
    let kept: Vec<MinedChain> = kept
        .into_iter()
        .filter(|c| ids.contains(c.sample_id.as_str()))
        .collect();
    let bundle = compile_benchmark(&balanced, &kept, seed)?;
    rejections.sort_by(|a, b| a.sample_id.cmp(&b.sample_id).then(a.stage.cmp(&b.stage)));
    Ok((bundle, rejections))
}

/// Mines every report-bearing sample, then filters, balances and compiles.
/// Per-sample failures are logged as rejections; only I/O and corpus errors
/// are fatal.
pub fn cmd_mine(
    corpus: &Corpus,
    miner: &Miner,
    cfg: &MiningConfig,
    matcher: &dyn Matcher,
    seed: u64,
    workers: usize,
) -> Result<MineOutcome, HarnessError> {
    let (chains, mut rejections) = miner.mine_all(&corpus.samples, workers);
    let (bundle, more) = assemble_bundle(corpus, &chains, cfg, matcher, seed)?;
    rejections.extend(more);
    rejections.sort_by(|a, b| a.sample_id.cmp(&b.sample_id).then(a.stage.cmp(&b.stage)));
    Ok(MineOutcome {
        chains,
        rejections,
        bundle,
    })
}

/// Rebuilds a bundle from a corpus and a chains file written by `mine`.
pub fn cmd_compile_bench(
    corpus: &Corpus,
    chains: &[MinedChain],
    cfg: &MiningConfig,
    matcher: &dyn Matcher,
    seed: u64,
) -> Result<(BenchmarkBundle, Vec<Rejection>), HarnessError> {
    assemble_bundle(corpus, chains, cfg, matcher, seed)
}

fn bundle_outputs() -> Vec<&'static str> {
    let mut names: Vec<&str> = BUNDLE_FILES.to_vec();
    names.push(MANIFEST_FILE);
    names
}

/// `mine` over files: writes the bundle, `chains.jsonl`, `rejections.jsonl`
/// and the run manifest into `out`. Returns the exit code.
pub fn run_mine(cfg: &RunConfig, corpus_path: &Path, out: &Path, workers: usize) -> Result<i32, HarnessError> {
    let corpus = load_input_corpus(corpus_path)?;
    let client = std::sync::Arc::new(cfg.client()?);
    let matcher = cfg.matcher(Some(client.clone()))?;
    let miner = Miner::new(client, matcher.clone());
    let outcome = cmd_mine(&corpus, &miner, &cfg.mining, matcher.as_ref(), cfg.seed, workers)?;
    ensure_dir(out)?;
    outcome.bundle.write(out)?;
    write_jsonl(&out.join(CHAINS_FILE), &outcome.chains)?;
    write_jsonl(&out.join(REJECTIONS_FILE), &outcome.rejections)?;
    let mut manifest = RunManifest::new("mine", cfg)
        .setting("factuality_threshold", cfg.mining.factuality_threshold)
        .setting("balance", cfg.mining.balance);
    manifest.input(corpus_path)?;
    if let Some(p) = &cfg.mock_fixture {
        manifest.input(&cfg.resolve(p))?;
    }
    let mut outputs = bundle_outputs();
    outputs.extend([CHAINS_FILE, REJECTIONS_FILE]);
    manifest.finish(out, &outputs)?;
    Ok(outcome.exit_code())
}

/// `compile-bench` over files.
pub fn run_compile_bench(
    cfg: &RunConfig,
    corpus_path: &Path,
    chains_path: &Path,
    out: &Path,
) -> Result<i32, HarnessError> {
    let corpus = load_input_corpus(corpus_path)?;
    let chains: Vec<MinedChain> = read_jsonl(chains_path)?;
    let matcher = cfg.matcher(None)?;
    let (bundle, rejections) = cmd_compile_bench(&corpus, &chains, &cfg.mining, matcher.as_ref(), cfg.seed)?;
    ensure_dir(out)?;
    bundle.write(out)?;
    write_jsonl(&out.join(REJECTIONS_FILE), &rejections)?;
    let mut manifest = RunManifest::new("compile-bench", cfg)
        .setting("factuality_threshold", cfg.mining.factuality_threshold)
        .setting("balance", cfg.mining.balance);
    manifest.input(corpus_path)?;
    manifest.input(chains_path)?;
    let mut outputs = bundle_outputs();
    outputs.push(REJECTIONS_FILE);
    manifest.finish(out, &outputs)?;
    Ok(EXIT_OK)
}
