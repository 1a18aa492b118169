use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{
    build_matcher, ensure_dir, file_digest, load_input_corpus, write_jsonl, HarnessError, RunConfig, RunManifest,
};
use crate::model::Corpus;
use crate::obs::Matcher;
use crate::trainkit::{run_preset, Checkpoint, Preset, TrainConfig, TrainOutcome};

pub const CHECKPOINT_FILE: &str = "checkpoint.json";
pub const STATS_FILE: &str = "stats.jsonl";
pub const TRACES_FILE: &str = "traces.jsonl";

/// Headline numbers of a toy run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainOutcomeSummary {
    pub preset: Preset,
    pub config_hash: String,
    pub steps: usize,
    pub first_rl_process_factuality: Option<f64>,
    pub final_rl_process_factuality: Option<f64>,
    pub final_mean_reward: Option<f64>,
    pub checkpoint_sha256: String,
}

/// The training config a run actually uses: the run seed replaces
/// `train.grpo.seed` so that `--seed` governs initialization and sampling.
pub fn effective_train_config(cfg: &RunConfig, preset: Option<Preset>) -> TrainConfig {
    let mut train = cfg.train.clone();
    train.grpo.seed = cfg.seed;
    if let Some(p) = preset {
        train.preset = p;
    }
    train
}

/// Trains the toy policy under `train` on `corpus`.
pub fn cmd_train_toy(
    corpus: &Corpus,
    train: &TrainConfig,
    matcher: Arc<dyn Matcher>,
) -> Result<TrainOutcome, HarnessError> {
    Ok(run_preset(corpus, train, matcher)?)
}

/// `train-toy` over files: writes `checkpoint.json`, `stats.jsonl`,
/// `traces.jsonl` (when output logging is on) and the run manifest.
pub fn run_train_toy(
    cfg: &RunConfig,
    preset: Option<Preset>,
    corpus_path: &Path,
    out: &Path,
) -> Result<TrainOutcomeSummary, HarnessError> {
    let corpus = load_input_corpus(corpus_path)?;
    let train = effective_train_config(cfg, preset);
    let matcher = build_matcher(train.reward.matcher, || cfg.client(), None)?;
    let outcome = cmd_train_toy(&corpus, &train, matcher)?;
    ensure_dir(out)?;
    let checkpoint = Checkpoint {
        preset: train.preset,
        config_hash: outcome.config_hash.clone(),
        policy: outcome.policy.clone(),
    };
    let ck_path = out.join(CHECKPOINT_FILE);
    checkpoint.save(&ck_path)?;
    write_jsonl(&out.join(STATS_FILE), &outcome.stats)?;
    let mut outputs = vec![CHECKPOINT_FILE, STATS_FILE];
    if train.log_outputs {
        write_jsonl(&out.join(TRACES_FILE), &outcome.traces)?;
        outputs.push(TRACES_FILE);
    }
    let mut manifest = RunManifest::new("train-toy", cfg)
        .setting("preset", train.preset.as_str())
        .setting("train_config_hash", &outcome.config_hash);
    manifest.matcher = train.reward.matcher;
    manifest.input(corpus_path)?;
    manifest.finish(out, &outputs)?;
    Ok(TrainOutcomeSummary {
        preset: train.preset,
        config_hash: outcome.config_hash.clone(),
        steps: outcome.stats.len(),
        first_rl_process_factuality: outcome.first_rl().and_then(|s| s.eval_process_factuality),
        final_rl_process_factuality: outcome.final_rl().and_then(|s| s.eval_process_factuality),
        final_mean_reward: outcome.final_rl().and_then(|s| s.mean_reward),
        checkpoint_sha256: file_digest(&ck_path)?,
    })
}
