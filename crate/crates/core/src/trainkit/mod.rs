//! Desk-scale training: supervised fine-tuning and group-relative policy
//! optimization over a tabular softmax policy, with rewards from
//! [`crate::rewards`].

mod objective;
mod optim;
mod policy;
pub mod synthetic;
mod vocab;

use std::fmt;
use std::path::Path;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::model::{render_instruction, Corpus, PartitionTag, PromptMode, VqaSample};
use crate::obs::Matcher;
use crate::rewards::{
    process_reward, total_reward, RewardBreakdown, RewardConfig, RewardContext, RewardError, ANSWER_CLOSE, ANSWER_OPEN,
    THINK_CLOSE, THINK_OPEN,
};

pub use objective::{
    advantages, derive_seed, grpo_objective, grpo_objective_into, kl_penalty, sample_group, sft_loss, sft_loss_into,
    ClipMode, GroupBatch, GrpoConfig, GrpoTerms, KlEstimator, SftBatch,
};
pub use optim::{Optimizer, OptimizerKind};
pub use policy::ToyPolicy;
pub use vocab::{fnv1a, tokenize, Prompt, Vocab, EOS, EOS_ID};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("token {0:?} is not in the vocabulary")]
    UnknownToken(String),
    #[error("token id {0} is outside the vocabulary")]
    TokenOutOfRange(u32),
    #[error("target sequence is empty")]
    EmptyTarget,
    #[error("supervision mask must cover exactly the target tokens")]
    BadMask,
    #[error("group size mismatch: expected {expected}, got {outputs} outputs, {old_logps} old log-probs, {advantages} advantages")]
    GroupSize {
        expected: usize,
        outputs: usize,
        old_logps: usize,
        advantages: usize,
    },
    #[error("preset {preset} needs {partition:?} samples but the corpus has none")]
    EmptyPartition { preset: Preset, partition: DataSel },
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("checkpoint {path}: {message}")]
    Checkpoint { path: String, message: String },
    #[error(transparent)]
    Reward(#[from] RewardError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Sft,
    Grpo,
}

/// Which partition a phase trains on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataSel {
    ReasoningAugmented,
    AnswerOnly,
    Both,
}

impl DataSel {
    fn admits(self, p: PartitionTag) -> bool {
        match self {
            DataSel::Both => true,
            DataSel::ReasoningAugmented => p == PartitionTag::ReasoningAugmented,
            DataSel::AnswerOnly => p == PartitionTag::AnswerOnly,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Phase {
    pub stage: Stage,
    pub data: DataSel,
    pub process_reward: bool,
}

/// Named training recipes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    /// SFT on reasoning-augmented samples.
    SftRo,
    /// SFT on both partitions.
    SftBoth,
    /// Outcome-reward GRPO on answer-only samples, from the base policy.
    RlO,
    /// SFT on reasoning-augmented samples, then outcome-reward GRPO on answer-only samples.
    SftRoRlO,
    /// SFT on both partitions, then outcome-reward GRPO on answer-only samples.
    WoPr,
    /// SFT on both partitions, then GRPO on both with the process reward.
    Full,
}

impl Preset {
    pub const ALL: [Preset; 6] = [
        Preset::SftRo,
        Preset::SftBoth,
        Preset::RlO,
        Preset::SftRoRlO,
        Preset::WoPr,
        Preset::Full,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Preset::SftRo => "sft_ro",
            Preset::SftBoth => "sft_both",
            Preset::RlO => "rl_o",
            Preset::SftRoRlO => "sft_ro_rl_o",
            Preset::WoPr => "wo_pr",
            Preset::Full => "full",
        }
    }

    pub fn describe(self) -> &'static str {
        match self {
            Preset::SftRo => "SFT on reasoning-augmented samples",
            Preset::SftBoth => "SFT on reasoning-augmented and answer-only samples",
            Preset::RlO => "outcome-reward GRPO on answer-only samples from the base policy",
            Preset::SftRoRlO => "SFT on reasoning-augmented samples, then outcome-reward GRPO on answer-only samples",
            Preset::WoPr => "SFT on both partitions, then outcome-reward GRPO on answer-only samples",
            Preset::Full => "SFT on both partitions, then GRPO on both with the process reward",
        }
    }

    pub fn phases(self) -> Vec<Phase> {
        use DataSel::*;
        let sft = |data| Phase {
            stage: Stage::Sft,
            data,
            process_reward: false,
        };
        let rl = |data, process_reward| Phase {
            stage: Stage::Grpo,
            data,
            process_reward,
        };
        match self {
            Preset::SftRo => vec![sft(ReasoningAugmented)],
            Preset::SftBoth => vec![sft(Both)],
            Preset::RlO => vec![rl(AnswerOnly, false)],
            Preset::SftRoRlO => vec![sft(ReasoningAugmented), rl(AnswerOnly, false)],
            Preset::WoPr => vec![sft(Both), rl(AnswerOnly, false)],
            Preset::Full => vec![sft(Both), rl(Both, true)],
        }
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Preset {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Preset::ALL
            .into_iter()
            .find(|p| p.as_str() == s)
            .ok_or_else(|| format!("unknown preset {s:?}"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SftConfig {
    pub steps: usize,
    pub learning_rate: f64,
    pub optimizer: OptimizerKind,
    pub clip_norm: Option<f64>,
}

impl Default for SftConfig {
    fn default() -> Self {
        Self {
            steps: 20,
            learning_rate: 0.1,
            optimizer: OptimizerKind::default(),
            clip_norm: Some(1.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub preset: Preset,
    /// Defaults to the longest training target plus 4.
    pub max_length: Option<usize>,
    /// Half-width of the uniform initial logits; 0 gives the uniform policy.
    pub init_scale: f64,
    pub sft: SftConfig,
    /// `seed` here seeds initialization and all sampling.
    pub grpo: GrpoConfig,
    pub rl_optimizer: OptimizerKind,
    pub rl_clip_norm: Option<f64>,
    pub reward: RewardConfig,
    pub eval_every: usize,
    pub eval_group: usize,
    pub log_outputs: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            preset: Preset::Full,
            max_length: None,
            init_scale: 0.0,
            sft: SftConfig::default(),
            grpo: GrpoConfig::default(),
            rl_optimizer: OptimizerKind::default(),
            rl_clip_norm: Some(1.0),
            reward: RewardConfig::default(),
            eval_every: 10,
            eval_group: 8,
            log_outputs: false,
        }
    }
}

impl TrainConfig {
    /// sha256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(serde_json::to_vec(self).expect("config serializes")))
    }
}

/// A corpus sample prepared for the toy policy.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyExample {
    pub sample: VqaSample,
    pub partition: PartitionTag,
    pub prompt: Prompt,
    pub target: Vec<u32>,
}

/// Target text: think and answer for reasoning-augmented samples, answer
/// alone otherwise.
pub fn target_text(sample: &VqaSample) -> String {
    let answer = format!("{ANSWER_OPEN}{}{ANSWER_CLOSE}", sample.answer.trim());
    match &sample.reasoning {
        Some(r) if sample.has_reasoning() => format!("{THINK_OPEN}{}{THINK_CLOSE}{answer}", r.trim()),
        _ => answer,
    }
}

/// Prompt seen by the toy policy: image references stand in for pixels,
/// followed by the rendered instruction.
pub fn toy_prompt(sample: &VqaSample, mode: PromptMode) -> Prompt {
    let mut tokens = sample.images.clone();
    tokens.extend(tokenize(&render_instruction(sample, mode)));
    Prompt::new(tokens)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToyData {
    pub vocab: Vocab,
    pub examples: Vec<ToyExample>,
}

impl ToyData {
    /// Builds the vocabulary from every target and encodes all samples.
    /// Reasoning-augmented samples use the CoT prompt, answer-only samples the
    /// direct prompt.
    pub fn from_corpus(corpus: &Corpus) -> Result<Self, TrainError> {
        let texts: Vec<String> = corpus.samples.iter().map(target_text).collect();
        let vocab = Vocab::from_texts(texts.iter().map(String::as_str));
        let mut examples = Vec::with_capacity(corpus.len());
        for (s, text) in corpus.samples.iter().zip(&texts) {
            let partition = if s.has_reasoning() {
                PartitionTag::ReasoningAugmented
            } else {
                PartitionTag::AnswerOnly
            };
            let mode = match partition {
                PartitionTag::ReasoningAugmented => PromptMode::Cot,
                PartitionTag::AnswerOnly => PromptMode::Direct,
            };
            let mut target = vocab.encode(text)?;
            target.push(EOS_ID);
            examples.push(ToyExample {
                sample: s.clone(),
                partition,
                prompt: toy_prompt(s, mode),
                target,
            });
        }
        examples.sort_by(|a, b| a.sample.id.cmp(&b.sample.id));
        Ok(Self { vocab, examples })
    }

    pub fn select(&self, data: DataSel) -> Vec<&ToyExample> {
        self.examples.iter().filter(|e| data.admits(e.partition)).collect()
    }

    pub fn longest_target(&self) -> usize {
        self.examples.iter().map(|e| e.target.len()).max().unwrap_or(1)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepStats {
    pub phase: usize,
    pub stage: Stage,
    pub step: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub loss: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mean_reward: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mean_format: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mean_outcome: Option<f64>,
    /// Mean process component over reasoning-augmented outputs in the batch.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mean_process: Option<f64>,
    /// Mean KL estimate between the sampling policy and the updated policy.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub kl: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub grad_norm: Option<f64>,
    /// Mean process factuality of fresh samples on every reasoning-augmented
    /// prompt in the corpus, whatever the phase trains on.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eval_process_factuality: Option<f64>,
}

impl StepStats {
    fn new(phase: usize, stage: Stage, step: usize) -> Self {
        Self {
            phase,
            stage,
            step,
            loss: None,
            mean_reward: None,
            mean_format: None,
            mean_outcome: None,
            mean_process: None,
            kl: None,
            grad_norm: None,
            eval_process_factuality: None,
        }
    }
}

/// One sampled output and its reward, for offline re-checking.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardTrace {
    pub phase: usize,
    pub step: usize,
    pub sample_id: String,
    pub partition: PartitionTag,
    pub output: String,
    pub reward: RewardBreakdown,
}

const EVAL_SALT: u64 = 0x6576_616c;

fn mean(xs: impl IntoIterator<Item = f64>) -> Option<f64> {
    let (s, n) = xs.into_iter().fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    (n > 0).then(|| s / n as f64)
}

/// Full-batch SFT: each step minimizes the mean per-example loss. Returns
/// `steps + 1` records; the last is the loss after the final update.
pub fn train_sft(
    policy: &mut ToyPolicy,
    examples: &[&ToyExample],
    cfg: &SftConfig,
    phase: usize,
) -> Result<Vec<StepStats>, TrainError> {
    let batches: Vec<SftBatch> = examples
        .iter()
        .map(|e| SftBatch::new(e.prompt.clone(), e.target.clone()))
        .collect::<Result<_, _>>()?;
    let mut opt = Optimizer::new(cfg.optimizer, cfg.learning_rate, cfg.clip_norm, policy.n_params());
    let w = 1.0 / batches.len().max(1) as f64;
    let mut stats = Vec::with_capacity(cfg.steps + 1);
    for step in 0..=cfg.steps {
        let mut grad = vec![0.0; policy.n_params()];
        let mut loss = 0.0;
        for b in &batches {
            loss += w * sft_loss_into(policy, b, w, &mut grad)?;
        }
        let mut s = StepStats::new(phase, Stage::Sft, step);
        s.loss = Some(loss);
        if step < cfg.steps {
            s.grad_norm = Some(opt.step(&mut policy.theta, &grad));
        }
        stats.push(s);
    }
    Ok(stats)
}

struct SampledGroup {
    batch: GroupBatch,
    rewards: Vec<RewardBreakdown>,
    texts: Vec<String>,
}

fn sample_and_score(
    policy: &ToyPolicy,
    example: &ToyExample,
    g: usize,
    seed: u64,
    ctx: &RewardContext,
) -> Result<SampledGroup, TrainError> {
    let mut batch = sample_group(policy, &example.prompt, g, seed)?;
    let texts: Vec<String> = batch.outputs.iter().map(|o| policy.vocab.decode(o)).collect();
    let rewards = texts
        .iter()
        .map(|t| total_reward(t, &example.sample, example.partition, ctx))
        .collect::<Result<Vec<_>, _>>()?;
    batch.set_rewards(rewards.iter().map(|r| r.total).collect());
    Ok(SampledGroup { batch, rewards, texts })
}

/// Mean process factuality over fresh samples on the given prompts.
pub fn eval_process_factuality(
    policy: &ToyPolicy,
    examples: &[&ToyExample],
    g: usize,
    seed: u64,
    matcher: &dyn Matcher,
) -> Result<Option<f64>, TrainError> {
    let scores = examples
        .par_iter()
        .enumerate()
        .map(|(k, e)| {
            (0..g)
                .map(|i| {
                    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, k as u64, i as u64));
                    let text = policy.vocab.decode(&policy.sample(&e.prompt, &mut rng));
                    process_reward(&text, &e.sample, matcher)
                })
                .collect::<Result<Vec<_>, _>>()
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(mean(scores.into_iter().flatten()))
}

/// GRPO over the given prompts, one update per step with the sampling policy
/// refreshed every step. Returns `steps + 1` records; the last describes the
/// policy after the final update.
#[allow(clippy::too_many_arguments)]
pub fn train_grpo(
    policy: &mut ToyPolicy,
    examples: &[&ToyExample],
    eval: &[&ToyExample],
    ctx: &RewardContext,
    cfg: &TrainConfig,
    phase: usize,
    traces: Option<&mut Vec<RewardTrace>>,
) -> Result<Vec<StepStats>, TrainError> {
    let gcfg = &cfg.grpo;
    gcfg.validate()?;
    let mut opt = Optimizer::new(
        cfg.rl_optimizer,
        gcfg.learning_rate,
        cfg.rl_clip_norm,
        policy.n_params(),
    );
    let mut stats = Vec::with_capacity(gcfg.steps + 1);
    let mut traces = traces;
    let phase_seed = derive_seed(gcfg.seed, phase as u64, u64::MAX);
    for step in 0..=gcfg.steps {
        let snapshot: &ToyPolicy = policy;
        let groups = examples
            .par_iter()
            .enumerate()
            .map(|(k, e)| {
                sample_and_score(
                    snapshot,
                    e,
                    gcfg.group_size,
                    derive_seed(phase_seed, step as u64, k as u64),
                    ctx,
                )
            })
            .collect::<Result<Vec<_>, _>>()?;

        let mut s = StepStats::new(phase, Stage::Grpo, step);
        let all = || groups.iter().flat_map(|g| g.rewards.iter());
        s.mean_reward = mean(all().map(|r| r.total));
        s.mean_format = mean(all().map(|r| r.format));
        s.mean_outcome = mean(all().map(|r| r.outcome));
        s.mean_process = mean(
            examples
                .iter()
                .zip(&groups)
                .filter(|(e, _)| e.partition == PartitionTag::ReasoningAugmented)
                .flat_map(|(_, g)| g.rewards.iter().map(|r| r.process)),
        );
        if step % cfg.eval_every.max(1) == 0 || step == gcfg.steps {
            s.eval_process_factuality = eval_process_factuality(
                snapshot,
                eval,
                cfg.eval_group,
                derive_seed(phase_seed ^ EVAL_SALT, step as u64, 0),
                ctx.matcher.as_ref(),
            )?;
        }
        if let Some(t) = traces.as_deref_mut() {
            for (e, g) in examples.iter().zip(&groups) {
                for (text, r) in g.texts.iter().zip(&g.rewards) {
                    t.push(RewardTrace {
                        phase,
                        step,
                        sample_id: e.sample.id.clone(),
                        partition: e.partition,
                        output: text.clone(),
                        reward: *r,
                    });
                }
            }
        }

        if step < gcfg.steps {
            let mut grad = vec![0.0; policy.n_params()];
            let w = 1.0 / groups.len().max(1) as f64;
            for g in &groups {
                // Minimizing -J.
                grpo_objective_into(policy, &g.batch, gcfg, -w, &mut grad)?;
            }
            s.grad_norm = Some(opt.step(&mut policy.theta, &grad));
            s.kl = mean(groups.iter().flat_map(|g| {
                let p: &ToyPolicy = policy;
                g.batch
                    .outputs
                    .iter()
                    .zip(&g.batch.old_logps)
                    .map(move |(o, old)| kl_penalty(*old, p.log_prob(&g.batch.prompt, o), gcfg.kl_estimator))
            }));
        }
        stats.push(s);
    }
    Ok(stats)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub policy: ToyPolicy,
    pub stats: Vec<StepStats>,
    pub traces: Vec<RewardTrace>,
    pub config_hash: String,
}

impl TrainOutcome {
    /// Last GRPO record of the run, if any.
    pub fn final_rl(&self) -> Option<&StepStats> {
        self.stats.iter().rev().find(|s| s.stage == Stage::Grpo)
    }

    /// First GRPO record of the run, if any.
    pub fn first_rl(&self) -> Option<&StepStats> {
        self.stats.iter().find(|s| s.stage == Stage::Grpo)
    }
}

/// Initial policy for a dataset under a config.
pub fn init_policy(data: &ToyData, cfg: &TrainConfig) -> ToyPolicy {
    let max_length = cfg.max_length.unwrap_or(data.longest_target() + 4);
    let prompts: Vec<Prompt> = data.examples.iter().map(|e| e.prompt.clone()).collect();
    if cfg.init_scale > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.grpo.seed, u64::MAX, 0));
        ToyPolicy::random(data.vocab.clone(), &prompts, max_length, cfg.init_scale, &mut rng)
    } else {
        ToyPolicy::uniform(data.vocab.clone(), &prompts, max_length)
    }
}

/// Runs every phase of the configured preset from `policy`.
pub fn train(
    mut policy: ToyPolicy,
    data: &ToyData,
    cfg: &TrainConfig,
    matcher: Arc<dyn Matcher>,
) -> Result<TrainOutcome, TrainError> {
    if policy.vocab != data.vocab {
        return Err(TrainError::Config("policy vocabulary does not match the data".into()));
    }
    if let Some(e) = data.examples.iter().find(|e| !policy.is_registered(&e.prompt)) {
        return Err(TrainError::Config(format!(
            "prompt of sample {} is not registered with the policy",
            e.sample.id
        )));
    }
    let eval = data.select(DataSel::ReasoningAugmented);
    let mut stats = Vec::new();
    let mut traces = Vec::new();
    for (i, phase) in cfg.preset.phases().into_iter().enumerate() {
        let examples = data.select(phase.data);
        if examples.is_empty() {
            return Err(TrainError::EmptyPartition {
                preset: cfg.preset,
                partition: phase.data,
            });
        }
        match phase.stage {
            Stage::Sft => stats.extend(train_sft(&mut policy, &examples, &cfg.sft, i)?),
            Stage::Grpo => {
                let reward = RewardConfig {
                    process_reward: phase.process_reward && cfg.reward.process_reward,
                    ..cfg.reward.clone()
                };
                let ctx = RewardContext::new(reward, matcher.clone());
                let log = cfg.log_outputs.then_some(&mut traces);
                stats.extend(train_grpo(&mut policy, &examples, &eval, &ctx, cfg, i, log)?);
            }
        }
    }
    Ok(TrainOutcome {
        policy,
        stats,
        traces,
        config_hash: cfg.hash(),
    })
}

/// Builds the data, initializes the policy and trains.
pub fn run_preset(corpus: &Corpus, cfg: &TrainConfig, matcher: Arc<dyn Matcher>) -> Result<TrainOutcome, TrainError> {
    let data = ToyData::from_corpus(corpus)?;
    let policy = init_policy(&data, cfg);
    train(policy, &data, cfg, matcher)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub preset: Preset,
    pub config_hash: String,
    pub policy: ToyPolicy,
}

impl Checkpoint {
    pub fn save(&self, path: &Path) -> Result<(), TrainError> {
        let err = |m: String| TrainError::Checkpoint {
            path: path.display().to_string(),
            message: m,
        };
        let json = serde_json::to_string(self).map_err(|e| err(e.to_string()))?;
        std::fs::write(path, json).map_err(|e| err(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, TrainError> {
        let err = |m: String| TrainError::Checkpoint {
            path: path.display().to_string(),
            message: m,
        };
        let text = std::fs::read_to_string(path).map_err(|e| err(e.to_string()))?;
        let ck: Checkpoint = serde_json::from_str(&text).map_err(|e| err(e.to_string()))?;
        if ck.policy.max_length == 0 || ck.policy.theta.len() != ck.policy.expected_params() {
            return Err(err(
                "parameter count does not match prompts, length and vocabulary".into()
            ));
        }
        Ok(ck)
    }
}
