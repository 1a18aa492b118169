use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::policy::ToyPolicy;
use super::vocab::Prompt;
use super::TrainError;

/// One supervised example: prompt tokens followed by target tokens, with a
/// mask over the concatenation that selects exactly the target.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SftBatch {
    pub prompt: Prompt,
    pub target: Vec<u32>,
    pub mask: Vec<bool>,
}

impl SftBatch {
    pub fn new(prompt: Prompt, target: Vec<u32>) -> Result<Self, TrainError> {
        if target.is_empty() {
            return Err(TrainError::EmptyTarget);
        }
        let mut mask = vec![false; prompt.len()];
        mask.resize(prompt.len() + target.len(), true);
        Ok(Self { prompt, target, mask })
    }

    pub fn supervised_tokens(&self) -> usize {
        self.mask.iter().filter(|m| **m).count()
    }
}

/// `-Σ_t log π(y_t | prompt, y_<t)` over the masked tokens, and its gradient.
pub fn sft_loss(policy: &ToyPolicy, batch: &SftBatch) -> Result<(f64, Vec<f64>), TrainError> {
    let mut grad = vec![0.0; policy.n_params()];
    let loss = sft_loss_into(policy, batch, 1.0, &mut grad)?;
    Ok((loss, grad))
}

/// Adds `scale · ∇loss` to `grad` and returns the loss.
pub fn sft_loss_into(policy: &ToyPolicy, batch: &SftBatch, scale: f64, grad: &mut [f64]) -> Result<f64, TrainError> {
    if batch.target.is_empty() {
        return Err(TrainError::EmptyTarget);
    }
    if batch.mask.len() != batch.prompt.len() + batch.target.len()
        || batch.mask[..batch.prompt.len()].iter().any(|m| *m)
        || batch.mask[batch.prompt.len()..].iter().any(|m| !*m)
    {
        return Err(TrainError::BadMask);
    }
    policy.check_tokens(&batch.target)?;
    Ok(-policy.log_prob_grad(&batch.prompt, &batch.target, -scale, grad))
}

/// `(r_i - mean) / std` with the population standard deviation. Groups with
/// zero spread get all-zero advantages.
pub fn advantages(rewards: &[f64]) -> Vec<f64> {
    let n = rewards.len() as f64;
    if rewards.is_empty() {
        return Vec::new();
    }
    let mean = rewards.iter().sum::<f64>() / n;
    let var = rewards.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt();
    if std.is_nan() || std <= f64::EPSILON * mean.abs().max(1.0) {
        return vec![0.0; rewards.len()];
    }
    rewards.iter().map(|r| (r - mean) / std).collect()
}

/// Per-sample estimator of `KL(π_old ‖ π_θ)` from samples of `π_old`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KlEstimator {
    /// `log π_old − log π_θ`.
    #[default]
    K1,
    /// `ρ − 1 − log ρ` with `ρ = π_θ / π_old`; non-negative, same expectation.
    K3,
}

pub fn kl_penalty(logp_old: f64, logp_new: f64, estimator: KlEstimator) -> f64 {
    match estimator {
        KlEstimator::K1 => logp_old - logp_new,
        KlEstimator::K3 => {
            let d = logp_new - logp_old;
            d.exp() - 1.0 - d
        }
    }
}

/// Derivative of [`kl_penalty`] in `logp_new`.
fn kl_slope(logp_old: f64, logp_new: f64, estimator: KlEstimator) -> f64 {
    match estimator {
        KlEstimator::K1 => -1.0,
        KlEstimator::K3 => (logp_new - logp_old).exp() - 1.0,
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClipMode {
    /// `min(ρA, clip(ρ, 1−ε, 1+ε)A)`.
    #[default]
    Standard,
    /// `min(ρ, 1−ε, 1+ε)·A`, the three-way minimum taken literally.
    Literal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GrpoConfig {
    pub group_size: usize,
    pub clip_eps: f64,
    pub kl_coef: f64,
    pub entropy_coef: f64,
    pub learning_rate: f64,
    pub steps: usize,
    pub seed: u64,
    pub kl_estimator: KlEstimator,
    pub clip_mode: ClipMode,
}

impl Default for GrpoConfig {
    fn default() -> Self {
        Self {
            group_size: 8,
            clip_eps: 0.2,
            kl_coef: 1e-4,
            entropy_coef: 1e-4,
            learning_rate: 0.2,
            steps: 200,
            seed: 0,
            kl_estimator: KlEstimator::K1,
            clip_mode: ClipMode::Standard,
        }
    }
}

impl GrpoConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if self.group_size < 2 {
            return Err(TrainError::Config(format!(
                "group_size must be >= 2, got {}",
                self.group_size
            )));
        }
        if !(self.clip_eps > 0.0 && self.clip_eps < 1.0) {
            return Err(TrainError::Config(format!(
                "clip_eps must lie in (0, 1), got {}",
                self.clip_eps
            )));
        }
        if self.kl_coef.is_nan() || self.kl_coef < 0.0 {
            return Err(TrainError::Config(format!(
                "kl_coef must be >= 0, got {}",
                self.kl_coef
            )));
        }
        Ok(())
    }
}

/// Sampled outputs for one prompt with their old-policy log-probabilities,
/// rewards and advantages.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupBatch {
    pub prompt: Prompt,
    pub outputs: Vec<Vec<u32>>,
    pub old_logps: Vec<f64>,
    pub rewards: Vec<f64>,
    pub advantages: Vec<f64>,
}

impl GroupBatch {
    pub fn set_rewards(&mut self, rewards: Vec<f64>) {
        self.advantages = advantages(&rewards);
        self.rewards = rewards;
    }
}

/// splitmix64 finalizer.
pub fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed for one sampled output, from the run seed, step and index.
pub fn derive_seed(seed: u64, step: u64, index: u64) -> u64 {
    mix64(
        seed.wrapping_add(step.wrapping_mul(0x9e37_79b9_7f4a_7c15))
            .wrapping_add(index.wrapping_mul(0xd1b5_4a32_d192_ed03)),
    )
}

/// `g` independent ancestral samples; output `i` uses `derive_seed(seed, 0, i)`.
pub fn sample_group(policy_old: &ToyPolicy, prompt: &Prompt, g: usize, seed: u64) -> Result<GroupBatch, TrainError> {
    if g < 2 {
        return Err(TrainError::Config(format!("group size must be >= 2, got {g}")));
    }
    let outputs: Vec<Vec<u32>> = (0..g)
        .map(|i| policy_old.sample(prompt, &mut ChaCha8Rng::seed_from_u64(derive_seed(seed, 0, i as u64))))
        .collect();
    let old_logps = outputs.iter().map(|o| policy_old.log_prob(prompt, o)).collect();
    Ok(GroupBatch {
        prompt: prompt.clone(),
        outputs,
        old_logps,
        rewards: Vec::new(),
        advantages: Vec::new(),
    })
}

/// Per-output pieces of the objective, for logging and tests.
#[derive(Debug, Clone, PartialEq)]
pub struct GrpoTerms {
    pub ratios: Vec<f64>,
    pub surrogates: Vec<f64>,
    pub kls: Vec<f64>,
    pub entropy: f64,
}

fn surrogate(rho: f64, adv: f64, eps: f64, mode: ClipMode) -> (f64, f64) {
    // Returns (value, d value / d logp) where d rho / d logp = rho.
    match mode {
        ClipMode::Standard => {
            let unclipped = rho * adv;
            let clipped = rho.clamp(1.0 - eps, 1.0 + eps) * adv;
            if unclipped <= clipped {
                (unclipped, rho * adv)
            } else {
                (clipped, 0.0)
            }
        }
        ClipMode::Literal => {
            if rho < 1.0 - eps {
                (rho * adv, rho * adv)
            } else {
                ((1.0 - eps) * adv, 0.0)
            }
        }
    }
}

/// Objective to maximize:
/// `mean_i(surrogate_i − β·KL_i) + c_H · mean entropy over visited contexts`,
/// with its exact gradient.
pub fn grpo_objective(policy: &ToyPolicy, batch: &GroupBatch, cfg: &GrpoConfig) -> Result<(f64, Vec<f64>), TrainError> {
    let mut grad = vec![0.0; policy.n_params()];
    let (value, _) = grpo_objective_into(policy, batch, cfg, 1.0, &mut grad)?;
    Ok((value, grad))
}

/// Adds `scale · ∇J` to `grad`; returns `J` and its terms.
pub fn grpo_objective_into(
    policy: &ToyPolicy,
    batch: &GroupBatch,
    cfg: &GrpoConfig,
    scale: f64,
    grad: &mut [f64],
) -> Result<(f64, GrpoTerms), TrainError> {
    let g = batch.outputs.len();
    if g != cfg.group_size || batch.old_logps.len() != g || batch.advantages.len() != g {
        return Err(TrainError::GroupSize {
            expected: cfg.group_size,
            outputs: g,
            old_logps: batch.old_logps.len(),
            advantages: batch.advantages.len(),
        });
    }
    let gf = g as f64;
    let mut terms = GrpoTerms {
        ratios: Vec::with_capacity(g),
        surrogates: Vec::with_capacity(g),
        kls: Vec::with_capacity(g),
        entropy: 0.0,
    };
    let mut value = 0.0;
    for i in 0..g {
        let out = &batch.outputs[i];
        policy.check_tokens(out)?;
        let logp = policy.log_prob(&batch.prompt, out);
        let rho = (logp - batch.old_logps[i]).exp();
        let (s, ds) = surrogate(rho, batch.advantages[i], cfg.clip_eps, cfg.clip_mode);
        let kl = kl_penalty(batch.old_logps[i], logp, cfg.kl_estimator);
        let dkl = kl_slope(batch.old_logps[i], logp, cfg.kl_estimator);
        value += (s - cfg.kl_coef * kl) / gf;
        let coef = scale * (ds - cfg.kl_coef * dkl) / gf;
        if coef != 0.0 {
            policy.log_prob_grad(&batch.prompt, out, coef, grad);
        }
        terms.ratios.push(rho);
        terms.surrogates.push(s);
        terms.kls.push(kl);
    }
    let visited: usize = batch.outputs.iter().map(Vec::len).sum();
    if visited > 0 {
        let w = 1.0 / visited as f64;
        let mut h = 0.0;
        for out in &batch.outputs {
            h += policy.entropy_grad(&batch.prompt, out, scale * cfg.entropy_coef * w, grad);
        }
        terms.entropy = h * w;
        value += cfg.entropy_coef * terms.entropy;
    }
    Ok((value, terms))
}
