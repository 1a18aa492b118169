use std::sync::Arc;

use proptest::prelude::*;
use radr_core::obs::LexicalMatcher;
use radr_core::rewards::{total_reward, RewardContext};
use radr_core::trainkit::synthetic::factual_grammar;
use radr_core::trainkit::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

mod common;

const H: f64 = 1e-5;

/// Vocabulary of `n` tokens (the end token and four tags included).
fn vocab(n: usize) -> Vocab {
    assert!(n >= 5);
    Vocab::new((0..n - 5).map(|i| format!("w{i}")))
}

fn central_difference(theta: &[f64], i: usize, f: impl Fn(&[f64]) -> f64) -> f64 {
    let mut plus = theta.to_vec();
    plus[i] += H;
    let mut minus = theta.to_vec();
    minus[i] -= H;
    (f(&plus) - f(&minus)) / (2.0 * H)
}

fn with_theta(p: &ToyPolicy, theta: &[f64]) -> ToyPolicy {
    ToyPolicy {
        theta: theta.to_vec(),
        ..p.clone()
    }
}

fn max_rel_err(analytic: &[f64], f: impl Fn(&[f64]) -> f64, theta: &[f64]) -> f64 {
    (0..theta.len())
        .map(|i| common::rel_err(analytic[i], central_difference(theta, i, &f)))
        .fold(0.0, f64::max)
}

#[test]
fn sft_gradient_matches_finite_differences() {
    let mut worst = 0.0f64;
    for inst in 0..100u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(inst);
        let prompt = Prompt::from_text(&format!("prompt {inst}"));
        let registered = if inst % 2 == 0 {
            vec![prompt.clone()]
        } else {
            Vec::new()
        };
        let p = ToyPolicy::random(
            vocab(rng.gen_range(5..11)),
            &registered,
            rng.gen_range(2..7),
            2.0,
            &mut rng,
        );
        let len = rng.gen_range(1..9);
        let target: Vec<u32> = (0..len).map(|_| rng.gen_range(0..p.vocab_size() as u32)).collect();
        let batch = SftBatch::new(prompt, target).unwrap();
        let (_, grad) = sft_loss(&p, &batch).unwrap();
        let f = |t: &[f64]| sft_loss(&with_theta(&p, t), &batch).unwrap().0;
        worst = worst.max(max_rel_err(&grad, f, &p.theta));
    }
    assert!(worst < 1e-5, "worst relative error {worst:e}");
}

#[test]
fn grpo_gradient_matches_finite_differences() {
    let mut worst = 0.0f64;
    for inst in 0..100u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + inst);
        let prompt = Prompt::from_text(&format!("prompt {inst}"));
        let old = ToyPolicy::random(
            vocab(rng.gen_range(5..10)),
            std::slice::from_ref(&prompt),
            rng.gen_range(2..6),
            2.0,
            &mut rng,
        );
        let g = [2usize, 4, 8][rng.gen_range(0..3)];
        let mut batch = sample_group(&old, &prompt, g, inst).unwrap();
        batch.set_rewards((0..g).map(|_| rng.gen_range(0.0..3.0)).collect());
        let mut p = old.clone();
        for t in &mut p.theta {
            *t += rng.gen_range(-0.3..0.3);
        }
        let cfg = GrpoConfig {
            group_size: g,
            kl_coef: 0.1,
            entropy_coef: 0.05,
            kl_estimator: if inst % 2 == 0 {
                KlEstimator::K1
            } else {
                KlEstimator::K3
            },
            ..GrpoConfig::default()
        };
        let (_, grad) = grpo_objective(&p, &batch, &cfg).unwrap();
        let f = |t: &[f64]| grpo_objective(&with_theta(&p, t), &batch, &cfg).unwrap().0;
        worst = worst.max(max_rel_err(&grad, f, &p.theta));
    }
    assert!(worst < 1e-5, "worst relative error {worst:e}");
}

#[test]
fn uniform_sft_loss_anchor() {
    let v = vocab(32);
    let p = ToyPolicy::uniform(v, &[], 12);
    let batch = SftBatch::new(Prompt::from_text("q"), (1..=10).collect()).unwrap();
    let (loss, _) = sft_loss(&p, &batch).unwrap();
    assert!((loss - 10.0 * 32f64.ln()).abs() < 1e-9);
}

#[test]
fn advantage_examples() {
    let a = advantages(&[1.0, 2.0, 3.0]);
    let s = (2.0f64 / 3.0).sqrt();
    assert_eq!(a, vec![-1.0 / s, 0.0, 1.0 / s]);
    assert!((a[2] - 1.2247).abs() < 5e-5);
    assert_eq!(advantages(&[0.0, 1.0]), vec![-1.0, 1.0]);
    assert_eq!(advantages(&[0.7; 8]), vec![0.0; 8]);
}

#[test]
fn kl_penalty_examples() {
    assert_eq!(kl_penalty(-1.5, -1.5, KlEstimator::K1), 0.0);
    assert_eq!(kl_penalty(-1.5, -1.5, KlEstimator::K3), 0.0);
    assert_eq!(kl_penalty(-1.0, -2.0, KlEstimator::K1), 1.0);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(2000))]

    #[test]
    fn advantages_are_standardized(g in prop::sample::select(vec![2usize, 4, 8]), seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let r: Vec<f64> = (0..g).map(|_| rng.gen_range(0.0..3.0)).collect();
        let a = advantages(&r);
        let n = g as f64;
        let mean = a.iter().sum::<f64>() / n;
        let std = (a.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt();
        prop_assert!(mean.abs() <= 1e-12);
        prop_assert!((std - 1.0).abs() <= 1e-9);
    }

    #[test]
    fn clip_is_inactive_near_the_old_policy(seed in any::<u64>(), g in prop::sample::select(vec![2usize, 4, 8])) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let prompt = Prompt::from_text("q");
        let old = ToyPolicy::random(vocab(7), std::slice::from_ref(&prompt), 3, 1.0, &mut rng);
        let mut batch = sample_group(&old, &prompt, g, seed).unwrap();
        batch.set_rewards((0..g).map(|_| rng.gen_range(0.0..3.0)).collect());
        let mut p = old.clone();
        for t in &mut p.theta {
            *t += rng.gen_range(-0.01..0.01);
        }
        let cfg = GrpoConfig { group_size: g, ..GrpoConfig::default() };
        let mut grad = vec![0.0; p.n_params()];
        let (value, terms) = grpo_objective_into(&p, &batch, &cfg, 1.0, &mut grad).unwrap();
        prop_assume!(terms.ratios.iter().all(|r| (r - 1.0).abs() < cfg.clip_eps));
        let mut unclipped = 0.0;
        for i in 0..g {
            let logp = p.log_prob(&prompt, &batch.outputs[i]);
            let rho = (logp - batch.old_logps[i]).exp();
            let kl = kl_penalty(batch.old_logps[i], logp, cfg.kl_estimator);
            unclipped += (rho * batch.advantages[i] - cfg.kl_coef * kl) / g as f64;
        }
        unclipped += cfg.entropy_coef * terms.entropy;
        prop_assert_eq!(value, unclipped);
    }
}

#[test]
fn on_policy_objective_is_zero_without_regularizers() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let prompt = Prompt::from_text("q");
    let p = ToyPolicy::random(vocab(8), std::slice::from_ref(&prompt), 4, 1.0, &mut rng);
    let mut batch = sample_group(&p, &prompt, 8, 3).unwrap();
    batch.set_rewards(vec![0.0, 1.0, 2.0, 3.0, 0.5, 1.5, 2.5, 3.0]);
    let cfg = GrpoConfig {
        entropy_coef: 0.0,
        ..GrpoConfig::default()
    };
    let mut grad = vec![0.0; p.n_params()];
    let (value, terms) = grpo_objective_into(&p, &batch, &cfg, 1.0, &mut grad).unwrap();
    assert!(terms.ratios.iter().all(|&r| r == 1.0));
    assert!(terms.kls.iter().all(|&k| k == 0.0));
    assert!(value.abs() < 1e-15);
}

#[test]
fn clip_caps_positive_advantage() {
    let prompt = Prompt::from_text("q");
    let old = ToyPolicy::uniform(vocab(6), std::slice::from_ref(&prompt), 1);
    let mut batch = sample_group(&old, &prompt, 2, 0).unwrap();
    batch.set_rewards(vec![1.0, 0.0]);
    let mut p = old.clone();
    // Raise the first output's probability well above 1 + eps times the old one.
    let row = p.context_row(&prompt, 0, None);
    let v = p.vocab_size();
    p.theta[row * v + batch.outputs[0][0] as usize] += 2.0;
    let cfg = GrpoConfig {
        group_size: 2,
        ..GrpoConfig::default()
    };
    let mut grad = vec![0.0; p.n_params()];
    let (_, terms) = grpo_objective_into(&p, &batch, &cfg, 1.0, &mut grad).unwrap();
    assert!(terms.ratios[0] > 1.0 + cfg.clip_eps);
    assert_eq!(terms.surrogates[0], (1.0 + cfg.clip_eps) * batch.advantages[0]);
}

/// Upper tail bound: smallest `hi` with P(X > hi) <= alpha / 2, and the
/// matching lower bound, for X ~ Bin(n, 1/2), computed in log space.
fn binomial_bounds(n: usize, level: f64) -> (usize, usize) {
    let ln_fact: Vec<f64> = std::iter::once(0.0)
        .chain((1..=n).scan(0.0, |acc, k| {
            *acc += (k as f64).ln();
            Some(*acc)
        }))
        .collect();
    let pmf = |k: usize| (ln_fact[n] - ln_fact[k] - ln_fact[n - k] - n as f64 * std::f64::consts::LN_2).exp();
    let tail = (1.0 - level) / 2.0;
    let (mut lo, mut acc) = (0usize, 0.0);
    while acc + pmf(lo) <= tail {
        acc += pmf(lo);
        lo += 1;
    }
    (lo, n - lo)
}

#[test]
fn uniform_binary_sampling_is_binomial() {
    // Two live tokens at a single position: logits of every other token are -inf.
    let prompt = Prompt::from_text("coin");
    let mut p = ToyPolicy::uniform(vocab(7), std::slice::from_ref(&prompt), 1);
    let row = p.context_row(&prompt, 0, None);
    let v = p.vocab_size();
    for j in 0..v {
        if j != 5 && j != 6 {
            p.theta[row * v + j] = f64::NEG_INFINITY;
        }
    }
    let mut heads = 0usize;
    for group in 0..1000u64 {
        let b = sample_group(&p, &prompt, 8, group).unwrap();
        for o in &b.outputs {
            assert_eq!(o.len(), 1);
            assert!(o[0] == 5 || o[0] == 6);
            heads += usize::from(o[0] == 5);
        }
    }
    let (lo, hi) = binomial_bounds(8000, 0.99);
    assert!((lo..=hi).contains(&heads), "{heads} outside [{lo}, {hi}]");
}

#[test]
fn deterministic_policy_gives_identical_group() {
    let prompt = Prompt::from_text("q");
    let mut p = ToyPolicy::uniform(vocab(6), std::slice::from_ref(&prompt), 3);
    let v = p.vocab_size();
    for row in 0..p.n_params() / v {
        p.theta[row * v + 5] = 1000.0;
    }
    let b = sample_group(&p, &prompt, 8, 11).unwrap();
    assert!(b.outputs.iter().all(|o| *o == vec![5, 5, 5]));
    assert_eq!(b, sample_group(&p, &prompt, 8, 11).unwrap());
}

/// Every output the policy can emit: sequences over the vocabulary that end
/// at the first end token or at `max_length`.
fn output_space(v: u32, max_length: usize) -> Vec<Vec<u32>> {
    let mut out = Vec::new();
    let mut frontier: Vec<Vec<u32>> = vec![Vec::new()];
    while let Some(prefix) = frontier.pop() {
        for t in 0..v {
            let mut seq = prefix.clone();
            seq.push(t);
            if t == EOS_ID || seq.len() == max_length {
                out.push(seq);
            } else {
                frontier.push(seq);
            }
        }
    }
    out
}

#[test]
fn kl_estimators_match_exact_kl() {
    let prompt = Prompt::from_text("q");
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let old = ToyPolicy::random(vocab(6), std::slice::from_ref(&prompt), 3, 0.5, &mut rng);
    let mut new = old.clone();
    for t in &mut new.theta {
        *t += rng.gen_range(-0.05..0.05);
    }
    let space = output_space(old.vocab_size() as u32, old.max_length);
    let mass: f64 = space.iter().map(|o| old.log_prob(&prompt, o).exp()).sum();
    assert!((mass - 1.0).abs() < 1e-12);
    let exact: f64 = space
        .iter()
        .map(|o| {
            let lo = old.log_prob(&prompt, o);
            lo.exp() * (lo - new.log_prob(&prompt, o))
        })
        .sum();
    for est in [KlEstimator::K1, KlEstimator::K3] {
        let n = 100_000;
        let mut acc = 0.0;
        for i in 0..n {
            let o = old.sample(&prompt, &mut ChaCha8Rng::seed_from_u64(derive_seed(77, 0, i)));
            acc += kl_penalty(old.log_prob(&prompt, &o), new.log_prob(&prompt, &o), est);
        }
        let mc = acc / n as f64;
        assert!((mc - exact).abs() < 1e-3, "{est:?}: {mc} vs exact {exact}");
    }
}

#[test]
fn zero_rewards_move_parameters_only_through_entropy() {
    let prompt = Prompt::from_text("q");
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let p = ToyPolicy::random(vocab(8), std::slice::from_ref(&prompt), 4, 1.0, &mut rng);
    let mut batch = sample_group(&p, &prompt, 8, 8).unwrap();
    batch.set_rewards(vec![0.0; 8]);
    let step = |cfg: &GrpoConfig| {
        let (_, grad) = grpo_objective(&p, &batch, cfg).unwrap();
        let mut theta = p.theta.clone();
        let neg: Vec<f64> = grad.iter().map(|g| -g).collect();
        Optimizer::new(OptimizerKind::Sgd, 0.5, None, theta.len()).step(&mut theta, &neg);
        theta
    };
    let still = GrpoConfig {
        entropy_coef: 0.0,
        kl_estimator: KlEstimator::K3,
        ..GrpoConfig::default()
    };
    assert_eq!(step(&still), p.theta);
    let with_entropy = GrpoConfig {
        entropy_coef: 0.01,
        ..still.clone()
    };
    let moved = step(&with_entropy);
    assert_ne!(moved, p.theta);
    // Only rows visited by the sampled outputs move.
    let v = p.vocab_size();
    let visited: std::collections::HashSet<usize> = batch.outputs.iter().flat_map(|o| p.contexts(&prompt, o)).collect();
    for (i, (a, b)) in moved.iter().zip(&p.theta).enumerate() {
        if a != b {
            assert!(visited.contains(&(i / v)));
        }
    }
}

fn quick_cfg(preset: Preset, seed: u64) -> TrainConfig {
    let mut cfg = TrainConfig {
        preset,
        eval_every: 5,
        log_outputs: true,
        ..TrainConfig::default()
    };
    cfg.grpo.steps = 20;
    cfg.grpo.seed = seed;
    cfg
}

#[test]
fn training_is_bit_for_bit_deterministic_across_pools() {
    let corpus = factual_grammar(6, 6, 3);
    let cfg = quick_cfg(Preset::Full, 21);
    let run = |threads: usize| {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        pool.install(|| run_preset(&corpus, &cfg, Arc::new(LexicalMatcher::default())).unwrap())
    };
    let a = run(1);
    let b = run(4);
    let c = run(4);
    let bits = |o: &TrainOutcome| o.policy.theta.iter().map(|t| t.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(&a), bits(&b));
    assert_eq!(bits(&b), bits(&c));
    assert_eq!(a.stats, b.stats);
    assert_eq!(a.traces, b.traces);
}

#[test]
fn logged_rewards_recompute_offline() {
    let corpus = factual_grammar(6, 6, 4);
    let cfg = quick_cfg(Preset::Full, 5);
    let out = run_preset(&corpus, &cfg, Arc::new(LexicalMatcher::default())).unwrap();
    assert!(!out.traces.is_empty());
    let ctx = RewardContext::new(cfg.reward.clone(), Arc::new(LexicalMatcher::default()));
    for t in &out.traces {
        let sample = corpus.get(&t.sample_id).unwrap();
        let r = total_reward(&t.output, sample, t.partition, &ctx).unwrap();
        assert_eq!(r, t.reward);
    }
    for s in out.stats.iter().filter(|s| s.stage == Stage::Grpo) {
        let step: Vec<&RewardTrace> = out
            .traces
            .iter()
            .filter(|t| t.phase == s.phase && t.step == s.step)
            .collect();
        let n = step.len() as f64;
        let mean_total = step.iter().map(|t| t.reward.total).sum::<f64>() / n;
        let mean_format = step.iter().map(|t| t.reward.format).sum::<f64>() / n;
        let mean_outcome = step.iter().map(|t| t.reward.outcome).sum::<f64>() / n;
        assert!((s.mean_reward.unwrap() - mean_total).abs() < 1e-12);
        assert!((s.mean_format.unwrap() - mean_format).abs() < 1e-12);
        assert!((s.mean_outcome.unwrap() - mean_outcome).abs() < 1e-12);
        let process: Vec<f64> = step
            .iter()
            .filter(|t| t.partition == radr_core::model::PartitionTag::ReasoningAugmented)
            .map(|t| t.reward.process)
            .collect();
        if let Some(m) = s.mean_process {
            assert!((m - process.iter().sum::<f64>() / process.len() as f64).abs() < 1e-12);
        }
    }
}

#[test]
fn sft_both_descends_monotonically_on_the_fixture_bundle() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = common::fixture_config();
    radr_core::harness::run_mine(&cfg, &common::fixture("corpus.jsonl"), dir.path(), 1).unwrap();
    let corpus = radr_core::harness::load_input_corpus(dir.path()).unwrap();
    let mut train = TrainConfig {
        preset: Preset::SftBoth,
        ..TrainConfig::default()
    };
    train.sft.steps = 50;
    train.sft.learning_rate = 0.05;
    train.sft.optimizer = OptimizerKind::Sgd;
    train.sft.clip_norm = None;
    let out = run_preset(&corpus, &train, Arc::new(LexicalMatcher::default())).unwrap();
    let losses: Vec<f64> = out.stats.iter().map(|s| s.loss.unwrap()).collect();
    assert_eq!(losses.len(), 51);
    for w in losses.windows(2) {
        assert!(w[1] <= w[0], "loss rose from {} to {}", w[0], w[1]);
    }
    assert!(losses[50] < losses[0]);
}

#[test]
fn presets_with_empty_partitions_fail() {
    let corpus = factual_grammar(4, 0, 1);
    let err = run_preset(&corpus, &quick_cfg(Preset::RlO, 1), Arc::new(LexicalMatcher::default())).unwrap_err();
    assert!(matches!(err, TrainError::EmptyPartition { .. }));
    let corpus = factual_grammar(0, 4, 1);
    assert!(run_preset(
        &corpus,
        &quick_cfg(Preset::SftRo, 1),
        Arc::new(LexicalMatcher::default())
    )
    .is_err());
}
