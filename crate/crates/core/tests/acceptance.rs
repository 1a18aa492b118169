//! One PASS/FAIL line per acceptance criterion. Run with `--nocapture` to see
//! the report; the test fails if any criterion fails.

use std::collections::{BTreeMap, BTreeSet};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::Arc;
use std::time::{Duration, Instant};

use radr_core::harness::bootstrap_ci;
use radr_core::miner::{balance, filter_by_factuality, MinedChain};
use radr_core::model::{AnswerOption, Corpus, TaskType, VqaSample};
use radr_core::obs::{LexicalMatcher, ObsRole, ObservationSet};
use radr_core::radrscore::{score_sets, ReasoningScores};
use radr_core::rewards::{RewardConfig, RewardContext};
use radr_core::trainkit::synthetic::factual_grammar;
use radr_core::trainkit::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;

mod common;

type Verdict = Result<String, String>;

fn check(cond: bool, detail: impl Into<String>) -> Verdict {
    if cond {
        Ok(detail.into())
    } else {
        Err(detail.into())
    }
}

type Elem = (bool, u8);

fn obs_set(role: ObsRole, elems: &BTreeSet<Elem>) -> ObservationSet {
    let phrases: Vec<String> = elems
        .iter()
        .map(|&(neg, k)| {
            if neg {
                format!("no finding{k}")
            } else {
                format!("finding{k}")
            }
        })
        .collect();
    ObservationSet::from_phrases(role, &phrases)
}

fn random_elems(rng: &mut ChaCha8Rng) -> BTreeSet<Elem> {
    let n = rng.gen_range(0..8);
    (0..n).map(|_| (rng.gen_bool(0.3), rng.gen_range(0..12))).collect()
}

fn score_triple(
    m: &LexicalMatcher,
    model: &BTreeSet<Elem>,
    gt: &BTreeSet<Elem>,
    report: &BTreeSet<Elem>,
) -> ReasoningScores {
    score_sets(
        &obs_set(ObsRole::Model, model),
        &obs_set(ObsRole::GroundTruth, gt),
        &obs_set(ObsRole::Report, report),
        m,
    )
    .unwrap()
}

fn c01_metric_oracle() -> Verdict {
    let ratio = |n: usize, d: usize| if d == 0 { 0.0 } else { n as f64 / d as f64 };
    let m = LexicalMatcher::new(None);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let start = Instant::now();
    for i in 0..1000 {
        let (model, gt, report) = (random_elems(&mut rng), random_elems(&mut rng), random_elems(&mut rng));
        let s = score_triple(&m, &model, &gt, &report);
        let lenient = model.difference(&report).filter(|(neg, _)| *neg).count();
        let want = (
            ratio(model.intersection(&report).count() + lenient, model.len()),
            ratio(gt.intersection(&model).count(), gt.len()),
            ratio(model.intersection(&gt).count(), model.len()),
        );
        if (s.r_f, s.r_c, s.r_e) != want {
            return Err(format!("triple {i}: got {:?}, oracle {want:?}", (s.r_f, s.r_c, s.r_e)));
        }
    }
    let t = start.elapsed();
    check(
        t < Duration::from_secs(5),
        format!("1000 triples exact, {:.2}s", t.as_secs_f64()),
    )
}

fn c02_worked_fixture() -> Verdict {
    let m = LexicalMatcher::new(None);
    let gt = ObservationSet::from_phrases(ObsRole::GroundTruth, &["effusion", "edema"]);
    let report = ObservationSet::from_phrases(ObsRole::Report, &["effusion", "cardiomegaly"]);
    let model = ObservationSet::from_phrases(ObsRole::Model, &["effusion", "cardiomegaly", "consolidation"]);
    let s = score_sets(&model, &gt, &report, &m).unwrap();
    if (s.r_f, s.r_c, s.r_e, s.radrscore) != (2.0 / 3.0, 0.5, 1.0 / 3.0, 0.5) {
        return Err(format!("got {:?}", (s.r_f, s.r_c, s.r_e, s.radrscore)));
    }
    let flipped = ObservationSet::from_phrases(ObsRole::Model, &["effusion", "cardiomegaly", "no pneumothorax"]);
    let t = score_sets(&flipped, &gt, &report, &m).unwrap();
    check(
        t.r_f == 1.0 && t.r_c == s.r_c && t.r_e == s.r_e,
        format!("(2/3, 1/2, 1/3) -> 0.5; flipped gives {:?}", (t.r_f, t.r_c, t.r_e)),
    )
}

fn c03_mean_identity() -> Verdict {
    let m = LexicalMatcher::new(None);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst = 0.0f64;
    for _ in 0..10_000 {
        let (model, gt, report) = (random_elems(&mut rng), random_elems(&mut rng), random_elems(&mut rng));
        let s = score_triple(&m, &model, &gt, &report);
        worst = worst.max((s.radrscore - (s.r_f + s.r_c + s.r_e) / 3.0).abs());
    }
    check(worst <= 1e-12, format!("10000 triples, max deviation {worst:e}"))
}

fn c04_reward_composition() -> Verdict {
    let ctx = RewardContext::new(RewardConfig::default(), Arc::new(LexicalMatcher::default()));
    let n = common::grid::check_grid(&ctx)?;
    check(
        n == 24,
        format!("{n} cases; totals {{0,1,2}} and {{0..3}}; components independent"),
    )
}

fn c05_advantages() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (mut worst_mean, mut worst_std) = (0.0f64, 0.0f64);
    for _ in 0..10_000 {
        let g = [2usize, 4, 8][rng.gen_range(0..3)];
        let r: Vec<f64> = (0..g).map(|_| rng.gen_range(0.0..3.0)).collect();
        let a = advantages(&r);
        let n = g as f64;
        let mean = a.iter().sum::<f64>() / n;
        let std = (a.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt();
        worst_mean = worst_mean.max(mean.abs());
        worst_std = worst_std.max((std - 1.0).abs());
    }
    let equal_ok = [2usize, 4, 8]
        .iter()
        .all(|&g| advantages(&vec![1.5; g]).iter().all(|&x| x == 0.0));
    check(
        worst_mean <= 1e-12 && worst_std <= 1e-9 && equal_ok,
        format!("10000 groups, |mean| <= {worst_mean:e}, |std-1| <= {worst_std:e}, equal groups zero: {equal_ok}"),
    )
}

const H: f64 = 1e-5;

fn vocab(n: usize) -> Vocab {
    Vocab::new((0..n - 5).map(|i| format!("w{i}")))
}

fn with_theta(p: &ToyPolicy, theta: &[f64]) -> ToyPolicy {
    ToyPolicy {
        theta: theta.to_vec(),
        ..p.clone()
    }
}

fn max_rel_err(analytic: &[f64], theta: &[f64], f: impl Fn(&[f64]) -> f64) -> f64 {
    let mut worst = 0.0f64;
    for i in 0..theta.len() {
        let mut plus = theta.to_vec();
        plus[i] += H;
        let mut minus = theta.to_vec();
        minus[i] -= H;
        let numeric = (f(&plus) - f(&minus)) / (2.0 * H);
        worst = worst.max(common::rel_err(analytic[i], numeric));
    }
    worst
}

fn c06_gradient_checks() -> Verdict {
    let start = Instant::now();
    let mut worst_sft = 0.0f64;
    for inst in 0..100u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(6000 + inst);
        let prompt = Prompt::from_text(&format!("prompt {inst}"));
        let p = ToyPolicy::random(
            vocab(rng.gen_range(5..11)),
            std::slice::from_ref(&prompt),
            rng.gen_range(2..7),
            2.0,
            &mut rng,
        );
        let target: Vec<u32> = (0..rng.gen_range(1..9))
            .map(|_| rng.gen_range(0..p.vocab_size() as u32))
            .collect();
        let batch = SftBatch::new(prompt, target).unwrap();
        let (_, grad) = sft_loss(&p, &batch).unwrap();
        worst_sft = worst_sft.max(max_rel_err(&grad, &p.theta, |t| {
            sft_loss(&with_theta(&p, t), &batch).unwrap().0
        }));
    }
    let mut worst_grpo = 0.0f64;
    for inst in 0..100u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(7000 + inst);
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
        worst_grpo = worst_grpo.max(max_rel_err(&grad, &p.theta, |t| {
            grpo_objective(&with_theta(&p, t), &batch, &cfg).unwrap().0
        }));
    }
    let t = start.elapsed();
    check(
        worst_sft < 1e-5 && worst_grpo < 1e-5 && t < Duration::from_secs(60),
        format!(
            "max rel err sft {worst_sft:e}, grpo {worst_grpo:e}, {:.2}s",
            t.as_secs_f64()
        ),
    )
}

fn c07_sft_anchor() -> Verdict {
    let p = ToyPolicy::uniform(vocab(32), &[], 12);
    let batch = SftBatch::new(Prompt::from_text("q"), (1..=10).collect()).unwrap();
    let (loss, _) = sft_loss(&p, &batch).unwrap();
    let want = 10.0 * 32f64.ln();
    check((loss - want).abs() < 1e-9, format!("loss {loss} vs 10 ln 32 = {want}"))
}

/// The paired full and outcome-only runs shared by the two training criteria.
struct ToyRuns {
    full: Vec<TrainOutcome>,
    wo_pr: Vec<TrainOutcome>,
    slowest: Duration,
}

fn toy_runs() -> ToyRuns {
    let mut runs = ToyRuns {
        full: Vec::new(),
        wo_pr: Vec::new(),
        slowest: Duration::ZERO,
    };
    for seed in 0..5u64 {
        let corpus = factual_grammar(8, 8, 100 + seed);
        for preset in [Preset::Full, Preset::WoPr] {
            let mut cfg = TrainConfig {
                preset,
                ..TrainConfig::default()
            };
            cfg.grpo.seed = seed;
            let start = Instant::now();
            let out = run_preset(&corpus, &cfg, Arc::new(LexicalMatcher::default())).unwrap();
            runs.slowest = runs.slowest.max(start.elapsed());
            match preset {
                Preset::Full => runs.full.push(out),
                _ => runs.wo_pr.push(out),
            }
        }
    }
    runs
}

fn c08_grpo_improvement(runs: &ToyRuns) -> Verdict {
    let mut ratios = Vec::new();
    for out in &runs.full {
        let first = out.first_rl().and_then(|s| s.mean_reward).ok_or("no first RL step")?;
        let last = out.final_rl().and_then(|s| s.mean_reward).ok_or("no final RL step")?;
        if out.final_rl().map(|s| s.step) != Some(200) {
            return Err(format!("final RL step is {:?}", out.final_rl().map(|s| s.step)));
        }
        ratios.push(last / first);
    }
    let passing = ratios.iter().filter(|&&r| r >= 1.5).count();
    let shown: Vec<String> = ratios.iter().map(|r| format!("{r:.2}")).collect();
    check(
        passing == 5 && runs.slowest < Duration::from_secs(300),
        format!(
            "reward ratio step 200 / step 0 per seed [{}], {passing}/5 >= 1.5, slowest run {:.1}s",
            shown.join(", "),
            runs.slowest.as_secs_f64()
        ),
    )
}

fn c09_process_ablation(runs: &ToyRuns) -> Verdict {
    let pf = |o: &TrainOutcome| o.final_rl().and_then(|s| s.eval_process_factuality);
    let mut wins = 0;
    let mut pairs = Vec::new();
    for (a, b) in runs.full.iter().zip(&runs.wo_pr) {
        let (x, y) = (
            pf(a).ok_or("full run has no process factuality")?,
            pf(b).ok_or("wo_pr run has no process factuality")?,
        );
        if x > y {
            wins += 1;
        }
        pairs.push(format!("{x:.3}/{y:.3}"));
    }
    check(
        wins >= 4,
        format!(
            "process factuality full/wo_pr [{}], {wins}/5 strictly higher",
            pairs.join(", ")
        ),
    )
}

fn labeled_corpus(counts: &[usize]) -> Corpus {
    let options: Vec<AnswerOption> = (0..counts.len())
        .map(|l| AnswerOption::new(format!("L{l}"), format!("finding {l}")))
        .collect();
    let mut samples = Vec::new();
    for (label, &n) in counts.iter().enumerate() {
        for k in 0..n {
            let mut s = common::binary_sample(&format!("s{label}-{k:03}"), &format!("L{label}"));
            s.task = TaskType::SingleDiagnosis;
            s.options = options.clone();
            samples.push(s);
        }
    }
    Corpus::new(samples, "synthetic").unwrap()
}

fn c10_mining_rules() -> Verdict {
    let values = [1.0, 0.999_999, 0.5, 0.0, 1.0, 2.0 / 3.0, 1.0];
    let chains: Vec<MinedChain> = values
        .iter()
        .enumerate()
        .map(|(i, &r_f)| MinedChain {
            sample_id: format!("c{i}"),
            steps: Vec::new(),
            narrative: String::new(),
            r_f,
        })
        .collect();
    let (kept, rejected) = filter_by_factuality(chains, 1.0);
    let kept_ids: Vec<&str> = kept.iter().map(|c| c.sample_id.as_str()).collect();
    if kept_ids != ["c0", "c4", "c6"] || rejected.len() != 4 {
        return Err(format!("filter kept {kept_ids:?}"));
    }
    let label = |s: &VqaSample| s.answer.clone();
    for seed in 0..100u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let counts: Vec<usize> = (0..rng.gen_range(2..6)).map(|_| rng.gen_range(1..60)).collect();
        let out = balance(&labeled_corpus(&counts), label, seed).map_err(|e| e.to_string())?;
        let mut recount: BTreeMap<&str, usize> = BTreeMap::new();
        for s in &out.samples {
            *recount.entry(s.answer.as_str()).or_default() += 1;
        }
        let (max, min) = (
            recount.values().max().copied().unwrap_or(0),
            recount.values().min().copied().unwrap_or(0),
        );
        if recount.len() != counts.len() || max > 2 * min {
            return Err(format!("corpus {seed}: {counts:?} balanced to {recount:?}"));
        }
    }
    Ok("filter keeps exactly r_f >= 1; 100 corpora balanced within 2x".into())
}

fn c11_end_to_end_replay() -> Verdict {
    let dir = tempfile::tempdir().unwrap();
    let start = Instant::now();
    let one = common::run_fixture_pipeline(&dir.path().join("w1"), 1);
    let t = start.elapsed();
    let again = common::run_fixture_pipeline(&dir.path().join("w1b"), 1);
    let four = common::run_fixture_pipeline(&dir.path().join("w4"), 4);
    let mut files = 0;
    for ((a, b), c) in one.dirs().iter().zip(again.dirs()).zip(four.dirs()) {
        let (x, y, z) = (
            common::dir_contents(a),
            common::dir_contents(b),
            common::dir_contents(c),
        );
        if x != y || x != z {
            return Err(format!(
                "{} differs between runs",
                a.file_name().unwrap().to_string_lossy()
            ));
        }
        files += x.len();
    }
    check(
        t < Duration::from_secs(60),
        format!(
            "{files} files byte-identical across repeat and workers 1/4, {:.2}s",
            t.as_secs_f64()
        ),
    )
}

#[derive(Deserialize)]
struct CiFixture {
    seed: u64,
    resamples: usize,
    level: f64,
    values: Vec<f64>,
    golden: (f64, f64),
}

fn c12_bootstrap() -> Verdict {
    let (lo, hi) = bootstrap_ci(&[0.42; 30], 1000, 0.95, 1).map_err(|e| e.to_string())?;
    if lo != hi {
        return Err(format!("zero-variance input gave ({lo}, {hi})"));
    }
    let f: CiFixture =
        serde_json::from_str(&std::fs::read_to_string(common::fixture("ci_values.json")).unwrap()).unwrap();
    let got = bootstrap_ci(&f.values, f.resamples, f.level, f.seed).map_err(|e| e.to_string())?;
    if got != f.golden {
        return Err(format!("golden interval {:?}, got {got:?}", f.golden));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for k in 0..1000u64 {
        let n = rng.gen_range(1..40);
        let values: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..1.0)).collect();
        let mean = values.iter().sum::<f64>() / n as f64;
        let (lo, hi) = bootstrap_ci(&values, 200, 0.95, k).map_err(|e| e.to_string())?;
        if !(lo <= mean + 1e-12 && mean - 1e-12 <= hi) {
            return Err(format!("input {k}: mean {mean} outside ({lo}, {hi})"));
        }
    }
    Ok("zero width on constant input; golden reproduced exactly; 1000 intervals contain the mean".into())
}

fn run(name: &str, f: impl FnOnce() -> Verdict) -> bool {
    let verdict = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|_| Err("panicked".into()));
    match verdict {
        Ok(detail) => {
            println!("PASS {name}: {detail}");
            true
        }
        Err(detail) => {
            println!("FAIL {name}: {detail}");
            false
        }
    }
}

#[test]
fn acceptance_criteria() {
    let runs = toy_runs();
    let results = [
        run("c01 metric oracle equivalence", c01_metric_oracle),
        run("c02 worked metric fixture", c02_worked_fixture),
        run("c03 radrscore mean identity", c03_mean_identity),
        run("c04 reward composition", c04_reward_composition),
        run("c05 advantage normalization", c05_advantages),
        run("c06 gradient checks", c06_gradient_checks),
        run("c07 sft analytic anchor", c07_sft_anchor),
        run("c08 toy grpo improvement", || c08_grpo_improvement(&runs)),
        run("c09 process reward ablation", || c09_process_ablation(&runs)),
        run("c10 mining rules", c10_mining_rules),
        run("c11 end-to-end replay", c11_end_to_end_replay),
        run("c12 bootstrap ci", c12_bootstrap),
    ];
    let passed = results.iter().filter(|&&r| r).count();
    println!("{passed}/{} criteria passed", results.len());
    assert_eq!(passed, results.len());
}
