#![allow(dead_code)]

use std::path::{Path, PathBuf};

use radr_core::harness::{run_compile_bench, run_eval, run_mine, run_score, RunConfig, CHAINS_FILE};
use radr_core::model::{AnswerOption, Split, TaskType, VqaSample};

pub mod grid;

pub fn fixtures_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

pub fn fixture(name: &str) -> PathBuf {
    fixtures_dir().join(name)
}

pub fn fixture_config() -> RunConfig {
    RunConfig::load(&fixture("run.toml")).expect("fixture config loads")
}

pub fn binary_sample(id: &str, answer: &str) -> VqaSample {
    VqaSample {
        id: id.into(),
        task: TaskType::BinaryDiagnosis,
        images: vec![format!("img/{id}.png")],
        question: "Does this chest X-ray show pleural effusion?".into(),
        options: vec![AnswerOption::new("A", "yes"), AnswerOption::new("B", "no")],
        answer: answer.into(),
        report: None,
        reasoning: None,
        source: "mimic-cxr".into(),
        split: Split::Train,
    }
}

pub fn with_report(mut s: VqaSample, report: &str, reasoning: &str) -> VqaSample {
    s.report = Some(report.into());
    s.reasoning = Some(reasoning.into());
    s
}

/// Output directories of one mine, compile-bench, score and eval pass.
pub struct PipelineRun {
    pub mine: PathBuf,
    pub compiled: PathBuf,
    pub score: PathBuf,
    pub eval: PathBuf,
}

impl PipelineRun {
    pub fn dirs(&self) -> [&Path; 4] {
        [&self.mine, &self.compiled, &self.score, &self.eval]
    }
}

/// Runs the fixture pipeline under the mock backend into `root`.
pub fn run_fixture_pipeline(root: &Path, workers: usize) -> PipelineRun {
    let cfg = fixture_config();
    let run = PipelineRun {
        mine: root.join("mine"),
        compiled: root.join("compiled"),
        score: root.join("score"),
        eval: root.join("eval"),
    };
    let corpus = fixture("corpus.jsonl");
    assert_eq!(run_mine(&cfg, &corpus, &run.mine, workers).unwrap(), 0);
    run_compile_bench(&cfg, &corpus, &run.mine.join(CHAINS_FILE), &run.compiled).unwrap();
    let code = run_score(
        &cfg,
        &run.compiled,
        &fixture("model_outputs.jsonl"),
        &run.score,
        workers,
    )
    .unwrap();
    assert_eq!(code, 0);
    run_eval(&cfg, &run.score, None, &run.eval).unwrap();
    run
}

/// Every file under `dir` as (relative name, bytes), sorted by name.
pub fn dir_contents(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out: Vec<(String, Vec<u8>)> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let p = e.unwrap().path();
            (
                p.file_name().unwrap().to_string_lossy().into_owned(),
                std::fs::read(&p).unwrap(),
            )
        })
        .collect();
    out.sort();
    out
}

/// Relative error as used by the gradient checks: `|a - n| / max(|a|, |n|)`,
/// zero when both vanish.
pub fn rel_err(a: f64, n: f64) -> f64 {
    let d = a.abs().max(n.abs());
    if d == 0.0 {
        0.0
    } else {
        (a - n).abs() / d
    }
}
