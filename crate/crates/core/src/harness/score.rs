use std::collections::HashMap;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{
    ensure_dir, load_input_corpus, read_jsonl, write_jsonl, HarnessError, RunConfig, RunManifest, EXIT_OK,
    EXIT_SAMPLE_ERRORS,
};
use crate::model::{Corpus, PartitionTag, TaskType, VqaSample};
use crate::radrscore::{score_sample, ScoreCounts};
use crate::rewards::RewardContext;

/// One model response to score.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OutputRecord {
    pub id: String,
    pub output: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRecord {
    pub id: String,
    pub task: TaskType,
    pub source: String,
    pub r_f: f64,
    pub r_c: f64,
    pub r_e: f64,
    pub radrscore: f64,
    pub counts: ScoreCounts,
    pub degenerate: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutcomeRecord {
    pub id: String,
    pub task: TaskType,
    pub source: String,
    pub partition: PartitionTag,
    pub format: f64,
    pub outcome: f64,
    pub process: f64,
    pub total: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScoreErrorRecord {
    pub id: String,
    pub message: String,
}

/// Result of a scoring pass, each list in input order (which callers sort
/// by id).
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ScoreOutcome {
    pub scores: Vec<ScoreRecord>,
    pub outcomes: Vec<OutcomeRecord>,
    pub errors: Vec<ScoreErrorRecord>,
}

enum Scored {
    Missing(ScoreErrorRecord),
    Done {
        score: Option<Result<ScoreRecord, ScoreErrorRecord>>,
        outcome: Result<OutcomeRecord, ScoreErrorRecord>,
    },
}

fn score_one(record: &OutputRecord, sample: &VqaSample, ctx: &RewardContext) -> Scored {
    let err = |message: String| ScoreErrorRecord {
        id: record.id.clone(),
        message,
    };
    // Only reasoning-augmented samples have a reference chain to score against.
    let score = sample.has_reasoning().then(|| {
        score_sample(sample, &record.output, ctx.matcher.as_ref())
            .map(|s| ScoreRecord {
                id: sample.id.clone(),
                task: sample.task,
                source: sample.source.clone(),
                r_f: s.r_f,
                r_c: s.r_c,
                r_e: s.r_e,
                radrscore: s.radrscore,
                counts: s.counts,
                degenerate: s.degenerate,
            })
            .map_err(|e| err(format!("radrscore: {e}")))
    });
    let partition = ctx.partition_of(sample);
    let outcome = ctx
        .reward(&record.output, sample)
        .map(|r| OutcomeRecord {
            id: sample.id.clone(),
            task: sample.task,
            source: sample.source.clone(),
            partition,
            format: r.format,
            outcome: r.outcome,
            process: r.process,
            total: r.total,
        })
        .map_err(|e| err(format!("reward: {e}")));
    Scored::Done { score, outcome }
}

/// Scores every output against its corpus sample. Outputs for
/// reasoning-augmented samples get a RadRScore record; every output gets an
/// outcome record. Unknown ids and per-sample failures are collected as
/// error records and do not stop the run. Records are sorted by id, ties
/// kept in input order.
pub fn cmd_score(outputs: &[OutputRecord], corpus: &Corpus, ctx: &RewardContext, workers: usize) -> ScoreOutcome {
    let index: HashMap<&str, &VqaSample> = corpus.samples.iter().map(|s| (s.id.as_str(), s)).collect();
    let mut order: Vec<usize> = (0..outputs.len()).collect();
    order.sort_by(|&a, &b| outputs[a].id.cmp(&outputs[b].id).then(a.cmp(&b)));
    let run = || {
        order
            .par_iter()
            .map(|&i| {
                let r = &outputs[i];
                match index.get(r.id.as_str()) {
                    Some(sample) => score_one(r, sample, ctx),
                    None => Scored::Missing(ScoreErrorRecord {
                        id: r.id.clone(),
                        message: "unknown sample id".into(),
                    }),
                }
            })
            .collect::<Vec<_>>()
    };
    let results = match rayon::ThreadPoolBuilder::new().num_threads(workers.max(1)).build() {
        Ok(pool) => pool.install(run),
        Err(_) => run(),
    };
    let mut out = ScoreOutcome::default();
    for r in results {
        match r {
            Scored::Missing(e) => out.errors.push(e),
            Scored::Done { score, outcome } => {
                match score {
                    Some(Ok(s)) => out.scores.push(s),
                    Some(Err(e)) => out.errors.push(e),
                    None => {}
                }
                match outcome {
                    Ok(o) => out.outcomes.push(o),
                    Err(e) => out.errors.push(e),
                }
            }
        }
    }
    out
}

pub const SCORES_FILE: &str = "scores.jsonl";
pub const OUTCOMES_FILE: &str = "outcomes.jsonl";
pub const SCORE_ERRORS_FILE: &str = "score_errors.jsonl";

/// `score` over files: writes scores, outcomes, error records and the run
/// manifest into `out`. Returns the exit code.
pub fn run_score(
    cfg: &RunConfig,
    corpus_path: &Path,
    outputs_path: &Path,
    out: &Path,
    workers: usize,
) -> Result<i32, HarnessError> {
    let corpus = load_input_corpus(corpus_path)?;
    let outputs: Vec<OutputRecord> = read_jsonl(outputs_path)?;
    let ctx = RewardContext::new(cfg.reward.clone(), cfg.matcher(None)?);
    let result = cmd_score(&outputs, &corpus, &ctx, workers);
    ensure_dir(out)?;
    write_jsonl(&out.join(SCORES_FILE), &result.scores)?;
    write_jsonl(&out.join(OUTCOMES_FILE), &result.outcomes)?;
    write_jsonl(&out.join(SCORE_ERRORS_FILE), &result.errors)?;
    let mut manifest = RunManifest::new("score", cfg).setting("process_reward", cfg.reward.process_reward);
    manifest.input(corpus_path)?;
    manifest.input(outputs_path)?;
    manifest.finish(out, &[SCORES_FILE, OUTCOMES_FILE, SCORE_ERRORS_FILE])?;
    Ok(if result.errors.is_empty() {
        EXIT_OK
    } else {
        EXIT_SAMPLE_ERRORS
    })
}
