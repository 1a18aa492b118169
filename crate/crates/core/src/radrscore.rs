//! Reasoning metrics over observation sets: factuality, completeness,
//! effectiveness and their mean.
//!
//! All three ratios count matched elements of the *left* operand, so each is
//! a proportion in `[0, 1]`. Factuality additionally credits unmatched
//! observations that assert absence or normality, on the assumption that
//! reports omit normal findings but not abnormal ones. An empty denominator
//! yields `0` with the `degenerate` flag set.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{TaskType, VqaSample};
use crate::obs::{is_normalish, Matcher, ObsError, ObsRole, ObservationSet};
use crate::rewards::parse_tags;

#[derive(Debug, Error)]
pub enum ScoreError {
    #[error("sample {0} lacks a report or mined reasoning and cannot be scored")]
    NotScorable(String),
    #[error("model output for sample {0} is empty")]
    EmptyOutput(String),
    #[error("cannot aggregate an empty score list")]
    EmptyAggregate,
    #[error(transparent)]
    Obs(#[from] ObsError),
}

/// One ratio with the counts behind it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Ratio {
    pub value: f64,
    pub matched: usize,
    pub leniency_credits: usize,
    pub denominator: usize,
    pub degenerate: bool,
}

impl Ratio {
    fn new(matched: usize, leniency_credits: usize, denominator: usize) -> Self {
        if denominator == 0 {
            return Self {
                value: 0.0,
                matched,
                leniency_credits,
                denominator,
                degenerate: true,
            };
        }
        Self {
            value: (matched + leniency_credits) as f64 / denominator as f64,
            matched,
            leniency_credits,
            denominator,
            degenerate: false,
        }
    }
}

/// Share of model observations grounded in the report, with normal/absent
/// observations credited when unmatched.
pub fn factuality(
    obs_model: &ObservationSet,
    obs_report: &ObservationSet,
    matcher: &dyn Matcher,
) -> Result<Ratio, ObsError> {
    let unmatched = matcher.unmatched(obs_model, obs_report)?;
    let matched = obs_model.len() - unmatched.len();
    let credits = unmatched.into_iter().filter(|o| is_normalish(o)).count();
    Ok(Ratio::new(matched, credits, obs_model.len()))
}

/// Share of ground-truth observations covered by the model.
pub fn completeness(
    obs_gt: &ObservationSet,
    obs_model: &ObservationSet,
    matcher: &dyn Matcher,
) -> Result<Ratio, ObsError> {
    Ok(Ratio::new(matcher.intersect_count(obs_gt, obs_model)?, 0, obs_gt.len()))
}

/// Share of model observations that appear in the ground-truth reasoning.
pub fn effectiveness(
    obs_model: &ObservationSet,
    obs_gt: &ObservationSet,
    matcher: &dyn Matcher,
) -> Result<Ratio, ObsError> {
    Ok(Ratio::new(
        matcher.intersect_count(obs_model, obs_gt)?,
        0,
        obs_model.len(),
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScoreCounts {
    pub n_model: usize,
    pub n_gt: usize,
    pub matched_f: usize,
    pub matched_c: usize,
    pub matched_e: usize,
    pub leniency_credits: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReasoningScores {
    pub r_f: f64,
    pub r_c: f64,
    pub r_e: f64,
    pub radrscore: f64,
    pub counts: ScoreCounts,
    pub degenerate: bool,
}

impl ReasoningScores {
    pub fn from_ratios(f: Ratio, c: Ratio, e: Ratio) -> Self {
        Self {
            r_f: f.value,
            r_c: c.value,
            r_e: e.value,
            radrscore: exact_mean3([f, c, e]),
            counts: ScoreCounts {
                n_model: f.denominator,
                n_gt: c.denominator,
                matched_f: f.matched,
                matched_c: c.matched,
                matched_e: e.matched,
                leniency_credits: f.leniency_credits,
            },
            degenerate: f.degenerate || c.degenerate || e.degenerate,
        }
    }
}

/// Mean of three count ratios as a single rounding of the exact rational.
fn exact_mean3(ratios: [Ratio; 3]) -> f64 {
    let parts = ratios.map(|r| {
        if r.degenerate {
            (0u128, 1u128)
        } else {
            ((r.matched + r.leniency_credits) as u128, r.denominator as u128)
        }
    });
    let [(a, da), (b, db), (c, dc)] = parts;
    let num = a * db * dc + b * da * dc + c * da * db;
    let den = 3 * da * db * dc;
    if num < 1 << 53 && den < 1 << 53 {
        num as f64 / den as f64
    } else {
        mean3(ratios[0].value, ratios[1].value, ratios[2].value)
    }
}

pub fn mean3(a: f64, b: f64, c: f64) -> f64 {
    (a + b + c) / 3.0
}

/// Scores all three dimensions from pre-extracted sets.
pub fn score_sets(
    obs_model: &ObservationSet,
    obs_gt: &ObservationSet,
    obs_report: &ObservationSet,
    matcher: &dyn Matcher,
) -> Result<ReasoningScores, ObsError> {
    Ok(ReasoningScores::from_ratios(
        factuality(obs_model, obs_report, matcher)?,
        completeness(obs_gt, obs_model, matcher)?,
        effectiveness(obs_model, obs_gt, matcher)?,
    ))
}

/// Extracts observations from a model output's reasoning (think content, or
/// the whole output when untagged). Empty reasoning yields an empty set.
pub fn model_observations(output: &str, matcher: &dyn Matcher) -> Result<ObservationSet, ObsError> {
    let tagged = parse_tags(output);
    let text = tagged.reasoning_text(output);
    if text.trim().is_empty() {
        return Ok(ObservationSet::new(ObsRole::Model));
    }
    matcher.extract(text, ObsRole::Model)
}

pub fn score_sample(
    sample: &VqaSample,
    model_output: &str,
    matcher: &dyn Matcher,
) -> Result<ReasoningScores, ScoreError> {
    let (Some(report), Some(reasoning)) = (
        sample.report.as_deref().filter(|_| sample.has_report()),
        sample.reasoning.as_deref().filter(|_| sample.has_reasoning()),
    ) else {
        return Err(ScoreError::NotScorable(sample.id.clone()));
    };
    if model_output.trim().is_empty() {
        return Err(ScoreError::EmptyOutput(sample.id.clone()));
    }
    let obs_model = model_observations(model_output, matcher)?;
    let obs_gt = matcher.extract(reasoning, ObsRole::GroundTruth)?;
    let obs_report = matcher.extract(report, ObsRole::Report)?;
    Ok(score_sets(&obs_model, &obs_gt, &obs_report, matcher)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanScores {
    pub r_f: f64,
    pub r_c: f64,
    pub r_e: f64,
    pub radrscore: f64,
    pub count: usize,
}

impl MeanScores {
    fn of<'a>(items: impl IntoIterator<Item = &'a ReasoningScores>) -> Self {
        let mut acc = [0.0f64; 4];
        let mut n = 0usize;
        for s in items {
            acc[0] += s.r_f;
            acc[1] += s.r_c;
            acc[2] += s.r_e;
            acc[3] += s.radrscore;
            n += 1;
        }
        let d = n as f64;
        Self {
            r_f: acc[0] / d,
            r_c: acc[1] / d,
            r_e: acc[2] / d,
            radrscore: acc[3] / d,
            count: n,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub per_task: BTreeMap<TaskType, MeanScores>,
    pub overall: MeanScores,
}

/// Per-task and overall arithmetic means. Degenerate samples count as the
/// zeros they carry.
pub fn aggregate(scores: &[(TaskType, ReasoningScores)]) -> Result<Aggregate, ScoreError> {
    if scores.is_empty() {
        return Err(ScoreError::EmptyAggregate);
    }
    let mut per_task = BTreeMap::new();
    for task in TaskType::ALL {
        let items: Vec<_> = scores.iter().filter(|(t, _)| *t == task).map(|(_, s)| s).collect();
        if !items.is_empty() {
            per_task.insert(task, MeanScores::of(items));
        }
    }
    Ok(Aggregate {
        per_task,
        overall: MeanScores::of(scores.iter().map(|(_, s)| s)),
    })
}
