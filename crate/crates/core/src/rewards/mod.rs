//! Rule-based rewards: output format, answer outcome and process factuality.
//!
//! Answer-only samples earn `format + outcome`; reasoning-augmented samples
//! additionally earn the factuality of their think content against the
//! report. Components are kept unweighted.

mod scorer;
mod tags;

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{PartitionTag, VqaSample};
use crate::obs::{normalize, Matcher, MatcherBackend, ObsError, ObsRole};
use crate::radrscore::{factuality, model_observations};

pub use scorer::{CommandScorer, EntityF1Scorer, OpenScorer};
pub use tags::{parse_tags, TaggedOutput, ANSWER_CLOSE, ANSWER_OPEN, THINK_CLOSE, THINK_OPEN};

#[derive(Debug, Error)]
pub enum RewardError {
    #[error("sample {0} is open-ended but no open scorer is configured")]
    NoOpenScorer(String),
    #[error("process reward requested for sample {0}, which has no report")]
    NoReport(String),
    #[error("sample {id} has no report and cannot be treated as {partition:?}")]
    InconsistentPartition { id: String, partition: PartitionTag },
    #[error("open scorer failed: {0}")]
    Scorer(String),
    #[error(transparent)]
    Obs(#[from] ObsError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardBreakdown {
    pub format: f64,
    pub outcome: f64,
    pub process: f64,
    pub total: f64,
}

impl RewardBreakdown {
    pub fn new(format: f64, outcome: f64, process: f64) -> Self {
        Self {
            format,
            outcome,
            process,
            total: format + outcome + process,
        }
    }
}

pub fn format_reward(output: &str, partition: PartitionTag) -> f64 {
    if parse_tags(output).satisfies(partition) {
        1.0
    } else {
        0.0
    }
}

/// Option label named by an answer: the bare label (`b`), a leading label
/// (`B) atelectasis`, `(B)`, `B.`), or the option text itself.
pub fn resolve_label<'a>(answer: &str, sample: &'a VqaSample) -> Option<&'a str> {
    let a = answer.trim();
    let unwrapped = a.strip_prefix('(').unwrap_or(a);
    for opt in &sample.options {
        if a.eq_ignore_ascii_case(&opt.label) {
            return Some(&opt.label);
        }
        let n = opt.label.len();
        if unwrapped.len() > n
            && unwrapped.is_char_boundary(n)
            && unwrapped[..n].eq_ignore_ascii_case(&opt.label)
            && unwrapped[n..].starts_with([')', '.', ':'])
        {
            return Some(&opt.label);
        }
    }
    let na = normalize(a);
    sample
        .options
        .iter()
        .find(|o| !na.is_empty() && normalize(&o.text) == na)
        .map(|o| o.label.as_str())
}

pub fn outcome_reward(
    output: &str,
    sample: &VqaSample,
    open_scorer: Option<&dyn OpenScorer>,
) -> Result<f64, RewardError> {
    let Some(answer) = parse_tags(output).answer else {
        return Ok(0.0);
    };
    if sample.task.is_close_ended() {
        let hit = resolve_label(&answer, sample).is_some_and(|l| l.eq_ignore_ascii_case(&sample.answer));
        return Ok(if hit { 1.0 } else { 0.0 });
    }
    let scorer = open_scorer.ok_or_else(|| RewardError::NoOpenScorer(sample.id.clone()))?;
    if answer.is_empty() {
        return Ok(0.0);
    }
    scorer.score(&answer, &sample.answer)
}

/// Factuality of the think content against the sample's report. A missing
/// or empty think span earns 0.
pub fn process_reward(output: &str, sample: &VqaSample, matcher: &dyn Matcher) -> Result<f64, RewardError> {
    let report = match &sample.report {
        Some(r) if sample.has_report() => r,
        _ => return Err(RewardError::NoReport(sample.id.clone())),
    };
    let Some(think) = parse_tags(output).think else {
        return Ok(0.0);
    };
    if think.trim().is_empty() {
        return Ok(0.0);
    }
    let obs_model = model_observations(&format!("{THINK_OPEN}{think}{THINK_CLOSE}"), matcher)?;
    let obs_report = matcher.extract(report, ObsRole::Report)?;
    Ok(factuality(&obs_model, &obs_report, matcher)?.value)
}

/// Which open-ended scorer to use.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum OpenScorerKind {
    #[default]
    EntityF1,
    Command(CommandScorer),
    None,
}

/// Reward configuration block.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct RewardConfig {
    pub open_scorer: OpenScorerKind,
    pub matcher: MatcherBackend,
    /// When false, reasoning-augmented samples earn no process component.
    pub process_reward: bool,
    /// Treat every sample as this partition regardless of its tag.
    pub partition_override: Option<PartitionTag>,
}

impl Default for RewardConfig {
    fn default() -> Self {
        Self {
            open_scorer: OpenScorerKind::EntityF1,
            matcher: MatcherBackend::Lexical,
            process_reward: true,
            partition_override: None,
        }
    }
}

/// A reward configuration bound to concrete matcher and scorer instances.
pub struct RewardContext {
    pub config: RewardConfig,
    pub matcher: Arc<dyn Matcher>,
    pub open_scorer: Option<Arc<dyn OpenScorer>>,
}

impl RewardContext {
    pub fn new(config: RewardConfig, matcher: Arc<dyn Matcher>) -> Self {
        let open_scorer: Option<Arc<dyn OpenScorer>> = match &config.open_scorer {
            OpenScorerKind::EntityF1 => Some(Arc::new(EntityF1Scorer::new(matcher.clone()))),
            OpenScorerKind::Command(c) => Some(Arc::new(c.clone())),
            OpenScorerKind::None => None,
        };
        Self {
            config,
            matcher,
            open_scorer,
        }
    }

    /// Partition used for a sample: the override if set, else its own tag.
    pub fn partition_of(&self, sample: &VqaSample) -> PartitionTag {
        self.config.partition_override.unwrap_or(if sample.has_report() {
            PartitionTag::ReasoningAugmented
        } else {
            PartitionTag::AnswerOnly
        })
    }

    pub fn reward(&self, output: &str, sample: &VqaSample) -> Result<RewardBreakdown, RewardError> {
        total_reward(output, sample, self.partition_of(sample), self)
    }
}

pub fn total_reward(
    output: &str,
    sample: &VqaSample,
    partition: PartitionTag,
    ctx: &RewardContext,
) -> Result<RewardBreakdown, RewardError> {
    if partition == PartitionTag::ReasoningAugmented && !sample.has_report() {
        return Err(RewardError::InconsistentPartition {
            id: sample.id.clone(),
            partition,
        });
    }
    let format = format_reward(output, partition);
    let outcome = outcome_reward(output, sample, ctx.open_scorer.as_deref())?;
    let process = if partition == PartitionTag::ReasoningAugmented && ctx.config.process_reward {
        process_reward(output, sample, ctx.matcher.as_ref())?
    } else {
        0.0
    };
    Ok(RewardBreakdown::new(format, outcome, process))
}
