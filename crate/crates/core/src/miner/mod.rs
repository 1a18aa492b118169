//! Reasoning-chain mining: plan, gather evidence from the report, refine
//! into a narrative, then filter by factuality and compile a benchmark.

mod bundle;

use std::collections::BTreeMap;
use std::sync::Arc;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::llm::{CompletionClient, CompletionRequest, LlmError, PromptTemplate, TemplateId};
use crate::model::{options_line, Corpus, TaskType, VqaSample};
use crate::obs::{normalize, Matcher, ObsError, ObsRole, Observation, Polarity};
use crate::radrscore::factuality;
use crate::rewards::resolve_label;

pub use bundle::{compile_benchmark, BenchmarkBundle, Manifest, PartitionCounts, BUNDLE_FILES, MANIFEST_FILE};

/// Re-asks allowed when a response does not parse.
pub const PARSE_ATTEMPTS: u32 = 3;

/// Literal evidence for findings the report does not mention.
pub const INFERRED_NORMAL: &str = "normal";
pub const INFERRED_NO_DISEASE: &str = "no disease";

#[derive(Debug, Error)]
pub enum MinerError {
    #[error("sample {0} has no report")]
    NoReport(String),
    #[error("report text is empty")]
    EmptyReport,
    #[error("plan goal is empty")]
    EmptyGoal,
    #[error("no evidence steps to refine")]
    NoSteps,
    #[error("plan for sample {id} has {steps} step(s); expected at least {required}")]
    ShortPlan { id: String, steps: usize, required: usize },
    #[error("unparseable {stage} response after {attempts} attempt(s): {raw:?}")]
    Parse {
        stage: MineStage,
        attempts: u32,
        raw: String,
    },
    #[error("conclusion {conclusion:?} is inconsistent with answer {answer:?}")]
    Contradiction { conclusion: String, answer: String },
    #[error("corpus has a single label {0:?}; balancing needs at least two")]
    SingleLabel(String),
    #[error("chain references unknown sample id {0:?}")]
    DanglingChain(String),
    #[error("io error on {path}: {message}")]
    Io { path: String, message: String },
    #[error(transparent)]
    Model(#[from] crate::model::ModelError),
    #[error(transparent)]
    Llm(#[from] LlmError),
    #[error(transparent)]
    Obs(#[from] ObsError),
}

impl MinerError {
    /// Failures of the machinery (backend, I/O, matcher) as opposed to a
    /// response that was received but did not pass a mining rule.
    pub fn is_failure(&self) -> bool {
        matches!(
            self,
            MinerError::Io { .. } | MinerError::Model(_) | MinerError::Llm(_) | MinerError::Obs(_)
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MineStage {
    Plan,
    Evidence,
    Refine,
    Filter,
    Balance,
}

impl std::fmt::Display for MineStage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            MineStage::Plan => "plan",
            MineStage::Evidence => "evidence",
            MineStage::Refine => "refine",
            MineStage::Filter => "filter",
            MineStage::Balance => "balance",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlanStep {
    pub goal: String,
    pub order: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvidenceStep {
    pub plan: PlanStep,
    pub evidence: String,
    pub inferred: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MinedChain {
    pub sample_id: String,
    pub steps: Vec<EvidenceStep>,
    pub narrative: String,
    pub r_f: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RejectionKind {
    /// The chain failed a mining rule.
    Rejected,
    /// The sample could not be processed.
    Failed,
}

/// One skipped sample or chain.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rejection {
    pub sample_id: String,
    pub stage: MineStage,
    pub kind: RejectionKind,
    pub reason: String,
}

fn parse_plan(raw: &str) -> Option<Vec<PlanStep>> {
    let mut steps = Vec::new();
    for line in raw.lines().map(str::trim).filter(|l| !l.is_empty()) {
        let (num, goal) = line.split_once(". ")?;
        if num.parse::<usize>().ok()? != steps.len() + 1 {
            return None;
        }
        let goal = goal.trim();
        if goal.is_empty() {
            return None;
        }
        steps.push(PlanStep {
            goal: goal.to_string(),
            order: steps.len(),
        });
    }
    Some(steps)
}

fn parse_evidence(raw: &str) -> Option<(String, bool)> {
    let line = raw.trim();
    if let Some(rest) = line.strip_prefix("FOUND:") {
        let rest = rest.trim();
        return (!rest.is_empty()).then(|| (rest.to_string(), false));
    }
    let rest = line.strip_prefix("NOT_FOUND:")?.trim().trim_end_matches('.');
    if rest.eq_ignore_ascii_case(INFERRED_NORMAL) {
        Some((INFERRED_NORMAL.to_string(), true))
    } else if rest.eq_ignore_ascii_case(INFERRED_NO_DISEASE) {
        Some((INFERRED_NO_DISEASE.to_string(), true))
    } else {
        None
    }
}

fn parse_narrative(raw: &str) -> Option<String> {
    let t = raw.trim();
    (!t.is_empty()).then(|| t.to_string())
}

/// Last sentence of a narrative.
pub fn conclusion_of(narrative: &str) -> &str {
    narrative
        .split(['.', '!', '?', '\n'])
        .map(str::trim)
        .rfind(|s| !s.is_empty())
        .unwrap_or("")
}

fn mentions(haystack: &str, needle: &str) -> bool {
    let (h, n) = (normalize(haystack), normalize(needle));
    !n.is_empty() && format!(" {h} ").contains(&format!(" {n} "))
}

/// Whether a conclusion sentence agrees with the sample's answer.
pub fn conclusion_consistent(sample: &VqaSample, conclusion: &str, matcher: &dyn Matcher) -> Result<bool, ObsError> {
    if conclusion.is_empty() {
        return Ok(false);
    }
    let answer = sample.answer_text();
    match sample.task {
        TaskType::BinaryDiagnosis if matches!(normalize(answer).as_str(), "yes" | "no") => {
            let negative = Observation::new(conclusion).map(|o| o.polarity == Polarity::AbsentOrNormal);
            Ok(negative.is_ok_and(|neg| neg == (normalize(answer) == "no")))
        }
        task if task.is_close_ended() => Ok(mentions(conclusion, answer)
            || resolve_label(conclusion, sample).is_some_and(|l| l == sample.answer)
            || normalize(conclusion).ends_with(&format!("answer is {}", sample.answer.to_lowercase()))),
        _ => {
            let want = matcher.extract(answer, ObsRole::GroundTruth)?;
            let got = matcher.extract(conclusion, ObsRole::Model)?;
            if want.is_empty() {
                return Ok(mentions(conclusion, answer));
            }
            Ok(matcher.intersect_count(&want, &got)? > 0)
        }
    }
}

/// Label used for balancing: the answer's option text (the whole option
/// combination for multi-diagnosis), or the first extracted finding for
/// open-ended samples.
pub fn default_label(sample: &VqaSample, matcher: &dyn Matcher) -> String {
    if sample.task.is_close_ended() {
        return normalize(sample.answer_text());
    }
    matcher
        .extract(&sample.answer, ObsRole::GroundTruth)
        .ok()
        .and_then(|s| s.items().first().map(|o| o.normalized.clone()))
        .unwrap_or_else(|| normalize(&sample.answer))
}

pub struct Miner {
    client: Arc<CompletionClient>,
    matcher: Arc<dyn Matcher>,
    plan: PromptTemplate,
    evidence: PromptTemplate,
    refine: PromptTemplate,
}

impl Miner {
    pub fn new(client: Arc<CompletionClient>, matcher: Arc<dyn Matcher>) -> Self {
        Self {
            client,
            matcher,
            plan: PromptTemplate::shipped(TemplateId::Plan),
            evidence: PromptTemplate::shipped(TemplateId::Evidence),
            refine: PromptTemplate::shipped(TemplateId::Refine),
        }
    }

    fn report_of(sample: &VqaSample) -> Result<&str, MinerError> {
        match &sample.report {
            Some(r) if sample.has_report() => Ok(r.trim()),
            _ => Err(MinerError::NoReport(sample.id.clone())),
        }
    }

    fn options_of(sample: &VqaSample) -> String {
        if sample.options.is_empty() {
            "none".into()
        } else {
            options_line(sample)
        }
    }

    pub fn plan_request(&self, sample: &VqaSample) -> Result<CompletionRequest, MinerError> {
        let report = Self::report_of(sample)?;
        Ok(CompletionRequest::from_template(
            &self.plan,
            &[
                ("question", sample.question.trim()),
                ("options", &Self::options_of(sample)),
                ("answer", sample.answer_text()),
                ("report", report),
            ],
        )?)
    }

    pub fn evidence_request(&self, plan: &PlanStep, report: &str) -> Result<CompletionRequest, MinerError> {
        Ok(CompletionRequest::from_template(
            &self.evidence,
            &[("goal", plan.goal.trim()), ("report", report.trim())],
        )?)
    }

    pub fn refine_request(&self, sample: &VqaSample, steps: &[EvidenceStep]) -> Result<CompletionRequest, MinerError> {
        let rendered: Vec<String> = steps
            .iter()
            .map(|s| format!("{}. {}\n   Evidence: {}", s.plan.order + 1, s.plan.goal, s.evidence))
            .collect();
        Ok(CompletionRequest::from_template(
            &self.refine,
            &[
                ("question", sample.question.trim()),
                ("options", &Self::options_of(sample)),
                ("answer", sample.answer_text()),
                ("steps", &rendered.join("\n")),
            ],
        )?)
    }

    fn ask<T>(
        &self,
        stage: MineStage,
        request: CompletionRequest,
        parse: impl Fn(&str) -> Option<T>,
    ) -> Result<T, MinerError> {
        let mut raw = String::new();
        for attempt in 0..PARSE_ATTEMPTS {
            raw = self.client.complete(&request.clone().with_attempt(attempt))?;
            if let Some(v) = parse(&raw) {
                return Ok(v);
            }
            tracing::debug!(%stage, attempt, "unparseable response, re-asking");
        }
        Err(MinerError::Parse {
            stage,
            attempts: PARSE_ATTEMPTS,
            raw,
        })
    }

    /// Ordered diagnostic steps. Option questions other than yes/no need at
    /// least one step per option.
    pub fn build_plans(&self, sample: &VqaSample) -> Result<Vec<PlanStep>, MinerError> {
        let steps = self.ask(MineStage::Plan, self.plan_request(sample)?, parse_plan)?;
        let required = match sample.task {
            TaskType::SingleDiagnosis | TaskType::MultiDiagnosis => sample.options.len().max(1),
            _ => 1,
        };
        if steps.len() < required {
            return Err(MinerError::ShortPlan {
                id: sample.id.clone(),
                steps: steps.len(),
                required,
            });
        }
        Ok(steps)
    }

    pub fn extract_evidence(&self, plan: &PlanStep, report: &str) -> Result<EvidenceStep, MinerError> {
        if plan.goal.trim().is_empty() {
            return Err(MinerError::EmptyGoal);
        }
        if report.trim().is_empty() {
            return Err(MinerError::EmptyReport);
        }
        let (evidence, inferred) = self.ask(
            MineStage::Evidence,
            self.evidence_request(plan, report)?,
            parse_evidence,
        )?;
        Ok(EvidenceStep {
            plan: plan.clone(),
            evidence,
            inferred,
        })
    }

    pub fn refine_chain(&self, sample: &VqaSample, steps: &[EvidenceStep]) -> Result<MinedChain, MinerError> {
        if steps.is_empty() {
            return Err(MinerError::NoSteps);
        }
        let report = Self::report_of(sample)?;
        let narrative = self.ask(MineStage::Refine, self.refine_request(sample, steps)?, parse_narrative)?;
        let conclusion = conclusion_of(&narrative);
        if !conclusion_consistent(sample, conclusion, self.matcher.as_ref())? {
            return Err(MinerError::Contradiction {
                conclusion: conclusion.to_string(),
                answer: sample.answer_text().to_string(),
            });
        }
        let obs_narrative = self.matcher.extract(&narrative, ObsRole::Model)?;
        let obs_report = self.matcher.extract(report, ObsRole::Report)?;
        let r_f = factuality(&obs_narrative, &obs_report, self.matcher.as_ref())?.value;
        Ok(MinedChain {
            sample_id: sample.id.clone(),
            steps: steps.to_vec(),
            narrative,
            r_f,
        })
    }

    /// Runs all three stages for one sample, tagging failures with the stage.
    pub fn mine_sample(&self, sample: &VqaSample) -> Result<MinedChain, (MineStage, MinerError)> {
        let plans = self.build_plans(sample).map_err(|e| (MineStage::Plan, e))?;
        let report = Self::report_of(sample).map_err(|e| (MineStage::Evidence, e))?;
        let steps = plans
            .iter()
            .map(|p| self.extract_evidence(p, report))
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| (MineStage::Evidence, e))?;
        self.refine_chain(sample, &steps).map_err(|e| (MineStage::Refine, e))
    }

    /// Mines every sample that has a report, with at most `workers` samples
    /// in flight. Both outputs are sorted by sample id.
    pub fn mine_all(&self, samples: &[VqaSample], workers: usize) -> (Vec<MinedChain>, Vec<Rejection>) {
        let run = || {
            samples
                .par_iter()
                .filter(|s| s.has_report())
                .map(|s| (s.id.clone(), self.mine_sample(s)))
                .collect::<Vec<_>>()
        };
        let results = match rayon::ThreadPoolBuilder::new().num_threads(workers.max(1)).build() {
            Ok(pool) => pool.install(run),
            Err(_) => run(),
        };
        let mut chains = Vec::new();
        let mut rejections = Vec::new();
        for (id, r) in results {
            match r {
                Ok(c) => chains.push(c),
                Err((stage, e)) => {
                    tracing::info!(sample = %id, %stage, error = %e, "sample skipped");
                    rejections.push(Rejection {
                        sample_id: id,
                        stage,
                        kind: if e.is_failure() {
                            RejectionKind::Failed
                        } else {
                            RejectionKind::Rejected
                        },
                        reason: e.to_string(),
                    });
                }
            }
        }
        chains.sort_by(|a, b| a.sample_id.cmp(&b.sample_id));
        rejections.sort_by(|a, b| a.sample_id.cmp(&b.sample_id));
        (chains, rejections)
    }
}

/// Keeps chains with `r_f >= threshold`.
pub fn filter_by_factuality(chains: Vec<MinedChain>, threshold: f64) -> (Vec<MinedChain>, Vec<Rejection>) {
    let (kept, dropped): (Vec<_>, Vec<_>) = chains.into_iter().partition(|c| c.r_f >= threshold);
    let log = dropped
        .into_iter()
        .map(|c| Rejection {
            sample_id: c.sample_id,
            stage: MineStage::Filter,
            kind: RejectionKind::Rejected,
            reason: format!("factuality {} below threshold {threshold}", c.r_f),
        })
        .collect();
    (kept, log)
}

/// Seeded uniform down-sampling until the most frequent label has at most
/// twice the count of the least frequent. The least frequent label is never
/// touched; survivors keep their corpus order.
pub fn balance(corpus: &Corpus, label_of: impl Fn(&VqaSample) -> String, seed: u64) -> Result<Corpus, MinerError> {
    let mut by_label: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    for (i, s) in corpus.samples.iter().enumerate() {
        by_label.entry(label_of(s)).or_default().push(i);
    }
    if by_label.len() < 2 {
        let label = by_label.into_keys().next().unwrap_or_default();
        return Err(MinerError::SingleLabel(label));
    }
    let min = by_label.values().map(Vec::len).min().unwrap_or(0);
    let cap = 2 * min;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut keep = vec![false; corpus.samples.len()];
    for members in by_label.values() {
        if members.len() <= cap {
            members.iter().for_each(|&i| keep[i] = true);
        } else {
            for j in index::sample(&mut rng, members.len(), cap) {
                keep[members[j]] = true;
            }
        }
    }
    let samples = corpus
        .samples
        .iter()
        .zip(keep)
        .filter(|&(_, k)| k)
        .map(|(s, _)| s.clone())
        .collect();
    Ok(Corpus::new(
        samples,
        format!("{} [balanced seed={seed}]", corpus.provenance),
    )?)
}

/// Label counts, for checking balance.
pub fn label_counts(corpus: &Corpus, label_of: impl Fn(&VqaSample) -> String) -> BTreeMap<String, usize> {
    let mut counts = BTreeMap::new();
    for s in &corpus.samples {
        *counts.entry(label_of(s)).or_insert(0) += 1;
    }
    counts
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::llm::{MockFixture, MockRecord};
    use crate::model::fixtures::binary;
    use crate::model::AnswerOption;
    use crate::obs::LexicalMatcher;

    pub const REPORT: &str = "Low lung volumes. Minimal left basilar opacities, likely atelectasis. No pneumothorax.";

    fn sample() -> VqaSample {
        let mut s = binary("s1");
        s.report = Some(REPORT.into());
        s
    }

    fn probe() -> Miner {
        Miner::new(
            Arc::new(CompletionClient::mock(MockFixture::default())),
            Arc::new(LexicalMatcher::default()),
        )
    }

    fn rec(req: &CompletionRequest, response: &str) -> MockRecord {
        MockRecord {
            key: req.idempotency_key(),
            template_id: None,
            response: response.into(),
        }
    }

    fn with(records: Vec<MockRecord>) -> Miner {
        Miner::new(
            Arc::new(CompletionClient::mock(MockFixture::from_records(records))),
            Arc::new(LexicalMatcher::default()),
        )
    }

    fn step(goal: &str, order: usize) -> PlanStep {
        PlanStep {
            goal: goal.into(),
            order,
        }
    }

    #[test]
    fn parsers() {
        assert_eq!(
            parse_plan("1. Assess lung volumes\n2. Check basilar opacities\n"),
            Some(vec![step("Assess lung volumes", 0), step("Check basilar opacities", 1)])
        );
        assert_eq!(parse_plan("1. a\n3. b"), None);
        assert_eq!(parse_plan("Assess things"), None);
        assert_eq!(parse_plan(""), Some(vec![]));
        assert_eq!(
            parse_evidence("FOUND: low lung volumes"),
            Some(("low lung volumes".into(), false))
        );
        assert_eq!(
            parse_evidence("NOT_FOUND: no disease"),
            Some(("no disease".into(), true))
        );
        assert_eq!(parse_evidence("NOT_FOUND: normal."), Some(("normal".into(), true)));
        assert_eq!(parse_evidence("NOT_FOUND: maybe"), None);
        assert_eq!(parse_evidence("FOUND:"), None);
    }

    #[test]
    fn plans_for_binary_atelectasis() {
        let s = sample();
        let req = probe().plan_request(&s).unwrap();
        let m = with(vec![rec(
            &req,
            "1. Assess for reduced lung volumes\n2. Look for distinctive basilar opacities\n3. Exclude pneumothorax",
        )]);
        let plans = m.build_plans(&s).unwrap();
        assert_eq!(plans.len(), 3);
        assert!(plans[0].goal.contains("lung volumes"));
        assert!(plans[1].goal.contains("opacities"));
    }

    #[test]
    fn multi_choice_plan_must_cover_options() {
        let mut s = sample();
        s.task = TaskType::SingleDiagnosis;
        s.options = vec![
            AnswerOption::new("A", "atelectasis"),
            AnswerOption::new("B", "pneumothorax"),
            AnswerOption::new("C", "edema"),
        ];
        s.answer = "A".into();
        let req = probe().plan_request(&s).unwrap();
        let short = with(vec![rec(&req, "1. Assess basilar opacities")]);
        assert!(matches!(
            short.build_plans(&s),
            Err(MinerError::ShortPlan { required: 3, .. })
        ));
        let ok = with(vec![rec(
            &req,
            "1. Assess basilar opacities\n2. Check for pneumothorax\n3. Check for edema",
        )]);
        assert_eq!(ok.build_plans(&s).unwrap().len(), 3);
    }

    #[test]
    fn empty_plan_is_an_error() {
        let s = sample();
        let req = probe().plan_request(&s).unwrap();
        assert!(matches!(
            with(vec![rec(&req, "")]).build_plans(&s),
            Err(MinerError::ShortPlan { steps: 0, .. })
        ));
    }

    #[test]
    fn plan_without_report_is_rejected() {
        assert!(matches!(
            probe().build_plans(&binary("x")),
            Err(MinerError::NoReport(_))
        ));
    }

    #[test]
    fn evidence_found_and_inferred() {
        let p = probe();
        let opacity = step("Assess opacity", 0);
        let ptx = step("Assess pneumothorax", 1);
        let report = "Minimal left basilar opacities.";
        let m = with(vec![
            rec(
                &p.evidence_request(&opacity, report).unwrap(),
                "FOUND: minimal left basilar opacities",
            ),
            rec(&p.evidence_request(&ptx, report).unwrap(), "NOT_FOUND: no disease"),
        ]);
        let e = m.extract_evidence(&opacity, report).unwrap();
        assert_eq!(
            (e.evidence.as_str(), e.inferred),
            ("minimal left basilar opacities", false)
        );
        let n = m.extract_evidence(&ptx, report).unwrap();
        assert_eq!((n.evidence.as_str(), n.inferred), ("no disease", true));
        assert!(matches!(m.extract_evidence(&ptx, " "), Err(MinerError::EmptyReport)));
    }

    fn evidence(goal: &str, order: usize, text: &str) -> EvidenceStep {
        EvidenceStep {
            plan: step(goal, order),
            evidence: text.into(),
            inferred: false,
        }
    }

    #[test]
    fn refine_confirms_answer_and_scores_factuality() {
        let s = sample();
        let steps = vec![
            evidence("Assess lung volumes", 0, "low lung volumes"),
            evidence("Assess basilar opacities", 1, "minimal left basilar opacities"),
        ];
        let req = probe().refine_request(&s, &steps).unwrap();
        let narrative = "The study shows low lung volumes. There are minimal left basilar opacities. \
                         These findings confirm the diagnosis of atelectasis.";
        let c = with(vec![rec(&req, narrative)]).refine_chain(&s, &steps).unwrap();
        assert_eq!(c.narrative, narrative);
        assert!(conclusion_of(&c.narrative).contains("confirm the diagnosis of atelectasis"));
        assert!(c.r_f > 0.0);
    }

    #[test]
    fn refine_single_step_is_fully_factual() {
        let s = sample();
        let steps = vec![evidence("Assess lung volumes", 0, "low lung volumes")];
        let req = probe().refine_request(&s, &steps).unwrap();
        let c = with(vec![rec(
            &req,
            "Low lung volumes. Findings are consistent with atelectasis.",
        )])
        .refine_chain(&s, &steps)
        .unwrap();
        assert_eq!(c.r_f, 1.0);
    }

    #[test]
    fn refine_rejects_contradiction_and_empty_steps() {
        let s = sample();
        let steps = vec![evidence("Assess lung volumes", 0, "low lung volumes")];
        let req = probe().refine_request(&s, &steps).unwrap();
        let m = with(vec![rec(&req, "Low lung volumes. There is no atelectasis.")]);
        assert!(matches!(
            m.refine_chain(&s, &steps),
            Err(MinerError::Contradiction { .. })
        ));
        assert!(matches!(m.refine_chain(&s, &[]), Err(MinerError::NoSteps)));
    }

    #[test]
    fn conclusion_checks_by_task() {
        let m = LexicalMatcher::default();
        let mut s = sample();
        assert!(conclusion_consistent(&s, "Atelectasis is present", &m).unwrap());
        s.answer = "B".into();
        assert!(conclusion_consistent(&s, "There is no evidence of atelectasis", &m).unwrap());
        assert!(!conclusion_consistent(&s, "Atelectasis is present", &m).unwrap());
        s.task = TaskType::SingleDiagnosis;
        s.options = vec![AnswerOption::new("A", "edema"), AnswerOption::new("B", "atelectasis")];
        assert!(conclusion_consistent(&s, "The findings indicate atelectasis", &m).unwrap());
        assert!(conclusion_consistent(&s, "Therefore the answer is B", &m).unwrap());
        assert!(!conclusion_consistent(&s, "The findings indicate edema", &m).unwrap());
        s.task = TaskType::AnomalyDetection;
        s.options.clear();
        s.answer = "atelectasis".into();
        assert!(conclusion_consistent(&s, "Overall, the abnormality is atelectasis", &m).unwrap());
        assert!(!conclusion_consistent(&s, "Overall, the abnormality is a fracture", &m).unwrap());
    }

    fn chain(id: &str, r_f: f64) -> MinedChain {
        MinedChain {
            sample_id: id.into(),
            steps: vec![],
            narrative: "x".into(),
            r_f,
        }
    }

    #[test]
    fn filter_examples() {
        let (kept, log) = filter_by_factuality(vec![chain("a", 1.0), chain("b", 0.9), chain("c", 1.0)], 1.0);
        assert_eq!(kept.len(), 2);
        assert_eq!(log.len(), 1);
        assert_eq!(log[0].sample_id, "b");
        assert_eq!(
            filter_by_factuality(vec![chain("a", 0.0), chain("b", 0.5)], 0.0)
                .0
                .len(),
            2
        );
        assert!(filter_by_factuality(vec![], 1.0).0.is_empty());
        let once = filter_by_factuality(vec![chain("a", 1.0), chain("b", 0.3)], 1.0).0;
        assert_eq!(filter_by_factuality(once.clone(), 1.0).0, once);
    }

    pub fn labeled_corpus(counts: &[(&str, usize)]) -> Corpus {
        let mut samples = Vec::new();
        for (label, n) in counts {
            for i in 0..*n {
                let mut s = binary(&format!("{label}-{i:03}"));
                s.source = (*label).into();
                samples.push(s);
            }
        }
        Corpus::new(samples, "synthetic").unwrap()
    }

    fn by_source(s: &VqaSample) -> String {
        s.source.clone()
    }

    #[test]
    fn balance_examples() {
        let c = labeled_corpus(&[("A", 10), ("B", 3)]);
        let b = balance(&c, by_source, 7).unwrap();
        let counts = label_counts(&b, by_source);
        assert_eq!(counts["A"], 6);
        assert_eq!(counts["B"], 3);

        let c = labeled_corpus(&[("A", 4), ("B", 3)]);
        assert_eq!(balance(&c, by_source, 7).unwrap().samples, c.samples);

        let c = labeled_corpus(&[("A", 7)]);
        assert!(matches!(balance(&c, by_source, 7), Err(MinerError::SingleLabel(_))));
    }

    #[test]
    fn balance_is_deterministic_per_seed() {
        let c = labeled_corpus(&[("A", 30), ("B", 4), ("C", 9)]);
        let a = balance(&c, by_source, 11).unwrap();
        assert_eq!(a.samples, balance(&c, by_source, 11).unwrap().samples);
        let other = balance(&c, by_source, 12).unwrap();
        assert_eq!(label_counts(&a, by_source), label_counts(&other, by_source));
    }

    #[test]
    fn default_labels() {
        let m = LexicalMatcher::default();
        let mut s = binary("x");
        assert_eq!(default_label(&s, &m), "yes");
        s.task = TaskType::AnomalyDetection;
        s.options.clear();
        s.answer = "Pleural effusion and atelectasis".into();
        assert_eq!(default_label(&s, &m), "pleural effusion");
    }
}
