//! Domain types shared by every module: VQA samples, corpora, partitions and
//! instruction rendering.

use std::collections::HashSet;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Literal image placeholder used in rendered instructions.
pub const IMAGE_TOKEN: &str = "<image>";

const SYSTEM_LINE: &str = "System: You are a helpful AI assistant.";
const DIRECT_DIRECTIVE: &str = "Please enclose the answer within <answer></answer>";
const COT_DIRECTIVE: &str = "Please think step by step, and enclose the answer within <answer></answer> and the reasoning processes within <think></think>.";

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("line {line}: malformed record: {message}")]
    Malformed { line: usize, message: String },
    #[error("line {line}: invalid field `{field}`: {reason}")]
    Invalid {
        line: usize,
        field: &'static str,
        reason: String,
    },
    #[error("line {line}: duplicate sample id {id:?}")]
    DuplicateId { line: usize, id: String },
    #[error("samples carry a report or reasoning but not both: {ids:?}")]
    MixedPartition { ids: Vec<String> },
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// The five diagnostic task families.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskType {
    BinaryDiagnosis,
    SingleDiagnosis,
    MultiDiagnosis,
    AnomalyDetection,
    TemporalComparison,
}

impl TaskType {
    pub const ALL: [TaskType; 5] = [
        TaskType::BinaryDiagnosis,
        TaskType::SingleDiagnosis,
        TaskType::MultiDiagnosis,
        TaskType::AnomalyDetection,
        TaskType::TemporalComparison,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            TaskType::BinaryDiagnosis => "binary_diagnosis",
            TaskType::SingleDiagnosis => "single_diagnosis",
            TaskType::MultiDiagnosis => "multi_diagnosis",
            TaskType::AnomalyDetection => "anomaly_detection",
            TaskType::TemporalComparison => "temporal_comparison",
        }
    }

    /// Close-ended tasks answer with an option label.
    pub fn is_close_ended(self) -> bool {
        !matches!(self, TaskType::AnomalyDetection)
    }

    pub fn min_images(self) -> usize {
        match self {
            TaskType::TemporalComparison => 2,
            _ => 1,
        }
    }
}

impl fmt::Display for TaskType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
}

/// One labeled answer choice, e.g. `A) atelectasis`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnswerOption {
    pub label: String,
    pub text: String,
}

impl AnswerOption {
    pub fn new(label: impl Into<String>, text: impl Into<String>) -> Self {
        Self {
            label: label.into(),
            text: text.into(),
        }
    }
}

/// One benchmark item.
///
/// For close-ended tasks `answer` holds an option label; for anomaly
/// detection it holds free text.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VqaSample {
    pub id: String,
    pub task: TaskType,
    pub images: Vec<String>,
    pub question: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub options: Vec<AnswerOption>,
    pub answer: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub report: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reasoning: Option<String>,
    pub source: String,
    pub split: Split,
}

fn non_blank(text: &Option<String>) -> bool {
    text.as_deref().is_some_and(|t| !t.trim().is_empty())
}

impl VqaSample {
    pub fn has_report(&self) -> bool {
        non_blank(&self.report)
    }

    pub fn has_reasoning(&self) -> bool {
        non_blank(&self.reasoning)
    }

    /// `None` when the sample carries exactly one of report/reasoning.
    pub fn partition_tag(&self) -> Option<PartitionTag> {
        match (self.has_report(), self.has_reasoning()) {
            (true, true) => Some(PartitionTag::ReasoningAugmented),
            (false, false) => Some(PartitionTag::AnswerOnly),
            _ => None,
        }
    }

    pub fn option(&self, label: &str) -> Option<&AnswerOption> {
        self.options.iter().find(|o| o.label.eq_ignore_ascii_case(label.trim()))
    }

    /// Option text of the ground-truth answer, or the answer itself for
    /// open-ended samples.
    pub fn answer_text(&self) -> &str {
        self.option(&self.answer)
            .map(|o| o.text.as_str())
            .unwrap_or(&self.answer)
    }

    /// Checks the per-sample invariants. Returns the offending field name and
    /// reason on failure.
    pub fn validate(&self) -> Result<(), (&'static str, String)> {
        if self.id.trim().is_empty() {
            return Err(("id", "must be non-empty".into()));
        }
        if self.question.trim().is_empty() {
            return Err(("question", "must be non-empty".into()));
        }
        if self.images.len() < self.task.min_images() {
            return Err((
                "images",
                format!(
                    "{} requires at least {} image reference(s), found {}",
                    self.task,
                    self.task.min_images(),
                    self.images.len()
                ),
            ));
        }
        if self.images.iter().any(|i| i.trim().is_empty()) {
            return Err(("images", "image references must be non-empty".into()));
        }
        if self.answer.trim().is_empty() {
            return Err(("answer", "must be non-empty".into()));
        }
        if self.task.is_close_ended() {
            if self.options.is_empty() {
                return Err(("options", format!("{} requires answer options", self.task)));
            }
            let mut seen = HashSet::new();
            for opt in &self.options {
                if opt.label.trim().is_empty() || opt.text.trim().is_empty() {
                    return Err(("options", "option label and text must be non-empty".into()));
                }
                if !seen.insert(opt.label.to_ascii_uppercase()) {
                    return Err(("options", format!("duplicate option label {:?}", opt.label)));
                }
            }
            if self.option(&self.answer).is_none() {
                return Err(("answer", format!("{:?} is not one of the option labels", self.answer)));
            }
        } else if !self.options.is_empty() {
            return Err(("options", "anomaly_detection samples take no options".into()));
        }
        if self.has_reasoning() && !self.has_report() {
            return Err(("report", "a sample with reasoning must carry its report".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PartitionTag {
    /// D_R: report and mined reasoning present.
    ReasoningAugmented,
    /// D_A: neither present.
    AnswerOnly,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptMode {
    Cot,
    Direct,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Corpus {
    pub samples: Vec<VqaSample>,
    pub provenance: String,
}

impl Corpus {
    /// Builds a corpus, enforcing unique ids and per-sample invariants.
    /// Line numbers in errors are 1-based positions in `samples`.
    pub fn new(samples: Vec<VqaSample>, provenance: impl Into<String>) -> Result<Self, ModelError> {
        let mut ids = HashSet::new();
        for (i, s) in samples.iter().enumerate() {
            let line = i + 1;
            s.validate()
                .map_err(|(field, reason)| ModelError::Invalid { line, field, reason })?;
            if !ids.insert(s.id.as_str()) {
                return Err(ModelError::DuplicateId { line, id: s.id.clone() });
            }
        }
        Ok(Self {
            samples,
            provenance: provenance.into(),
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&VqaSample> {
        self.samples.iter().find(|s| s.id == id)
    }

    /// Parses line-delimited JSON records. Blank lines are skipped but still
    /// counted for line numbers.
    pub fn from_jsonl(text: &str, provenance: impl Into<String>) -> Result<Self, ModelError> {
        let mut samples = Vec::new();
        let mut ids = HashSet::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            if raw.trim().is_empty() {
                continue;
            }
            let sample: VqaSample = serde_json::from_str(raw).map_err(|e| ModelError::Malformed {
                line,
                message: e.to_string(),
            })?;
            sample
                .validate()
                .map_err(|(field, reason)| ModelError::Invalid { line, field, reason })?;
            if !ids.insert(sample.id.clone()) {
                return Err(ModelError::DuplicateId { line, id: sample.id });
            }
            samples.push(sample);
        }
        Ok(Self {
            samples,
            provenance: provenance.into(),
        })
    }

    pub fn to_jsonl(&self) -> String {
        write_jsonl(&self.samples)
    }
}

/// Serializes records one per line, each line terminated by `\n`.
pub fn write_jsonl<T: Serialize>(records: &[T]) -> String {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r).expect("records serialize"));
        out.push('\n');
    }
    out
}

pub fn load_corpus(path: impl AsRef<Path>) -> Result<Corpus, ModelError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| ModelError::Io {
        path: path.display().to_string(),
        source,
    })?;
    Corpus::from_jsonl(&text, path.display().to_string())
}

/// Splits a corpus into (D_R, D_A). Samples with exactly one of report and
/// reasoning are rejected.
pub fn partition(corpus: &Corpus) -> Result<(Corpus, Corpus), ModelError> {
    let mut reasoning = Vec::new();
    let mut answer_only = Vec::new();
    let mut mixed = Vec::new();
    for s in &corpus.samples {
        match s.partition_tag() {
            Some(PartitionTag::ReasoningAugmented) => reasoning.push(s.clone()),
            Some(PartitionTag::AnswerOnly) => answer_only.push(s.clone()),
            None => mixed.push(s.id.clone()),
        }
    }
    if !mixed.is_empty() {
        return Err(ModelError::MixedPartition { ids: mixed });
    }
    Ok((
        Corpus {
            samples: reasoning,
            provenance: format!("{} [reasoning_augmented]", corpus.provenance),
        },
        Corpus {
            samples: answer_only,
            provenance: format!("{} [answer_only]", corpus.provenance),
        },
    ))
}

/// Options as `A) x B) y`; empty for open-ended samples.
pub fn options_line(sample: &VqaSample) -> String {
    sample
        .options
        .iter()
        .map(|o| format!("{}) {}", o.label, o.text))
        .collect::<Vec<_>>()
        .join(" ")
}

/// Renders the system and user lines for a sample.
pub fn render_instruction(sample: &VqaSample, mode: PromptMode) -> String {
    let mut user = String::from("User: ");
    for _ in &sample.images {
        user.push_str(IMAGE_TOKEN);
    }
    user.push_str(sample.question.trim());
    if !sample.options.is_empty() {
        user.push_str(" Options: ");
        user.push_str(&options_line(sample));
    }
    user.push(' ');
    user.push_str(match mode {
        PromptMode::Direct => DIRECT_DIRECTIVE,
        PromptMode::Cot => COT_DIRECTIVE,
    });
    format!("{SYSTEM_LINE}\n{user}")
}
