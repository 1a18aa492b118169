use serde::{Deserialize, Serialize};

use crate::model::PartitionTag;

pub const THINK_OPEN: &str = "<think>";
pub const THINK_CLOSE: &str = "</think>";
pub const ANSWER_OPEN: &str = "<answer>";
pub const ANSWER_CLOSE: &str = "</answer>";

const ALL_TAGS: [&str; 4] = [THINK_OPEN, THINK_CLOSE, ANSWER_OPEN, ANSWER_CLOSE];

/// Result of scanning a model output for think/answer tags.
///
/// `well_formed` means: the answer span is closed and non-empty, and a think
/// span, if present, is closed and ends before the answer opens. Neither span
/// may contain another tag.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaggedOutput {
    pub think: Option<String>,
    pub answer: Option<String>,
    pub well_formed: bool,
}

impl TaggedOutput {
    /// Structure required for the partition: D_R needs think then answer;
    /// D_A needs the answer (a volunteered think span is allowed).
    pub fn satisfies(&self, partition: PartitionTag) -> bool {
        match partition {
            PartitionTag::ReasoningAugmented => self.well_formed && self.think.is_some(),
            PartitionTag::AnswerOnly => self.well_formed,
        }
    }

    /// Think content if tags exist, the whole output otherwise.
    pub fn reasoning_text<'a>(&'a self, output: &'a str) -> &'a str {
        match &self.think {
            Some(t) => t.as_str(),
            None if output.contains(THINK_OPEN) => "",
            None => output,
        }
    }
}

enum Span<'a> {
    Missing,
    Unclosed,
    Found {
        open_at: usize,
        close_end: usize,
        content: &'a str,
    },
}

fn find_span<'a>(text: &'a str, open: &str, close: &str) -> Span<'a> {
    let Some(open_at) = text.find(open) else {
        return Span::Missing;
    };
    let body_start = open_at + open.len();
    match text[body_start..].find(close) {
        Some(rel) => Span::Found {
            open_at,
            close_end: body_start + rel + close.len(),
            content: &text[body_start..body_start + rel],
        },
        None => Span::Unclosed,
    }
}

fn has_tag(s: &str) -> bool {
    ALL_TAGS.iter().any(|t| s.contains(t))
}

pub fn parse_tags(output: &str) -> TaggedOutput {
    let think = find_span(output, THINK_OPEN, THINK_CLOSE);
    let answer = find_span(output, ANSWER_OPEN, ANSWER_CLOSE);

    let mut well_formed = true;
    let answer_text = match answer {
        Span::Found {
            open_at,
            close_end,
            content,
        } => {
            if content.trim().is_empty() || has_tag(content) {
                well_formed = false;
            }
            Some((open_at, close_end, content.trim().to_string()))
        }
        _ => {
            well_formed = false;
            None
        }
    };
    let think_text = match think {
        Span::Found {
            open_at: _,
            close_end,
            content,
        } => {
            if has_tag(content) {
                well_formed = false;
            }
            if let Some((answer_open, _, _)) = &answer_text {
                if close_end > *answer_open {
                    well_formed = false;
                }
            }
            Some(content.trim().to_string())
        }
        Span::Unclosed => {
            well_formed = false;
            None
        }
        Span::Missing => {
            if output.contains(THINK_CLOSE) {
                well_formed = false;
            }
            None
        }
    };
    if let Some((_, answer_end, _)) = &answer_text {
        if output[..answer_text.as_ref().map(|a| a.0).unwrap_or(0)].contains(ANSWER_CLOSE)
            || output[..*answer_end].matches(ANSWER_OPEN).count() > 1
        {
            well_formed = false;
        }
    }
    TaggedOutput {
        think: think_text,
        answer: answer_text.map(|a| a.2),
        well_formed,
    }
}
