use std::sync::Arc;

use super::{Matcher, MatcherBackend, ObsError, ObsRole, Observation, ObservationSet};
use crate::llm::{CompletionClient, CompletionRequest, PromptTemplate, TemplateId};

/// Re-asks allowed when a response does not parse.
pub const PARSE_ATTEMPTS: u32 = 3;

/// Matcher that delegates extraction and match judgments to a completion
/// backend. Verdicts are cached by the client, so a primed cache replays a
/// run without network access.
pub struct LlmMatcher {
    client: Arc<CompletionClient>,
    extract: PromptTemplate,
    judge: PromptTemplate,
}

impl LlmMatcher {
    pub fn new(client: Arc<CompletionClient>) -> Self {
        Self {
            client,
            extract: PromptTemplate::shipped(TemplateId::Extract),
            judge: PromptTemplate::shipped(TemplateId::Match),
        }
    }

    pub fn extract_request(&self, text: &str, role: ObsRole) -> Result<CompletionRequest, ObsError> {
        Ok(CompletionRequest::from_template(
            &self.extract,
            &[("role", role.as_str()), ("text", text.trim())],
        )?)
    }

    pub fn match_request(&self, a: &Observation, b: &Observation) -> Result<CompletionRequest, ObsError> {
        Ok(CompletionRequest::from_template(
            &self.judge,
            &[("left", &a.normalized), ("right", &b.normalized)],
        )?)
    }

    fn ask<T>(
        &self,
        what: &'static str,
        request: CompletionRequest,
        parse: impl Fn(&str) -> Option<T>,
    ) -> Result<T, ObsError> {
        let mut raw = String::new();
        for attempt in 0..PARSE_ATTEMPTS {
            raw = self.client.complete(&request.clone().with_attempt(attempt))?;
            if let Some(v) = parse(&raw) {
                return Ok(v);
            }
            tracing::debug!(what, attempt, "unparseable response, re-asking");
        }
        Err(ObsError::Parse {
            what,
            attempts: PARSE_ATTEMPTS,
            raw,
        })
    }
}

/// `- item` lines, or the single line `NONE`. Anything else fails.
pub(crate) fn parse_observation_list(raw: &str) -> Option<Vec<String>> {
    let lines: Vec<&str> = raw.lines().map(str::trim).filter(|l| !l.is_empty()).collect();
    if lines.len() == 1 && lines[0].eq_ignore_ascii_case("none") {
        return Some(Vec::new());
    }
    if lines.is_empty() {
        return None;
    }
    lines
        .into_iter()
        .map(|l| l.strip_prefix("- ").map(|s| s.trim().to_string()))
        .collect()
}

pub(crate) fn parse_verdict(raw: &str) -> Option<bool> {
    let v = raw.trim().trim_end_matches('.').to_ascii_lowercase();
    match v.as_str() {
        "yes" => Some(true),
        "no" => Some(false),
        _ => None,
    }
}

impl Matcher for LlmMatcher {
    fn extract(&self, text: &str, role: ObsRole) -> Result<ObservationSet, ObsError> {
        if text.trim().is_empty() {
            return Err(ObsError::EmptyText);
        }
        let items = self.ask("extraction", self.extract_request(text, role)?, parse_observation_list)?;
        let mut set = ObservationSet::new(role);
        for item in items {
            if let Ok(o) = Observation::new(item) {
                set.insert(o);
            }
        }
        Ok(set)
    }

    fn matches(&self, a: &Observation, b: &Observation) -> Result<bool, ObsError> {
        if a.normalized == b.normalized {
            return Ok(true);
        }
        self.ask("match", self.match_request(a, b)?, parse_verdict)
    }

    fn backend(&self) -> MatcherBackend {
        MatcherBackend::Llm
    }
}
