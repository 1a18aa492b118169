//! Clinical observation extraction and semantic matching.
//!
//! Every reasoning metric and the process reward reduce to one primitive:
//! "how many observations of set A are matched somewhere in set B". The
//! [`Matcher`] trait provides extraction and pairwise matching; two
//! implementations exist, a deterministic [`LexicalMatcher`] and an
//! [`LlmMatcher`] that delegates judgments to a completion backend.

mod lexical;
mod llm;
mod synonyms;

use std::collections::HashSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::llm::LlmError;

pub use lexical::LexicalMatcher;
pub use llm::LlmMatcher;
pub use synonyms::{SynonymTable, SHIPPED_SYNONYMS_VERSION};

#[derive(Debug, Error)]
pub enum ObsError {
    #[error("cannot extract observations from empty text")]
    EmptyText,
    #[error("observation {0:?} normalizes to nothing")]
    EmptyObservation(String),
    #[error("unparseable {what} response after {attempts} attempt(s): {raw:?}")]
    Parse {
        what: &'static str,
        attempts: u32,
        raw: String,
    },
    #[error(transparent)]
    Llm(#[from] LlmError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Polarity {
    Present,
    AbsentOrNormal,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObsRole {
    Model,
    GroundTruth,
    Report,
}

impl ObsRole {
    pub fn as_str(self) -> &'static str {
        match self {
            ObsRole::Model => "model",
            ObsRole::GroundTruth => "ground_truth",
            ObsRole::Report => "report",
        }
    }
}

/// Which matcher implementation to use.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MatcherBackend {
    #[default]
    Lexical,
    Llm,
}

/// Tokens that put an observation in the absent-or-normal class.
const NORMALISH_TOKENS: &[&str] = &[
    "no",
    "not",
    "without",
    "absent",
    "absence",
    "negative",
    "none",
    "normal",
    "clear",
    "unremarkable",
];

/// Lowercases, replaces punctuation with spaces and collapses whitespace.
pub fn normalize(text: &str) -> String {
    let cleaned: String = text
        .chars()
        .flat_map(char::to_lowercase)
        .map(|c| if c.is_alphanumeric() { c } else { ' ' })
        .collect();
    cleaned.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn detect_polarity(normalized: &str) -> Polarity {
    if normalized.split(' ').any(|t| NORMALISH_TOKENS.contains(&t)) {
        Polarity::AbsentOrNormal
    } else {
        Polarity::Present
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Observation {
    pub surface: String,
    pub normalized: String,
    pub polarity: Polarity,
}

impl Observation {
    pub fn new(surface: impl Into<String>) -> Result<Self, ObsError> {
        let surface = surface.into();
        let normalized = normalize(&surface);
        if normalized.is_empty() {
            return Err(ObsError::EmptyObservation(surface));
        }
        let polarity = detect_polarity(&normalized);
        Ok(Self {
            surface,
            normalized,
            polarity,
        })
    }
}

/// A set of observations, deduplicated on the normalized form. Insertion
/// order is preserved.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ObservationSet {
    items: Vec<Observation>,
    pub role: ObsRole,
}

impl ObservationSet {
    pub fn new(role: ObsRole) -> Self {
        Self {
            items: Vec::new(),
            role,
        }
    }

    pub fn from_observations(role: ObsRole, obs: impl IntoIterator<Item = Observation>) -> Self {
        let mut set = Self::new(role);
        for o in obs {
            set.insert(o);
        }
        set
    }

    /// Convenience constructor from phrases; panics on phrases that normalize
    /// to nothing.
    pub fn from_phrases<S: AsRef<str>>(role: ObsRole, phrases: &[S]) -> Self {
        Self::from_observations(
            role,
            phrases
                .iter()
                .map(|p| Observation::new(p.as_ref()).expect("non-empty phrase")),
        )
    }

    /// Returns false if an item with the same normalized form was present.
    pub fn insert(&mut self, obs: Observation) -> bool {
        if self.items.iter().any(|o| o.normalized == obs.normalized) {
            return false;
        }
        self.items.push(obs);
        true
    }

    pub fn items(&self) -> &[Observation] {
        &self.items
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn normalized(&self) -> Vec<&str> {
        self.items.iter().map(|o| o.normalized.as_str()).collect()
    }
}

/// Extraction plus pairwise semantic matching.
pub trait Matcher: Send + Sync {
    fn extract(&self, text: &str, role: ObsRole) -> Result<ObservationSet, ObsError>;

    /// Whether `a` is matched by `b`. Direction matters for backends whose
    /// verdicts are not symmetric.
    fn matches(&self, a: &Observation, b: &Observation) -> Result<bool, ObsError>;

    /// Number of elements of `a` matched by at least one element of `b`.
    fn intersect_count(&self, a: &ObservationSet, b: &ObservationSet) -> Result<usize, ObsError> {
        let mut n = 0;
        for x in a.items() {
            for y in b.items() {
                if self.matches(x, y)? {
                    n += 1;
                    break;
                }
            }
        }
        Ok(n)
    }

    /// Elements of `a` with no match in `b`.
    fn unmatched<'a>(&self, a: &'a ObservationSet, b: &ObservationSet) -> Result<Vec<&'a Observation>, ObsError> {
        let mut out = Vec::new();
        for x in a.items() {
            let mut hit = false;
            for y in b.items() {
                if self.matches(x, y)? {
                    hit = true;
                    break;
                }
            }
            if !hit {
                out.push(x);
            }
        }
        Ok(out)
    }

    fn backend(&self) -> MatcherBackend;
}

pub fn extract_observations(text: &str, role: ObsRole, matcher: &dyn Matcher) -> Result<ObservationSet, ObsError> {
    matcher.extract(text, role)
}

pub fn matches(a: &Observation, b: &Observation, matcher: &dyn Matcher) -> Result<bool, ObsError> {
    matcher.matches(a, b)
}

pub fn intersect_count(a: &ObservationSet, b: &ObservationSet, matcher: &dyn Matcher) -> Result<usize, ObsError> {
    matcher.intersect_count(a, b)
}

pub fn is_normalish(obs: &Observation) -> bool {
    obs.polarity == Polarity::AbsentOrNormal
}

/// Distinct normalized forms, for callers that need plain set semantics.
pub fn normalized_set(set: &ObservationSet) -> HashSet<&str> {
    set.items().iter().map(|o| o.normalized.as_str()).collect()
}
