//! Rule-based extraction and matching.
//!
//! Extraction splits text into sentences, drops reasoning scaffolding and
//! plan statements, splits sentences into coordinated clauses and reduces
//! each clause to a finding phrase. A negation cue (`no`, `without`, ...)
//! negates a clause when it sits at most [`NEGATION_WINDOW`] tokens before
//! the head of the finding phrase; negation distributes over bare coordinated
//! noun phrases (`no effusion or edema`). Postfix cues (`... is absent`)
//! also negate. Negated findings are emitted as `no <finding>`.

use std::collections::HashSet;

use super::{
    normalize, Matcher, MatcherBackend, ObsError, ObsRole, Observation, ObservationSet, Polarity, SynonymTable,
};

/// Maximum distance (in tokens) between a negation cue and the finding head.
pub const NEGATION_WINDOW: usize = 4;

/// Leading discourse scaffolding, stripped before clause analysis.
const SCAFFOLDING: &[&str] = &[
    "based on the given images",
    "based on the given image",
    "based on the images",
    "based on the image",
    "based on these findings",
    "based on these observations",
    "upon reviewing the chest x ray images",
    "upon reviewing the images",
    "upon carefully comparing the images",
    "in conclusion",
    "in summary",
    "to summarize",
    "the images reveal",
    "the image reveals",
    "the images show",
    "the image shows",
    "the chest x ray shows",
    "the findings that align best with the observations are",
    "the findings indicate",
    "this suggests",
    "this indicates",
    "we observe",
    "i observe",
    "i notice",
    "first",
    "second",
    "third",
    "next",
    "then",
    "finally",
    "besides",
    "additionally",
    "moreover",
    "furthermore",
    "also",
    "however",
    "overall",
    "therefore",
    "thus",
    "notably",
];

/// Sentences opening with these describe what to check, not what was seen.
const PLAN_OPENERS: &[&str] = &[
    "assess",
    "assessing",
    "evaluate",
    "evaluating",
    "check",
    "checking",
    "consider",
    "considering",
    "examine",
    "examining",
    "look",
    "looking",
    "to determine",
    "to assess",
    "to evaluate",
    "key features",
    "the analysis begins",
    "i will",
    "i need",
    "we begin",
    "let us",
];

const NEGATION_CUES: &[&str] = &["no", "not", "without", "absence", "negative", "nor", "free"];

/// Tokens that may precede a finding head without being part of it.
const LEADING_FILLER: &[&str] = &[
    "there",
    "is",
    "are",
    "was",
    "were",
    "has",
    "have",
    "been",
    "be",
    "shows",
    "show",
    "showed",
    "reveals",
    "reveal",
    "revealed",
    "demonstrates",
    "demonstrate",
    "appears",
    "seen",
    "noted",
    "observed",
    "visible",
    "any",
    "a",
    "an",
    "the",
    "of",
    "signs",
    "sign",
    "evidence",
    "indications",
    "indication",
    "findings",
    "finding",
    "suggestive",
    "definite",
    "obvious",
    "for",
    "to",
    "presence",
    "and",
    "or",
    "likely",
    "possibly",
    "probable",
    "probably",
    "these",
    "this",
    "which",
    "confirm",
    "confirms",
    "confirming",
    "diagnosis",
    "abnormality",
    "abnormalities",
    "indicating",
    "suggesting",
    "answer",
];

/// Heads of `<head> with <finding>` frames; the pair is dropped instead of
/// splitting the clause on `with`.
const WITH_FRAMES: &[&str] = &["consistent", "compatible", "associated"];

/// Filler tokens that indicate the clause carries its own verb frame.
const VERB_FRAME: &[&str] = &[
    "there",
    "is",
    "are",
    "was",
    "were",
    "has",
    "have",
    "shows",
    "show",
    "showed",
    "reveals",
    "reveal",
    "revealed",
    "demonstrates",
    "demonstrate",
    "appears",
];

const TRAILING_FILLER: &[&str] = &[
    "is",
    "are",
    "was",
    "were",
    "be",
    "seen",
    "noted",
    "observed",
    "present",
    "identified",
    "visible",
    "appreciated",
    "detected",
    "evident",
    "demonstrated",
];

const TRAILING_NEGATION: &[&str] = &["absent", "not"];

/// Tokens ignored when comparing finding heads under negation folding.
const FOLD_DROP: &[&str] = &[
    "no",
    "not",
    "without",
    "absent",
    "absence",
    "negative",
    "none",
    "free",
    "nor",
    "is",
    "are",
    "was",
    "were",
    "be",
    "been",
    "there",
    "of",
    "for",
    "a",
    "an",
    "the",
    "any",
    "signs",
    "sign",
    "evidence",
    "visible",
    "seen",
    "noted",
    "observed",
    "present",
    "identified",
    "to",
];

const COORDINATORS: &[&str] = &["and", "or", "nor", "but", "with"];

/// Deterministic matcher: normalization, optional synonym folding and
/// polarity agreement.
#[derive(Debug, Clone)]
pub struct LexicalMatcher {
    synonyms: Option<SynonymTable>,
    fold_negation: bool,
}

impl Default for LexicalMatcher {
    fn default() -> Self {
        Self::new(Some(SynonymTable::shipped()))
    }
}

impl LexicalMatcher {
    pub fn new(synonyms: Option<SynonymTable>) -> Self {
        Self {
            synonyms,
            fold_negation: true,
        }
    }

    /// Plain normalized-string equality: no synonyms, no negation folding.
    pub fn exact() -> Self {
        Self {
            synonyms: None,
            fold_negation: false,
        }
    }

    pub fn synonyms(&self) -> Option<&SynonymTable> {
        self.synonyms.as_ref()
    }

    /// Comparison key. Two observations match iff their keys are equal.
    pub fn match_key(&self, obs: &Observation) -> (Polarity, String) {
        if !self.fold_negation {
            return (obs.polarity, obs.normalized.clone());
        }
        let phrase = self
            .canonical(&obs.normalized)
            .unwrap_or(obs.normalized.as_str())
            .to_string();
        let head: Vec<&str> = phrase.split(' ').filter(|t| !FOLD_DROP.contains(t)).collect();
        let head = if head.is_empty() {
            phrase.clone()
        } else {
            head.join(" ")
        };
        let head = self.canonical(&head).unwrap_or(&head).to_string();
        let mut bag: Vec<&str> = head.split(' ').filter(|t| !FOLD_DROP.contains(t)).collect();
        if bag.is_empty() {
            bag = head.split(' ').collect();
        }
        bag.sort_unstable();
        (obs.polarity, bag.join(" "))
    }

    fn canonical(&self, phrase: &str) -> Option<&str> {
        self.synonyms.as_ref().and_then(|t| t.canonical(phrase))
    }
}

impl Matcher for LexicalMatcher {
    fn extract(&self, text: &str, role: ObsRole) -> Result<ObservationSet, ObsError> {
        extract_lexical(text, role)
    }

    fn matches(&self, a: &Observation, b: &Observation) -> Result<bool, ObsError> {
        Ok(self.match_key(a) == self.match_key(b))
    }

    fn intersect_count(&self, a: &ObservationSet, b: &ObservationSet) -> Result<usize, ObsError> {
        let keys: HashSet<_> = b.items().iter().map(|o| self.match_key(o)).collect();
        Ok(a.items().iter().filter(|o| keys.contains(&self.match_key(o))).count())
    }

    fn backend(&self) -> MatcherBackend {
        MatcherBackend::Lexical
    }
}

/// Lexical extraction; see the module docs for the rules.
pub(crate) fn extract_lexical(text: &str, role: ObsRole) -> Result<ObservationSet, ObsError> {
    if text.trim().is_empty() {
        return Err(ObsError::EmptyText);
    }
    let mut set = ObservationSet::new(role);
    for sentence in text.split(['.', ';', '!', '?', '\n']) {
        for obs in sentence_observations(sentence) {
            set.insert(obs);
        }
    }
    Ok(set)
}

fn strip_phrase<'a>(text: &'a str, phrase: &str) -> Option<&'a str> {
    let rest = text.strip_prefix(phrase)?;
    if rest.is_empty() || rest.starts_with(' ') || rest.starts_with(',') {
        Some(rest.trim_start_matches([' ', ',']))
    } else {
        None
    }
}

fn sentence_observations(sentence: &str) -> Vec<Observation> {
    // Keep commas as clause boundaries; everything else normalizes away.
    let pieces: Vec<String> = sentence.split(',').map(normalize).collect();
    let mut lowered = pieces
        .into_iter()
        .filter(|p| !p.is_empty())
        .collect::<Vec<_>>()
        .join(" , ");

    loop {
        let before = lowered.len();
        for phrase in SCAFFOLDING {
            if let Some(rest) = strip_phrase(&lowered, phrase) {
                lowered = rest.to_string();
            }
        }
        if lowered.len() == before {
            break;
        }
    }
    if lowered.is_empty() || PLAN_OPENERS.iter().any(|p| strip_phrase(&lowered, p).is_some()) {
        return Vec::new();
    }

    let mut out = Vec::new();
    let mut carry = false;
    for (sep, clause) in split_clauses(&lowered) {
        if sep == Some("but") {
            carry = false;
        }
        match analyze_clause(&clause, carry) {
            ClauseResult::Finding {
                phrase,
                negated,
                surface,
            } => {
                carry = negated;
                let normalized = if negated { format!("no {phrase}") } else { phrase };
                if let Ok(mut obs) = Observation::new(normalized) {
                    obs.surface = surface;
                    out.push(obs);
                }
            }
            ClauseResult::Empty { negated } => carry = carry || negated,
        }
    }
    out
}

/// Splits on commas and coordinating conjunctions, returning each clause
/// with the conjunction that introduced it.
fn split_clauses(sentence: &str) -> Vec<(Option<&'static str>, Vec<String>)> {
    let mut clauses = Vec::new();
    let mut current: Vec<String> = Vec::new();
    let mut sep: Option<&'static str> = None;
    for tok in sentence.split(' ') {
        if tok == "," {
            if !current.is_empty() {
                clauses.push((sep, std::mem::take(&mut current)));
            }
            sep = Some(",");
            continue;
        }
        if tok == "with" && current.last().is_some_and(|p| WITH_FRAMES.contains(&p.as_str())) {
            current.pop();
            continue;
        }
        if let Some(c) = COORDINATORS.iter().find(|c| **c == tok) {
            if !current.is_empty() {
                clauses.push((sep, std::mem::take(&mut current)));
            }
            // `, and` keeps the stronger conjunction.
            sep = Some(c);
            if *c == "nor" {
                current.push("nor".to_string());
            }
            continue;
        }
        current.push(tok.to_string());
    }
    if !current.is_empty() {
        clauses.push((sep, current));
    }
    clauses
}

enum ClauseResult {
    Finding {
        phrase: String,
        negated: bool,
        surface: String,
    },
    Empty {
        negated: bool,
    },
}

fn analyze_clause(tokens: &[String], carry: bool) -> ClauseResult {
    let surface = tokens.join(" ");
    let mut start = 0;
    let mut cue_at: Option<usize> = None;
    let mut has_verb = false;
    while start < tokens.len() {
        let t = tokens[start].as_str();
        if NEGATION_CUES.contains(&t) {
            cue_at = Some(start);
        } else if LEADING_FILLER.contains(&t) {
            has_verb |= VERB_FRAME.contains(&t);
        } else {
            break;
        }
        start += 1;
    }
    let mut end = tokens.len();
    let mut postfix_negation = false;
    while end > start {
        let t = tokens[end - 1].as_str();
        if TRAILING_NEGATION.contains(&t) {
            postfix_negation = true;
        } else if !TRAILING_FILLER.contains(&t) {
            break;
        }
        end -= 1;
    }
    // A clause opened by `nor` is negated as a whole.
    let nor_clause = tokens.first().is_some_and(|t| t == "nor");
    let prefix_negation = nor_clause || cue_at.is_some_and(|c| start - c <= NEGATION_WINDOW);
    if start >= end {
        return ClauseResult::Empty {
            negated: prefix_negation,
        };
    }
    let negated = prefix_negation || postfix_negation || (carry && cue_at.is_none() && !has_verb);
    ClauseResult::Finding {
        phrase: tokens[start..end].join(" "),
        negated,
        surface,
    }
}
