use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use super::TrainError;
use crate::rewards::{ANSWER_CLOSE, ANSWER_OPEN, THINK_CLOSE, THINK_OPEN};

pub const EOS: &str = "<eos>";
pub const EOS_ID: u32 = 0;

const TAGS: [&str; 4] = [THINK_OPEN, THINK_CLOSE, ANSWER_OPEN, ANSWER_CLOSE];
const PUNCT: &[char] = &['.', ',', ';', ':', '?', '!', '(', ')'];

/// Splits text into tag tokens, words and single punctuation marks.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut word = String::new();
    let flush = |word: &mut String, out: &mut Vec<String>| {
        if !word.is_empty() {
            out.push(std::mem::take(word));
        }
    };
    let mut rest = text;
    while let Some(c) = rest.chars().next() {
        if let Some(tag) = TAGS.iter().find(|t| rest.starts_with(**t)) {
            flush(&mut word, &mut out);
            out.push(tag.to_string());
            rest = &rest[tag.len()..];
            continue;
        }
        if c.is_whitespace() {
            flush(&mut word, &mut out);
        } else if PUNCT.contains(&c) {
            flush(&mut word, &mut out);
            out.push(c.to_string());
        } else {
            word.push(c);
        }
        rest = &rest[c.len_utf8()..];
    }
    flush(&mut word, &mut out);
    out
}

/// Output vocabulary. Id 0 is always the end token.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "Vec<String>", into = "Vec<String>")]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, u32>,
}

impl From<Vec<String>> for Vocab {
    fn from(tokens: Vec<String>) -> Self {
        let index = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i as u32)).collect();
        Self { tokens, index }
    }
}

impl From<Vocab> for Vec<String> {
    fn from(v: Vocab) -> Self {
        v.tokens
    }
}

impl Vocab {
    /// End token, the four tags, then the remaining tokens in sorted order.
    pub fn new<I, S>(tokens: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut all: Vec<String> = vec![EOS.into()];
        all.extend(TAGS.iter().map(|t| t.to_string()));
        let rest: BTreeSet<String> = tokens
            .into_iter()
            .map(Into::into)
            .filter(|t| !all.contains(t))
            .collect();
        all.extend(rest);
        Self::from(all)
    }

    pub fn from_texts<'a>(texts: impl IntoIterator<Item = &'a str>) -> Self {
        Self::new(texts.into_iter().flat_map(tokenize))
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn id(&self, token: &str) -> Option<u32> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: u32) -> &str {
        &self.tokens[id as usize]
    }

    pub fn encode(&self, text: &str) -> Result<Vec<u32>, TrainError> {
        tokenize(text)
            .into_iter()
            .map(|t| self.id(&t).ok_or(TrainError::UnknownToken(t)))
            .collect()
    }

    /// Renders ids as text. Tags attach without spaces; the end token and
    /// anything after it are dropped.
    pub fn decode(&self, ids: &[u32]) -> String {
        let mut out = String::new();
        let mut after_word = false;
        for &id in ids {
            if id == EOS_ID {
                break;
            }
            let t = self.token(id);
            if TAGS.contains(&t) {
                out.push_str(t);
                after_word = false;
            } else {
                if after_word {
                    out.push(' ');
                }
                out.push_str(t);
                after_word = true;
            }
        }
        out
    }
}

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

/// 64-bit FNV-1a; stable across platforms and releases.
pub fn fnv1a(chunks: &[&[u8]]) -> u64 {
    let mut h = FNV_OFFSET;
    for chunk in chunks {
        for b in *chunk {
            h ^= u64::from(*b);
            h = h.wrapping_mul(FNV_PRIME);
        }
    }
    h
}

/// Conditioning input. Only its hash reaches the policy, so prompt tokens
/// need not be in the output vocabulary.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Prompt {
    pub tokens: Vec<String>,
    pub hash: u64,
}

impl Prompt {
    pub fn new(tokens: Vec<String>) -> Self {
        let joined = tokens.join("\u{1f}");
        let hash = fnv1a(&[joined.as_bytes()]);
        Self { tokens, hash }
    }

    pub fn from_text(text: &str) -> Self {
        Self::new(tokenize(text))
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}
