//! Token vocabulary with fixed special ids.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::corpus::Corpus;
use crate::text::tokenize;

pub const SEP: usize = 0;
pub const PAD: usize = 1;
pub const UNK: usize = 2;
pub const MASK: usize = 3;
pub const NUM_SPECIAL: usize = 4;
const SPECIAL_TOKENS: [&str; NUM_SPECIAL] = ["[SEP]", "[PAD]", "[UNK]", "[MASK]"];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "Vec<String>", into = "Vec<String>")]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl From<Vec<String>> for Vocab {
    fn from(tokens: Vec<String>) -> Self {
        let index = tokens
            .iter()
            .enumerate()
            .skip(NUM_SPECIAL)
            .map(|(i, t)| (t.clone(), i))
            .collect();
        Self { tokens, index }
    }
}

impl From<Vocab> for Vec<String> {
    fn from(v: Vocab) -> Self {
        v.tokens
    }
}

impl Vocab {
    /// Vocabulary of the given regular tokens, in order, after the specials.
    pub fn from_tokens<I: IntoIterator<Item = String>>(tokens: I) -> Self {
        let mut all: Vec<String> = SPECIAL_TOKENS.iter().map(|s| s.to_string()).collect();
        all.extend(tokens);
        Self::from(all)
    }

    /// Tokens occurring at least `min_count` times, ordered by descending
    /// frequency then lexicographically.
    pub fn build(corpus: &Corpus, min_count: usize) -> Self {
        let mut counts: HashMap<String, usize> = HashMap::new();
        for p in corpus.documents.iter().flat_map(|d| &d.propositions) {
            for t in tokenize(&p.text) {
                *counts.entry(t).or_insert(0) += 1;
            }
        }
        let mut kept: Vec<(String, usize)> = counts.into_iter().filter(|(_, c)| *c >= min_count).collect();
        kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        Self::from_tokens(kept.into_iter().map(|(t, _)| t))
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.len() <= NUM_SPECIAL
    }

    pub fn id(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(UNK)
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn contains(&self, token: &str) -> bool {
        self.index.contains_key(token)
    }

    pub fn encode(&self, text: &str) -> Vec<usize> {
        tokenize(text).iter().map(|t| self.id(t)).collect()
    }

    pub fn is_special(id: usize) -> bool {
        id < NUM_SPECIAL
    }
}
