//! Windowed head-tail pair construction.
//!
//! Each head proposition is paired with the propositions at most `window`
//! positions away. When the window exceeds the encoder's token budget, the
//! farthest propositions are dropped, alternating left then right.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Document, RelationLabel};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum WindowError {
    #[error("invalid window config: {0}")]
    Config(String),
    #[error("undefined input: {0}")]
    UndefinedInput(&'static str),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WindowMode {
    /// Only gold heads are paired.
    HeadGiven,
    /// Every proposition is a potential head.
    EndToEnd,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct WindowConfig {
    /// Propositions considered on each side of the head.
    pub window: usize,
    /// Token budget including one separator per proposition.
    pub max_tokens: usize,
    pub mode: WindowMode,
}

impl Default for WindowConfig {
    fn default() -> Self {
        Self { window: 20, max_tokens: 512, mode: WindowMode::HeadGiven }
    }
}

impl WindowConfig {
    pub fn validate(&self) -> Result<(), WindowError> {
        if self.window < 1 {
            return Err(WindowError::Config("window must be at least 1".into()));
        }
        if self.max_tokens < 16 {
            return Err(WindowError::Config("max_tokens must be at least 16".into()));
        }
        Ok(())
    }
}

/// Three-way pair label; the index order is the classifier's output order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairLabel {
    Support,
    Attack,
    NoRel,
}

impl PairLabel {
    pub const ALL: [PairLabel; 3] = [PairLabel::Support, PairLabel::Attack, PairLabel::NoRel];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> PairLabel {
        PairLabel::ALL[i]
    }

    pub fn is_positive(self) -> bool {
        self != PairLabel::NoRel
    }

    pub fn name(self) -> &'static str {
        match self {
            PairLabel::Support => "support",
            PairLabel::Attack => "attack",
            PairLabel::NoRel => "no_rel",
        }
    }
}

impl From<Option<RelationLabel>> for PairLabel {
    fn from(label: Option<RelationLabel>) -> Self {
        match label {
            Some(RelationLabel::Support) => PairLabel::Support,
            Some(RelationLabel::Attack) => PairLabel::Attack,
            None => PairLabel::NoRel,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairExample {
    pub doc_id: String,
    pub head: usize,
    pub tail: usize,
    pub label: PairLabel,
    /// Retained proposition ids in document order, head included.
    pub context: Vec<usize>,
}

/// Retained context of `head` after applying the window and the token budget.
pub fn head_context(
    n_props: usize,
    head: usize,
    cfg: &WindowConfig,
    token_len: impl Fn(usize) -> usize,
) -> Vec<usize> {
    let mut lo = head.saturating_sub(cfg.window);
    let mut hi = (head + cfg.window).min(n_props - 1);
    let cost = |i: usize| token_len(i) + 1;
    let mut total: usize = (lo..=hi).map(cost).sum();
    let mut left_next = true;
    while total > cfg.max_tokens && (lo < head || hi > head) {
        let take_left = if left_next { lo < head } else { hi == head };
        if take_left {
            total -= cost(lo);
            lo += 1;
        } else {
            total -= cost(hi);
            hi -= 1;
        }
        left_next = !take_left;
    }
    (lo..=hi).collect()
}

/// Heads paired under `mode`.
pub fn heads_for(doc: &Document, mode: WindowMode) -> Vec<usize> {
    match mode {
        WindowMode::HeadGiven => doc.heads(),
        WindowMode::EndToEnd => (0..doc.len()).collect(),
    }
}

/// Pair examples for one document. `token_len` gives the token count of a
/// proposition text.
pub fn build_examples(
    doc: &Document,
    cfg: &WindowConfig,
    token_len: &dyn Fn(&str) -> usize,
) -> Vec<PairExample> {
    if doc.is_empty() {
        return Vec::new();
    }
    let lens: Vec<usize> = doc.propositions.iter().map(|p| token_len(&p.text)).collect();
    let mut out = Vec::new();
    for head in heads_for(doc, cfg.mode) {
        let context = head_context(doc.len(), head, cfg, |i| lens[i]);
        for &tail in &context {
            if tail == head {
                continue;
            }
            out.push(PairExample {
                doc_id: doc.doc_id.clone(),
                head,
                tail,
                label: doc.gold_label(head, tail).into(),
                context: context.clone(),
            });
        }
    }
    out
}

/// Share of support and attack examples.
pub fn positive_ratio(examples: &[PairExample]) -> Result<f64, WindowError> {
    if examples.is_empty() {
        return Err(WindowError::UndefinedInput("no examples"));
    }
    let positives = examples.iter().filter(|e| e.label.is_positive()).count();
    Ok(positives as f64 / examples.len() as f64)
}
