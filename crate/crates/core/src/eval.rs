//! Confusion matrices, per-class and macro F1, and Fleiss' kappa.

use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::Corpus;
use crate::relhead::ScoredPair;
use crate::text::token_count;
use crate::windowing::{build_examples, PairLabel, WindowConfig};

#[derive(Debug, Error, PartialEq)]
pub enum EvalError {
    #[error("undefined input: {0}")]
    UndefinedInput(String),
    #[error("configuration error: {0}")]
    Config(String),
}

/// Counts indexed by `[gold][predicted]` over (support, attack, no_rel).
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub counts: [[u64; 3]; 3],
}

impl ConfusionMatrix {
    pub fn from_counts(counts: [[u64; 3]; 3]) -> Self {
        Self { counts }
    }

    pub fn add(&mut self, gold: PairLabel, predicted: PairLabel) {
        self.counts[gold.index()][predicted.index()] += 1;
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn merge(&mut self, other: &ConfusionMatrix) {
        for g in 0..3 {
            for p in 0..3 {
                self.counts[g][p] += other.counts[g][p];
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassScores {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Gold examples of the class.
    pub support: u64,
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 { 0.0 } else { num as f64 / den as f64 }
}

/// Precision, recall and F1 per class; every 0/0 is 0.
pub fn class_scores(cm: &ConfusionMatrix) -> [ClassScores; 3] {
    std::array::from_fn(|c| {
        let tp = cm.counts[c][c];
        let gold: u64 = cm.counts[c].iter().sum();
        let predicted: u64 = (0..3).map(|g| cm.counts[g][c]).sum();
        let precision = ratio(tp, predicted);
        let recall = ratio(tp, gold);
        let f1 = if precision + recall == 0.0 { 0.0 } else { 2.0 * precision * recall / (precision + recall) };
        ClassScores { precision, recall, f1, support: gold }
    })
}

/// Macro F1 over all three classes, or over support and no_rel when the
/// corpus carries no attack relations.
pub fn macro_f1(cm: &ConfusionMatrix, corpus_has_attack: bool) -> Result<f64, EvalError> {
    if cm.total() == 0 {
        return Err(EvalError::UndefinedInput("empty confusion matrix".into()));
    }
    let scores = class_scores(cm);
    let classes: &[PairLabel] = if corpus_has_attack {
        &PairLabel::ALL
    } else {
        &[PairLabel::Support, PairLabel::NoRel]
    };
    Ok(classes.iter().map(|c| scores[c.index()].f1).sum::<f64>() / classes.len() as f64)
}

/// Per-item category counts; every row sums to the same number of raters.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RatingTable {
    rows: Vec<Vec<u64>>,
    raters: u64,
}

impl RatingTable {
    pub fn new(rows: Vec<Vec<u64>>) -> Result<Self, EvalError> {
        let Some(first) = rows.first() else {
            return Err(EvalError::UndefinedInput("no rated items".into()));
        };
        let raters: u64 = first.iter().sum();
        let width = first.len();
        if rows.iter().any(|r| r.len() != width || r.iter().sum::<u64>() != raters) {
            return Err(EvalError::UndefinedInput("items have differing rater counts".into()));
        }
        if raters < 2 {
            return Err(EvalError::UndefinedInput("at least two raters required".into()));
        }
        Ok(Self { rows, raters })
    }

    pub fn rows(&self) -> &[Vec<u64>] {
        &self.rows
    }

    pub fn raters(&self) -> u64 {
        self.raters
    }
}

/// Fleiss' kappa `(P - Pe) / (1 - Pe)`.
pub fn fleiss_kappa(table: &RatingTable) -> Result<f64, EvalError> {
    let n = table.raters as f64;
    let items = table.rows.len() as f64;
    let k = table.rows[0].len();
    let mut category_totals = vec![0.0; k];
    let mut agreement = 0.0;
    for row in &table.rows {
        let mut sq = 0.0;
        for (j, &c) in row.iter().enumerate() {
            category_totals[j] += c as f64;
            sq += (c * c) as f64;
        }
        agreement += (sq - n) / (n * (n - 1.0));
    }
    let p_bar = agreement / items;
    let p_e: f64 = category_totals.iter().map(|t| (t / (items * n)).powi(2)).sum();
    let perfect = table.rows.iter().all(|r| r.iter().filter(|&&c| c > 0).count() == 1);
    if perfect {
        return Ok(1.0);
    }
    if (1.0 - p_e).abs() < f64::EPSILON {
        return Err(EvalError::UndefinedInput("all ratings fall in one category".into()));
    }
    Ok((p_bar - p_e) / (1.0 - p_e))
}

/// One predicted pair label.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Prediction {
    pub doc_id: String,
    pub head: usize,
    pub tail: usize,
    pub label: PairLabel,
}

impl From<&ScoredPair> for Prediction {
    fn from(p: &ScoredPair) -> Self {
        Self { doc_id: p.doc_id.clone(), head: p.head, tail: p.tail, label: p.predicted }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub macro_f1: f64,
    /// Macro average excludes attack.
    pub two_class: bool,
    pub support: ClassScores,
    pub attack: ClassScores,
    pub no_rel: ClassScores,
    pub confusion: ConfusionMatrix,
    pub pairs: u64,
}

impl Metrics {
    pub fn from_confusion(cm: ConfusionMatrix, corpus_has_attack: bool) -> Result<Self, EvalError> {
        let macro_f1 = macro_f1(&cm, corpus_has_attack)?;
        let [support, attack, no_rel] = class_scores(&cm);
        Ok(Self { macro_f1, two_class: !corpus_has_attack, support, attack, no_rel, confusion: cm, pairs: cm.total() })
    }
}

/// Score predictions against the windowed gold pairs of `gold`. The
/// prediction set must be exactly the pairs `cfg` derives from `gold`.
pub fn evaluate(predictions: &[Prediction], gold: &Corpus, cfg: &WindowConfig) -> Result<Metrics, EvalError> {
    let mut expected: HashMap<(&str, usize, usize), PairLabel> = HashMap::new();
    for doc in &gold.documents {
        for ex in build_examples(doc, cfg, &token_count) {
            let label = ex.label;
            expected.insert((doc.doc_id.as_str(), ex.head, ex.tail), label);
        }
    }
    let mut seen = BTreeSet::new();
    let mut cm = ConfusionMatrix::default();
    for p in predictions {
        let key = (p.doc_id.as_str(), p.head, p.tail);
        let Some(&gold_label) = expected.get(&key) else {
            return Err(EvalError::Config(format!(
                "prediction ({}, {}, {}) is not a windowed pair of the gold corpus",
                p.doc_id, p.head, p.tail
            )));
        };
        if !seen.insert(key) {
            return Err(EvalError::Config(format!("pair ({}, {}, {}) predicted twice", p.doc_id, p.head, p.tail)));
        }
        cm.add(gold_label, p.label);
    }
    if seen.len() != expected.len() {
        return Err(EvalError::Config(format!(
            "{} of {} windowed gold pairs have no prediction",
            expected.len() - seen.len(),
            expected.len()
        )));
    }
    Metrics::from_confusion(cm, gold.has_attack())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::fixtures::doc;
    use crate::corpus::RelationLabel::*;
    use crate::corpus::Split;
    use crate::windowing::WindowMode;

    #[test]
    fn perfect_diagonal() {
        let cm = ConfusionMatrix::from_counts([[3, 0, 0], [0, 2, 0], [0, 0, 9]]);
        assert_eq!(macro_f1(&cm, true).unwrap(), 1.0);
        assert_eq!(macro_f1(&cm, false).unwrap(), 1.0);
    }

    #[test]
    fn all_no_rel_two_class() {
        let cm = ConfusionMatrix::from_counts([[0, 0, 2], [0, 0, 0], [0, 0, 2]]);
        let m = macro_f1(&cm, false).unwrap();
        assert!((m - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn absent_class_counts_as_zero() {
        let cm = ConfusionMatrix::from_counts([[2, 0, 0], [0, 0, 0], [0, 0, 2]]);
        assert!((macro_f1(&cm, true).unwrap() - 2.0 / 3.0).abs() < 1e-15);
        assert!(macro_f1(&ConfusionMatrix::default(), true).is_err());
    }

    #[test]
    fn kappa_fixtures() {
        let unanimous = RatingTable::new(vec![vec![3, 0, 0], vec![0, 3, 0], vec![0, 0, 3], vec![3, 0, 0], vec![0, 3, 0]]).unwrap();
        assert_eq!(fleiss_kappa(&unanimous).unwrap(), 1.0);
        let one_category = RatingTable::new(vec![vec![2, 0], vec![2, 0]]).unwrap();
        assert_eq!(fleiss_kappa(&one_category).unwrap(), 1.0);
        // hand evaluation: p = (3/4, 1/4), P = (0 + 1)/2, Pe = 10/16
        let t = RatingTable::new(vec![vec![1, 1], vec![2, 0]]).unwrap();
        assert!((fleiss_kappa(&t).unwrap() - (-1.0 / 3.0)).abs() < 1e-12);
        assert!(RatingTable::new(vec![vec![1, 1], vec![3, 0]]).is_err());
        assert!(RatingTable::new(vec![vec![1, 0]]).is_err());
        assert!(RatingTable::new(vec![]).is_err());
    }

    #[test]
    fn evaluate_requires_matching_windows() {
        let gold = Corpus::new(vec![doc("a", 4, &[(0, 1, Support)])], Split::Test);
        let cfg = WindowConfig { window: 2, max_tokens: 512, mode: WindowMode::HeadGiven };
        let preds: Vec<Prediction> = build_examples(&gold.documents[0], &cfg, &token_count)
            .into_iter()
            .map(|e| Prediction { doc_id: e.doc_id, head: e.head, tail: e.tail, label: e.label })
            .collect();
        let m = evaluate(&preds, &gold, &cfg).unwrap();
        assert_eq!(m.macro_f1, 1.0);
        assert!(m.two_class);
        assert_eq!(m.pairs, 2);
        assert!(evaluate(&preds[..1], &gold, &cfg).is_err());
        let wider = WindowConfig { window: 3, ..cfg };
        assert!(evaluate(&preds, &gold, &wider).is_err());
        let mut dup = preds.clone();
        dup.push(preds[0].clone());
        assert!(evaluate(&dup, &gold, &cfg).is_err());
    }
}
