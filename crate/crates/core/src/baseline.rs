//! Feature-based baseline: sparse pair features and a one-vs-rest linear
//! max-margin classifier trained by stochastic subgradient descent.

use std::collections::{BTreeSet, HashMap};
use std::path::Path;

use ndarray::Array2;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::checkpoint::{CheckpointError, Container};
use crate::corpus::{Corpus, Document};
use crate::eval::Prediction;
use crate::markers::{MarkerClass, MarkerLexicon};
use crate::rng;
use crate::text::{token_count, tokenize};
use crate::windowing::{build_examples, PairLabel, WindowConfig};

pub const LEXICON_SIZE: usize = 500;
pub const CHECKPOINT_KIND: &str = "linear-baseline";

#[derive(Debug, Error)]
pub enum BaselineError {
    #[error("degenerate training data: {0}")]
    Degenerate(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Common English function words.
pub const DEFAULT_STOPWORDS: &str = "a about above after again against all am an and any are as at be been before \
being below between both by can could did do does doing down during each few for from further had has have having \
he her here hers herself him himself his how i if in into is it its itself just me more most my myself no nor not \
now of off on once only or other our ours ourselves out over own same she should so some such than that the their \
theirs them themselves then there these they this those through to too under until up very was we were what when \
where which while who whom why will with would you your yours yourself yourselves also may might must shall upon \
within without";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Stopwords(BTreeSet<String>);

impl Default for Stopwords {
    fn default() -> Self {
        Self::parse(DEFAULT_STOPWORDS)
    }
}

impl Stopwords {
    /// Whitespace- or newline-separated words.
    pub fn parse(source: &str) -> Self {
        Self(source.split_whitespace().map(|w| w.to_lowercase()).collect())
    }

    pub fn from_file(path: &Path) -> Result<Self, BaselineError> {
        Ok(Self::parse(&std::fs::read_to_string(path)?))
    }

    pub fn contains(&self, word: &str) -> bool {
        self.0.contains(word)
    }
}

/// Lowercase and strip one suffix by a fixed rule list, keeping at least
/// three characters.
pub fn stem(word: &str) -> String {
    let w = word.to_lowercase();
    const RULES: [(&str, &str); 7] =
        [("ies", "y"), ("ing", ""), ("ed", ""), ("ly", ""), ("es", ""), ("ss", "ss"), ("s", "")];
    for (suffix, replacement) in RULES {
        if let Some(base) = w.strip_suffix(suffix) {
            if base.chars().count() + replacement.chars().count() >= 3 {
                return format!("{base}{replacement}");
            }
            break;
        }
    }
    w
}

fn is_word(token: &str) -> bool {
    token.chars().any(char::is_alphanumeric)
}

/// Most frequent stems of a corpus, ties broken alphabetically.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureLexicon {
    words: Vec<String>,
    #[serde(skip)]
    index: HashMap<String, usize>,
}

impl FeatureLexicon {
    pub fn new(words: Vec<String>) -> Self {
        let index = words.iter().enumerate().map(|(i, w)| (w.clone(), i)).collect();
        Self { words, index }
    }

    pub fn build(corpus: &Corpus, size: usize) -> Self {
        let mut counts: HashMap<String, usize> = HashMap::new();
        for doc in &corpus.documents {
            for p in &doc.propositions {
                for t in tokenize(&p.text).iter().filter(|t| is_word(t)) {
                    *counts.entry(stem(t)).or_default() += 1;
                }
            }
        }
        let mut ranked: Vec<(String, usize)> = counts.into_iter().collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        Self::new(ranked.into_iter().take(size).map(|(w, _)| w).collect())
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn get(&self, stem: &str) -> Option<usize> {
        self.index.get(stem).copied()
    }

    fn reindex(&mut self) {
        self.index = self.words.iter().enumerate().map(|(i, w)| (w.clone(), i)).collect();
    }
}

/// Optional part-of-speech tagger; no tagger ships with the crate.
pub trait PosTagger {
    /// The closed tag inventory, in feature order.
    fn tagset(&self) -> &[String];
    /// One tag per token.
    fn tag(&self, tokens: &[String]) -> Vec<String>;
}

/// Raw structural measurements of a pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Structural {
    pub head_tokens: usize,
    pub tail_tokens: usize,
    pub between: usize,
    pub tail_before_head: bool,
    pub head_before_tail: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairFeatures {
    /// Lexicon indices present in the head, ascending.
    pub head_lexical: Vec<usize>,
    pub tail_lexical: Vec<usize>,
    pub structural: Structural,
    /// Marker class present, by [head, tail, between] then class order.
    pub indicators: [[bool; 3]; 3],
    pub shared_count: usize,
    /// Tag indices present in head then tail, when a tagger is plugged in.
    pub head_pos: Vec<usize>,
    pub tail_pos: Vec<usize>,
}

/// Number of dense (non-lexical) slots.
const STRUCTURAL: usize = 5;
const INDICATORS: usize = 9;
const SHARED: usize = 2;

/// Sizes needed to lay out sparse vectors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureLayout {
    pub lexicon: usize,
    pub tags: usize,
}

impl FeatureLayout {
    pub fn dim(&self) -> usize {
        2 * self.lexicon + STRUCTURAL + INDICATORS + SHARED + 2 * self.tags
    }
}

impl PairFeatures {
    /// Sorted (index, value) pairs. Counts enter as `ln(1 + x)`.
    pub fn to_sparse(&self, layout: &FeatureLayout) -> Vec<(usize, f64)> {
        let mut out = Vec::new();
        let l = layout.lexicon;
        out.extend(self.head_lexical.iter().map(|&i| (i, 1.0)));
        out.extend(self.tail_lexical.iter().map(|&i| (l + i, 1.0)));
        let base = 2 * l;
        let s = &self.structural;
        let dense = [
            (s.head_tokens as f64).ln_1p(),
            (s.tail_tokens as f64).ln_1p(),
            (s.between as f64).ln_1p(),
            f64::from(u8::from(s.tail_before_head)),
            f64::from(u8::from(s.head_before_tail)),
        ];
        out.extend(dense.iter().enumerate().filter(|(_, v)| **v != 0.0).map(|(k, &v)| (base + k, v)));
        let base = base + STRUCTURAL;
        for (where_, row) in self.indicators.iter().enumerate() {
            for (c, &on) in row.iter().enumerate() {
                if on {
                    out.push((base + where_ * 3 + c, 1.0));
                }
            }
        }
        let base = base + INDICATORS;
        if self.shared_count > 0 {
            out.push((base, (self.shared_count as f64).ln_1p()));
            out.push((base + 1, 1.0));
        }
        let base = base + SHARED;
        out.extend(self.head_pos.iter().map(|&i| (base + i, 1.0)));
        out.extend(self.tail_pos.iter().map(|&i| (base + layout.tags + i, 1.0)));
        out
    }
}

/// Everything feature extraction consults besides the document.
pub struct Extractor<'a> {
    pub lexicon: &'a FeatureLexicon,
    pub stopwords: &'a Stopwords,
    pub markers: &'a MarkerLexicon,
    pub tagger: Option<&'a dyn PosTagger>,
}

impl Extractor<'_> {
    pub fn layout(&self) -> FeatureLayout {
        FeatureLayout { lexicon: self.lexicon.len(), tags: self.tagger.map_or(0, |t| t.tagset().len()) }
    }

    fn lexical(&self, tokens: &[String]) -> Vec<usize> {
        let set: BTreeSet<usize> = tokens.iter().filter_map(|t| self.lexicon.get(&stem(t))).collect();
        set.into_iter().collect()
    }

    fn content(&self, tokens: &[String]) -> BTreeSet<String> {
        tokens
            .iter()
            .filter(|t| t.chars().count() >= 4 && is_word(t) && !self.stopwords.contains(t))
            .cloned()
            .collect()
    }

    fn classes(&self, tokens: &[String]) -> [bool; 3] {
        let mut out = [false; 3];
        for m in self.markers.match_tokens(tokens) {
            if let Some(c) = MarkerClass::of(&m) {
                out[c.index()] = true;
            }
        }
        out
    }

    fn tags(&self, tokens: &[String]) -> Vec<usize> {
        let Some(tagger) = self.tagger else { return Vec::new() };
        let set = tagger.tagset();
        let found: BTreeSet<usize> =
            tagger.tag(tokens).iter().filter_map(|t| set.iter().position(|s| s == t)).collect();
        found.into_iter().collect()
    }

    pub fn extract(&self, doc: &Document, head: usize, tail: usize) -> PairFeatures {
        let tok = |i: usize| tokenize(&doc.propositions[i].text);
        let (h, t) = (tok(head), tok(tail));
        let (lo, hi) = (head.min(tail), head.max(tail));
        let mut between = [false; 3];
        for i in lo + 1..hi {
            for (slot, on) in between.iter_mut().zip(self.classes(&tok(i))) {
                *slot |= on;
            }
        }
        PairFeatures {
            head_lexical: self.lexical(&h),
            tail_lexical: self.lexical(&t),
            structural: Structural {
                head_tokens: h.len(),
                tail_tokens: t.len(),
                between: hi - lo - usize::from(hi > lo),
                tail_before_head: tail < head,
                head_before_tail: head < tail,
            },
            indicators: [self.classes(&h), self.classes(&t), between],
            shared_count: self.content(&h).intersection(&self.content(&t)).count(),
            head_pos: self.tags(&h),
            tail_pos: self.tags(&t),
        }
    }
}

// ---------------------------------------------------------------------------
// Linear model

/// One weight row per class over `[features..., bias]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    pub weights: Vec<Vec<f64>>,
    pub reg: f64,
}

impl LinearModel {
    pub fn zeros(dim: usize, reg: f64) -> Self {
        Self { weights: vec![vec![0.0; dim + 1]; 3], reg }
    }

    pub fn dim(&self) -> usize {
        self.weights[0].len() - 1
    }

    pub fn score(&self, class: usize, x: &[(usize, f64)]) -> f64 {
        let w = &self.weights[class];
        w[w.len() - 1] + x.iter().map(|&(i, v)| w[i] * v).sum::<f64>()
    }

    pub fn is_finite(&self) -> bool {
        self.weights.iter().flatten().all(|v| v.is_finite())
    }

    pub fn norm(&self) -> f64 {
        self.weights.iter().flatten().map(|v| v * v).sum::<f64>().sqrt()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LinearConfig {
    /// L2 strength.
    pub reg: f64,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for LinearConfig {
    fn default() -> Self {
        Self { reg: 1e-4, epochs: 20, seed: 0 }
    }
}

/// Hinge loss `max(0, 1 - y·s)`.
pub fn hinge(y: f64, score: f64) -> f64 {
    (1.0 - y * score).max(0.0)
}

/// One-vs-rest hinge loss with L2, trained by Pegasos-style subgradient
/// steps with step size `1 / (reg · t)`. The bias is the last weight.
pub fn train_linear(
    xs: &[Vec<(usize, f64)>],
    labels: &[PairLabel],
    dim: usize,
    cfg: &LinearConfig,
) -> Result<LinearModel, BaselineError> {
    if xs.len() != labels.len() {
        return Err(BaselineError::Config("features and labels differ in length".into()));
    }
    if !(cfg.reg > 0.0) {
        return Err(BaselineError::Config("reg must be positive".into()));
    }
    let present: BTreeSet<PairLabel> = labels.iter().copied().collect();
    if present.len() < 2 {
        return Err(BaselineError::Degenerate(format!("{} class(es) present, need two", present.len())));
    }
    let mut model = LinearModel::zeros(dim, cfg.reg);
    let mut shuffle = rng::substream(cfg.seed, "linear-shuffle");
    let mut order: Vec<usize> = (0..xs.len()).collect();
    for class in 0..3 {
        let w = &mut model.weights[class];
        // w = scale · v keeps the shrink step O(1)
        let mut v = vec![0.0; dim + 1];
        let mut scale = 1.0;
        let mut t = 0usize;
        for _ in 0..cfg.epochs {
            order.shuffle(&mut shuffle);
            for &k in &order {
                t += 1;
                let eta = 1.0 / (cfg.reg * t as f64);
                let y = if labels[k].index() == class { 1.0 } else { -1.0 };
                let x = &xs[k];
                let s = scale * (v[dim] + x.iter().map(|&(i, val)| v[i] * val).sum::<f64>());
                let shrink = 1.0 - eta * cfg.reg;
                if shrink <= 0.0 {
                    v.iter_mut().for_each(|e| *e = 0.0);
                    scale = 1.0;
                } else {
                    scale *= shrink;
                }
                if y * s < 1.0 {
                    let step = eta * y / scale;
                    for &(i, val) in x {
                        v[i] += step * val;
                    }
                    v[dim] += step;
                }
                if scale < 1e-9 {
                    v.iter_mut().for_each(|e| *e *= scale);
                    scale = 1.0;
                }
            }
        }
        *w = v.into_iter().map(|e| e * scale).collect();
    }
    Ok(model)
}

/// Argmax over class scores; ties go to the earlier of support, attack, no_rel.
pub fn predict_linear(model: &LinearModel, x: &[(usize, f64)]) -> PairLabel {
    let mut best = 0;
    let mut best_score = model.score(0, x);
    for c in 1..3 {
        let s = model.score(c, x);
        if s > best_score {
            best = c;
            best_score = s;
        }
    }
    PairLabel::from_index(best)
}

// ---------------------------------------------------------------------------
// Whole baseline

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Baseline {
    pub lexicon: FeatureLexicon,
    pub stopwords: Stopwords,
    pub model: LinearModel,
    pub layout: FeatureLayout,
}

#[derive(Serialize, Deserialize)]
struct StoredBaseline {
    lexicon: Vec<String>,
    stopwords: Stopwords,
    reg: f64,
    layout: FeatureLayout,
}

impl Baseline {
    fn extractor<'a>(&'a self, markers: &'a MarkerLexicon) -> Extractor<'a> {
        Extractor { lexicon: &self.lexicon, stopwords: &self.stopwords, markers, tagger: None }
    }

    pub fn to_container(&self) -> Container {
        let header = StoredBaseline {
            lexicon: self.lexicon.words.clone(),
            stopwords: self.stopwords.clone(),
            reg: self.model.reg,
            layout: self.layout,
        };
        let cols = self.model.dim() + 1;
        let flat: Vec<f64> = self.model.weights.iter().flatten().copied().collect();
        let weights = Array2::from_shape_vec((3, cols), flat).expect("three rows of equal width");
        Container {
            kind: CHECKPOINT_KIND.into(),
            meta: serde_json::to_value(header).expect("header serializes"),
            tensors: vec![("weights".into(), weights)],
        }
    }

    pub fn from_container(mut c: Container) -> Result<Self, BaselineError> {
        if c.kind != CHECKPOINT_KIND {
            return Err(BaselineError::Config(format!("container holds `{}`", c.kind)));
        }
        let header: StoredBaseline =
            serde_json::from_value(c.meta.clone()).map_err(|e| BaselineError::Checkpoint(e.into()))?;
        let w = c.take("weights").ok_or_else(|| BaselineError::Config("missing weights".into()))?;
        if w.nrows() != 3 || w.ncols() != header.layout.dim() + 1 {
            return Err(BaselineError::Config("weight shape disagrees with layout".into()));
        }
        let mut lexicon = FeatureLexicon { words: header.lexicon, index: HashMap::new() };
        lexicon.reindex();
        Ok(Self {
            lexicon,
            stopwords: header.stopwords,
            model: LinearModel { weights: w.rows().into_iter().map(|r| r.to_vec()).collect(), reg: header.reg },
            layout: header.layout,
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), BaselineError> {
        Ok(self.to_container().save(path)?)
    }

    pub fn load(path: &Path) -> Result<Self, BaselineError> {
        Self::from_container(Container::load(path)?)
    }

    /// Predicted labels for every windowed pair of `corpus`.
    pub fn predict(&self, corpus: &Corpus, window: &WindowConfig) -> Vec<Prediction> {
        let markers = MarkerLexicon::default();
        let ex = self.extractor(&markers);
        let mut out = Vec::new();
        for doc in &corpus.documents {
            for pair in build_examples(doc, window, &token_count) {
                let x = ex.extract(doc, pair.head, pair.tail).to_sparse(&self.layout);
                out.push(Prediction {
                    doc_id: pair.doc_id,
                    head: pair.head,
                    tail: pair.tail,
                    label: predict_linear(&self.model, &x),
                });
            }
        }
        out
    }
}

/// Fit the lexicon and the linear model on the windowed pairs of `corpus`.
pub fn train_baseline(
    corpus: &Corpus,
    window: &WindowConfig,
    cfg: &LinearConfig,
    stopwords: Stopwords,
) -> Result<Baseline, BaselineError> {
    let lexicon = FeatureLexicon::build(corpus, LEXICON_SIZE);
    let markers = MarkerLexicon::default();
    let ex = Extractor { lexicon: &lexicon, stopwords: &stopwords, markers: &markers, tagger: None };
    let layout = ex.layout();
    let (mut xs, mut labels) = (Vec::new(), Vec::new());
    for doc in &corpus.documents {
        for pair in build_examples(doc, window, &token_count) {
            xs.push(ex.extract(doc, pair.head, pair.tail).to_sparse(&layout));
            labels.push(pair.label);
        }
    }
    let model = train_linear(&xs, &labels, layout.dim(), cfg)?;
    Ok(Baseline { lexicon, stopwords, model, layout })
}
