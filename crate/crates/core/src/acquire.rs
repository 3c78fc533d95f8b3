//! Acquisition strategies choosing which unlabeled propositions to label next.

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::Document;
use crate::encoder::EncodeMode;
use crate::markers::MarkerLexicon;
use crate::relhead::{score_examples, proposition_representations, Checkpoint, LabelDistribution, RelHeadError};
use crate::rng::{self, derive_seed};
use crate::text::{token_count, tokenize};
use crate::windowing::{build_examples, head_context, PairExample, WindowConfig, WindowMode};

#[derive(Debug, Error)]
pub enum AcquireError {
    #[error("budget {budget} exceeds the {available} unlabeled propositions")]
    Budget { budget: usize, available: usize },
    #[error("configuration error: {0}")]
    Config(String),
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error(transparent)]
    Model(#[from] RelHeadError),
}

/// A proposition of the pool: index of its document in the pool's document
/// list and its id within that document.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct PropRef {
    pub doc: usize,
    pub prop: usize,
}

impl PropRef {
    pub fn new(doc: usize, prop: usize) -> Self {
        Self { doc, prop }
    }
}

/// Scored candidate, highest scores first in a selection.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AcquisitionScore {
    pub prop: PropRef,
    pub score: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    RandomProp,
    RandomCtx,
    MaxEntropy,
    Bald,
    Coreset,
    NovelVocab,
    DiscMarker,
    NoDiscMarker,
}

impl Strategy {
    pub const ALL: [Strategy; 8] = [
        Strategy::RandomProp,
        Strategy::RandomCtx,
        Strategy::MaxEntropy,
        Strategy::Bald,
        Strategy::Coreset,
        Strategy::NovelVocab,
        Strategy::DiscMarker,
        Strategy::NoDiscMarker,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Strategy::RandomProp => "random_prop",
            Strategy::RandomCtx => "random_ctx",
            Strategy::MaxEntropy => "max_entropy",
            Strategy::Bald => "bald",
            Strategy::Coreset => "coreset",
            Strategy::NovelVocab => "novel_vocab",
            Strategy::DiscMarker => "disc_marker",
            Strategy::NoDiscMarker => "no_disc_marker",
        }
    }

    /// Strategies that need a trained model to score candidates.
    pub fn needs_model(self) -> bool {
        matches!(self, Strategy::MaxEntropy | Strategy::Bald | Strategy::Coreset)
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Strategy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let norm = s.replace('-', "_");
        Strategy::ALL
            .into_iter()
            .find(|st| st.name() == norm)
            .ok_or_else(|| format!("unknown strategy `{s}`"))
    }
}

/// Word counts over the labeled pool.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct VocabCounts {
    pub counts: HashMap<String, usize>,
}

impl VocabCounts {
    pub fn get(&self, word: &str) -> usize {
        self.counts.get(word).copied().unwrap_or(0)
    }
}

/// `-Σ p ln p` with `0 ln 0 = 0`.
pub fn entropy(dist: &LabelDistribution) -> f64 {
    let h: f64 = dist.0.iter().filter(|&&p| p > 0.0).map(|&p| -p * p.ln()).sum();
    h.max(0.0)
}

/// Entropy of the mean distribution minus the mean per-pass entropy.
pub fn bald_score(passes: &[LabelDistribution]) -> Result<f64, AcquireError> {
    if passes.len() < 2 {
        return Err(AcquireError::Precondition("bald needs at least two passes".into()));
    }
    if passes.iter().all(|p| p.0 == passes[0].0) {
        return Ok(0.0);
    }
    let k = passes.len() as f64;
    let mut mean = [0.0; 3];
    for p in passes {
        for c in 0..3 {
            mean[c] += p.0[c] / k;
        }
    }
    let expected: f64 = passes.iter().map(entropy).sum::<f64>() / k;
    Ok((entropy(&LabelDistribution(mean)) - expected).max(0.0))
}

/// Sum over the unique word types of a proposition of `f / (1 + V(w))`,
/// where `f` is the type's frequency in the proposition.
pub fn novelty_score<S: AsRef<str>>(tokens: &[S], counts: &VocabCounts) -> f64 {
    let mut freq: HashMap<&str, usize> = HashMap::new();
    for t in tokens {
        *freq.entry(t.as_ref()).or_default() += 1;
    }
    let mut terms: Vec<(&str, usize)> = freq.into_iter().collect();
    terms.sort_unstable();
    terms.iter().map(|&(w, f)| f as f64 / (1.0 + counts.get(w) as f64)).sum()
}

pub fn update_vocab_counts<S: AsRef<str>>(counts: &mut VocabCounts, tokens: &[S]) {
    for t in tokens {
        *counts.counts.entry(t.as_ref().to_string()).or_default() += 1;
    }
}

/// Matched markers of the default lexicon.
pub fn match_markers(text: &str) -> BTreeSet<String> {
    MarkerLexicon::default().match_text(text)
}

/// Everything a strategy may consult besides the pools.
#[derive(Debug, Clone, Copy)]
pub struct SelectContext<'a> {
    pub checkpoint: Option<&'a Checkpoint>,
    pub window: WindowConfig,
    pub seed: u64,
    /// Dropout passes for bald.
    pub mc_passes: usize,
    pub lexicon: &'a MarkerLexicon,
}

/// Choose `budget` members of `unlabeled`, in selection order. `labeled`
/// holds the propositions whose labels are already known.
pub fn select(
    strategy: Strategy,
    docs: &[Document],
    unlabeled: &BTreeSet<PropRef>,
    labeled: &BTreeSet<PropRef>,
    budget: usize,
    ctx: &SelectContext,
) -> Result<Vec<AcquisitionScore>, AcquireError> {
    if budget > unlabeled.len() {
        return Err(AcquireError::Budget { budget, available: unlabeled.len() });
    }
    if let Some(p) = unlabeled.iter().find(|p| labeled.contains(p)) {
        return Err(AcquireError::Precondition(format!("{p:?} is both labeled and unlabeled")));
    }
    if budget == 0 {
        return Ok(Vec::new());
    }
    if strategy.needs_model() && ctx.checkpoint.is_none() {
        return Err(AcquireError::Config(format!("{strategy} requires a model checkpoint")));
    }
    let mut rng = rng::substream(ctx.seed, &format!("select-{strategy}"));
    let pool: Vec<PropRef> = unlabeled.iter().copied().collect();
    let picked = match strategy {
        Strategy::RandomProp => {
            let mut order = pool;
            order.shuffle(&mut rng);
            ranked(order.into_iter().take(budget))
        }
        Strategy::RandomCtx => random_ctx(docs, unlabeled, budget, ctx.window.window, &mut rng),
        Strategy::DiscMarker | Strategy::NoDiscMarker => {
            let want = strategy == Strategy::DiscMarker;
            let (mut hit, mut miss): (Vec<PropRef>, Vec<PropRef>) = pool
                .into_iter()
                .partition(|p| ctx.lexicon.contains_marker(&docs[p.doc].propositions[p.prop].text) == want);
            hit.shuffle(&mut rng);
            miss.shuffle(&mut rng);
            ranked(hit.into_iter().chain(miss).take(budget))
        }
        Strategy::NovelVocab => {
            let mut counts = VocabCounts::default();
            for p in labeled {
                update_vocab_counts(&mut counts, &tokenize(&docs[p.doc].propositions[p.prop].text));
            }
            let scores = pool
                .iter()
                .map(|p| (*p, novelty_score(&tokenize(&docs[p.doc].propositions[p.prop].text), &counts)))
                .collect();
            top(scores, budget)
        }
        Strategy::MaxEntropy | Strategy::Bald => {
            let ckpt = ctx.checkpoint.expect("checked above");
            let scores = uncertainty_scores(strategy, docs, &pool, ckpt, ctx)?;
            top(scores, budget)
        }
        Strategy::Coreset => {
            let ckpt = ctx.checkpoint.expect("checked above");
            coreset(docs, &pool, labeled, budget, ckpt, ctx, &mut rng)?
        }
    };
    debug_assert_eq!(picked.len(), budget);
    Ok(picked)
}

/// Scores that just preserve the given order.
fn ranked(order: impl Iterator<Item = PropRef>) -> Vec<AcquisitionScore> {
    let order: Vec<PropRef> = order.collect();
    let n = order.len();
    order.into_iter().enumerate().map(|(i, prop)| AcquisitionScore { prop, score: (n - i) as f64 }).collect()
}

/// Highest scores first; ties go to the smaller reference.
fn top(mut scores: Vec<(PropRef, f64)>, budget: usize) -> Vec<AcquisitionScore> {
    scores.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    scores.into_iter().take(budget).map(|(prop, score)| AcquisitionScore { prop, score }).collect()
}

fn random_ctx(
    docs: &[Document],
    unlabeled: &BTreeSet<PropRef>,
    budget: usize,
    window: usize,
    rng: &mut rng::Rng,
) -> Vec<AcquisitionScore> {
    use rand::Rng as _;
    let mut remaining: Vec<PropRef> = unlabeled.iter().copied().collect();
    let mut chosen: Vec<PropRef> = Vec::with_capacity(budget);
    let mut taken: BTreeSet<PropRef> = BTreeSet::new();
    while chosen.len() < budget {
        let p = remaining[rng.random_range(0..remaining.len())];
        let forward = rng.random::<bool>();
        let n = docs[p.doc].len();
        let block: Vec<usize> = if forward {
            (p.prop..=(p.prop + window).min(n - 1)).collect()
        } else {
            (p.prop.saturating_sub(window)..=p.prop).rev().collect()
        };
        for id in block {
            let r = PropRef::new(p.doc, id);
            if unlabeled.contains(&r) && taken.insert(r) {
                chosen.push(r);
            }
        }
        remaining.retain(|r| !taken.contains(r));
    }
    // the last block may overshoot; drop its tail end
    chosen.truncate(budget);
    ranked(chosen.into_iter())
}

/// Per-candidate maximum uncertainty over the end-to-end pairs where the
/// candidate is the tail.
fn uncertainty_scores(
    strategy: Strategy,
    docs: &[Document],
    pool: &[PropRef],
    ckpt: &Checkpoint,
    ctx: &SelectContext,
) -> Result<Vec<(PropRef, f64)>, AcquireError> {
    let window = WindowConfig { mode: WindowMode::EndToEnd, ..ctx.window };
    let wanted: BTreeSet<PropRef> = pool.iter().copied().collect();
    let doc_ids: BTreeSet<usize> = pool.iter().map(|p| p.doc).collect();
    let mut examples: Vec<PairExample> = Vec::new();
    let mut owners: Vec<PropRef> = Vec::new();
    for &d in &doc_ids {
        for ex in build_examples(&docs[d], &window, &token_count) {
            let tail = PropRef::new(d, ex.tail);
            if wanted.contains(&tail) {
                owners.push(tail);
                examples.push(ex);
            }
        }
    }
    let pair_scores: Vec<f64> = match strategy {
        Strategy::MaxEntropy => {
            score_examples(ckpt, docs, &examples, EncodeMode::Eval, 0)?.iter().map(entropy).collect()
        }
        _ => {
            if ctx.mc_passes < 2 {
                return Err(AcquireError::Config("bald needs mc_passes >= 2".into()));
            }
            let mut passes: Vec<Vec<LabelDistribution>> = vec![Vec::with_capacity(ctx.mc_passes); examples.len()];
            for k in 0..ctx.mc_passes {
                let seed = derive_seed(ctx.seed, &format!("bald-pass-{k}"));
                let dists = score_examples(ckpt, docs, &examples, EncodeMode::McDropout, seed)?;
                for (slot, d) in passes.iter_mut().zip(dists) {
                    slot.push(d);
                }
            }
            passes.iter().map(|p| bald_score(p)).collect::<Result<_, _>>()?
        }
    };
    let mut best: HashMap<PropRef, f64> = pool.iter().map(|&p| (p, 0.0)).collect();
    for (owner, s) in owners.into_iter().zip(pair_scores) {
        let slot = best.get_mut(&owner).expect("owner is a pool member");
        *slot = slot.max(s);
    }
    Ok(best.into_iter().collect())
}

fn coreset(
    docs: &[Document],
    pool: &[PropRef],
    labeled: &BTreeSet<PropRef>,
    budget: usize,
    ckpt: &Checkpoint,
    ctx: &SelectContext,
    rng: &mut rng::Rng,
) -> Result<Vec<AcquisitionScore>, AcquireError> {
    use rand::Rng as _;
    // Only documents touched by either pool need encoding.
    let touched: BTreeSet<usize> = pool.iter().chain(labeled).map(|p| p.doc).collect();
    let sub_docs: Vec<Document> = touched.iter().map(|&d| docs[d].clone()).collect();
    let reps = proposition_representations(ckpt, &sub_docs, &ctx.window)?;
    let local: HashMap<usize, usize> = touched.iter().enumerate().map(|(i, &d)| (d, i)).collect();
    let vec_of = |p: &PropRef| -> Vec<f64> { reps[&(local[&p.doc], p.prop)].to_vec() };
    let points: Vec<Vec<f64>> = pool.iter().map(vec_of).collect();
    let centers: Vec<Vec<f64>> = labeled.iter().map(vec_of).collect();
    let first = if centers.is_empty() { Some(rng.random_range(0..pool.len())) } else { None };
    let order = k_center_greedy(&points, &centers, budget, first);
    Ok(order.into_iter().map(|(i, d)| AcquisitionScore { prop: pool[i], score: d }).collect())
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Greedy k-center: repeatedly take the point farthest from its nearest
/// center, ties to the lowest index. `first` seeds the choice when there are
/// no centers. Returns (point index, distance at selection).
pub fn k_center_greedy(points: &[Vec<f64>], centers: &[Vec<f64>], k: usize, first: Option<usize>) -> Vec<(usize, f64)> {
    let mut min_d: Vec<f64> = points
        .iter()
        .map(|p| centers.iter().map(|c| sq_dist(p, c)).fold(f64::INFINITY, f64::min))
        .collect();
    let mut chosen = vec![false; points.len()];
    let mut out = Vec::with_capacity(k);
    for step in 0..k.min(points.len()) {
        let pick = match (step, first) {
            (0, Some(i)) if centers.is_empty() => i,
            _ => {
                let mut best: Option<usize> = None;
                for i in 0..points.len() {
                    if !chosen[i] && best.is_none_or(|b| min_d[i] > min_d[b]) {
                        best = Some(i);
                    }
                }
                best.expect("k bounded by the number of points")
            }
        };
        chosen[pick] = true;
        out.push((pick, min_d[pick].sqrt()));
        for i in 0..points.len() {
            min_d[i] = min_d[i].min(sq_dist(&points[i], &points[pick]));
        }
    }
    out
}

/// Propositions inside `head`'s retained window, head excluded.
pub fn window_candidates(doc: &Document, head: usize, window: &WindowConfig) -> Vec<usize> {
    let lens: Vec<usize> = doc.propositions.iter().map(|p| token_count(&p.text)).collect();
    head_context(doc.len(), head, window, |i| lens[i]).into_iter().filter(|&t| t != head).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::fixtures::doc;
    use proptest::prelude::{prop_assert, prop_assert_eq, proptest};

    fn dist(a: f64, b: f64, c: f64) -> LabelDistribution {
        LabelDistribution([a, b, c])
    }

    #[test]
    fn entropy_values() {
        let third = 1.0 / 3.0;
        assert!((entropy(&dist(third, third, third)) - 3f64.ln()).abs() < 1e-9);
        assert_eq!(entropy(&dist(1.0, 0.0, 0.0)), 0.0);
        let by_hand = -(0.7f64 * 0.7f64.ln() + 0.2 * 0.2f64.ln() + 0.1 * 0.1f64.ln());
        assert!((entropy(&dist(0.7, 0.2, 0.1)) - by_hand).abs() < 1e-12);
        assert!((by_hand - 0.8018).abs() < 1e-4);
    }

    #[test]
    fn bald_values() {
        let d = dist(0.5, 0.3, 0.2);
        assert_eq!(bald_score(&[d, d, d]).unwrap(), 0.0);
        let s = bald_score(&[dist(1.0, 0.0, 0.0), dist(0.0, 1.0, 0.0)]).unwrap();
        assert!((s - 2f64.ln()).abs() < 1e-9);
        assert!(bald_score(&[d]).is_err());
    }

    #[test]
    fn novelty_values() {
        let empty: [&str; 0] = [];
        assert_eq!(novelty_score(&empty, &VocabCounts::default()), 0.0);
        let mut counts = VocabCounts::default();
        counts.counts.insert("the".into(), 3);
        assert!((novelty_score(&["the", "novel", "novel"], &counts) - 2.25).abs() < 1e-15);
        assert_eq!(novelty_score(&["a", "b", "c", "d"], &VocabCounts::default()), 4.0);
    }

    #[test]
    fn vocab_count_updates() {
        let mut counts = VocabCounts::default();
        counts.counts.insert("a".into(), 1);
        update_vocab_counts(&mut counts, &["a", "a", "b"]);
        assert_eq!(counts.get("a"), 3);
        assert_eq!(counts.get("b"), 1);
        let before = counts.clone();
        update_vocab_counts::<&str>(&mut counts, &[]);
        assert_eq!(counts, before);
        let prop = ["x", "y", "a"];
        let s0 = novelty_score(&prop, &counts);
        update_vocab_counts(&mut counts, &prop);
        assert!(novelty_score(&prop, &counts) < s0);
    }

    #[test]
    fn marker_matching() {
        assert_eq!(match_markers("This fails because the proof is wrong"), BTreeSet::from(["because".to_string()]));
        assert_eq!(match_markers("Secretion due to stress"), BTreeSet::from(["due to".to_string()]));
        assert!(match_markers("The butter melted").is_empty());
        assert_eq!(match_markers("BECAUSE it rains"), match_markers("because it rains"));
    }

    #[test]
    fn coreset_one_dimensional_example() {
        let pts = vec![vec![10.0], vec![4.0]];
        let order = k_center_greedy(&pts, &[vec![0.0]], 2, None);
        assert_eq!(order.iter().map(|o| o.0).collect::<Vec<_>>(), vec![0, 1]);
    }

    fn lexicon() -> &'static MarkerLexicon {
        static LEX: std::sync::OnceLock<MarkerLexicon> = std::sync::OnceLock::new();
        LEX.get_or_init(MarkerLexicon::default)
    }

    fn ctx(seed: u64) -> SelectContext<'static> {
        SelectContext {
            checkpoint: None,
            window: WindowConfig { window: 2, max_tokens: 512, mode: WindowMode::HeadGiven },
            seed,
            mc_passes: 4,
            lexicon: lexicon(),
        }
    }

    fn pool_of(docs: &[Document]) -> BTreeSet<PropRef> {
        docs.iter().enumerate().flat_map(|(d, doc)| (0..doc.len()).map(move |p| PropRef::new(d, p))).collect()
    }

    #[test]
    fn disc_marker_takes_exactly_the_matching_set() {
        let mut d = doc("a", 6, &[]);
        d.propositions[1].text = "However this is odd.".into();
        d.propositions[4].text = "It holds because of that.".into();
        let docs = vec![d];
        let pool = pool_of(&docs);
        let got = select(Strategy::DiscMarker, &docs, &pool, &BTreeSet::new(), 2, &ctx(3)).unwrap();
        let ids: BTreeSet<usize> = got.iter().map(|s| s.prop.prop).collect();
        assert_eq!(ids, BTreeSet::from([1, 4]));
        let got = select(Strategy::NoDiscMarker, &docs, &pool, &BTreeSet::new(), 4, &ctx(3)).unwrap();
        assert!(got.iter().all(|s| s.prop.prop != 1 && s.prop.prop != 4));
    }

    #[test]
    fn budget_and_model_errors() {
        let docs = vec![doc("a", 3, &[])];
        let pool = pool_of(&docs);
        assert!(matches!(
            select(Strategy::RandomProp, &docs, &pool, &BTreeSet::new(), 4, &ctx(0)),
            Err(AcquireError::Budget { .. })
        ));
        for s in [Strategy::MaxEntropy, Strategy::Bald, Strategy::Coreset] {
            assert!(matches!(select(s, &docs, &pool, &BTreeSet::new(), 1, &ctx(0)), Err(AcquireError::Config(_))));
        }
    }

    #[test]
    fn strategy_names_round_trip() {
        for s in Strategy::ALL {
            assert_eq!(s.name().parse::<Strategy>().unwrap(), s);
        }
        assert_eq!("disc-marker".parse::<Strategy>().unwrap(), Strategy::DiscMarker);
        assert!("greedy".parse::<Strategy>().is_err());
    }

    proptest! {
        #[test]
        fn model_free_strategies_pick_b_distinct_members(
            sizes in proptest::collection::vec(1usize..9, 1..5),
            frac in 0.0f64..1.0,
            seed in 0u64..1000,
            held in 0usize..4,
        ) {
            let docs: Vec<Document> = sizes.iter().enumerate().map(|(i, &n)| doc(&format!("d{i}"), n, &[])).collect();
            let all = pool_of(&docs);
            let labeled: BTreeSet<PropRef> = all.iter().copied().take(held.min(all.len() - 1)).collect();
            let unlabeled: BTreeSet<PropRef> = all.difference(&labeled).copied().collect();
            let b = ((unlabeled.len() as f64 * frac) as usize).max(1);
            for s in [Strategy::RandomProp, Strategy::RandomCtx, Strategy::NovelVocab, Strategy::DiscMarker, Strategy::NoDiscMarker] {
                let got = select(s, &docs, &unlabeled, &labeled, b, &ctx(seed)).unwrap();
                let set: BTreeSet<PropRef> = got.iter().map(|g| g.prop).collect();
                prop_assert_eq!(got.len(), b);
                prop_assert_eq!(set.len(), b);
                prop_assert!(set.is_subset(&unlabeled));
                let again = select(s, &docs, &unlabeled, &labeled, b, &ctx(seed)).unwrap();
                prop_assert_eq!(got, again);
            }
        }

        #[test]
        fn entropy_and_bald_bounded(raw in proptest::collection::vec((0.0f64..1.0, 0.0f64..1.0, 0.0f64..1.0), 2..8)) {
            let passes: Vec<LabelDistribution> = raw.iter().map(|&(a, b, c)| {
                let s = a + b + c + 1e-12;
                dist(a / s, b / s, c / s)
            }).collect();
            for p in &passes {
                let h = entropy(p);
                prop_assert!((0.0..=3f64.ln() + 1e-12).contains(&h));
            }
            let s = bald_score(&passes).unwrap();
            prop_assert!((0.0..=3f64.ln() + 1e-12).contains(&s));
        }
    }
}
