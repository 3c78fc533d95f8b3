//! Pool-based active learning: select, label, retrain, evaluate, repeat.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::acquire::{select, AcquireError, AcquisitionScore, PropRef, SelectContext, Strategy};
use crate::corpus::{Corpus, Document};
use crate::encoder::EncoderConfig;
use crate::eval::{evaluate, EvalError, Metrics, Prediction};
use crate::markers::MarkerLexicon;
use crate::relhead::{predict_corpus, train_examples, Checkpoint, RelHeadError, TrainConfig};
use crate::rng::derive_seed;
use crate::text::token_count;
use crate::windowing::{head_context, heads_for, PairExample, PairLabel, WindowConfig};

#[derive(Debug, Error)]
pub enum AlError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("oracle failed: {0}")]
    Oracle(String),
    #[error(transparent)]
    Acquire(#[from] AcquireError),
    #[error(transparent)]
    Model(#[from] RelHeadError),
    #[error(transparent)]
    Eval(#[from] EvalError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OracleMode {
    #[default]
    Simulated,
    External,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AlConfig {
    pub iterations: usize,
    /// Propositions per iteration; `None` takes a tenth of the pool, rounded up.
    pub budget: Option<usize>,
    pub strategy: Strategy,
    pub window: WindowConfig,
    pub train: TrainConfig,
    pub encoder: EncoderConfig,
    /// Dropout passes for bald.
    pub mc_passes: usize,
    pub oracle: OracleMode,
    pub seed: u64,
}

impl Default for AlConfig {
    fn default() -> Self {
        Self {
            iterations: 10,
            budget: None,
            strategy: Strategy::RandomProp,
            window: WindowConfig::default(),
            train: TrainConfig::default(),
            encoder: EncoderConfig::default(),
            mc_passes: 10,
            oracle: OracleMode::Simulated,
            seed: 0,
        }
    }
}

impl AlConfig {
    pub fn resolved_budget(&self, pool: usize) -> usize {
        self.budget.unwrap_or(pool.div_ceil(10))
    }

    fn check(&self, pool: usize) -> Result<usize, AlError> {
        if self.iterations == 0 {
            return Err(AlError::Config("iterations must be at least 1".into()));
        }
        let b = self.resolved_budget(pool);
        if b == 0 {
            return Err(AlError::Config("budget must be at least 1".into()));
        }
        self.window.validate().map_err(|e| AlError::Config(e.to_string()))?;
        self.train.validate()?;
        self.encoder.validate().map_err(|e| AlError::Config(e.to_string()))?;
        if self.window.max_tokens > self.encoder.max_positions {
            return Err(AlError::Config("window max_tokens exceeds encoder max_positions".into()));
        }
        Ok(b)
    }
}

/// A labeled pair produced by an oracle. `doc` indexes the pool documents.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct RevealedPair {
    pub doc: usize,
    pub head: usize,
    pub tail: usize,
    pub label: PairLabel,
}

/// What an oracle is asked to label.
pub struct LabelRequest<'a> {
    pub iteration: usize,
    pub docs: &'a [Document],
    pub selected: &'a [AcquisitionScore],
    pub window: &'a WindowConfig,
}

#[derive(Debug, Error)]
pub enum OracleError {
    #[error("timed out waiting for labels")]
    Timeout,
    #[error("{0}")]
    Failed(String),
}

pub trait Oracle {
    fn label(&mut self, request: &LabelRequest) -> Result<Vec<RevealedPair>, OracleError>;
}

/// Labels from the gold relations of the pool documents. A selected
/// proposition reveals every pair it forms inside a window with a head of
/// the windowing mode, both as the tail and, when it is such a head, as the
/// head.
#[derive(Debug, Clone, Copy, Default)]
pub struct SimulatedOracle;

impl Oracle for SimulatedOracle {
    fn label(&mut self, request: &LabelRequest) -> Result<Vec<RevealedPair>, OracleError> {
        let mut out = BTreeSet::new();
        let mut heads_cache: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for s in request.selected {
            let PropRef { doc, prop } = s.prop;
            let d = &request.docs[doc];
            let lens: Vec<usize> = d.propositions.iter().map(|p| token_count(&p.text)).collect();
            let heads = heads_cache.entry(doc).or_insert_with(|| heads_for(d, request.window.mode));
            for &h in heads.iter() {
                let ctx = head_context(d.len(), h, request.window, |i| lens[i]);
                if h == prop {
                    for &t in ctx.iter().filter(|&&t| t != h) {
                        out.insert(RevealedPair { doc, head: h, tail: t, label: d.gold_label(h, t).into() });
                    }
                } else if ctx.binary_search(&prop).is_ok() {
                    out.insert(RevealedPair { doc, head: h, tail: prop, label: d.gold_label(h, prop).into() });
                }
            }
        }
        Ok(out.into_iter().collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectedProp {
    pub doc_id: String,
    pub prop: usize,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    /// Strategy actually applied; model-based strategies fall back to
    /// random_prop while no model exists.
    pub strategy_used: Strategy,
    pub selected: Vec<SelectedProp>,
    pub labeled: usize,
    pub revealed_pairs: usize,
    pub positive_pairs: usize,
    /// Digest-based reference of the model evaluated; `None` when no pair
    /// was available to train on and every pair was predicted no_rel.
    pub checkpoint: Option<String>,
    pub metrics: Metrics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlTrace {
    pub strategy: Strategy,
    pub warm_start: bool,
    pub seed: u64,
    pub budget: usize,
    pub records: Vec<IterationRecord>,
    /// The pool ran dry before the configured number of iterations.
    pub exhausted: bool,
}

/// Everything needed to continue a run that stopped waiting for labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlState {
    pub iteration: usize,
    pub labeled: Vec<PropRef>,
    pub store: Vec<RevealedPair>,
    /// Selection awaiting labels.
    pub pending: Option<(Strategy, Vec<AcquisitionScore>)>,
    pub trace: AlTrace,
}

impl AlState {
    fn fresh(cfg: &AlConfig, budget: usize, warm: bool) -> Self {
        Self {
            iteration: 1,
            labeled: Vec::new(),
            store: Vec::new(),
            pending: None,
            trace: AlTrace {
                strategy: cfg.strategy,
                warm_start: warm,
                seed: cfg.seed,
                budget,
                records: Vec::new(),
                exhausted: false,
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum AlOutcome {
    Completed(AlTrace),
    Suspended(AlState),
}

impl AlOutcome {
    pub fn trace(&self) -> &AlTrace {
        match self {
            AlOutcome::Completed(t) => t,
            AlOutcome::Suspended(s) => &s.trace,
        }
    }
}

/// Run `cfg.iterations` rounds over the documents of `pool`, evaluating on
/// `test` after each round.
pub fn run_al(
    pool: &[Document],
    test: &Corpus,
    cfg: &AlConfig,
    warm_start: Option<&Checkpoint>,
    oracle: &mut dyn Oracle,
) -> Result<AlOutcome, AlError> {
    let size: usize = pool.iter().map(Document::len).sum();
    let budget = cfg.check(size)?;
    if cfg.iterations * budget > size {
        tracing::warn!(iterations = cfg.iterations, budget, pool = size, "pool smaller than iterations x budget");
    }
    resume_al(AlState::fresh(cfg, budget, warm_start.is_some()), pool, test, cfg, warm_start, oracle)
}

pub fn resume_al(
    mut state: AlState,
    pool: &[Document],
    test: &Corpus,
    cfg: &AlConfig,
    warm_start: Option<&Checkpoint>,
    oracle: &mut dyn Oracle,
) -> Result<AlOutcome, AlError> {
    let size: usize = pool.iter().map(Document::len).sum();
    cfg.check(size)?;
    let budget = state.trace.budget;
    let lexicon = MarkerLexicon::default();
    let all: BTreeSet<PropRef> =
        pool.iter().enumerate().flat_map(|(d, doc)| (0..doc.len()).map(move |p| PropRef::new(d, p))).collect();
    let mut labeled: BTreeSet<PropRef> = state.labeled.iter().copied().collect();
    let mut store: BTreeMap<(usize, usize, usize), PairLabel> =
        state.store.iter().map(|r| ((r.doc, r.head, r.tail), r.label)).collect();
    let train_seed = derive_seed(cfg.seed, "train");
    // The model of the previous round; only selection needs it.
    let mut model: Option<Checkpoint> = match state.pending {
        Some(_) => None,
        None if state.iteration == 1 => warm_start.cloned(),
        None => fit(pool, &store, cfg, warm_start, train_seed)?,
    };

    while state.iteration <= cfg.iterations {
        let t = state.iteration;
        let unlabeled: BTreeSet<PropRef> = all.difference(&labeled).copied().collect();
        if unlabeled.is_empty() {
            state.trace.exhausted = true;
            break;
        }
        let (used, selection) = match state.pending.take() {
            Some(p) => p,
            None => {
                let b = budget.min(unlabeled.len());
                if b < budget {
                    state.trace.exhausted = true;
                }
                let usable = model.as_ref().is_some_and(|m| m.head.is_some() || cfg.strategy == Strategy::Coreset);
                let used = if cfg.strategy.needs_model() && !usable { Strategy::RandomProp } else { cfg.strategy };
                let ctx = SelectContext {
                    checkpoint: model.as_ref(),
                    window: cfg.window,
                    seed: derive_seed(cfg.seed, &format!("select-{t}")),
                    mc_passes: cfg.mc_passes,
                    lexicon: &lexicon,
                };
                (used, select(used, pool, &unlabeled, &labeled, b, &ctx)?)
            }
        };
        let request = LabelRequest { iteration: t, docs: pool, selected: &selection, window: &cfg.window };
        let revealed = match oracle.label(&request) {
            Ok(r) => r,
            Err(OracleError::Timeout) => {
                state.pending = Some((used, selection));
                state.labeled = labeled.into_iter().collect();
                state.store = flatten(&store);
                return Ok(AlOutcome::Suspended(state));
            }
            Err(OracleError::Failed(m)) => return Err(AlError::Oracle(m)),
        };
        for r in &revealed {
            store.insert((r.doc, r.head, r.tail), r.label);
        }
        labeled.extend(selection.iter().map(|s| s.prop));

        model = fit(pool, &store, cfg, warm_start, train_seed)?;
        let metrics = evaluate_model(model.as_ref(), test, &cfg.window)?;
        let checkpoint = model.as_ref().map(|m| format!("iter-{t:02}-{}", digest(m)));
        tracing::info!(iteration = t, strategy = %used, labeled = labeled.len(), macro_f1 = metrics.macro_f1, "al iteration");
        state.trace.records.push(IterationRecord {
            iteration: t,
            strategy_used: used,
            selected: selection
                .iter()
                .map(|s| SelectedProp { doc_id: pool[s.prop.doc].doc_id.clone(), prop: s.prop.prop, score: s.score })
                .collect(),
            labeled: labeled.len(),
            revealed_pairs: store.len(),
            positive_pairs: store.values().filter(|l| l.is_positive()).count(),
            checkpoint,
            metrics,
        });
        state.iteration += 1;
        if state.trace.exhausted {
            break;
        }
    }
    state.labeled = labeled.into_iter().collect();
    state.store = flatten(&store);
    Ok(AlOutcome::Completed(state.trace))
}

fn flatten(store: &BTreeMap<(usize, usize, usize), PairLabel>) -> Vec<RevealedPair> {
    store.iter().map(|(&(doc, head, tail), &label)| RevealedPair { doc, head, tail, label }).collect()
}

fn digest(ckpt: &Checkpoint) -> String {
    let bytes = ckpt.to_container().to_bytes();
    let hash = Sha256::digest(&bytes);
    hash.iter().take(6).fold(String::new(), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

/// Training examples from the labeled pairs, each carrying its head's window.
pub fn store_examples(pool: &[Document], pairs: &[RevealedPair], window: &WindowConfig) -> Vec<PairExample> {
    let mut contexts: BTreeMap<(usize, usize), Vec<usize>> = BTreeMap::new();
    let mut out = Vec::with_capacity(pairs.len());
    for r in pairs {
        let doc = &pool[r.doc];
        let ctx = contexts.entry((r.doc, r.head)).or_insert_with(|| {
            let lens: Vec<usize> = doc.propositions.iter().map(|p| token_count(&p.text)).collect();
            head_context(doc.len(), r.head, window, |i| lens[i])
        });
        if ctx.binary_search(&r.tail).is_err() {
            continue;
        }
        out.push(PairExample { doc_id: doc.doc_id.clone(), head: r.head, tail: r.tail, label: r.label, context: ctx.clone() });
    }
    out
}

fn fit(
    pool: &[Document],
    store: &BTreeMap<(usize, usize, usize), PairLabel>,
    cfg: &AlConfig,
    warm_start: Option<&Checkpoint>,
    seed: u64,
) -> Result<Option<Checkpoint>, AlError> {
    let examples = store_examples(pool, &flatten(store), &cfg.window);
    if examples.is_empty() {
        return Ok(warm_start.filter(|w| w.head.is_some()).cloned());
    }
    let train = TrainConfig { seed, ..cfg.train.clone() };
    let out = train_examples(pool, examples, &train, &cfg.encoder, warm_start, "al-pool")?;
    Ok(Some(out.checkpoint))
}

/// Metrics of `model` on `test`; without a model every pair is no_rel.
pub fn evaluate_model(model: Option<&Checkpoint>, test: &Corpus, window: &WindowConfig) -> Result<Metrics, AlError> {
    let predictions: Vec<Prediction> = match model.filter(|m| m.head.is_some()) {
        Some(m) => predict_corpus(test, m, window)?.iter().map(Prediction::from).collect(),
        None => test
            .documents
            .iter()
            .flat_map(|d| crate::windowing::build_examples(d, window, &token_count))
            .map(|e| Prediction { doc_id: e.doc_id, head: e.head, tail: e.tail, label: PairLabel::NoRel })
            .collect(),
    };
    Ok(evaluate(&predictions, test, window)?)
}

// ---------------------------------------------------------------------------
// Comparison across strategies and seeds

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Variant {
    pub strategy: Strategy,
    pub warm_start: bool,
}

impl Variant {
    pub fn label(&self) -> String {
        if self.warm_start { format!("{}+tl", self.strategy) } else { self.strategy.to_string() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub variant: Variant,
    pub iteration: usize,
    pub runs: usize,
    pub mean_macro_f1: f64,
    pub std_macro_f1: f64,
    /// Warm-start mean minus the matching cold-start mean.
    pub delta: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub dataset: String,
    pub traces: Vec<AlTrace>,
    pub summary: Vec<SummaryRow>,
}

/// Run every variant once per seed in simulated mode.
pub fn compare_strategies(
    dataset: &str,
    pool: &[Document],
    test: &Corpus,
    base: &AlConfig,
    variants: &[Variant],
    seeds: &[u64],
    warm_start: Option<&Checkpoint>,
) -> Result<Comparison, AlError> {
    if variants.is_empty() || seeds.is_empty() {
        return Err(AlError::Config("need at least one strategy and one seed".into()));
    }
    if variants.iter().any(|v| v.warm_start) && warm_start.is_none() {
        return Err(AlError::Config("warm-start variants need a checkpoint".into()));
    }
    let mut traces = Vec::new();
    for v in variants {
        for &seed in seeds {
            let cfg = AlConfig { strategy: v.strategy, seed, oracle: OracleMode::Simulated, ..base.clone() };
            let warm = if v.warm_start { warm_start } else { None };
            match run_al(pool, test, &cfg, warm, &mut SimulatedOracle)? {
                AlOutcome::Completed(t) => traces.push(t),
                AlOutcome::Suspended(_) => unreachable!("the simulated oracle never times out"),
            }
        }
    }
    let summary = summarize(variants, &traces);
    Ok(Comparison { dataset: dataset.to_string(), traces, summary })
}

/// Mean and standard deviation of macro-F1 per variant and iteration.
pub fn summarize(variants: &[Variant], traces: &[AlTrace]) -> Vec<SummaryRow> {
    let cell = |v: &Variant| -> BTreeMap<usize, Vec<f64>> {
        let mut m: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
        for t in traces.iter().filter(|t| t.strategy == v.strategy && t.warm_start == v.warm_start) {
            for r in &t.records {
                m.entry(r.iteration).or_default().push(r.metrics.macro_f1);
            }
        }
        m
    };
    let mean = |xs: &[f64]| xs.iter().sum::<f64>() / xs.len() as f64;
    let mut rows = Vec::new();
    for v in variants {
        let cold = if v.warm_start { variants.iter().find(|c| c.strategy == v.strategy && !c.warm_start).map(cell) } else { None };
        for (iteration, xs) in cell(v) {
            let m = mean(&xs);
            let var = xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / xs.len() as f64;
            let delta = cold.as_ref().and_then(|c| c.get(&iteration)).map(|c| m - mean(c));
            rows.push(SummaryRow { variant: *v, iteration, runs: xs.len(), mean_macro_f1: m, std_macro_f1: var.sqrt(), delta });
        }
    }
    rows
}

/// One CSV row per (variant, seed, iteration).
pub fn flat_table(dataset: &str, traces: &[AlTrace]) -> String {
    let mut out = String::from("dataset,strategy,iteration,seed,macro_f1,f1_support,f1_attack,f1_no_rel\n");
    for t in traces {
        let name = Variant { strategy: t.strategy, warm_start: t.warm_start }.label();
        for r in &t.records {
            let m = &r.metrics;
            let _ = writeln!(
                out,
                "{dataset},{name},{},{},{:.6},{:.6},{:.6},{:.6}",
                r.iteration, t.seed, m.macro_f1, m.support.f1, m.attack.f1, m.no_rel.f1
            );
        }
    }
    out
}

pub fn summary_table(rows: &[SummaryRow]) -> String {
    let mut out = String::from("strategy,iteration,runs,mean_macro_f1,std_macro_f1,delta\n");
    for r in rows {
        let delta = r.delta.map(|d| format!("{d:.6}")).unwrap_or_default();
        let _ = writeln!(
            out,
            "{},{},{},{:.6},{:.6},{delta}",
            r.variant.label(),
            r.iteration,
            r.runs,
            r.mean_macro_f1,
            r.std_macro_f1
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{generate_synthetic, Split, SynthConfig};
    use crate::windowing::WindowMode;

    fn tiny() -> (Vec<Document>, Corpus, AlConfig) {
        let pool = generate_synthetic(&SynthConfig { n_docs: 20, props_per_doc: 5, seed: 3, ..Default::default() }).unwrap();
        let mut test = generate_synthetic(&SynthConfig { n_docs: 6, props_per_doc: 5, seed: 4, doc_prefix: "t".into(), ..Default::default() }).unwrap();
        test.split = Split::Test;
        let cfg = AlConfig {
            iterations: 10,
            budget: Some(10),
            window: WindowConfig { window: 2, max_tokens: 64, mode: WindowMode::HeadGiven },
            train: TrainConfig { epochs: 1, batch_size: 8, warmup_steps: 0, ..Default::default() },
            encoder: EncoderConfig { dim: 8, layers: 1, heads: 1, ffn_mult: 2, dropout_p: 0.1, max_positions: 64, seed: 0 },
            mc_passes: 2,
            ..Default::default()
        };
        (pool.documents, test, cfg)
    }

    #[test]
    fn bookkeeping_drains_the_pool() {
        let (pool, test, cfg) = tiny();
        let AlOutcome::Completed(trace) = run_al(&pool, &test, &cfg, None, &mut SimulatedOracle).unwrap() else {
            panic!("suspended")
        };
        assert_eq!(trace.records.len(), 10);
        for (i, r) in trace.records.iter().enumerate() {
            assert_eq!(r.labeled, (i + 1) * 10);
        }
        let all: BTreeSet<(String, usize)> =
            trace.records.iter().flat_map(|r| r.selected.iter().map(|s| (s.doc_id.clone(), s.prop))).collect();
        assert_eq!(all.len(), 100);
        assert!(!trace.exhausted);
    }

    #[test]
    fn zero_budget_and_iterations_rejected() {
        let (pool, test, cfg) = tiny();
        let bad = AlConfig { budget: Some(0), ..cfg.clone() };
        assert!(matches!(run_al(&pool, &test, &bad, None, &mut SimulatedOracle), Err(AlError::Config(_))));
        let bad = AlConfig { iterations: 0, ..cfg };
        assert!(matches!(run_al(&pool, &test, &bad, None, &mut SimulatedOracle), Err(AlError::Config(_))));
    }

    #[test]
    fn exhaustion_is_flagged() {
        let (pool, test, cfg) = tiny();
        let cfg = AlConfig { iterations: 4, budget: Some(30), ..cfg };
        let trace = run_al(&pool, &test, &cfg, None, &mut SimulatedOracle).unwrap().trace().clone();
        assert!(trace.exhausted);
        assert_eq!(trace.records.len(), 4);
        assert_eq!(trace.records.last().unwrap().labeled, 100);
    }

    #[test]
    fn simulated_runs_are_deterministic_and_fall_back_without_a_model() {
        let (pool, test, cfg) = tiny();
        let cfg = AlConfig { iterations: 2, strategy: Strategy::MaxEntropy, ..cfg };
        let a = run_al(&pool, &test, &cfg, None, &mut SimulatedOracle).unwrap();
        let b = run_al(&pool, &test, &cfg, None, &mut SimulatedOracle).unwrap();
        assert_eq!(a, b);
        let t = a.trace();
        assert_eq!(t.records[0].strategy_used, Strategy::RandomProp);
        assert_eq!(t.records[1].strategy_used, Strategy::MaxEntropy);
    }

    struct FlakyOracle {
        fail_at: usize,
        calls: usize,
    }

    impl Oracle for FlakyOracle {
        fn label(&mut self, request: &LabelRequest) -> Result<Vec<RevealedPair>, OracleError> {
            self.calls += 1;
            if self.calls == self.fail_at {
                return Err(OracleError::Timeout);
            }
            SimulatedOracle.label(request)
        }
    }

    #[test]
    fn timeout_suspends_and_resume_matches_an_uninterrupted_run() {
        let (pool, test, cfg) = tiny();
        let cfg = AlConfig { iterations: 3, ..cfg };
        let straight = run_al(&pool, &test, &cfg, None, &mut SimulatedOracle).unwrap();
        let mut flaky = FlakyOracle { fail_at: 2, calls: 0 };
        let AlOutcome::Suspended(state) = run_al(&pool, &test, &cfg, None, &mut flaky).unwrap() else {
            panic!("expected suspension")
        };
        assert_eq!(state.iteration, 2);
        assert!(state.pending.is_some());
        let json = serde_json::to_string(&state).unwrap();
        let state: AlState = serde_json::from_str(&json).unwrap();
        let resumed = resume_al(state, &pool, &test, &cfg, None, &mut flaky).unwrap();
        assert_eq!(resumed, straight);
    }

    #[test]
    fn warm_start_with_zero_epochs_keeps_its_metrics() {
        let (pool, test, cfg) = tiny();
        let source = generate_synthetic(&SynthConfig { n_docs: 10, props_per_doc: 5, seed: 9, ..Default::default() }).unwrap();
        let warm = crate::relhead::train(&source, &cfg.window, &cfg.train, &cfg.encoder, None).unwrap().checkpoint;
        let expected = evaluate_model(Some(&warm), &test, &cfg.window).unwrap();
        let cfg = AlConfig { iterations: 3, train: TrainConfig { epochs: 0, ..cfg.train.clone() }, ..cfg };
        let trace = run_al(&pool, &test, &cfg, Some(&warm), &mut SimulatedOracle).unwrap().trace().clone();
        assert!(trace.records.iter().all(|r| r.metrics == expected));
    }

    #[test]
    fn comparison_of_identical_variants_has_no_spread() {
        let (pool, test, cfg) = tiny();
        let cfg = AlConfig { iterations: 2, ..cfg };
        let v = Variant { strategy: Strategy::RandomProp, warm_start: false };
        let c = compare_strategies("tiny", &pool, &test, &cfg, &[v], &[5], None).unwrap();
        assert_eq!(c.summary.len(), 2);
        for (row, rec) in c.summary.iter().zip(&c.traces[0].records) {
            assert_eq!(row.mean_macro_f1, rec.metrics.macro_f1);
            assert_eq!(row.std_macro_f1, 0.0);
        }
        let table = flat_table("tiny", &c.traces);
        assert_eq!(table.lines().count(), 3);
        assert!(table.lines().nth(1).unwrap().starts_with("tiny,random_prop,1,5,"));
    }

    #[test]
    fn simulated_reveal_covers_both_roles() {
        let d = crate::corpus::fixtures::doc("a", 6, &[(1, 3, crate::corpus::RelationLabel::Support)]);
        let docs = vec![d];
        let window = WindowConfig { window: 2, max_tokens: 512, mode: WindowMode::HeadGiven };
        let pick = |p| vec![AcquisitionScore { prop: PropRef::new(0, p), score: 1.0 }];
        let sel = pick(3);
        let got = SimulatedOracle.label(&LabelRequest { iteration: 1, docs: &docs, selected: &sel, window: &window }).unwrap();
        assert_eq!(got, vec![RevealedPair { doc: 0, head: 1, tail: 3, label: PairLabel::Support }]);
        let sel = pick(1);
        let got = SimulatedOracle.label(&LabelRequest { iteration: 1, docs: &docs, selected: &sel, window: &window }).unwrap();
        let tails: Vec<usize> = got.iter().map(|r| r.tail).collect();
        assert_eq!(tails, vec![0, 2, 3]);
        let sel = pick(5);
        assert!(SimulatedOracle.label(&LabelRequest { iteration: 1, docs: &docs, selected: &sel, window: &window }).unwrap().is_empty());
    }
}
