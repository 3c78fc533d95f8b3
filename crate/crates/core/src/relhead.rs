//! Pairwise relation classifier on top of the encoder, its training loop,
//! document-level prediction and checkpointing.
//!
//! For a head `j` and candidate tail `i` encoded in the same window, the label
//! distribution is `softmax(tanh([H_j; H_i] W1 + b1) W2 + b2)`.

use std::collections::HashMap;
use std::path::Path;

use ndarray::{Array1, ArrayView1};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::checkpoint::{CheckpointError, Container};
use crate::corpus::{Corpus, Document};
use crate::encoder::{
    self, uniform, Dropout, EncodeMode, EncoderConfig, EncoderError, EncoderParams, PropRepresentation,
    WindowInput,
};
use crate::graph::{Graph, Mat, NodeId};
use crate::optim::{learning_rate, Adam, Schedule};
use crate::rng::{self, Rng};
use crate::text::token_count;
use crate::vocab::Vocab;
use crate::windowing::{build_examples, head_context, PairExample, PairLabel, WindowConfig, WindowError};

pub const NUM_CLASSES: usize = 3;

#[derive(Debug, Error)]
pub enum RelHeadError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("no training examples could be derived")]
    EmptyTraining,
    #[error("incompatible checkpoint: {0}")]
    Incompatible(String),
    #[error("checkpoint has no relation head")]
    MissingHead,
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("unknown document `{0}`")]
    UnknownDocument(String),
    #[error(transparent)]
    Encoder(#[from] EncoderError),
    #[error(transparent)]
    Window(#[from] WindowError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
}

impl From<crate::graph::GraphError> for RelHeadError {
    fn from(e: crate::graph::GraphError) -> Self {
        RelHeadError::Encoder(e.into())
    }
}

// ---------------------------------------------------------------------------
// Output layer

const W1: usize = 0;
const B1: usize = 1;
const W2: usize = 2;
const B2: usize = 3;
const HEAD_NAMES: [&str; 4] = ["head.w1", "head.b1", "head.w2", "head.b2"];

/// `W1: 2·dim × hidden`, `b1: 1 × hidden`, `W2: hidden × 3`, `b2: 1 × 3`.
#[derive(Debug, Clone, PartialEq)]
pub struct RelationHeadParams {
    pub tensors: Vec<Mat>,
}

impl RelationHeadParams {
    pub fn new(w1: Mat, b1: Mat, w2: Mat, b2: Mat) -> Result<Self, RelHeadError> {
        let hidden = w1.ncols();
        if hidden == 0 || w1.nrows() % 2 != 0 {
            return Err(RelHeadError::Shape(format!("W1 is {:?}", w1.dim())));
        }
        if b1.dim() != (1, hidden) || w2.dim() != (hidden, NUM_CLASSES) || b2.dim() != (1, NUM_CLASSES) {
            return Err(RelHeadError::Shape("head tensors disagree on widths".into()));
        }
        Ok(Self { tensors: vec![w1, b1, w2, b2] })
    }

    pub fn init(dim: usize, hidden: usize, rng: &mut Rng) -> Self {
        Self {
            tensors: vec![
                uniform((2 * dim, hidden), (3.0 / (2 * dim) as f64).sqrt(), rng),
                Mat::zeros((1, hidden)),
                uniform((hidden, NUM_CLASSES), (3.0 / hidden as f64).sqrt(), rng),
                Mat::zeros((1, NUM_CLASSES)),
            ],
        }
    }

    pub fn zeros(dim: usize, hidden: usize) -> Self {
        Self {
            tensors: vec![
                Mat::zeros((2 * dim, hidden)),
                Mat::zeros((1, hidden)),
                Mat::zeros((hidden, NUM_CLASSES)),
                Mat::zeros((1, NUM_CLASSES)),
            ],
        }
    }

    pub fn input_width(&self) -> usize {
        self.tensors[W1].nrows() / 2
    }

    pub fn hidden(&self) -> usize {
        self.tensors[W1].ncols()
    }

    pub fn w1(&self) -> &Mat {
        &self.tensors[W1]
    }
    pub fn b1(&self) -> &Mat {
        &self.tensors[B1]
    }
    pub fn w2(&self) -> &Mat {
        &self.tensors[W2]
    }
    pub fn b2(&self) -> &Mat {
        &self.tensors[B2]
    }
}

/// Probabilities over (support, attack, no_rel).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LabelDistribution(pub [f64; NUM_CLASSES]);

impl LabelDistribution {
    pub fn uniform() -> Self {
        Self([1.0 / 3.0; NUM_CLASSES])
    }

    pub fn from_logits(logits: ArrayView1<f64>) -> Self {
        let max = logits.fold(f64::NEG_INFINITY, |m, &x| m.max(x));
        let mut p = [0.0; NUM_CLASSES];
        let mut sum = 0.0;
        for (k, &z) in logits.iter().enumerate() {
            p[k] = (z - max).exp();
            sum += p[k];
        }
        for v in &mut p {
            *v /= sum;
        }
        Self(p)
    }

    pub fn prob(&self, label: PairLabel) -> f64 {
        self.0[label.index()]
    }

    /// Most probable label; ties go to the earlier class.
    pub fn argmax(&self) -> PairLabel {
        let mut best = 0;
        for k in 1..NUM_CLASSES {
            if self.0[k] > self.0[best] {
                best = k;
            }
        }
        PairLabel::from_index(best)
    }
}

/// Label distribution of one head-tail pair from their representations.
pub fn predict_pair(
    head_rep: ArrayView1<f64>,
    tail_rep: ArrayView1<f64>,
    params: &RelationHeadParams,
) -> Result<LabelDistribution, RelHeadError> {
    let d = params.input_width();
    if head_rep.len() != d || tail_rep.len() != d {
        return Err(RelHeadError::Shape(format!(
            "representations of width {} and {}, head expects {d}",
            head_rep.len(),
            tail_rep.len()
        )));
    }
    let mut x = Array1::zeros(2 * d);
    x.slice_mut(ndarray::s![..d]).assign(&head_rep);
    x.slice_mut(ndarray::s![d..]).assign(&tail_rep);
    let hidden = (x.dot(params.w1()) + params.b1().row(0)).mapv(f64::tanh);
    let logits = hidden.dot(params.w2()) + params.b2().row(0);
    Ok(LabelDistribution::from_logits(logits.view()))
}

// ---------------------------------------------------------------------------
// Checkpoints

pub const CHECKPOINT_KIND: &str = "relation-model";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: f64,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub steps: usize,
    /// Tag of the corpus the parameters were last trained on.
    pub source: String,
    /// Training objective that produced the parameters.
    pub objective: String,
    pub epochs: Vec<EpochRecord>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: EncoderConfig,
    pub vocab: Vocab,
    pub encoder: EncoderParams,
    /// Absent for encoder-only (pretrained) checkpoints.
    pub head: Option<RelationHeadParams>,
    pub meta: CheckpointMeta,
}

#[derive(Serialize, Deserialize)]
struct StoredHeader {
    config: EncoderConfig,
    vocab: Vocab,
    meta: CheckpointMeta,
    has_head: bool,
}

impl Checkpoint {
    /// Fresh randomly initialized model.
    pub fn init(config: EncoderConfig, vocab: Vocab, seed: u64) -> Self {
        let encoder = EncoderParams::init(&config, vocab.len(), &mut rng::substream(seed, "encoder-init"));
        let head = RelationHeadParams::init(config.dim, config.dim, &mut rng::substream(seed, "head-init"));
        Self { config, vocab, encoder, head: Some(head), meta: CheckpointMeta::default() }
    }

    pub fn require_head(&self) -> Result<&RelationHeadParams, RelHeadError> {
        self.head.as_ref().ok_or(RelHeadError::MissingHead)
    }

    pub fn ensure_compatible(&self, config: &EncoderConfig) -> Result<(), RelHeadError> {
        if !self.config.same_shape(config) {
            return Err(RelHeadError::Incompatible(format!(
                "checkpoint encoder {:?} does not match requested {:?}",
                self.config, config
            )));
        }
        Ok(())
    }

    fn validate_shapes(&self) -> Result<(), RelHeadError> {
        if !self.encoder.matches(&self.config, self.vocab.len()) {
            return Err(RelHeadError::Incompatible("encoder tensors disagree with config".into()));
        }
        if let Some(h) = &self.head {
            if h.input_width() != self.config.dim {
                return Err(RelHeadError::Incompatible("relation head width disagrees with encoder".into()));
            }
        }
        Ok(())
    }

    pub fn to_container(&self) -> Container {
        let header = StoredHeader {
            config: self.config.clone(),
            vocab: self.vocab.clone(),
            meta: self.meta.clone(),
            has_head: self.head.is_some(),
        };
        let mut tensors: Vec<(String, Mat)> =
            self.encoder.names.iter().cloned().zip(self.encoder.tensors.iter().cloned()).collect();
        if let Some(h) = &self.head {
            tensors.extend(HEAD_NAMES.iter().map(|n| n.to_string()).zip(h.tensors.iter().cloned()));
        }
        Container {
            kind: CHECKPOINT_KIND.into(),
            meta: serde_json::to_value(header).expect("header serializes"),
            tensors,
        }
    }

    pub fn from_container(mut c: Container) -> Result<Self, RelHeadError> {
        if c.kind != CHECKPOINT_KIND {
            return Err(RelHeadError::Incompatible(format!("container holds `{}`", c.kind)));
        }
        let header: StoredHeader =
            serde_json::from_value(c.meta.clone()).map_err(|e| RelHeadError::Checkpoint(e.into()))?;
        let head = if header.has_head {
            let mut parts = Vec::new();
            for name in HEAD_NAMES {
                parts.push(c.take(name).ok_or_else(|| RelHeadError::Incompatible(format!("missing {name}")))?);
            }
            let b2 = parts.pop().unwrap();
            let w2 = parts.pop().unwrap();
            let b1 = parts.pop().unwrap();
            let w1 = parts.pop().unwrap();
            Some(RelationHeadParams::new(w1, b1, w2, b2)?)
        } else {
            None
        };
        let (names, tensors) = c.tensors.into_iter().unzip();
        let ckpt = Checkpoint {
            config: header.config,
            vocab: header.vocab,
            encoder: EncoderParams { names, tensors },
            head,
            meta: header.meta,
        };
        ckpt.validate_shapes()?;
        Ok(ckpt)
    }
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: &Path) -> Result<(), RelHeadError> {
    ckpt.to_container().save(path)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint, RelHeadError> {
    Checkpoint::from_container(Container::load(path)?)
}

/// Load and check that the encoder architecture matches `config`.
pub fn load_checkpoint_for(path: &Path, config: &EncoderConfig) -> Result<Checkpoint, RelHeadError> {
    let ckpt = load_checkpoint(path)?;
    ckpt.ensure_compatible(config)?;
    Ok(ckpt)
}

// ---------------------------------------------------------------------------
// Windows

/// Token ids of every proposition of every document.
#[derive(Debug, Clone)]
pub struct TokenCache {
    docs: Vec<Vec<Vec<usize>>>,
}

impl TokenCache {
    pub fn new(vocab: &Vocab, docs: &[Document]) -> Self {
        Self {
            docs: docs
                .iter()
                .map(|d| d.propositions.iter().map(|p| vocab.encode(&p.text)).collect())
                .collect(),
        }
    }

    pub fn window(&self, doc: usize, context: &[usize]) -> WindowInput {
        let props: Vec<Vec<usize>> = context.iter().map(|&i| self.docs[doc][i].clone()).collect();
        WindowInput::new(&props)
    }
}

/// Pairs sharing one encoded context.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowBatch {
    pub doc: usize,
    pub context: Vec<usize>,
    /// (position of head in context, position of tail in context, label, example index)
    pub pairs: Vec<(usize, usize, PairLabel, usize)>,
}

/// Group examples by (document, context), in first-occurrence order.
pub fn group_windows(docs: &[Document], examples: &[PairExample]) -> Result<Vec<WindowBatch>, RelHeadError> {
    let doc_index: HashMap<&str, usize> = docs.iter().enumerate().map(|(i, d)| (d.doc_id.as_str(), i)).collect();
    let mut slots: HashMap<(usize, &[usize]), usize> = HashMap::new();
    let mut out: Vec<WindowBatch> = Vec::new();
    for (k, ex) in examples.iter().enumerate() {
        let doc = *doc_index
            .get(ex.doc_id.as_str())
            .ok_or_else(|| RelHeadError::UnknownDocument(ex.doc_id.clone()))?;
        let slot = *slots.entry((doc, ex.context.as_slice())).or_insert_with(|| {
            out.push(WindowBatch { doc, context: ex.context.clone(), pairs: Vec::new() });
            out.len() - 1
        });
        let pos = |id: usize| ex.context.binary_search(&id).ok();
        let (Some(h), Some(t)) = (pos(ex.head), pos(ex.tail)) else {
            return Err(RelHeadError::Config(format!("pair ({}, {}) not inside its context", ex.head, ex.tail)));
        };
        out[slot].pairs.push((h, t, ex.label, k));
    }
    Ok(out)
}

/// Logits node for the pairs of one window, with encoder tensors bound at 0
/// and head tensors right after them.
fn pair_logits(
    g: &mut Graph,
    ckpt_config: &EncoderConfig,
    n_encoder: usize,
    vocab_size: usize,
    input: &WindowInput,
    heads: &[usize],
    tails: &[usize],
    dropout: &mut Dropout,
) -> Result<NodeId, RelHeadError> {
    let reps = encoder::forward_representations(g, 0, ckpt_config, vocab_size, input, dropout)?;
    let hj = g.gather_rows(reps, heads);
    let hi = g.gather_rows(reps, tails);
    let x = g.concat_cols(&[hj, hi]);
    let (w1, b1) = (g.param(n_encoder + W1), g.param(n_encoder + B1));
    let h = g.affine(x, w1, b1);
    let h = g.tanh(h);
    let (w2, b2) = (g.param(n_encoder + W2), g.param(n_encoder + B2));
    Ok(g.affine(h, w2, b2))
}

// ---------------------------------------------------------------------------
// Training

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub lr: f64,
    pub warmup_steps: usize,
    pub schedule: Schedule,
    pub epochs: usize,
    /// Windows per optimizer step.
    pub batch_size: usize,
    pub seed: u64,
    pub class_weighting: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { lr: 1e-3, warmup_steps: 100, schedule: Schedule::Constant, epochs: 15, batch_size: 16, seed: 0, class_weighting: false }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), RelHeadError> {
        if !(self.lr >= 0.0) {
            return Err(RelHeadError::Config("learning rate must be non-negative".into()));
        }
        if self.batch_size == 0 {
            return Err(RelHeadError::Config("batch_size must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub epochs: Vec<EpochRecord>,
}

fn class_weights(examples: &[PairExample], enabled: bool) -> [f64; NUM_CLASSES] {
    if !enabled {
        return [1.0; NUM_CLASSES];
    }
    let mut counts = [0usize; NUM_CLASSES];
    for e in examples {
        counts[e.label.index()] += 1;
    }
    let present = counts.iter().filter(|&&c| c > 0).count().max(1);
    let total = examples.len() as f64;
    counts.map(|c| if c == 0 { 0.0 } else { total / (present as f64 * c as f64) })
}

/// Supervised training on all windowed pairs of `corpus`.
pub fn train(
    corpus: &Corpus,
    window: &WindowConfig,
    cfg: &TrainConfig,
    encoder_cfg: &EncoderConfig,
    init: Option<&Checkpoint>,
) -> Result<TrainOutcome, RelHeadError> {
    window.validate()?;
    let examples: Vec<PairExample> =
        corpus.documents.iter().flat_map(|d| build_examples(d, window, &token_count)).collect();
    train_examples(&corpus.documents, examples, cfg, encoder_cfg, init, &corpus_tag(corpus))
}

fn corpus_tag(corpus: &Corpus) -> String {
    format!("{}:{}docs", corpus.split, corpus.documents.len())
}

/// Train on an explicit set of pair examples over `docs`. Without `init`, the
/// vocabulary is built from `docs` and parameters are freshly initialized.
pub fn train_examples(
    docs: &[Document],
    examples: Vec<PairExample>,
    cfg: &TrainConfig,
    encoder_cfg: &EncoderConfig,
    init: Option<&Checkpoint>,
    source: &str,
) -> Result<TrainOutcome, RelHeadError> {
    cfg.validate()?;
    encoder_cfg.validate()?;
    if examples.is_empty() {
        return Err(RelHeadError::EmptyTraining);
    }
    let mut ckpt = match init {
        Some(c) => {
            c.ensure_compatible(encoder_cfg)?;
            let mut c = c.clone();
            c.config.dropout_p = encoder_cfg.dropout_p;
            if c.head.is_none() {
                c.head = Some(RelationHeadParams::init(
                    c.config.dim,
                    c.config.dim,
                    &mut rng::substream(cfg.seed, "head-init"),
                ));
            }
            c
        }
        None => {
            let vocab = Vocab::build(&Corpus::new(docs.to_vec(), crate::corpus::Split::Train), 1);
            Checkpoint::init(encoder_cfg.clone(), vocab, cfg.seed)
        }
    };
    let weights = class_weights(&examples, cfg.class_weighting);
    let windows = group_windows(docs, &examples)?;
    let tokens = TokenCache::new(&ckpt.vocab, docs);
    let inputs: Vec<WindowInput> = windows.iter().map(|w| tokens.window(w.doc, &w.context)).collect();

    let mut head = ckpt.head.take().expect("head initialized above");
    let n_encoder = ckpt.encoder.tensors.len();
    let mut adam = Adam::new(ckpt.encoder.tensors.iter().chain(&head.tensors));
    let steps_per_epoch = windows.len().div_ceil(cfg.batch_size);
    let total_steps = steps_per_epoch * cfg.epochs;
    let mut shuffle_rng = rng::substream(cfg.seed, "shuffle");
    let mut dropout_rng = rng::substream(cfg.seed, "dropout");
    let mut order: Vec<usize> = (0..windows.len()).collect();
    let mut records = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut shuffle_rng);
        let (mut loss_sum, mut weight_sum, mut correct, mut seen) = (0.0, 0.0, 0usize, 0usize);
        for batch in order.chunks(cfg.batch_size) {
            let batch_weight: f64 =
                batch.iter().flat_map(|&w| &windows[w].pairs).map(|p| weights[p.2.index()]).sum();
            if batch_weight == 0.0 {
                continue;
            }
            let groups: [&[Mat]; 2] = [&ckpt.encoder.tensors, &head.tensors];
            let mut grads: Vec<Mat> = groups.iter().flat_map(|g| g.iter()).map(|t| Mat::zeros(t.raw_dim())).collect();
            for &w in batch {
                let win = &windows[w];
                let heads: Vec<usize> = win.pairs.iter().map(|p| p.0).collect();
                let tails: Vec<usize> = win.pairs.iter().map(|p| p.1).collect();
                let targets: Vec<usize> = win.pairs.iter().map(|p| p.2.index()).collect();
                let pair_w: Vec<f64> = win.pairs.iter().map(|p| weights[p.2.index()] / batch_weight).collect();
                let mut g = Graph::new(&groups);
                let mut dropout = Dropout::On { p: ckpt.config.dropout_p, rng: &mut dropout_rng };
                let logits = pair_logits(
                    &mut g,
                    &ckpt.config,
                    n_encoder,
                    ckpt.vocab.len(),
                    &inputs[w],
                    &heads,
                    &tails,
                    &mut dropout,
                )?;
                let loss = g.cross_entropy(logits, &targets, &pair_w);
                g.backward(loss, &mut grads)?;
                loss_sum += g.scalar(loss) * batch_weight;
                weight_sum += pair_w.iter().sum::<f64>() * batch_weight;
                let probs = g.probabilities(loss).expect("cross-entropy node");
                for (r, &t) in targets.iter().enumerate() {
                    let dist = LabelDistribution([probs[[r, 0]], probs[[r, 1]], probs[[r, 2]]]);
                    correct += usize::from(dist.argmax().index() == t);
                    seen += 1;
                }
            }
            let lr = learning_rate(cfg.lr, cfg.schedule, cfg.warmup_steps, adam.steps(), total_steps);
            adam.step(ckpt.encoder.tensors.iter_mut().chain(head.tensors.iter_mut()), &grads, lr);
        }
        let record = EpochRecord {
            epoch: epoch + 1,
            loss: if weight_sum > 0.0 { loss_sum / weight_sum } else { 0.0 },
            accuracy: if seen > 0 { correct as f64 / seen as f64 } else { 0.0 },
        };
        tracing::debug!(epoch = record.epoch, loss = record.loss, accuracy = record.accuracy, "epoch");
        records.push(record);
    }
    ckpt.head = Some(head);
    ckpt.meta.steps += adam.steps();
    ckpt.meta.source = source.to_string();
    ckpt.meta.objective = "relation".into();
    ckpt.meta.epochs = records.clone();
    Ok(TrainOutcome { checkpoint: ckpt, epochs: records })
}

// ---------------------------------------------------------------------------
// Inference

/// Label distributions for `examples`, in order. `McDropout` draws its masks
/// from `seed`; `Eval` ignores it.
pub fn score_examples(
    ckpt: &Checkpoint,
    docs: &[Document],
    examples: &[PairExample],
    mode: EncodeMode,
    seed: u64,
) -> Result<Vec<LabelDistribution>, RelHeadError> {
    let head = ckpt.require_head()?;
    let windows = group_windows(docs, examples)?;
    let tokens = TokenCache::new(&ckpt.vocab, docs);
    let groups: [&[Mat]; 2] = [&ckpt.encoder.tensors, &head.tensors];
    let n_encoder = ckpt.encoder.tensors.len();
    let mut out = vec![LabelDistribution::uniform(); examples.len()];
    let mut rng = rng::substream(seed, "mc-dropout");
    for win in &windows {
        let input = tokens.window(win.doc, &win.context);
        let heads: Vec<usize> = win.pairs.iter().map(|p| p.0).collect();
        let tails: Vec<usize> = win.pairs.iter().map(|p| p.1).collect();
        let mut g = Graph::new(&groups);
        let mut dropout = match mode {
            EncodeMode::Eval => Dropout::Off,
            _ => Dropout::On { p: ckpt.config.dropout_p, rng: &mut rng },
        };
        let logits = pair_logits(&mut g, &ckpt.config, n_encoder, ckpt.vocab.len(), &input, &heads, &tails, &mut dropout)?;
        for (r, p) in win.pairs.iter().enumerate() {
            out[p.3] = LabelDistribution::from_logits(g.value(logits).row(r));
        }
    }
    Ok(out)
}

/// Eval-mode mean cross-entropy `-mean log p(gold)` over `examples`.
pub fn mean_loss(ckpt: &Checkpoint, docs: &[Document], examples: &[PairExample]) -> Result<f64, RelHeadError> {
    if examples.is_empty() {
        return Err(RelHeadError::EmptyTraining);
    }
    let dists = score_examples(ckpt, docs, examples, EncodeMode::Eval, 0)?;
    let total: f64 = dists.iter().zip(examples).map(|(d, e)| -d.prob(e.label).ln()).sum();
    Ok(total / examples.len() as f64)
}

/// Eval-mode accuracy over `examples`.
pub fn accuracy(ckpt: &Checkpoint, docs: &[Document], examples: &[PairExample]) -> Result<f64, RelHeadError> {
    if examples.is_empty() {
        return Err(RelHeadError::EmptyTraining);
    }
    let dists = score_examples(ckpt, docs, examples, EncodeMode::Eval, 0)?;
    let hits = dists.iter().zip(examples).filter(|(d, e)| d.argmax() == e.label).count();
    Ok(hits as f64 / examples.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredPair {
    pub doc_id: String,
    pub head: usize,
    pub tail: usize,
    pub predicted: PairLabel,
    pub distribution: LabelDistribution,
}

fn check_window(ckpt: &Checkpoint, cfg: &WindowConfig) -> Result<(), RelHeadError> {
    cfg.validate()?;
    if cfg.max_tokens > ckpt.config.max_positions {
        return Err(RelHeadError::Config(format!(
            "window max_tokens {} exceeds encoder max_positions {}",
            cfg.max_tokens, ckpt.config.max_positions
        )));
    }
    Ok(())
}

/// Score every windowed pair of `doc` in eval mode.
pub fn predict_document(doc: &Document, ckpt: &Checkpoint, cfg: &WindowConfig) -> Result<Vec<ScoredPair>, RelHeadError> {
    check_window(ckpt, cfg)?;
    let examples = build_examples(doc, cfg, &token_count);
    let docs = std::slice::from_ref(doc);
    let dists = score_examples(ckpt, docs, &examples, EncodeMode::Eval, 0)?;
    Ok(examples
        .into_iter()
        .zip(dists)
        .map(|(e, d)| ScoredPair { doc_id: e.doc_id, head: e.head, tail: e.tail, predicted: d.argmax(), distribution: d })
        .collect())
}

pub fn predict_corpus(corpus: &Corpus, ckpt: &Checkpoint, cfg: &WindowConfig) -> Result<Vec<ScoredPair>, RelHeadError> {
    let mut out = Vec::new();
    for doc in &corpus.documents {
        out.extend(predict_document(doc, ckpt, cfg)?);
    }
    Ok(out)
}

/// Eval-mode representation of each proposition taken from its own head
/// window. Keyed by (document index, proposition id).
pub fn proposition_representations(
    ckpt: &Checkpoint,
    docs: &[Document],
    cfg: &WindowConfig,
) -> Result<HashMap<(usize, usize), PropRepresentation>, RelHeadError> {
    check_window(ckpt, cfg)?;
    let tokens = TokenCache::new(&ckpt.vocab, docs);
    let mut out = HashMap::new();
    for (di, doc) in docs.iter().enumerate() {
        if doc.is_empty() {
            continue;
        }
        let lens: Vec<usize> = doc.propositions.iter().map(|p| token_count(&p.text)).collect();
        let mut cache: HashMap<Vec<usize>, Vec<PropRepresentation>> = HashMap::new();
        for p in 0..doc.len() {
            let context = head_context(doc.len(), p, cfg, |i| lens[i]);
            let pos = context.binary_search(&p).expect("head stays in its context");
            if !cache.contains_key(&context) {
                let input = tokens.window(di, &context);
                let mut g = Graph::new(&[&ckpt.encoder.tensors]);
                let reps = encoder::forward_representations(
                    &mut g,
                    0,
                    &ckpt.config,
                    ckpt.vocab.len(),
                    &input,
                    &mut Dropout::Off,
                )?;
                let rows = g.value(reps).rows().into_iter().map(|r| r.to_owned()).collect();
                cache.insert(context.clone(), rows);
            }
            out.insert((di, p), cache[&context][pos].clone());
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::fixtures::doc;
    use crate::corpus::RelationLabel::*;
    use crate::corpus::Split;
    use crate::windowing::WindowMode;
    use ndarray::array;

    fn tiny_cfg() -> EncoderConfig {
        EncoderConfig { dim: 8, layers: 1, heads: 2, ffn_mult: 2, dropout_p: 0.0, max_positions: 128, seed: 0 }
    }

    #[test]
    fn zero_head_is_uniform() {
        let head = RelationHeadParams::zeros(2, 2);
        let d = predict_pair(array![0.3, -1.0].view(), array![2.0, 0.5].view(), &head).unwrap();
        assert_eq!(d.0, [1.0 / 3.0; 3]);
    }

    #[test]
    fn shift_invariance_and_shape_errors() {
        let mut head = RelationHeadParams::init(2, 3, &mut rng::from_seed(1));
        let a = predict_pair(array![0.3, -1.0].view(), array![2.0, 0.5].view(), &head).unwrap();
        head.tensors[B2] += 5.0;
        let b = predict_pair(array![0.3, -1.0].view(), array![2.0, 0.5].view(), &head).unwrap();
        for k in 0..3 {
            assert!((a.0[k] - b.0[k]).abs() < 1e-12);
        }
        assert!(predict_pair(array![1.0].view(), array![2.0, 0.5].view(), &head).is_err());
        assert!(RelationHeadParams::new(Mat::zeros((4, 2)), Mat::zeros((1, 3)), Mat::zeros((2, 3)), Mat::zeros((1, 3))).is_err());
    }

    #[test]
    fn argmax_tie_order() {
        assert_eq!(LabelDistribution::uniform().argmax(), PairLabel::Support);
        assert_eq!(LabelDistribution([0.2, 0.4, 0.4]).argmax(), PairLabel::Attack);
    }

    #[test]
    fn checkpoint_round_trip_and_mismatch() {
        let corpus = Corpus::new(vec![doc("a", 3, &[(0, 1, Support)])], Split::Train);
        let vocab = Vocab::build(&corpus, 1);
        let ckpt = Checkpoint::init(tiny_cfg(), vocab, 4);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        save_checkpoint(&ckpt, &path).unwrap();
        assert_eq!(load_checkpoint(&path).unwrap(), ckpt);
        let other = EncoderConfig { dim: 16, ..tiny_cfg() };
        assert!(matches!(load_checkpoint_for(&path, &other), Err(RelHeadError::Incompatible(_))));

        let mut encoder_only = ckpt.clone();
        encoder_only.head = None;
        save_checkpoint(&encoder_only, &path).unwrap();
        let back = load_checkpoint(&path).unwrap();
        assert!(back.head.is_none());
        assert!(matches!(back.require_head(), Err(RelHeadError::MissingHead)));
    }

    #[test]
    fn grouping_shares_contexts() {
        let d = doc("a", 4, &[(0, 1, Support), (3, 2, Support)]);
        let cfg = WindowConfig { window: 5, max_tokens: 512, mode: WindowMode::HeadGiven };
        let ex = build_examples(&d, &cfg, &token_count);
        let windows = group_windows(std::slice::from_ref(&d), &ex).unwrap();
        assert_eq!(windows.len(), 1);
        assert_eq!(windows[0].pairs.len(), 6);
        let unknown = PairExample { doc_id: "zzz".into(), ..ex[0].clone() };
        assert!(matches!(group_windows(&[d], &[unknown]), Err(RelHeadError::UnknownDocument(_))));
    }

    #[test]
    fn empty_training_rejected() {
        let corpus = Corpus::new(vec![doc("a", 3, &[])], Split::Train);
        let window = WindowConfig { window: 2, max_tokens: 128, mode: WindowMode::HeadGiven };
        let res = train(&corpus, &window, &TrainConfig::default(), &tiny_cfg(), None);
        assert!(matches!(res, Err(RelHeadError::EmptyTraining)));
    }

    #[test]
    fn window_budget_must_fit_encoder() {
        let d = doc("a", 3, &[(0, 1, Support)]);
        let corpus = Corpus::new(vec![d.clone()], Split::Train);
        let ckpt = Checkpoint::init(tiny_cfg(), Vocab::build(&corpus, 1), 0);
        let cfg = WindowConfig { window: 2, max_tokens: 512, mode: WindowMode::EndToEnd };
        assert!(matches!(predict_document(&d, &ckpt, &cfg), Err(RelHeadError::Config(_))));
    }
}
