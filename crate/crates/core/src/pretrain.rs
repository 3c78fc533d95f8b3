//! Self-supervised encoder pretraining: masked-token prediction (MLM) and
//! context-aware perturbation detection (Context-Pert).

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Corpus, Document};
use crate::encoder::{self, uniform, Dropout, EncoderConfig, EncoderParams, WindowInput};
use crate::graph::{Graph, Mat};
use crate::optim::{learning_rate, Adam};
use crate::relhead::{Checkpoint, CheckpointMeta, EpochRecord, RelHeadError, TrainConfig};
use crate::rng::{self, Rng};
use crate::vocab::{Vocab, MASK, NUM_SPECIAL};

#[derive(Debug, Error)]
pub enum PretrainError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error(transparent)]
    Model(#[from] RelHeadError),
}

impl From<crate::encoder::EncoderError> for PretrainError {
    fn from(e: crate::encoder::EncoderError) -> Self {
        PretrainError::Model(e.into())
    }
}

impl From<crate::graph::GraphError> for PretrainError {
    fn from(e: crate::graph::GraphError) -> Self {
        PretrainError::Model(e.into())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Objective {
    Mlm,
    ContextPert,
}

impl Objective {
    pub fn name(self) -> &'static str {
        match self {
            Objective::Mlm => "mlm",
            Objective::ContextPert => "context_pert",
        }
    }
}

impl fmt::Display for Objective {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Objective {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.replace('-', "_").as_str() {
            "mlm" => Ok(Objective::Mlm),
            "context_pert" => Ok(Objective::ContextPert),
            _ => Err(format!("unknown objective `{s}`")),
        }
    }
}

// ---------------------------------------------------------------------------
// Masking

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskAction {
    Mask,
    Random,
    Keep,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct MaskPlan {
    /// Selected positions, ascending.
    pub positions: Vec<usize>,
    pub actions: Vec<MaskAction>,
    pub originals: Vec<usize>,
    /// Token placed at each position in the corrupted input.
    pub replacements: Vec<usize>,
}

impl MaskPlan {
    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    /// The corrupted copy of `ids`.
    pub fn apply(&self, ids: &[usize]) -> Vec<usize> {
        let mut out = ids.to_vec();
        for (&p, &r) in self.positions.iter().zip(&self.replacements) {
            out[p] = r;
        }
        out
    }
}

/// Positions selected out of `maskable`: 15%, rounded up, at least one.
pub fn mask_count(maskable: usize) -> usize {
    if maskable == 0 { 0 } else { ((15 * maskable).div_ceil(100)).max(1) }
}

/// Plan over the non-special positions of `ids`; random replacements are
/// drawn from the non-special ids below `vocab_size`.
pub fn make_mask_plan(ids: &[usize], vocab_size: usize, seed: u64) -> MaskPlan {
    plan_with(ids, vocab_size, &mut rng::substream(seed, "masking"))
}

fn plan_with(ids: &[usize], vocab_size: usize, rng: &mut Rng) -> MaskPlan {
    let maskable: Vec<usize> = (0..ids.len()).filter(|&i| !Vocab::is_special(ids[i])).collect();
    let k = mask_count(maskable.len());
    let mut positions: Vec<usize> =
        rand::seq::index::sample(rng, maskable.len(), k).into_iter().map(|i| maskable[i]).collect();
    positions.sort_unstable();
    let mut plan = MaskPlan::default();
    for p in positions {
        let original = ids[p];
        let u = rng.random::<f64>();
        let (action, replacement) = if u < 0.8 {
            (MaskAction::Mask, MASK)
        } else if u < 0.9 && vocab_size > NUM_SPECIAL {
            (MaskAction::Random, rng.random_range(NUM_SPECIAL..vocab_size))
        } else {
            (MaskAction::Keep, original)
        };
        plan.positions.push(p);
        plan.actions.push(action);
        plan.originals.push(original);
        plan.replacements.push(replacement);
    }
    plan
}

// ---------------------------------------------------------------------------
// Perturbation

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PerturbationLabel {
    Replaced,
    Shuffled,
    Unchanged,
}

impl PerturbationLabel {
    pub const ALL: [PerturbationLabel; 3] =
        [PerturbationLabel::Replaced, PerturbationLabel::Shuffled, PerturbationLabel::Unchanged];

    pub fn index(self) -> usize {
        self as usize
    }
}

/// Replaced and shuffled set sizes for `n` propositions: 20% each, rounded
/// to nearest, at least one.
pub fn perturbation_counts(n: usize) -> (usize, usize) {
    let k = ((n + 2) / 5).max(1);
    (k, k)
}

pub const MIN_PERTURB_PROPS: usize = 5;

/// Perturb `doc`: replace some propositions with draws from `donors`,
/// permute a disjoint set among themselves, keep the rest.
pub fn perturb_document(
    doc: &Document,
    donors: &[String],
    seed: u64,
) -> Result<(Vec<String>, Vec<PerturbationLabel>), PretrainError> {
    let texts: Vec<&str> = doc.propositions.iter().map(|p| p.text.as_str()).collect();
    let mut rng = rng::substream(seed, "perturb");
    perturb_with(&texts, donors.len(), |i| donors[i].clone(), &mut rng)
}

fn perturb_with(
    texts: &[&str],
    donors: usize,
    donor: impl Fn(usize) -> String,
    rng: &mut Rng,
) -> Result<(Vec<String>, Vec<PerturbationLabel>), PretrainError> {
    let n = texts.len();
    if n < MIN_PERTURB_PROPS {
        return Err(PretrainError::Precondition(format!("perturbation needs at least {MIN_PERTURB_PROPS} propositions, got {n}")));
    }
    if donors == 0 {
        return Err(PretrainError::Config("no donor propositions for replacement".into()));
    }
    let (r, s) = perturbation_counts(n);
    let picked = rand::seq::index::sample(rng, n, r + s).into_vec();
    let (replaced, shuffled) = picked.split_at(r);
    let mut out: Vec<String> = texts.iter().map(|t| t.to_string()).collect();
    let mut labels = vec![PerturbationLabel::Unchanged; n];
    for &i in replaced {
        out[i] = donor(rng.random_range(0..donors));
        labels[i] = PerturbationLabel::Replaced;
    }
    let mut sources: Vec<usize> = shuffled.to_vec();
    sources.shuffle(rng);
    for (&dst, &src) in shuffled.iter().zip(&sources) {
        out[dst] = texts[src].to_string();
        labels[dst] = PerturbationLabel::Shuffled;
    }
    Ok((out, labels))
}

// ---------------------------------------------------------------------------
// Training

#[derive(Debug, Clone)]
pub struct PretrainOutcome {
    /// Encoder-only checkpoint.
    pub checkpoint: Checkpoint,
    pub epochs: Vec<EpochRecord>,
    /// Projection of the objective: `dim × outputs` weight and `1 × outputs` bias.
    pub objective_head: [Mat; 2],
    pub objective: Objective,
}

/// One encoder input with its prediction targets.
struct Sample {
    input: WindowInput,
    rows: Vec<usize>,
    targets: Vec<usize>,
}

/// Split a document's encoded propositions into consecutive runs that fit
/// `max_positions`, truncating any proposition too long on its own.
fn chunk(props: &[Vec<usize>], max_positions: usize) -> Vec<std::ops::Range<usize>> {
    let mut out = Vec::new();
    let mut start = 0;
    let mut used = 0;
    for (i, p) in props.iter().enumerate() {
        let cost = (p.len() + 1).min(max_positions);
        if used + cost > max_positions && i > start {
            out.push(start..i);
            start = i;
            used = 0;
        }
        used += cost;
    }
    if start < props.len() {
        out.push(start..props.len());
    }
    out
}

fn window_of(props: &[Vec<usize>], max_positions: usize) -> WindowInput {
    let trimmed: Vec<Vec<usize>> = props.iter().map(|p| p[..p.len().min(max_positions - 1)].to_vec()).collect();
    WindowInput::new(&trimmed)
}

struct Pretrainer<'a> {
    corpus: &'a Corpus,
    vocab: Vocab,
    encoded: Vec<Vec<Vec<usize>>>,
    donors: Vec<String>,
    donor_owner: Vec<Option<usize>>,
    max_positions: usize,
}

impl Pretrainer<'_> {
    fn mlm_samples(&self, rng: &mut Rng) -> Vec<Vec<Sample>> {
        self.encoded
            .iter()
            .map(|props| {
                chunk(props, self.max_positions)
                    .into_iter()
                    .filter_map(|range| {
                        let input = window_of(&props[range], self.max_positions);
                        let plan = plan_with(&input.ids, self.vocab.len(), rng);
                        if plan.is_empty() {
                            return None;
                        }
                        let ids = plan.apply(&input.ids);
                        Some(Sample {
                            input: WindowInput { ids, sep_positions: input.sep_positions },
                            rows: plan.positions,
                            targets: plan.originals,
                        })
                    })
                    .collect()
            })
            .collect()
    }

    fn perturbation_samples(&self, rng: &mut Rng) -> Result<Vec<Vec<Sample>>, PretrainError> {
        let mut out = Vec::with_capacity(self.corpus.documents.len());
        for (di, doc) in self.corpus.documents.iter().enumerate() {
            if doc.len() < MIN_PERTURB_PROPS {
                out.push(Vec::new());
                continue;
            }
            let texts: Vec<&str> = doc.propositions.iter().map(|p| p.text.as_str()).collect();
            // donors from the document itself are skipped by redrawing
            let own = self.donor_owner.iter().filter(|&&o| o == Some(di)).count();
            if own == self.donors.len() {
                return Err(PretrainError::Config("no donor propositions outside the document".into()));
            }
            let foreign: Vec<usize> = if own == 0 {
                Vec::new()
            } else {
                (0..self.donors.len()).filter(|&i| self.donor_owner[i] != Some(di)).collect()
            };
            let pick = |i: usize| -> String {
                if foreign.is_empty() { self.donors[i].clone() } else { self.donors[foreign[i]].clone() }
            };
            let count = if foreign.is_empty() { self.donors.len() } else { foreign.len() };
            let (perturbed, labels) = perturb_with(&texts, count, pick, rng)?;
            let props: Vec<Vec<usize>> = perturbed.iter().map(|t| self.vocab.encode(t)).collect();
            let samples = chunk(&props, self.max_positions)
                .into_iter()
                .map(|range| {
                    let targets = labels[range.clone()].iter().map(|l| l.index()).collect();
                    let input = window_of(&props[range], self.max_positions);
                    Sample { rows: input.sep_positions.clone(), input, targets }
                })
                .collect();
            out.push(samples);
        }
        Ok(out)
    }
}

/// Pretrain an encoder on `unlabeled` with `objective`. Context-Pert draws
/// replacements from `donors` when given, otherwise from the other
/// documents of `unlabeled`. The vocabulary is built from `unlabeled`.
pub fn pretrain(
    unlabeled: &Corpus,
    objective: Objective,
    cfg: &TrainConfig,
    encoder_cfg: &EncoderConfig,
    donors: Option<&Corpus>,
) -> Result<PretrainOutcome, PretrainError> {
    cfg.validate()?;
    encoder_cfg.validate()?;
    if unlabeled.documents.is_empty() || unlabeled.num_propositions() == 0 {
        return Err(PretrainError::Precondition("pretraining corpus is empty".into()));
    }
    let vocab = Vocab::build(unlabeled, 1);
    let init = Checkpoint::init(encoder_cfg.clone(), vocab.clone(), cfg.seed);
    let mut params: EncoderParams = init.encoder;
    let outputs = match objective {
        Objective::Mlm => vocab.len(),
        Objective::ContextPert => PerturbationLabel::ALL.len(),
    };
    let dim = encoder_cfg.dim;
    let mut head_rng = rng::substream(cfg.seed, "objective-head-init");
    let mut head = [uniform((dim, outputs), (3.0 / dim as f64).sqrt(), &mut head_rng), Mat::zeros((1, outputs))];

    let (donor_texts, donor_owner): (Vec<String>, Vec<Option<usize>>) = match donors {
        Some(c) => c.documents.iter().flat_map(|d| d.propositions.iter().map(|p| (p.text.clone(), None))).unzip(),
        None => unlabeled
            .documents
            .iter()
            .enumerate()
            .flat_map(|(i, d)| d.propositions.iter().map(move |p| (p.text.clone(), Some(i))))
            .unzip(),
    };
    if objective == Objective::ContextPert {
        if donor_texts.is_empty() {
            return Err(PretrainError::Config("no donor propositions for replacement".into()));
        }
        if unlabeled.documents.iter().all(|d| d.len() < MIN_PERTURB_PROPS) {
            return Err(PretrainError::Precondition(format!(
                "no document has the {MIN_PERTURB_PROPS} propositions perturbation needs"
            )));
        }
    }
    let encoded: Vec<Vec<Vec<usize>>> = unlabeled
        .documents
        .iter()
        .map(|d| d.propositions.iter().map(|p| vocab.encode(&p.text)).collect())
        .collect();
    let trainer = Pretrainer {
        corpus: unlabeled,
        vocab,
        encoded,
        donors: donor_texts,
        donor_owner,
        max_positions: encoder_cfg.max_positions,
    };

    let n_encoder = params.tensors.len();
    let mut adam = Adam::new(params.tensors.iter().chain(head.iter()));
    let mut data_rng = rng::substream(cfg.seed, objective.name());
    let mut shuffle_rng = rng::substream(cfg.seed, "shuffle");
    let mut dropout_rng = rng::substream(cfg.seed, "dropout");
    let docs = unlabeled.documents.len();
    let steps_per_epoch = docs.div_ceil(cfg.batch_size);
    let total_steps = steps_per_epoch * cfg.epochs;
    let mut records = Vec::with_capacity(cfg.epochs);
    let mut order: Vec<usize> = (0..docs).collect();
    for epoch in 0..cfg.epochs {
        let samples = match objective {
            Objective::Mlm => trainer.mlm_samples(&mut data_rng),
            Objective::ContextPert => trainer.perturbation_samples(&mut data_rng)?,
        };
        order.shuffle(&mut shuffle_rng);
        let (mut loss_sum, mut targets_seen, mut correct) = (0.0, 0usize, 0usize);
        for batch in order.chunks(cfg.batch_size) {
            let batch_targets: usize = batch.iter().flat_map(|&d| &samples[d]).map(|s| s.targets.len()).sum();
            if batch_targets == 0 {
                continue;
            }
            let groups: [&[Mat]; 2] = [&params.tensors, &head];
            let mut grads: Vec<Mat> = groups.iter().flat_map(|g| g.iter()).map(|t| Mat::zeros(t.raw_dim())).collect();
            for s in batch.iter().flat_map(|&d| &samples[d]) {
                let mut g = Graph::new(&groups);
                let mut dropout = Dropout::On { p: encoder_cfg.dropout_p, rng: &mut dropout_rng };
                let states = encoder::forward(&mut g, 0, encoder_cfg, trainer.vocab.len(), &s.input, &mut dropout)?;
                let rows = g.gather_rows(states, &s.rows);
                let (w, b) = (g.param(n_encoder), g.param(n_encoder + 1));
                let logits = g.affine(rows, w, b);
                let weights = vec![1.0 / batch_targets as f64; s.targets.len()];
                let loss = g.cross_entropy(logits, &s.targets, &weights);
                g.backward(loss, &mut grads)?;
                loss_sum += g.scalar(loss) * batch_targets as f64;
                targets_seen += s.targets.len();
                let probs = g.probabilities(loss).expect("cross-entropy node");
                for (r, &t) in s.targets.iter().enumerate() {
                    let row = probs.row(r);
                    let best = (0..row.len()).fold(0, |b, c| if row[c] > row[b] { c } else { b });
                    correct += usize::from(best == t);
                }
            }
            let lr = learning_rate(cfg.lr, cfg.schedule, cfg.warmup_steps, adam.steps(), total_steps);
            adam.step(params.tensors.iter_mut().chain(head.iter_mut()), &grads, lr);
        }
        let record = EpochRecord {
            epoch: epoch + 1,
            loss: if targets_seen > 0 { loss_sum / targets_seen as f64 } else { 0.0 },
            accuracy: if targets_seen > 0 { correct as f64 / targets_seen as f64 } else { 0.0 },
        };
        tracing::debug!(objective = objective.name(), epoch = record.epoch, loss = record.loss, "pretrain epoch");
        records.push(record);
    }
    let checkpoint = Checkpoint {
        config: encoder_cfg.clone(),
        vocab: trainer.vocab,
        encoder: params,
        head: None,
        meta: CheckpointMeta {
            steps: adam.steps(),
            source: format!("{}:{}docs", unlabeled.split, docs),
            objective: objective.name().into(),
            epochs: records.clone(),
        },
    };
    Ok(PretrainOutcome { checkpoint, epochs: records, objective_head: head, objective })
}

/// Eval-mode confusion counts `[true][predicted]` of a Context-Pert model
/// on freshly perturbed copies of the documents of `corpus` with at least
/// five propositions.
pub fn perturbation_confusion(
    outcome: &PretrainOutcome,
    corpus: &Corpus,
    donors: &[String],
    seed: u64,
) -> Result<[[u64; 3]; 3], PretrainError> {
    if outcome.objective != Objective::ContextPert {
        return Err(PretrainError::Config("outcome was not trained with context_pert".into()));
    }
    let ckpt = &outcome.checkpoint;
    let max = ckpt.config.max_positions;
    let n_encoder = ckpt.encoder.tensors.len();
    let mut rng = rng::substream(seed, "perturb-eval");
    let mut counts = [[0u64; 3]; 3];
    for doc in corpus.documents.iter().filter(|d| d.len() >= MIN_PERTURB_PROPS) {
        let texts: Vec<&str> = doc.propositions.iter().map(|p| p.text.as_str()).collect();
        let (perturbed, labels) = perturb_with(&texts, donors.len(), |i| donors[i].clone(), &mut rng)?;
        let props: Vec<Vec<usize>> = perturbed.iter().map(|t| ckpt.vocab.encode(t)).collect();
        for range in chunk(&props, max) {
            let input = window_of(&props[range.clone()], max);
            let mut g = Graph::new(&[&ckpt.encoder.tensors, &outcome.objective_head]);
            let reps = encoder::forward_representations(&mut g, 0, &ckpt.config, ckpt.vocab.len(), &input, &mut Dropout::Off)?;
            let (w, b) = (g.param(n_encoder), g.param(n_encoder + 1));
            let logits = g.affine(reps, w, b);
            for (r, label) in labels[range].iter().enumerate() {
                let row = g.value(logits).row(r);
                let best = (0..row.len()).fold(0, |b, c| if row[c] > row[b] { c } else { b });
                counts[label.index()][best] += 1;
            }
        }
    }
    Ok(counts)
}

/// Share of correctly classified propositions in [`perturbation_confusion`].
pub fn perturbation_accuracy(
    outcome: &PretrainOutcome,
    corpus: &Corpus,
    donors: &[String],
    seed: u64,
) -> Result<f64, PretrainError> {
    let counts = perturbation_confusion(outcome, corpus, donors, seed)?;
    let total: u64 = counts.iter().flatten().sum();
    if total == 0 {
        return Err(PretrainError::Precondition("no document long enough to perturb".into()));
    }
    Ok((0..3).map(|i| counts[i][i]).sum::<u64>() as f64 / total as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::fixtures::doc;
    use crate::vocab::{PAD, SEP, UNK};
    use proptest::prelude::*;

    #[test]
    fn mask_counts() {
        assert_eq!(mask_count(100), 15);
        assert_eq!(mask_count(3), 1);
        assert_eq!(mask_count(7), 2);
        assert_eq!(mask_count(0), 0);
    }

    #[test]
    fn plans_are_seeded_and_skip_specials() {
        let ids: Vec<usize> = (0..40).map(|i| if i % 5 == 0 { SEP } else { 4 + i }).collect();
        let a = make_mask_plan(&ids, 60, 9);
        assert_eq!(a, make_mask_plan(&ids, 60, 9));
        assert_eq!(a.len(), mask_count(32));
        assert!(a.positions.iter().all(|&p| ids[p] != SEP));
        assert!(make_mask_plan(&[SEP, PAD, UNK, MASK], 60, 0).is_empty());
    }

    #[test]
    fn action_split_is_roughly_80_10_10() {
        let ids: Vec<usize> = (0..10_000).map(|i| 4 + i % 50).collect();
        let plan = make_mask_plan(&ids, 54, 1);
        let frac = |a| plan.actions.iter().filter(|&&x| x == a).count() as f64 / plan.len() as f64;
        assert!((frac(MaskAction::Mask) - 0.8).abs() < 0.03);
        assert!((frac(MaskAction::Random) - 0.1).abs() < 0.03);
        assert!((frac(MaskAction::Keep) - 0.1).abs() < 0.03);
    }

    #[test]
    fn perturbation_split() {
        assert_eq!(perturbation_counts(10), (2, 2));
        assert_eq!(perturbation_counts(5), (1, 1));
        let donors = vec!["elsewhere entirely".to_string()];
        let d = doc("a", 10, &[]);
        let (texts, labels) = perturb_document(&d, &donors, 4).unwrap();
        let count = |l| labels.iter().filter(|&&x| x == l).count();
        assert_eq!((count(PerturbationLabel::Replaced), count(PerturbationLabel::Shuffled)), (2, 2));
        assert_eq!(count(PerturbationLabel::Unchanged), 6);
        for (i, l) in labels.iter().enumerate() {
            match l {
                PerturbationLabel::Replaced => assert_eq!(texts[i], donors[0]),
                PerturbationLabel::Unchanged => assert_eq!(texts[i], d.propositions[i].text),
                PerturbationLabel::Shuffled => {}
            }
        }
        assert!(perturb_document(&d, &[], 0).is_err());
        assert!(perturb_document(&doc("b", 4, &[]), &donors, 0).is_err());
    }

    proptest! {
        #[test]
        fn shuffled_positions_permute_their_originals(n in 5usize..40, seed in 0u64..500) {
            let d = doc("a", n, &[]);
            let (texts, labels) = perturb_document(&d, &["x".to_string()], seed).unwrap();
            let mut moved: Vec<&str> = Vec::new();
            let mut orig: Vec<&str> = Vec::new();
            for i in 0..n {
                if labels[i] == PerturbationLabel::Shuffled {
                    moved.push(&texts[i]);
                    orig.push(&d.propositions[i].text);
                }
            }
            moved.sort();
            orig.sort();
            prop_assert_eq!(moved, orig);
            let (r, s) = perturbation_counts(n);
            prop_assert_eq!(labels.iter().filter(|&&l| l == PerturbationLabel::Replaced).count(), r);
            prop_assert_eq!(labels.iter().filter(|&&l| l == PerturbationLabel::Shuffled).count(), s);
        }

        #[test]
        fn mask_plan_matches_rate(len in 1usize..300, seed in 0u64..100) {
            let ids: Vec<usize> = (0..len).map(|i| if i % 7 == 0 { SEP } else { 4 + i % 11 }).collect();
            let plan = make_mask_plan(&ids, 15, seed);
            let maskable = ids.iter().filter(|&&i| i >= NUM_SPECIAL).count();
            prop_assert_eq!(plan.len(), mask_count(maskable));
            prop_assert!(plan.positions.windows(2).all(|w| w[0] < w[1]));
            prop_assert!(plan.positions.iter().all(|&p| ids[p] >= NUM_SPECIAL));
        }
    }

    #[test]
    fn zero_epochs_returns_the_initialization() {
        let corpus = Corpus::new(vec![doc("a", 6, &[]), doc("b", 6, &[])], crate::corpus::Split::Train);
        let cfg = TrainConfig { epochs: 0, seed: 5, ..Default::default() };
        let enc = EncoderConfig { dim: 8, layers: 1, heads: 1, ffn_mult: 2, max_positions: 64, ..Default::default() };
        let out = pretrain(&corpus, Objective::Mlm, &cfg, &enc, None).unwrap();
        let init = Checkpoint::init(enc.clone(), Vocab::build(&corpus, 1), 5);
        assert_eq!(out.checkpoint.encoder, init.encoder);
        assert!(out.checkpoint.head.is_none());
    }
}
