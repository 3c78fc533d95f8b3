use argrel::corpus::{generate_synthetic, Split, SynthConfig};
use argrel::encoder::{self, Dropout, EncoderConfig, EncoderParams, WindowInput};
use argrel::graph::{Graph, Mat, NodeId};
use argrel::optim::Schedule;
use argrel::pretrain::{pretrain, Objective};
use argrel::relhead::{accuracy, group_windows, predict_pair, train_examples, RelationHeadParams, TrainConfig};
use argrel::rng;
use argrel::text::token_count;
use argrel::windowing::{build_examples, PairExample, WindowConfig, WindowMode};
use ndarray::{Array1, Array2};
use rand::Rng as _;

use crate::{err, require, timed, Check};

const STEP: f64 = 1e-5;
const FLOOR: f64 = 1e-6;
const VOCAB: usize = 11;

fn grad_config() -> EncoderConfig {
    EncoderConfig { dim: 8, layers: 1, heads: 1, ffn_mult: 2, dropout_p: 0.1, max_positions: 16, seed: 3 }
}

fn grad_loss(g: &mut Graph, cfg: &EncoderConfig, n_enc: usize) -> NodeId {
    let input = WindowInput::new(&[vec![4, 5, 6], vec![7, 8], vec![9, 4, 10]]);
    let mut rng = rng::from_seed(17);
    let mut dropout = Dropout::On { p: cfg.dropout_p, rng: &mut rng };
    let reps = encoder::forward_representations(g, 0, cfg, VOCAB, &input, &mut dropout).expect("valid window");
    let hj = g.gather_rows(reps, &[0, 0, 1, 1, 2, 2]);
    let hi = g.gather_rows(reps, &[1, 2, 0, 2, 0, 1]);
    let x = g.concat_cols(&[hj, hi]);
    let (w1, b1) = (g.param(n_enc), g.param(n_enc + 1));
    let h = g.affine(x, w1, b1);
    let h = g.tanh(h);
    let (w2, b2) = (g.param(n_enc + 2), g.param(n_enc + 3));
    let logits = g.affine(h, w2, b2);
    g.cross_entropy(logits, &[0, 2, 2, 1, 2, 0], &[1.0 / 6.0; 6])
}

fn perturbed(enc: &EncoderParams, head: &RelationHeadParams, cfg: &EncoderConfig, which: usize, idx: usize, delta: f64) -> f64 {
    let (mut enc, mut head) = (enc.clone(), head.clone());
    let n_enc = enc.tensors.len();
    let t: &mut Mat = if which < n_enc { &mut enc.tensors[which] } else { &mut head.tensors[which - n_enc] };
    t.as_slice_mut().expect("contiguous")[idx] += delta;
    let mut g = Graph::new(&[&enc.tensors, &head.tensors]);
    let l = grad_loss(&mut g, cfg, n_enc);
    g.scalar(l)
}

/// Every parameter of a dim-8, one-layer, one-head model over three
/// propositions against central differences.
pub fn gradients() -> Check {
    timed(30, || {
        let cfg = grad_config();
        let mut r = rng::from_seed(9);
        let mut enc = EncoderParams::init(&cfg, VOCAB, &mut r);
        // gains and biases start at 1 and 0; move them off that point
        for t in enc.tensors.iter_mut().filter(|t| t.nrows() == 1) {
            *t += &Mat::from_shape_simple_fn((1, t.ncols()), || r.random_range(-0.3..0.3));
        }
        let head = RelationHeadParams::init(cfg.dim, cfg.dim, &mut r);
        let n_enc = enc.tensors.len();
        let mut g = Graph::new(&[&enc.tensors, &head.tensors]);
        let l = grad_loss(&mut g, &cfg, n_enc);
        let mut grads = g.zero_grads();
        g.backward(l, &mut grads).map_err(err)?;
        let (mut worst, mut checked) = (0.0f64, 0usize);
        for (which, grad) in grads.iter().enumerate() {
            for (idx, &analytic) in grad.as_slice().expect("contiguous").iter().enumerate() {
                let fd = (perturbed(&enc, &head, &cfg, which, idx, STEP) - perturbed(&enc, &head, &cfg, which, idx, -STEP)) / (2.0 * STEP);
                checked += 1;
                if fd == analytic {
                    continue;
                }
                // exact zeros (attention key bias) leave only rounding noise
                let rel = (fd - analytic).abs() / fd.abs().max(analytic.abs()).max(FLOOR);
                worst = worst.max(rel);
                require!(rel < 1e-4, "tensor {which} entry {idx}: analytic {analytic:e}, finite difference {fd:e}");
            }
        }
        Ok(format!("{checked} entries, worst relative error {worst:.2e}"))
    })
}

/// Plain-loop evaluation of softmax(tanh([h; t] W1 + b1) W2 + b2).
fn head_by_hand(h: &[f64], t: &[f64], w1: &[Vec<f64>], b1: &[f64], w2: &[Vec<f64>], b2: &[f64]) -> [f64; 3] {
    let x: Vec<f64> = h.iter().chain(t).copied().collect();
    let hidden: Vec<f64> = (0..b1.len())
        .map(|k| {
            let mut s = b1[k];
            for i in 0..x.len() {
                s += x[i] * w1[i][k];
            }
            s.tanh()
        })
        .collect();
    let mut e = [0.0; 3];
    for c in 0..3 {
        let mut s = b2[c];
        for k in 0..hidden.len() {
            s += hidden[k] * w2[k][c];
        }
        e[c] = s.exp();
    }
    let z: f64 = e.iter().sum();
    e.map(|v| v / z)
}

fn to_mat(rows: &[Vec<f64>]) -> Mat {
    Array2::from_shape_fn((rows.len(), rows[0].len()), |(i, j)| rows[i][j])
}

pub fn head_oracle() -> Check {
    // hand-sized instance: d = 2, hidden 2
    let h = [0.5, -1.0];
    let t = [2.0, 0.25];
    let w1 = vec![vec![0.1, -0.2], vec![0.3, 0.4], vec![-0.5, 0.6], vec![0.7, -0.8]];
    let b1 = [0.05, -0.05];
    let w2 = vec![vec![1.0, -1.0, 0.5], vec![-0.5, 2.0, 0.0]];
    let b2 = [0.1, 0.0, -0.1];
    let mut cases = vec![(h.to_vec(), t.to_vec(), w1, b1.to_vec(), w2, b2.to_vec())];
    let mut r = rng::from_seed(5);
    for _ in 0..200 {
        let d = r.random_range(1..6);
        let k = r.random_range(1..6);
        let mut v = |n: usize| (0..n).map(|_| r.random_range(-2.0..2.0)).collect::<Vec<f64>>();
        let hh = v(d);
        let tt = v(d);
        let w1: Vec<Vec<f64>> = (0..2 * d).map(|_| v(k)).collect();
        let b1 = v(k);
        let w2: Vec<Vec<f64>> = (0..k).map(|_| v(3)).collect();
        let b2 = v(3);
        cases.push((hh, tt, w1, b1, w2, b2));
    }
    let mut worst = 0.0f64;
    for (h, t, w1, b1, w2, b2) in &cases {
        let params = RelationHeadParams::new(to_mat(w1), to_mat(&[b1.clone()]), to_mat(w2), to_mat(&[b2.clone()])).map_err(err)?;
        let got = predict_pair(Array1::from(h.clone()).view(), Array1::from(t.clone()).view(), &params).map_err(err)?;
        let want = head_by_hand(h, t, w1, b1, w2, b2);
        for c in 0..3 {
            worst = worst.max((got.0[c] - want[c]).abs());
        }
    }
    require!(worst <= 1e-12, "largest deviation from the hand evaluation {worst:e}");
    let zero = RelationHeadParams::zeros(4, 3);
    let u = predict_pair(Array1::from(vec![1.0, -2.0, 3.0, 0.5]).view(), Array1::from(vec![0.0, 7.0, -1.0, 2.0]).view(), &zero)
        .map_err(err)?;
    require!(u.0 == [1.0 / 3.0; 3], "zero parameters gave {:?}", u.0);
    Ok(format!("{} instances, largest deviation {worst:.1e}; zero parameters give exactly 1/3 each", cases.len()))
}

/// Twenty pairs from whole head windows of a small synthetic corpus.
fn toy_pairs() -> (Vec<argrel::corpus::Document>, Vec<PairExample>) {
    let corpus = generate_synthetic(&SynthConfig { n_docs: 10, props_per_doc: 6, marker_plant_prob: 1.0, seed: 11, ..Default::default() })
        .expect("valid synthetic config");
    let window = WindowConfig { window: 2, max_tokens: 128, mode: WindowMode::HeadGiven };
    let mut pairs = Vec::new();
    for doc in &corpus.documents {
        for ex in build_examples(doc, &window, &token_count) {
            if pairs.len() < 20 {
                pairs.push(ex);
            }
        }
    }
    (corpus.documents, pairs)
}

fn overfit() -> Check {
    let (docs, pairs) = toy_pairs();
    require!(pairs.len() == 20, "toy set has {} pairs", pairs.len());
    let windows = group_windows(&docs, &pairs).map_err(err)?.len();
    let epochs = 500 / windows;
    let cfg = TrainConfig { lr: 3e-3, warmup_steps: 10, schedule: Schedule::Constant, epochs, batch_size: 1, seed: 0, class_weighting: false };
    let enc = EncoderConfig { dim: 16, layers: 1, heads: 2, ffn_mult: 2, dropout_p: 0.0, max_positions: 128, seed: 0 };
    let out = train_examples(&docs, pairs.clone(), &cfg, &enc, None, "toy").map_err(err)?;
    let steps = out.checkpoint.meta.steps;
    let acc = accuracy(&out.checkpoint, &docs, &pairs).map_err(err)?;
    let positives = pairs.iter().filter(|p| p.label.is_positive()).count();
    require!(steps <= 500, "{steps} optimizer steps");
    require!(acc >= 0.99, "training accuracy {acc:.3} after {steps} steps");
    Ok(format!("20 pairs ({positives} positive) fit to accuracy {acc:.3} in {steps} steps"))
}

fn pretrain_losses(objective: Objective) -> Result<[f64; 3], String> {
    let mut mean = [0.0; 3];
    for seed in 0..3u64 {
        let corpus = generate_synthetic(&SynthConfig { n_docs: 200, seed, ..Default::default() }).map_err(err)?;
        let corpus = argrel::corpus::Corpus { split: Split::Unlabeled, ..corpus };
        let cfg = TrainConfig { epochs: 3, lr: 3e-3, warmup_steps: 10, batch_size: 16, seed, ..Default::default() };
        let enc = EncoderConfig { dim: 16, layers: 1, heads: 2, ffn_mult: 2, dropout_p: 0.1, max_positions: 128, seed: 0 };
        let out = pretrain(&corpus, objective, &cfg, &enc, None).map_err(err)?;
        for e in 0..3 {
            mean[e] += out.epochs[e].loss / 3.0;
        }
    }
    Ok(mean)
}

pub fn learnability() -> Check {
    timed(300, || {
        let mut parts = vec![overfit()?];
        for objective in [Objective::Mlm, Objective::ContextPert] {
            let l = pretrain_losses(objective)?;
            require!(l[0] > l[1] && l[1] > l[2], "{objective} mean epoch losses {:.4} {:.4} {:.4}", l[0], l[1], l[2]);
            parts.push(format!("{objective} loss {:.4} > {:.4} > {:.4}", l[0], l[1], l[2]));
        }
        Ok(parts.join("; "))
    })
}
