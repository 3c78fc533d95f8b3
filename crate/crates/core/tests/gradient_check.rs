//! Analytic gradients of the full relation model against central finite
//! differences.

use argrel::encoder::{self, Dropout, EncoderConfig, EncoderParams, WindowInput};
use argrel::graph::{Graph, Mat, NodeId};
use argrel::relhead::RelationHeadParams;
use argrel::rng;

const STEP: f64 = 1e-5;
/// Denominator floor: entries whose true derivative is exactly zero (the
/// attention key bias, which softmax cancels) only carry rounding noise.
const FLOOR: f64 = 1e-6;

fn config() -> EncoderConfig {
    EncoderConfig { dim: 8, layers: 1, heads: 1, ffn_mult: 2, dropout_p: 0.1, max_positions: 16, seed: 3 }
}

fn input() -> WindowInput {
    WindowInput::new(&[vec![4, 5, 6], vec![7, 8], vec![9, 4, 10]])
}

/// Loss of the three-proposition window: every ordered pair classified,
/// dropout masks drawn from a fixed seed.
fn loss(g: &mut Graph, cfg: &EncoderConfig, n_enc: usize, vocab: usize) -> NodeId {
    let mut rng = rng::from_seed(17);
    let mut dropout = Dropout::On { p: cfg.dropout_p, rng: &mut rng };
    let reps = encoder::forward_representations(g, 0, cfg, vocab, &input(), &mut dropout).unwrap();
    let heads = [0, 0, 1, 1, 2, 2];
    let tails = [1, 2, 0, 2, 0, 1];
    let hj = g.gather_rows(reps, &heads);
    let hi = g.gather_rows(reps, &tails);
    let x = g.concat_cols(&[hj, hi]);
    let (w1, b1) = (g.param(n_enc), g.param(n_enc + 1));
    let h = g.affine(x, w1, b1);
    let h = g.tanh(h);
    let (w2, b2) = (g.param(n_enc + 2), g.param(n_enc + 3));
    let logits = g.affine(h, w2, b2);
    g.cross_entropy(logits, &[0, 2, 2, 1, 2, 0], &[1.0 / 6.0; 6])
}

fn perturbed_loss(enc: &EncoderParams, head: &RelationHeadParams, cfg: &EncoderConfig, which: usize, idx: usize, delta: f64) -> f64 {
    let mut enc = enc.clone();
    let mut head = head.clone();
    let n_enc = enc.tensors.len();
    let t: &mut Mat = if which < n_enc { &mut enc.tensors[which] } else { &mut head.tensors[which - n_enc] };
    t.as_slice_mut().unwrap()[idx] += delta;
    let mut g = Graph::new(&[&enc.tensors, &head.tensors]);
    let l = loss(&mut g, cfg, n_enc, 11);
    g.scalar(l)
}

#[test]
fn every_parameter_matches_central_differences() {
    let start = std::time::Instant::now();
    let cfg = config();
    let mut init_rng = rng::from_seed(9);
    let enc = EncoderParams::init(&cfg, 11, &mut init_rng);
    // perturb gains and biases away from their trivial init
    let mut enc = enc;
    for t in enc.tensors.iter_mut().filter(|t| t.nrows() == 1) {
        *t += &encoder_noise(t.ncols(), &mut init_rng);
    }
    let head = RelationHeadParams::init(cfg.dim, cfg.dim, &mut init_rng);
    let n_enc = enc.tensors.len();

    let mut g = Graph::new(&[&enc.tensors, &head.tensors]);
    let l = loss(&mut g, &cfg, n_enc, 11);
    let mut grads = g.zero_grads();
    g.backward(l, &mut grads).unwrap();

    let names: Vec<String> = enc.names.iter().cloned().chain(["head.w1", "head.b1", "head.w2", "head.b2"].map(String::from)).collect();
    let mut worst = 0.0f64;
    let mut worst_large = 0.0f64;
    let mut checked = 0;
    for (which, grad) in grads.iter().enumerate() {
        for (idx, &analytic) in grad.as_slice().unwrap().iter().enumerate() {
            let fd = (perturbed_loss(&enc, &head, &cfg, which, idx, STEP)
                - perturbed_loss(&enc, &head, &cfg, which, idx, -STEP))
                / (2.0 * STEP);
            checked += 1;
            if fd == analytic {
                continue;
            }
            let scale = fd.abs().max(analytic.abs());
            let rel = (fd - analytic).abs() / scale.max(FLOOR);
            worst = worst.max(rel);
            if scale > FLOOR {
                worst_large = worst_large.max(rel);
            }
            assert!(rel < 1e-4, "{}[{idx}]: analytic {analytic:e} vs fd {fd:e} (rel {rel:e})", names[which]);
        }
    }
    println!(
        "checked {checked} entries, worst relative error {worst:e} ({worst_large:e} over entries above {FLOOR:e}), {:?}",
        start.elapsed()
    );
    assert!(start.elapsed().as_secs() < 30);
}

fn encoder_noise(cols: usize, rng: &mut argrel::rng::Rng) -> Mat {
    use rand::Rng as _;
    Mat::from_shape_simple_fn((1, cols), || rng.random_range(-0.3..0.3))
}
