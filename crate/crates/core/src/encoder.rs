//! A small post-norm transformer encoder over separator-delimited propositions.
//!
//! The input for a window of propositions is `[SEP] t.. [SEP] t.. ...` in
//! document order. The representation of each proposition is the last-layer
//! state at its separator.

use ndarray::{Array1, Array2};
use rand::Rng as _;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{Graph, GraphError, Mat, NodeId};
use crate::rng::{self, Rng};
use crate::vocab::SEP;

pub type PropRepresentation = Array1<f64>;

#[derive(Debug, Error, PartialEq)]
pub enum EncoderError {
    #[error("input of {len} positions exceeds max_positions {max}")]
    Overlength { len: usize, max: usize },
    #[error("empty input window")]
    EmptyInput,
    #[error("invalid encoder config: {0}")]
    Config(String),
    #[error("token id {0} outside vocabulary")]
    TokenOutOfRange(usize),
    #[error(transparent)]
    Graph(#[from] GraphError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EncoderConfig {
    pub dim: usize,
    pub layers: usize,
    pub heads: usize,
    pub ffn_mult: usize,
    pub dropout_p: f64,
    pub max_positions: usize,
    pub seed: u64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self { dim: 64, layers: 2, heads: 2, ffn_mult: 4, dropout_p: 0.1, max_positions: 512, seed: 0 }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<(), EncoderError> {
        if self.dim == 0 || self.heads == 0 || self.dim % self.heads != 0 {
            return Err(EncoderError::Config(format!(
                "dim {} must be a positive multiple of heads {}",
                self.dim, self.heads
            )));
        }
        if !(0.0..1.0).contains(&self.dropout_p) {
            return Err(EncoderError::Config("dropout_p must lie in [0,1)".into()));
        }
        if self.ffn_mult == 0 || self.max_positions == 0 {
            return Err(EncoderError::Config("ffn_mult and max_positions must be positive".into()));
        }
        Ok(())
    }

    /// Same architecture; dropout and seed may differ.
    pub fn same_shape(&self, other: &EncoderConfig) -> bool {
        self.dim == other.dim
            && self.layers == other.layers
            && self.heads == other.heads
            && self.ffn_mult == other.ffn_mult
            && self.max_positions == other.max_positions
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EncodeMode {
    Train,
    Eval,
    McDropout,
}

// Parameter layout.
const TOKEN_EMB: usize = 0;
const POS_EMB: usize = 1;
const EMB_LN_G: usize = 2;
const EMB_LN_B: usize = 3;
const LAYER_BASE: usize = 4;
const PER_LAYER: usize = 16;
const LAYER_NAMES: [&str; PER_LAYER] = [
    "attn.wq", "attn.bq", "attn.wk", "attn.bk", "attn.wv", "attn.bv", "attn.wo", "attn.bo", "ln1.gain",
    "ln1.bias", "ffn.w1", "ffn.b1", "ffn.w2", "ffn.b2", "ln2.gain", "ln2.bias",
];

/// All encoder tensors in a fixed order derived from the config.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams {
    pub names: Vec<String>,
    pub tensors: Vec<Mat>,
}

impl EncoderParams {
    pub fn shapes(cfg: &EncoderConfig, vocab_size: usize) -> Vec<(String, (usize, usize))> {
        let d = cfg.dim;
        let f = cfg.dim * cfg.ffn_mult;
        let mut out = vec![
            ("token_embedding".to_string(), (vocab_size, d)),
            ("position_embedding".to_string(), (cfg.max_positions, d)),
            ("embedding_ln.gain".to_string(), (1, d)),
            ("embedding_ln.bias".to_string(), (1, d)),
        ];
        for l in 0..cfg.layers {
            let shapes = [
                (d, d), (1, d), (d, d), (1, d), (d, d), (1, d), (d, d), (1, d),
                (1, d), (1, d), (d, f), (1, f), (f, d), (1, d), (1, d), (1, d),
            ];
            for (name, shape) in LAYER_NAMES.iter().zip(shapes) {
                out.push((format!("layer{l}.{name}"), shape));
            }
        }
        out
    }

    /// Random initialization: weights uniform with variance 1/fan_in,
    /// embeddings with standard deviation 0.1, gains 1 and biases 0.
    pub fn init(cfg: &EncoderConfig, vocab_size: usize, rng: &mut Rng) -> Self {
        let shapes = Self::shapes(cfg, vocab_size);
        let mut names = Vec::with_capacity(shapes.len());
        let mut tensors = Vec::with_capacity(shapes.len());
        for (name, (r, c)) in shapes {
            let t = if name.ends_with("gain") {
                Mat::ones((r, c))
            } else if r == 1 {
                Mat::zeros((r, c))
            } else if name.contains("embedding") {
                uniform((r, c), 0.1 * 3f64.sqrt(), rng)
            } else {
                uniform((r, c), (3.0 / r as f64).sqrt(), rng)
            };
            names.push(name);
            tensors.push(t);
        }
        Self { names, tensors }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            names: self.names.clone(),
            tensors: self.tensors.iter().map(|t| Mat::zeros(t.raw_dim())).collect(),
        }
    }

    pub fn vocab_size(&self) -> usize {
        self.tensors[TOKEN_EMB].nrows()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors.iter().all(|t| t.iter().all(|v| v.is_finite()))
    }

    /// Tensor shapes agree with `cfg` and `vocab_size`.
    pub fn matches(&self, cfg: &EncoderConfig, vocab_size: usize) -> bool {
        let shapes = Self::shapes(cfg, vocab_size);
        shapes.len() == self.tensors.len()
            && shapes
                .iter()
                .zip(self.names.iter().zip(&self.tensors))
                .all(|((n, s), (name, t))| n == name && t.dim() == *s)
    }
}

pub(crate) fn uniform(shape: (usize, usize), bound: f64, rng: &mut Rng) -> Mat {
    Array2::from_shape_simple_fn(shape, || rng.random_range(-bound..=bound))
}

/// Token ids of a window and the position of each proposition's separator.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WindowInput {
    pub ids: Vec<usize>,
    pub sep_positions: Vec<usize>,
}

impl WindowInput {
    pub fn new(props: &[Vec<usize>]) -> Self {
        let mut ids = Vec::new();
        let mut sep_positions = Vec::with_capacity(props.len());
        for p in props {
            sep_positions.push(ids.len());
            ids.push(SEP);
            ids.extend_from_slice(p);
        }
        Self { ids, sep_positions }
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

/// Dropout source for one forward pass.
pub enum Dropout<'r> {
    Off,
    On { p: f64, rng: &'r mut Rng },
}

impl Dropout<'_> {
    fn apply(&mut self, g: &mut Graph, x: NodeId) -> NodeId {
        match self {
            Dropout::Off => x,
            Dropout::On { p, .. } if *p == 0.0 => x,
            Dropout::On { p, rng } => {
                let keep = 1.0 - *p;
                let shape = g.value(x).raw_dim();
                let mask = Mat::from_shape_simple_fn(shape, || {
                    if rng.random::<f64>() < keep { 1.0 / keep } else { 0.0 }
                });
                g.mul_const(x, mask)
            }
        }
    }
}

/// Build the encoder computation on `g`. Encoder tensors are bound starting
/// at parameter index `base`. Returns the final hidden states, one row per
/// input position.
pub fn forward(
    g: &mut Graph,
    base: usize,
    cfg: &EncoderConfig,
    vocab_size: usize,
    input: &WindowInput,
    dropout: &mut Dropout,
) -> Result<NodeId, EncoderError> {
    let n = input.len();
    if n == 0 {
        return Err(EncoderError::EmptyInput);
    }
    if n > cfg.max_positions {
        return Err(EncoderError::Overlength { len: n, max: cfg.max_positions });
    }
    if let Some(&bad) = input.ids.iter().find(|&&id| id >= vocab_size) {
        return Err(EncoderError::TokenOutOfRange(bad));
    }
    let positions: Vec<usize> = (0..n).collect();
    let tok = g.embed(base + TOKEN_EMB, &input.ids);
    let pos = g.embed(base + POS_EMB, &positions);
    let x = g.add(tok, pos);
    let (gain, bias) = (g.param(base + EMB_LN_G), g.param(base + EMB_LN_B));
    let x = g.layer_norm(x, gain, bias);
    let mut x = dropout.apply(g, x);

    let d_head = cfg.dim / cfg.heads;
    let scale = 1.0 / (d_head as f64).sqrt();
    for l in 0..cfg.layers {
        let p = |k: usize| base + LAYER_BASE + l * PER_LAYER + k;
        let (wq, bq) = (g.param(p(0)), g.param(p(1)));
        let (wk, bk) = (g.param(p(2)), g.param(p(3)));
        let (wv, bv) = (g.param(p(4)), g.param(p(5)));
        let q = g.affine(x, wq, bq);
        let k = g.affine(x, wk, bk);
        let v = g.affine(x, wv, bv);
        let mut heads = Vec::with_capacity(cfg.heads);
        for h in 0..cfg.heads {
            let qh = g.slice_cols(q, h * d_head, d_head);
            let kh = g.slice_cols(k, h * d_head, d_head);
            let vh = g.slice_cols(v, h * d_head, d_head);
            let scores = g.matmul_t(qh, kh);
            let scores = g.scale(scores, scale);
            let att = g.softmax_rows(scores);
            heads.push(g.matmul(att, vh));
        }
        let merged = if heads.len() == 1 { heads[0] } else { g.concat_cols(&heads) };
        let (wo, bo) = (g.param(p(6)), g.param(p(7)));
        let attn = g.affine(merged, wo, bo);
        let attn = dropout.apply(g, attn);
        let res = g.add(x, attn);
        let (g1, b1) = (g.param(p(8)), g.param(p(9)));
        let x1 = g.layer_norm(res, g1, b1);

        let (w1, fb1) = (g.param(p(10)), g.param(p(11)));
        let hidden = g.affine(x1, w1, fb1);
        let hidden = g.gelu(hidden);
        let (w2, fb2) = (g.param(p(12)), g.param(p(13)));
        let out = g.affine(hidden, w2, fb2);
        let out = dropout.apply(g, out);
        let res = g.add(x1, out);
        let (g2, b2) = (g.param(p(14)), g.param(p(15)));
        x = g.layer_norm(res, g2, b2);
    }
    Ok(x)
}

/// Forward pass returning the separator states of `input` on `g`.
pub fn forward_representations(
    g: &mut Graph,
    base: usize,
    cfg: &EncoderConfig,
    vocab_size: usize,
    input: &WindowInput,
    dropout: &mut Dropout,
) -> Result<NodeId, EncoderError> {
    let states = forward(g, base, cfg, vocab_size, input, dropout)?;
    Ok(g.gather_rows(states, &input.sep_positions))
}

/// One representation per proposition of the window. `Eval` is
/// deterministic; `McDropout` and `Train` draw dropout masks from `seed`.
pub fn encode_window(
    cfg: &EncoderConfig,
    params: &EncoderParams,
    props: &[Vec<usize>],
    mode: EncodeMode,
    seed: u64,
) -> Result<Vec<PropRepresentation>, EncoderError> {
    let input = WindowInput::new(props);
    let mut g = Graph::new(&[&params.tensors]);
    let mut rng = rng::substream(seed, "dropout");
    let mut dropout = match mode {
        EncodeMode::Eval => Dropout::Off,
        EncodeMode::Train | EncodeMode::McDropout => Dropout::On { p: cfg.dropout_p, rng: &mut rng },
    };
    let reps = forward_representations(&mut g, 0, cfg, params.vocab_size(), &input, &mut dropout)?;
    Ok(g.value(reps).rows().into_iter().map(|r| r.to_owned()).collect())
}

/// Exact gradient of the scalar `loss` recorded on `g` with respect to the
/// encoder tensors, which must be bound first on the graph.
pub fn gradients(g: &Graph, loss: NodeId, params: &EncoderParams) -> Result<EncoderParams, EncoderError> {
    let mut buffers = g.zero_grads();
    g.backward(loss, &mut buffers)?;
    buffers.truncate(params.tensors.len());
    Ok(EncoderParams { names: params.names.clone(), tensors: buffers })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> (EncoderConfig, EncoderParams) {
        let cfg = EncoderConfig { dim: 8, layers: 1, heads: 2, ffn_mult: 2, dropout_p: 0.2, max_positions: 32, seed: 1 };
        let params = EncoderParams::init(&cfg, 12, &mut rng::from_seed(5));
        (cfg, params)
    }

    fn props() -> Vec<Vec<usize>> {
        vec![vec![4, 5, 6], vec![7, 8], vec![9, 10, 11, 4]]
    }

    #[test]
    fn eval_is_deterministic_and_one_row_per_prop() {
        let (cfg, params) = small();
        let a = encode_window(&cfg, &params, &props(), EncodeMode::Eval, 1).unwrap();
        let b = encode_window(&cfg, &params, &props(), EncodeMode::Eval, 99).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 3);
        let single = encode_window(&cfg, &params, &props()[..1], EncodeMode::Eval, 0).unwrap();
        assert_eq!(single.len(), 1);
    }

    #[test]
    fn mc_dropout_seeding() {
        let (cfg, params) = small();
        let a = encode_window(&cfg, &params, &props(), EncodeMode::McDropout, 3).unwrap();
        let b = encode_window(&cfg, &params, &props(), EncodeMode::McDropout, 3).unwrap();
        let c = encode_window(&cfg, &params, &props(), EncodeMode::McDropout, 4).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn zero_dropout_collapses_to_eval() {
        let (mut cfg, params) = small();
        cfg.dropout_p = 0.0;
        let eval = encode_window(&cfg, &params, &props(), EncodeMode::Eval, 0).unwrap();
        for seed in 0..4 {
            assert_eq!(encode_window(&cfg, &params, &props(), EncodeMode::McDropout, seed).unwrap(), eval);
        }
    }

    #[test]
    fn order_sensitive() {
        let (cfg, params) = small();
        let mut swapped = props();
        swapped.swap(0, 2);
        let a = encode_window(&cfg, &params, &props(), EncodeMode::Eval, 0).unwrap();
        let b = encode_window(&cfg, &params, &swapped, EncodeMode::Eval, 0).unwrap();
        assert_ne!(a[0], b[2]);
    }

    #[test]
    fn overlength_and_bad_config() {
        let (cfg, params) = small();
        let long = vec![vec![4; 40]];
        assert_eq!(
            encode_window(&cfg, &params, &long, EncodeMode::Eval, 0),
            Err(EncoderError::Overlength { len: 41, max: 32 })
        );
        assert_eq!(encode_window(&cfg, &params, &[], EncodeMode::Eval, 0), Err(EncoderError::EmptyInput));
        assert!(EncoderConfig { dim: 9, heads: 2, ..Default::default() }.validate().is_err());
        assert!(EncoderConfig { dropout_p: 1.0, ..Default::default() }.validate().is_err());
        assert!(params.matches(&cfg, 12));
        assert!(!params.matches(&cfg, 13));
    }

    #[test]
    fn gradients_without_forward_is_a_state_error() {
        let (_, params) = small();
        let g = Graph::new(&[&params.tensors]);
        let fake = {
            let mut other = Graph::new(&[&params.tensors]);
            let p = other.param(2);
            other.cross_entropy(p, &[0], &[1.0])
        };
        assert!(matches!(gradients(&g, fake, &params), Err(EncoderError::Graph(GraphError::NoForward(_)))));
    }
}
