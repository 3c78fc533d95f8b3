//! A small reverse-mode differentiation tape over dense `f64` matrices.
//!
//! A [`Graph`] borrows the parameter tensors it reads, records every forward
//! operation, and accumulates exact gradients into a caller-owned buffer on
//! [`Graph::backward`].

use ndarray::{s, Array2, Axis, Zip};
use thiserror::Error;

pub type Mat = Array2<f64>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

#[derive(Debug, Error, PartialEq, Eq)]
pub enum GraphError {
    #[error("node {0} was not produced by a forward pass on this graph")]
    NoForward(usize),
    #[error("loss node has shape {0}x{1}, expected a 1x1 scalar")]
    NotScalar(usize, usize),
    #[error("gradient buffer has {got} tensors, graph binds {expected}")]
    BufferMismatch { expected: usize, got: usize },
}

enum Op {
    Input,
    Param(usize),
    Embed { param: usize, ids: Vec<usize> },
    MatMul(NodeId, NodeId),
    /// a · bᵀ
    MatMulT(NodeId, NodeId),
    Add(NodeId, NodeId),
    /// a + b broadcast over rows; b is 1×n
    AddRow(NodeId, NodeId),
    Scale(NodeId, f64),
    MulConst(NodeId, Mat),
    SliceCols(NodeId, usize),
    ConcatCols(Vec<NodeId>),
    GatherRows(NodeId, Vec<usize>),
    SoftmaxRows(NodeId),
    LayerNorm { x: NodeId, gain: NodeId, bias: NodeId, xhat: Mat, inv_std: Vec<f64> },
    Gelu(NodeId),
    Tanh(NodeId),
    CrossEntropy { logits: NodeId, targets: Vec<usize>, weights: Vec<f64>, probs: Mat },
    Sum(Vec<NodeId>),
}

struct Node {
    value: Mat,
    op: Op,
}

pub const LAYER_NORM_EPS: f64 = 1e-5;
const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_K: f64 = 0.044_715;

pub struct Graph<'p> {
    params: Vec<&'p Mat>,
    nodes: Vec<Node>,
}

impl<'p> Graph<'p> {
    /// Bind parameter groups; parameter `i` of the concatenated groups is
    /// addressed as index `i`.
    pub fn new(groups: &[&'p [Mat]]) -> Self {
        let params = groups.iter().flat_map(|g| g.iter()).collect();
        Self { params, nodes: Vec::new() }
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    pub fn value(&self, id: NodeId) -> &Mat {
        &self.nodes[id.0].value
    }

    pub fn scalar(&self, id: NodeId) -> f64 {
        self.nodes[id.0].value[[0, 0]]
    }

    fn push(&mut self, value: Mat, op: Op) -> NodeId {
        self.nodes.push(Node { value, op });
        NodeId(self.nodes.len() - 1)
    }

    fn v(&self, id: NodeId) -> &Mat {
        &self.nodes[id.0].value
    }

    pub fn input(&mut self, value: Mat) -> NodeId {
        self.push(value, Op::Input)
    }

    pub fn param(&mut self, index: usize) -> NodeId {
        let value = self.params[index].clone();
        self.push(value, Op::Param(index))
    }

    /// Rows `ids` of parameter `index`, without copying the whole table.
    pub fn embed(&mut self, index: usize, ids: &[usize]) -> NodeId {
        let table = self.params[index];
        let mut value = Mat::zeros((ids.len(), table.ncols()));
        for (r, &id) in ids.iter().enumerate() {
            value.row_mut(r).assign(&table.row(id));
        }
        self.push(value, Op::Embed { param: index, ids: ids.to_vec() })
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let value = self.v(a).dot(self.v(b));
        self.push(value, Op::MatMul(a, b))
    }

    pub fn matmul_t(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let value = self.v(a).dot(&self.v(b).t());
        self.push(value, Op::MatMulT(a, b))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let value = self.v(a) + self.v(b);
        self.push(value, Op::Add(a, b))
    }

    pub fn add_row(&mut self, a: NodeId, row: NodeId) -> NodeId {
        let value = self.v(a) + self.v(row);
        self.push(value, Op::AddRow(a, row))
    }

    /// `x · w + b`
    pub fn affine(&mut self, x: NodeId, w: NodeId, b: NodeId) -> NodeId {
        let xw = self.matmul(x, w);
        self.add_row(xw, b)
    }

    pub fn scale(&mut self, a: NodeId, factor: f64) -> NodeId {
        let value = self.v(a) * factor;
        self.push(value, Op::Scale(a, factor))
    }

    /// Elementwise product with a constant mask.
    pub fn mul_const(&mut self, a: NodeId, mask: Mat) -> NodeId {
        let value = self.v(a) * &mask;
        self.push(value, Op::MulConst(a, mask))
    }

    pub fn slice_cols(&mut self, a: NodeId, start: usize, width: usize) -> NodeId {
        let value = self.v(a).slice(s![.., start..start + width]).to_owned();
        self.push(value, Op::SliceCols(a, start))
    }

    pub fn concat_cols(&mut self, parts: &[NodeId]) -> NodeId {
        let rows = self.v(parts[0]).nrows();
        let cols = parts.iter().map(|&p| self.v(p).ncols()).sum();
        let mut value = Mat::zeros((rows, cols));
        let mut at = 0;
        for &p in parts {
            let w = self.v(p).ncols();
            value.slice_mut(s![.., at..at + w]).assign(self.v(p));
            at += w;
        }
        self.push(value, Op::ConcatCols(parts.to_vec()))
    }

    pub fn gather_rows(&mut self, a: NodeId, rows: &[usize]) -> NodeId {
        let src = self.v(a);
        let mut value = Mat::zeros((rows.len(), src.ncols()));
        for (r, &i) in rows.iter().enumerate() {
            value.row_mut(r).assign(&src.row(i));
        }
        self.push(value, Op::GatherRows(a, rows.to_vec()))
    }

    pub fn softmax_rows(&mut self, a: NodeId) -> NodeId {
        let mut value = self.v(a).clone();
        for mut row in value.rows_mut() {
            let max = row.fold(f64::NEG_INFINITY, |m, &x| m.max(x));
            row.mapv_inplace(|x| (x - max).exp());
            let sum = row.sum();
            row.mapv_inplace(|x| x / sum);
        }
        self.push(value, Op::SoftmaxRows(a))
    }

    /// Row-wise layer normalization with 1×n gain and bias.
    pub fn layer_norm(&mut self, x: NodeId, gain: NodeId, bias: NodeId) -> NodeId {
        let src = self.v(x);
        let n = src.ncols() as f64;
        let mut xhat = src.clone();
        let mut inv_std = Vec::with_capacity(src.nrows());
        for mut row in xhat.rows_mut() {
            let mean = row.sum() / n;
            row.mapv_inplace(|v| v - mean);
            let var = row.fold(0.0, |acc, &v| acc + v * v) / n;
            let is = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            row.mapv_inplace(|v| v * is);
            inv_std.push(is);
        }
        let value = &xhat * self.v(gain) + self.v(bias);
        self.push(value, Op::LayerNorm { x, gain, bias, xhat, inv_std })
    }

    pub fn gelu(&mut self, a: NodeId) -> NodeId {
        let value = self.v(a).mapv(|x| 0.5 * x * (1.0 + (GELU_C * (x + GELU_K * x * x * x)).tanh()));
        self.push(value, Op::Gelu(a))
    }

    pub fn tanh(&mut self, a: NodeId) -> NodeId {
        let value = self.v(a).mapv(f64::tanh);
        self.push(value, Op::Tanh(a))
    }

    /// Weighted sum over rows of `-log softmax(logits)[target]`.
    pub fn cross_entropy(&mut self, logits: NodeId, targets: &[usize], weights: &[f64]) -> NodeId {
        let z = self.v(logits);
        assert_eq!(z.nrows(), targets.len());
        assert_eq!(z.nrows(), weights.len());
        let mut probs = z.clone();
        let mut loss = 0.0;
        for (r, mut row) in probs.rows_mut().into_iter().enumerate() {
            let max = row.fold(f64::NEG_INFINITY, |m, &x| m.max(x));
            let lse = max + row.fold(0.0, |acc, &x| acc + (x - max).exp()).ln();
            loss += weights[r] * (lse - row[targets[r]]);
            row.mapv_inplace(|x| (x - lse).exp());
        }
        let value = Mat::from_elem((1, 1), loss);
        self.push(value, Op::CrossEntropy { logits, targets: targets.to_vec(), weights: weights.to_vec(), probs })
    }

    /// Sum of 1×1 scalars.
    pub fn sum(&mut self, parts: &[NodeId]) -> NodeId {
        let total: f64 = parts.iter().map(|&p| self.v(p)[[0, 0]]).sum();
        self.push(Mat::from_elem((1, 1), total), Op::Sum(parts.to_vec()))
    }

    /// Softmax probabilities recorded by a cross-entropy node.
    pub fn probabilities(&self, ce: NodeId) -> Option<&Mat> {
        match &self.nodes[ce.0].op {
            Op::CrossEntropy { probs, .. } => Some(probs),
            _ => None,
        }
    }

    /// Zero buffers shaped like the bound parameters.
    pub fn zero_grads(&self) -> Vec<Mat> {
        self.params.iter().map(|p| Mat::zeros(p.raw_dim())).collect()
    }

    /// Accumulate d`loss`/d(parameter) into `grads`, scaled by `upstream`.
    pub fn backward_scaled(&self, loss: NodeId, upstream: f64, grads: &mut [Mat]) -> Result<(), GraphError> {
        let Some(node) = self.nodes.get(loss.0) else {
            return Err(GraphError::NoForward(loss.0));
        };
        if node.value.dim() != (1, 1) {
            return Err(GraphError::NotScalar(node.value.nrows(), node.value.ncols()));
        }
        if grads.len() != self.params.len() {
            return Err(GraphError::BufferMismatch { expected: self.params.len(), got: grads.len() });
        }
        let mut adj: Vec<Option<Mat>> = (0..=loss.0).map(|_| None).collect();
        adj[loss.0] = Some(Mat::from_elem((1, 1), upstream));
        for i in (0..=loss.0).rev() {
            let Some(g) = adj[i].take() else { continue };
            let node = &self.nodes[i];
            match &node.op {
                Op::Input => {}
                Op::Param(p) => grads[*p] += &g,
                Op::Embed { param, ids } => {
                    let buf = &mut grads[*param];
                    for (r, &id) in ids.iter().enumerate() {
                        let mut row = buf.row_mut(id);
                        row += &g.row(r);
                    }
                }
                Op::MatMul(a, b) => {
                    let ga = g.dot(&self.v(*b).t());
                    let gb = self.v(*a).t().dot(&g);
                    accumulate(&mut adj, *a, ga);
                    accumulate(&mut adj, *b, gb);
                }
                Op::MatMulT(a, b) => {
                    let ga = g.dot(self.v(*b));
                    let gb = g.t().dot(self.v(*a));
                    accumulate(&mut adj, *a, ga);
                    accumulate(&mut adj, *b, gb);
                }
                Op::Add(a, b) => {
                    accumulate(&mut adj, *b, g.clone());
                    accumulate(&mut adj, *a, g);
                }
                Op::AddRow(a, b) => {
                    let gb = g.sum_axis(Axis(0)).insert_axis(Axis(0));
                    accumulate(&mut adj, *b, gb);
                    accumulate(&mut adj, *a, g);
                }
                Op::Scale(a, f) => accumulate(&mut adj, *a, g * *f),
                Op::MulConst(a, mask) => accumulate(&mut adj, *a, g * mask),
                Op::SliceCols(a, start) => {
                    let mut ga = Mat::zeros(self.v(*a).raw_dim());
                    ga.slice_mut(s![.., *start..*start + g.ncols()]).assign(&g);
                    accumulate(&mut adj, *a, ga);
                }
                Op::ConcatCols(parts) => {
                    let mut at = 0;
                    for &p in parts {
                        let w = self.v(p).ncols();
                        accumulate(&mut adj, p, g.slice(s![.., at..at + w]).to_owned());
                        at += w;
                    }
                }
                Op::GatherRows(a, rows) => {
                    let mut ga = Mat::zeros(self.v(*a).raw_dim());
                    for (r, &src) in rows.iter().enumerate() {
                        let mut row = ga.row_mut(src);
                        row += &g.row(r);
                    }
                    accumulate(&mut adj, *a, ga);
                }
                Op::SoftmaxRows(a) => {
                    let y = &node.value;
                    let mut ga = &g * y;
                    for (mut row, yr) in ga.rows_mut().into_iter().zip(y.rows()) {
                        let dot = row.sum();
                        Zip::from(&mut row).and(&yr).for_each(|gv, &yv| *gv -= yv * dot);
                    }
                    accumulate(&mut adj, *a, ga);
                }
                Op::LayerNorm { x, gain, bias, xhat, inv_std } => {
                    let n = xhat.ncols() as f64;
                    let ggain = (&g * xhat).sum_axis(Axis(0)).insert_axis(Axis(0));
                    let gbias = g.sum_axis(Axis(0)).insert_axis(Axis(0));
                    let dxhat = &g * self.v(*gain);
                    let mut gx = Mat::zeros(xhat.raw_dim());
                    for r in 0..xhat.nrows() {
                        let d = dxhat.row(r);
                        let h = xhat.row(r);
                        let mean_d = d.sum() / n;
                        let mean_dh = d.dot(&h) / n;
                        let is = inv_std[r];
                        Zip::from(gx.row_mut(r))
                            .and(&d)
                            .and(&h)
                            .for_each(|o, &dv, &hv| *o = is * (dv - mean_d - hv * mean_dh));
                    }
                    accumulate(&mut adj, *gain, ggain);
                    accumulate(&mut adj, *bias, gbias);
                    accumulate(&mut adj, *x, gx);
                }
                Op::Gelu(a) => {
                    let x = self.v(*a);
                    let mut ga = g;
                    Zip::from(&mut ga).and(x).for_each(|gv, &xv| {
                        let t = (GELU_C * (xv + GELU_K * xv * xv * xv)).tanh();
                        let dt = (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_K * xv * xv);
                        *gv *= 0.5 * (1.0 + t) + 0.5 * xv * dt;
                    });
                    accumulate(&mut adj, *a, ga);
                }
                Op::Tanh(a) => {
                    let mut ga = g;
                    Zip::from(&mut ga).and(&node.value).for_each(|gv, &y| *gv *= 1.0 - y * y);
                    accumulate(&mut adj, *a, ga);
                }
                Op::CrossEntropy { logits, targets, weights, probs } => {
                    let up = g[[0, 0]];
                    let mut gz = probs.clone();
                    for (r, mut row) in gz.rows_mut().into_iter().enumerate() {
                        row[targets[r]] -= 1.0;
                        row *= up * weights[r];
                    }
                    accumulate(&mut adj, *logits, gz);
                }
                Op::Sum(parts) => {
                    for &p in parts {
                        accumulate(&mut adj, p, g.clone());
                    }
                }
            }
        }
        Ok(())
    }

    pub fn backward(&self, loss: NodeId, grads: &mut [Mat]) -> Result<(), GraphError> {
        self.backward_scaled(loss, 1.0, grads)
    }
}

fn accumulate(adj: &mut [Option<Mat>], id: NodeId, g: Mat) {
    match &mut adj[id.0] {
        Some(existing) => *existing += &g,
        slot @ None => *slot = Some(g),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    /// Central-difference check of every parameter entry against `backward`.
    fn check(params: &[Mat], f: impl Fn(&mut Graph) -> NodeId) {
        let mut g = Graph::new(&[params]);
        let loss = f(&mut g);
        let mut grads = g.zero_grads();
        g.backward(loss, &mut grads).unwrap();
        let h = 1e-6;
        for (pi, p) in params.iter().enumerate() {
            for idx in 0..p.len() {
                let eval = |delta: f64| {
                    let mut ps = params.to_vec();
                    let flat = ps[pi].as_slice_mut().unwrap();
                    flat[idx] += delta;
                    let mut g = Graph::new(&[&ps]);
                    let l = f(&mut g);
                    g.scalar(l)
                };
                let fd = (eval(h) - eval(-h)) / (2.0 * h);
                let an = grads[pi].as_slice().unwrap()[idx];
                assert!((fd - an).abs() <= 1e-6 * (1.0 + fd.abs()), "param {pi}[{idx}]: fd {fd} vs {an}");
            }
        }
    }

    #[test]
    fn ops_match_finite_differences() {
        let x = array![[0.3, -1.2, 0.5], [1.1, 0.2, -0.7]];
        let w = array![[0.4, -0.3], [0.2, 0.9], [-0.5, 0.1]];
        let b = array![[0.05, -0.02]];
        let gain = array![[1.2, 0.8]];
        let bias = array![[0.1, -0.1]];
        let params = vec![x, w, b, gain, bias];
        check(&params, |g| {
            let x = g.param(0);
            let w = g.param(1);
            let b = g.param(2);
            let h = g.affine(x, w, b);
            let h = g.gelu(h);
            let (gn, bs) = (g.param(3), g.param(4));
            let n = g.layer_norm(h, gn, bs);
            let scores = g.matmul_t(n, n);
            let att = g.softmax_rows(scores);
            let mixed = g.matmul(att, n);
            let left = g.slice_cols(mixed, 0, 1);
            let right = g.slice_cols(mixed, 1, 1);
            let cat = g.concat_cols(&[right, left]);
            let t = g.tanh(cat);
            let t = g.scale(t, 1.7);
            let picked = g.gather_rows(t, &[1, 0, 1]);
            let masked = g.mul_const(picked, array![[1.0, 0.0], [2.0, 1.0], [0.5, 0.5]]);
            let both = g.add(masked, picked);
            let ce = g.cross_entropy(both, &[0, 1, 1], &[0.5, 1.0, 0.25]);
            let ce2 = g.cross_entropy(t, &[1, 0], &[1.0, 1.0]);
            g.sum(&[ce, ce2])
        });
    }

    #[test]
    fn embedding_rows_accumulate() {
        let table = array![[0.1, 0.2], [0.3, -0.4], [0.5, 0.6]];
        let params = vec![table];
        check(&params, |g| {
            let e = g.embed(0, &[2, 0, 2]);
            g.cross_entropy(e, &[0, 1, 1], &[1.0, 1.0, 1.0])
        });
    }

    #[test]
    fn backward_errors() {
        let params = vec![array![[1.0, 2.0]]];
        let mut g = Graph::new(&[&params]);
        let mut grads = g.zero_grads();
        assert_eq!(g.backward(NodeId(0), &mut grads), Err(GraphError::NoForward(0)));
        let p = g.param(0);
        assert_eq!(g.backward(p, &mut grads), Err(GraphError::NotScalar(1, 2)));
        let ce = g.cross_entropy(p, &[0], &[1.0]);
        assert!(matches!(g.backward(ce, &mut []), Err(GraphError::BufferMismatch { .. })));
    }

    #[test]
    fn cross_entropy_value() {
        let params = vec![array![[0.0, 0.0, 0.0], [2.0, 0.0, 0.0]]];
        let mut g = Graph::new(&[&params]);
        let z = g.param(0);
        let ce = g.cross_entropy(z, &[1, 0], &[1.0, 1.0]);
        let expected = 3f64.ln() + ((2f64).exp() + 2.0).ln() - 2.0;
        assert!((g.scalar(ce) - expected).abs() < 1e-12);
    }
}
