//! Reverse-mode differentiation over batched matrix operations.
//!
//! A [`Tape`] records a forward computation as a list of nodes in execution
//! order. [`Tape::backward`] walks that list in reverse and returns a
//! [`Gradients`] collection holding one entry per parameter that appears on
//! the tape, plus one row gradient per embedded object that was gathered.

use std::collections::{BTreeMap, HashMap};
use std::fmt;

use super::embedding::EmbeddingTable;
use super::layer::Activation;
use super::matrix::{axpy, Matrix};
use crate::error::{Error, Result};
use crate::hetgraph::LinkTypeId;

/// Identifies a dense parameter tensor of the model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ParamId {
    LinkWeight { link: LinkTypeId, layer: usize },
    LinkBias { link: LinkTypeId, layer: usize },
    HiddenWeight(usize),
    HiddenBias(usize),
    Classifier,
}

impl fmt::Display for ParamId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ParamId::LinkWeight { link, layer } => write!(f, "link{}.w{}", link.0, layer),
            ParamId::LinkBias { link, layer } => write!(f, "link{}.b{}", link.0, layer),
            ParamId::HiddenWeight(q) => write!(f, "hidden.w{q}"),
            ParamId::HiddenBias(q) => write!(f, "hidden.b{q}"),
            ParamId::Classifier => f.write_str("classifier"),
        }
    }
}

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Constant,
    Param(ParamId),
    Gather(Vec<usize>),
    Linear { x: Var, w: Var, b: Option<Var> },
    Activate { x: Var, kind: Activation },
    SquaredDistance { a: Var, b: Var },
    SoftmaxCrossEntropy { logits: Var, targets: Vec<usize>, probs: Matrix },
    WeightedSum { x: Var, weights: Matrix },
    Combine(Vec<(Var, f64)>),
}

#[derive(Debug)]
struct Node {
    value: Matrix,
    op: Op,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    params: HashMap<ParamId, Var>,
    consumed: bool,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&mut self, value: Matrix, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    /// Value of a `1 x 1` node.
    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value.as_slice()[0]
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Input that receives no gradient.
    pub fn constant(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Constant)
    }

    /// Parameter leaf. Recording the same id twice returns the first node, so
    /// a module used at several positions of a path shares one leaf.
    pub fn param(&mut self, id: ParamId, value: &Matrix) -> Var {
        if let Some(&v) = self.params.get(&id) {
            return v;
        }
        let v = self.push(value.clone(), Op::Param(id));
        self.params.insert(id, v);
        v
    }

    /// Embedding rows of `objects`, stacked.
    pub fn gather(&mut self, table: &EmbeddingTable, objects: &[usize]) -> Result<Var> {
        let value = table.gather(objects)?;
        Ok(self.push(value, Op::Gather(objects.to_vec())))
    }

    /// `x * w^T + b`, with `w` stored `out x in` and `b` a `1 x out` row.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let mut value = self.value(x).matmul_t(self.value(w))?;
        if let Some(b) = b {
            let bias = self.value(b);
            if bias.shape() != (1, value.cols()) {
                return Err(Error::Shape(format!(
                    "bias {:?} for output width {}",
                    bias.shape(),
                    value.cols()
                )));
            }
            let bias = bias.as_slice().to_vec();
            value.add_row_vector(&bias);
        }
        Ok(self.push(value, Op::Linear { x, w, b }))
    }

    pub fn activate(&mut self, x: Var, kind: Activation) -> Var {
        if kind == Activation::Identity {
            return x;
        }
        let value = kind.apply_matrix(self.value(x));
        self.push(value, Op::Activate { x, kind })
    }

    /// Smallest `|z|` over all ReLU inputs on the tape, infinite when there
    /// are none. Finite differences are only meaningful when this exceeds
    /// the probe's effect on `z`.
    pub fn relu_margin(&self) -> f64 {
        self.nodes
            .iter()
            .filter_map(|n| match n.op {
                Op::Activate { x, kind: Activation::Relu } => Some(self.value(x)),
                _ => None,
            })
            .flat_map(|z| z.as_slice().iter().map(|v| v.abs()))
            .fold(f64::INFINITY, f64::min)
    }

    /// `sum ||a_i - b_i||^2` over all rows.
    pub fn squared_distance(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape() != vb.shape() {
            return Err(Error::Shape(format!(
                "squared distance between {:?} and {:?}",
                va.shape(),
                vb.shape()
            )));
        }
        let s: f64 = va
            .as_slice()
            .iter()
            .zip(vb.as_slice())
            .map(|(x, y)| (x - y) * (x - y))
            .sum();
        Ok(self.push(Matrix::scalar(s), Op::SquaredDistance { a, b }))
    }

    /// `-sum_i log softmax(logits_i)[targets_i]`.
    pub fn softmax_cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Result<Var> {
        let z = self.value(logits);
        if z.rows() != targets.len() {
            return Err(Error::Shape(format!(
                "{} logit rows for {} targets",
                z.rows(),
                targets.len()
            )));
        }
        let mut probs = Matrix::zeros(z.rows(), z.cols());
        let mut loss = 0.0;
        for (i, &y) in targets.iter().enumerate() {
            if y >= z.cols() {
                return Err(Error::ClassOutOfRange {
                    class: y,
                    num_classes: z.cols(),
                });
            }
            let row = z.row(i);
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let sum: f64 = row.iter().map(|&v| (v - max).exp()).sum();
            let lse = max + sum.ln();
            loss += lse - row[y];
            for (p, &v) in probs.row_mut(i).iter_mut().zip(row) {
                *p = (v - lse).exp();
            }
        }
        Ok(self.push(
            Matrix::scalar(loss),
            Op::SoftmaxCrossEntropy {
                logits,
                targets: targets.to_vec(),
                probs,
            },
        ))
    }

    /// `sum weights .* x`.
    pub fn weighted_sum(&mut self, x: Var, weights: Matrix) -> Result<Var> {
        let v = self.value(x);
        if v.shape() != weights.shape() {
            return Err(Error::Shape("weighted sum shape mismatch".into()));
        }
        let s = v
            .as_slice()
            .iter()
            .zip(weights.as_slice())
            .map(|(a, b)| a * b)
            .sum();
        Ok(self.push(Matrix::scalar(s), Op::WeightedSum { x, weights }))
    }

    /// `sum_k c_k * v_k` over same-shaped nodes.
    pub fn combine(&mut self, terms: &[(Var, f64)]) -> Result<Var> {
        let Some(&(first, _)) = terms.first() else {
            return Err(Error::Shape("empty combination".into()));
        };
        let shape = self.value(first).shape();
        let mut value = Matrix::zeros(shape.0, shape.1);
        for &(v, c) in terms {
            if self.value(v).shape() != shape {
                return Err(Error::Shape("combination shape mismatch".into()));
            }
            value.add_scaled(c, self.value(v));
        }
        Ok(self.push(value, Op::Combine(terms.to_vec())))
    }

    /// Reverse pass from the scalar node `loss`. A tape can be consumed once.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients> {
        if self.consumed {
            return Err(Error::TapeConsumed);
        }
        let (rows, cols) = self.value(loss).shape();
        if (rows, cols) != (1, 1) {
            return Err(Error::NonScalarLoss { rows, cols });
        }
        self.consumed = true;

        let mut adj: Vec<Option<Matrix>> = Vec::with_capacity(loss.0 + 1);
        adj.resize_with(loss.0 + 1, || None);
        adj[loss.0] = Some(Matrix::scalar(1.0));
        let mut grads = Gradients::default();

        fn accumulate(adj: &mut [Option<Matrix>], v: Var, g: Matrix) {
            match &mut adj[v.0] {
                Some(existing) => existing.add_scaled(1.0, &g),
                slot => *slot = Some(g),
            }
        }

        for idx in (0..=loss.0).rev() {
            let Some(g) = adj[idx].take() else { continue };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Constant => {}
                Op::Param(id) => grads.add_dense(*id, g),
                Op::Gather(objects) => {
                    for (i, &v) in objects.iter().enumerate() {
                        grads.add_row(v, g.row(i));
                    }
                }
                Op::Linear { x, w, b } => {
                    let wv = &self.nodes[w.0].value;
                    let xv = &self.nodes[x.0].value;
                    accumulate(&mut adj, *x, g.matmul(wv)?);
                    accumulate(&mut adj, *w, g.t_matmul(xv)?);
                    if let Some(b) = b {
                        accumulate(&mut adj, *b, g.column_sums());
                    }
                }
                Op::Activate { x, kind } => {
                    let mut dx = g;
                    for (d, &y) in dx.as_mut_slice().iter_mut().zip(node.value.as_slice()) {
                        *d *= kind.derivative_from_output(y);
                    }
                    accumulate(&mut adj, *x, dx);
                }
                Op::SquaredDistance { a, b } => {
                    let s = g.as_slice()[0];
                    let mut diff = self.nodes[a.0].value.clone();
                    diff.add_scaled(-1.0, &self.nodes[b.0].value);
                    diff.scale(2.0 * s);
                    let mut neg = diff.clone();
                    neg.scale(-1.0);
                    accumulate(&mut adj, *a, diff);
                    accumulate(&mut adj, *b, neg);
                }
                Op::SoftmaxCrossEntropy {
                    logits,
                    targets,
                    probs,
                } => {
                    let s = g.as_slice()[0];
                    let mut dz = probs.clone();
                    for (i, &y) in targets.iter().enumerate() {
                        let v = dz.get(i, y);
                        dz.set(i, y, v - 1.0);
                    }
                    dz.scale(s);
                    accumulate(&mut adj, *logits, dz);
                }
                Op::WeightedSum { x, weights } => {
                    let mut dx = weights.clone();
                    dx.scale(g.as_slice()[0]);
                    accumulate(&mut adj, *x, dx);
                }
                Op::Combine(terms) => {
                    for &(v, c) in terms {
                        let mut d = g.clone();
                        d.scale(c);
                        accumulate(&mut adj, v, d);
                    }
                }
            }
        }
        Ok(grads)
    }
}

/// Gradients of one backward pass: dense tensors by [`ParamId`] and sparse
/// embedding rows by object index.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Gradients {
    dense: BTreeMap<ParamId, Matrix>,
    rows: BTreeMap<usize, Vec<f64>>,
}

impl Gradients {
    pub fn dense(&self, id: &ParamId) -> Option<&Matrix> {
        self.dense.get(id)
    }

    pub fn row(&self, object: usize) -> Option<&[f64]> {
        self.rows.get(&object).map(Vec::as_slice)
    }

    pub fn dense_iter(&self) -> impl Iterator<Item = (&ParamId, &Matrix)> {
        self.dense.iter()
    }

    pub fn row_iter(&self) -> impl Iterator<Item = (usize, &[f64])> {
        self.rows.iter().map(|(&v, g)| (v, g.as_slice()))
    }

    pub fn num_dense(&self) -> usize {
        self.dense.len()
    }

    pub fn num_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn add_dense(&mut self, id: ParamId, g: Matrix) {
        match self.dense.get_mut(&id) {
            Some(existing) => existing.add_scaled(1.0, &g),
            None => {
                self.dense.insert(id, g);
            }
        }
    }

    pub fn add_row(&mut self, object: usize, g: &[f64]) {
        match self.rows.get_mut(&object) {
            Some(existing) => axpy(1.0, g, existing),
            None => {
                self.rows.insert(object, g.to_vec());
            }
        }
    }

    pub fn merge(&mut self, other: Gradients) {
        for (id, g) in other.dense {
            self.add_dense(id, g);
        }
        for (v, g) in other.rows {
            self.add_row(v, &g);
        }
    }

    pub fn global_norm(&self) -> f64 {
        let dense: f64 = self.dense.values().map(Matrix::squared_norm).sum();
        let rows: f64 = self
            .rows
            .values()
            .map(|r| r.iter().map(|x| x * x).sum::<f64>())
            .sum();
        (dense + rows).sqrt()
    }

    pub fn scale(&mut self, alpha: f64) {
        for g in self.dense.values_mut() {
            g.scale(alpha);
        }
        for r in self.rows.values_mut() {
            for x in r {
                *x *= alpha;
            }
        }
    }

    /// Rescales so that the global norm is at most `max_norm`. Returns the
    /// norm before clipping.
    pub fn clip_global_norm(&mut self, max_norm: f64) -> f64 {
        let norm = self.global_norm();
        if norm > max_norm && norm > 0.0 {
            self.scale(max_norm / norm);
        }
        norm
    }

    /// Name of the first tensor holding a non-finite value.
    pub fn first_non_finite(&self) -> Option<String> {
        for (id, g) in &self.dense {
            if !g.is_finite() {
                return Some(id.to_string());
            }
        }
        for (v, r) in &self.rows {
            if r.iter().any(|x| !x.is_finite()) {
                return Some(format!("embedding[{v}]"));
            }
        }
        None
    }

    /// Whether every entry is exactly zero.
    pub fn is_zero(&self) -> bool {
        self.dense
            .values()
            .all(|g| g.as_slice().iter().all(|&x| x == 0.0))
            && self.rows.values().all(|r| r.iter().all(|&x| x == 0.0))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relu_margin_sees_only_relu_inputs() {
        let mut tape = Tape::new();
        assert_eq!(tape.relu_margin(), f64::INFINITY);
        let x = tape.constant(Matrix::from_vec(1, 3, vec![-0.5, 0.25, 2.0]).unwrap());
        tape.activate(x, Activation::Sigmoid);
        assert_eq!(tape.relu_margin(), f64::INFINITY);
        tape.activate(x, Activation::Relu);
        assert_eq!(tape.relu_margin(), 0.25);
    }

    #[test]
    fn tape_is_single_use() {
        let mut tape = Tape::new();
        let w = tape.param(ParamId::Classifier, &Matrix::scalar(3.0));
        let x = tape.constant(Matrix::scalar(2.0));
        let y = tape.linear(x, w, None).unwrap();
        let g = tape.backward(y).unwrap();
        assert_eq!(g.dense(&ParamId::Classifier).unwrap().as_slice(), &[2.0]);
        assert!(matches!(tape.backward(y), Err(Error::TapeConsumed)));
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let mut tape = Tape::new();
        let x = tape.constant(Matrix::zeros(2, 2));
        assert!(matches!(
            tape.backward(x),
            Err(Error::NonScalarLoss { rows: 2, cols: 2 })
        ));
    }

    #[test]
    fn shared_param_accumulates() {
        // y = w * (w * x) with w = 3, x = 2 -> dy/dw = 2 w x = 12
        let mut tape = Tape::new();
        let x = tape.constant(Matrix::scalar(2.0));
        let w = tape.param(ParamId::Classifier, &Matrix::scalar(3.0));
        let h = tape.linear(x, w, None).unwrap();
        let w2 = tape.param(ParamId::Classifier, &Matrix::scalar(99.0));
        assert_eq!(w, w2);
        let y = tape.linear(h, w2, None).unwrap();
        assert_eq!(tape.scalar(y), 18.0);
        let g = tape.backward(y).unwrap();
        assert_eq!(g.dense(&ParamId::Classifier).unwrap().as_slice(), &[12.0]);
    }

    #[test]
    fn clipping_bounds_norm() {
        let mut g = Gradients::default();
        g.add_dense(ParamId::Classifier, Matrix::from_vec(1, 2, vec![3.0, 0.0]).unwrap());
        g.add_row(7, &[0.0, 4.0]);
        assert_eq!(g.clip_global_norm(1.0), 5.0);
        assert!((g.global_norm() - 1.0).abs() < 1e-12);
        assert_eq!(g.clip_global_norm(10.0), g.global_norm());
    }
}
