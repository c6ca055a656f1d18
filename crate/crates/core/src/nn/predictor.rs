use rand::Rng;

use super::layer::{Activation, DenseLayer};
use super::matrix::{argmax, softmax_rows, Matrix};
use super::tape::{ParamId, Tape, Var};
use crate::error::{Error, Result};

/// MLP head: hidden layers followed by a bias-free classification matrix of
/// shape `classes x dim`.
#[derive(Debug, Clone, PartialEq)]
pub struct Predictor {
    pub hidden: Vec<DenseLayer>,
    pub classifier: Matrix,
}

impl Predictor {
    pub fn new<R: Rng + ?Sized>(
        dim: usize,
        classes: usize,
        hidden_layers: usize,
        activation: Activation,
        rng: &mut R,
    ) -> Self {
        let hidden = (0..hidden_layers)
            .map(|_| DenseLayer::glorot(dim, dim, activation, rng))
            .collect();
        let classifier = DenseLayer::glorot(dim, classes, Activation::Identity, rng).weight;
        Predictor { hidden, classifier }
    }

    pub fn num_classes(&self) -> usize {
        self.classifier.rows()
    }

    pub fn dim(&self) -> usize {
        self.classifier.cols()
    }

    /// Logits for each row of `x`.
    pub fn logits(&self, x: &Matrix) -> Result<Matrix> {
        let mut h = x.clone();
        for layer in &self.hidden {
            h = layer.forward(&h)?;
        }
        h.matmul_t(&self.classifier)
    }

    pub fn probabilities(&self, x: &Matrix) -> Result<Matrix> {
        Ok(softmax_rows(&self.logits(x)?))
    }

    /// Argmax class per row, lowest id on ties.
    pub fn predict(&self, x: &Matrix) -> Result<Vec<usize>> {
        let logits = self.logits(x)?;
        Ok((0..logits.rows()).map(|i| argmax(logits.row(i))).collect())
    }

    /// Records the logits of `x` onto `tape`.
    pub fn record_logits(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        let mut h = x;
        for (q, layer) in self.hidden.iter().enumerate() {
            let w = tape.param(ParamId::HiddenWeight(q), &layer.weight);
            let b = tape.param(ParamId::HiddenBias(q), &layer.bias);
            h = tape.linear(h, w, Some(b))?;
            h = tape.activate(h, layer.activation);
        }
        let wl = tape.param(ParamId::Classifier, &self.classifier);
        tape.linear(h, wl, None)
    }

    /// Records the summed cross-entropy of `x` against `labels`.
    pub fn record_loss(&self, tape: &mut Tape, x: Var, labels: &[usize]) -> Result<Var> {
        let classes = self.num_classes();
        if let Some(&bad) = labels.iter().find(|&&y| y >= classes) {
            return Err(Error::ClassOutOfRange {
                class: bad,
                num_classes: classes,
            });
        }
        let logits = self.record_logits(tape, x)?;
        tape.softmax_cross_entropy(logits, labels)
    }
}
