//! Supervised, propagation and combined objectives.

use super::link::{CompositionOrder, LinkModuleSet};
use super::matrix::Matrix;
use super::params::Parameters;
use super::predictor::Predictor;
use super::tape::{Tape, Var};
use super::embedding::EmbeddingTable;
use crate::error::Result;
use crate::sampler::PathBatch;

/// Summed cross-entropy of the predictor on `x` (one row per example).
pub fn supervised_loss(predictor: &Predictor, x: &Matrix, labels: &[usize]) -> Result<(f64, Tape, Var)> {
    let mut tape = Tape::new();
    let input = tape.constant(x.clone());
    let loss = predictor.record_loss(&mut tape, input, labels)?;
    Ok((tape.scalar(loss), tape, loss))
}

/// Records `sum_(i,j) ||G_p(x_i) - x_j||^2` over the batch. Both endpoint
/// embeddings are gathered as trainable rows.
pub fn record_propagation(
    tape: &mut Tape,
    links: &LinkModuleSet,
    table: &EmbeddingTable,
    batch: &PathBatch,
    order: CompositionOrder,
) -> Result<Var> {
    let xs = tape.gather(table, &batch.sources())?;
    let xd = tape.gather(table, &batch.destinations())?;
    let propagated = links.record(tape, batch.metapath.links(), order, xs)?;
    tape.squared_distance(propagated, xd)
}

pub fn propagation_loss(
    links: &LinkModuleSet,
    table: &EmbeddingTable,
    batch: &PathBatch,
    order: CompositionOrder,
) -> Result<(f64, Tape, Var)> {
    let mut tape = Tape::new();
    let loss = record_propagation(&mut tape, links, table, batch, order)?;
    Ok((tape.scalar(loss), tape, loss))
}

/// Labeled objects and their classes entering the supervised term.
#[derive(Debug, Clone, Default)]
pub struct SupervisedBatch {
    pub objects: Vec<usize>,
    pub labels: Vec<usize>,
}

/// Nodes of one recorded training objective.
#[derive(Debug, Clone, Copy)]
pub struct ObjectiveVars {
    pub supervised: Option<Var>,
    pub propagation: Option<Var>,
    pub total: Var,
}

/// Records `J' = J_l + lambda * J_u'`. Empty parts are left out; when both
/// are empty the total is a zero constant.
pub fn record_objective(
    tape: &mut Tape,
    params: &Parameters,
    batch: Option<&PathBatch>,
    supervised: &SupervisedBatch,
    lambda: f64,
    order: CompositionOrder,
) -> Result<ObjectiveVars> {
    let sup = if supervised.objects.is_empty() {
        None
    } else {
        let x = tape.gather(&params.embeddings, &supervised.objects)?;
        Some(params.predictor.record_loss(tape, x, &supervised.labels)?)
    };
    let prop = match batch {
        Some(b) if !b.is_empty() => Some(record_propagation(
            tape,
            &params.links,
            &params.embeddings,
            b,
            order,
        )?),
        _ => None,
    };
    let total = match (sup, prop) {
        (Some(s), Some(p)) => tape.combine(&[(s, 1.0), (p, lambda)])?,
        (Some(s), None) => s,
        (None, Some(p)) => tape.combine(&[(p, lambda)])?,
        (None, None) => tape.constant(Matrix::scalar(0.0)),
    };
    Ok(ObjectiveVars {
        supervised: sup,
        propagation: prop,
        total,
    })
}
