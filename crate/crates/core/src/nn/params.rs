use super::embedding::EmbeddingTable;
use super::link::LinkModuleSet;
use super::matrix::Matrix;
use super::predictor::Predictor;
use super::tape::ParamId;
use crate::hetgraph::LinkTypeId;

/// Mutable access to parameter tensors by id, used by the optimizer and the
/// finite-difference checker.
pub trait ParamStore {
    fn dense_mut(&mut self, id: &ParamId) -> Option<&mut [f64]>;
    fn row_mut(&mut self, object: usize) -> Option<&mut [f64]>;
}

/// All trainable state of a model.
#[derive(Debug, Clone, PartialEq)]
pub struct Parameters {
    pub embeddings: EmbeddingTable,
    pub links: LinkModuleSet,
    pub predictor: Predictor,
}

impl Parameters {
    /// Every dense tensor with its id, in a fixed order.
    pub fn dense_tensors(&self) -> Vec<(ParamId, &Matrix)> {
        let mut out = Vec::new();
        for (i, m) in self.links.modules().iter().enumerate() {
            let link = LinkTypeId(i as u16);
            for (q, layer) in m.layers.iter().enumerate() {
                out.push((ParamId::LinkWeight { link, layer: q }, &layer.weight));
                out.push((ParamId::LinkBias { link, layer: q }, &layer.bias));
            }
        }
        for (q, layer) in self.predictor.hidden.iter().enumerate() {
            out.push((ParamId::HiddenWeight(q), &layer.weight));
            out.push((ParamId::HiddenBias(q), &layer.bias));
        }
        out.push((ParamId::Classifier, &self.predictor.classifier));
        out
    }

    pub fn dense(&self, id: &ParamId) -> Option<&Matrix> {
        match *id {
            ParamId::LinkWeight { link, layer } => self
                .links
                .modules()
                .get(link.index())
                .and_then(|m| m.layers.get(layer))
                .map(|l| &l.weight),
            ParamId::LinkBias { link, layer } => self
                .links
                .modules()
                .get(link.index())
                .and_then(|m| m.layers.get(layer))
                .map(|l| &l.bias),
            ParamId::HiddenWeight(q) => self.predictor.hidden.get(q).map(|l| &l.weight),
            ParamId::HiddenBias(q) => self.predictor.hidden.get(q).map(|l| &l.bias),
            ParamId::Classifier => Some(&self.predictor.classifier),
        }
    }

    pub fn num_dense_parameters(&self) -> usize {
        self.dense_tensors()
            .iter()
            .map(|(_, m)| m.as_slice().len())
            .sum()
    }
}

impl ParamStore for Parameters {
    fn dense_mut(&mut self, id: &ParamId) -> Option<&mut [f64]> {
        let m = match *id {
            ParamId::LinkWeight { link, layer } => {
                &mut self.links.get_mut(link).ok()?.layers.get_mut(layer)?.weight
            }
            ParamId::LinkBias { link, layer } => {
                &mut self.links.get_mut(link).ok()?.layers.get_mut(layer)?.bias
            }
            ParamId::HiddenWeight(q) => &mut self.predictor.hidden.get_mut(q)?.weight,
            ParamId::HiddenBias(q) => &mut self.predictor.hidden.get_mut(q)?.bias,
            ParamId::Classifier => &mut self.predictor.classifier,
        };
        Some(m.as_mut_slice())
    }

    fn row_mut(&mut self, object: usize) -> Option<&mut [f64]> {
        self.embeddings.embed_mut(object).ok()
    }
}
