//! Link-wise modules and their composition along metapaths.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::layer::{Activation, DenseLayer};
use super::matrix::Matrix;
use super::tape::{ParamId, Tape, Var};
use crate::error::{Error, Result};
use crate::hetgraph::{LinkTypeId, Schema};
use crate::sampler::MetaPath;

/// Stack of square layers owned by one directional link type.
#[derive(Debug, Clone, PartialEq)]
pub struct LinkModule {
    pub layers: Vec<DenseLayer>,
}

impl LinkModule {
    pub fn new<R: Rng + ?Sized>(
        dim: usize,
        depth: usize,
        activation: Activation,
        rng: &mut R,
    ) -> Self {
        LinkModule {
            layers: (0..depth)
                .map(|_| DenseLayer::glorot(dim, dim, activation, rng))
                .collect(),
        }
    }

    pub fn identity(dim: usize) -> Self {
        LinkModule {
            layers: vec![DenseLayer::identity(dim)],
        }
    }

    pub fn dim(&self) -> usize {
        self.layers[0].inputs()
    }
}

/// Applies a module row-wise to a `batch x dim` matrix.
pub fn module_forward(module: &LinkModule, x: &Matrix) -> Result<Matrix> {
    if x.cols() != module.dim() {
        return Err(Error::Shape(format!(
            "module of dim {} applied to {} columns",
            module.dim(),
            x.cols()
        )));
    }
    let mut h = x.clone();
    for layer in &module.layers {
        h = layer.forward(&h)?;
    }
    Ok(h)
}

/// Order in which the modules of a metapath are applied.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CompositionOrder {
    /// The module of the first link is applied first.
    #[default]
    Traversal,
    /// The module of the last link is applied first.
    Reversed,
}

/// One module per directional link type, indexed by [`LinkTypeId`].
#[derive(Debug, Clone, PartialEq)]
pub struct LinkModuleSet {
    modules: Vec<LinkModule>,
}

impl LinkModuleSet {
    pub fn new<R: Rng + ?Sized>(
        schema: &Schema,
        dim: usize,
        depth: usize,
        activation: Activation,
        rng: &mut R,
    ) -> Self {
        LinkModuleSet {
            modules: schema
                .link_ids()
                .map(|_| LinkModule::new(dim, depth.max(1), activation, rng))
                .collect(),
        }
    }

    pub fn from_modules(modules: Vec<LinkModule>) -> Self {
        LinkModuleSet { modules }
    }

    pub fn identity(schema: &Schema, dim: usize) -> Self {
        LinkModuleSet {
            modules: schema.link_ids().map(|_| LinkModule::identity(dim)).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.modules.len()
    }

    pub fn is_empty(&self) -> bool {
        self.modules.is_empty()
    }

    pub fn get(&self, link: LinkTypeId) -> Result<&LinkModule> {
        self.modules
            .get(link.index())
            .ok_or(Error::MissingModule(link.index()))
    }

    pub fn get_mut(&mut self, link: LinkTypeId) -> Result<&mut LinkModule> {
        self.modules
            .get_mut(link.index())
            .ok_or(Error::MissingModule(link.index()))
    }

    pub fn modules(&self) -> &[LinkModule] {
        &self.modules
    }

    /// Records the composed network for `links` onto `tape`, starting from
    /// the node `x`.
    pub fn record(
        &self,
        tape: &mut Tape,
        links: &[LinkTypeId],
        order: CompositionOrder,
        x: Var,
    ) -> Result<Var> {
        if links.is_empty() {
            return Err(Error::EmptyMetaPath);
        }
        let mut h = x;
        let apply = |link: LinkTypeId, h: Var, tape: &mut Tape| -> Result<Var> {
            let module = self.get(link)?;
            let mut h = h;
            for (q, layer) in module.layers.iter().enumerate() {
                let w = tape.param(ParamId::LinkWeight { link, layer: q }, &layer.weight);
                let b = tape.param(ParamId::LinkBias { link, layer: q }, &layer.bias);
                h = tape.linear(h, w, Some(b))?;
                h = tape.activate(h, layer.activation);
            }
            Ok(h)
        };
        match order {
            CompositionOrder::Traversal => {
                for &t in links {
                    h = apply(t, h, tape)?;
                }
            }
            CompositionOrder::Reversed => {
                for &t in links.iter().rev() {
                    h = apply(t, h, tape)?;
                }
            }
        }
        Ok(h)
    }
}

/// Propagates `x` through the modules of `metapath` and returns the output
/// together with the recording tape.
pub fn compose_forward(
    set: &LinkModuleSet,
    metapath: &MetaPath,
    order: CompositionOrder,
    x: &Matrix,
) -> Result<(Matrix, Tape, Var)> {
    let mut tape = Tape::new();
    let input = tape.constant(x.clone());
    let out = set.record(&mut tape, metapath.links(), order, input)?;
    Ok((tape.value(out).clone(), tape, out))
}
