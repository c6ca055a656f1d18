//! Adam with lazy updates for embedding rows.
//!
//! Dense tensors and embedding rows are only updated when they appear in the
//! gradient collection; moments of untouched tensors are left as they are.
//! Bias correction uses the global step count.

use std::collections::{BTreeMap, HashMap};

use super::params::ParamStore;
use super::tape::{Gradients, ParamId};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            learning_rate: 0.001,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
struct Moments {
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Moments {
    fn zeros(n: usize) -> Self {
        Moments {
            m: vec![0.0; n],
            v: vec![0.0; n],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    config: AdamConfig,
    step: u64,
    dense: BTreeMap<ParamId, Moments>,
    rows: HashMap<usize, Moments>,
}

impl Adam {
    pub fn new(config: AdamConfig) -> Self {
        Adam {
            config,
            step: 0,
            dense: BTreeMap::new(),
            rows: HashMap::new(),
        }
    }

    pub fn config(&self) -> &AdamConfig {
        &self.config
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Applies one update. Fails without touching any parameter if a gradient
    /// is non-finite or does not match its tensor.
    pub fn step<P: ParamStore>(&mut self, params: &mut P, grads: &Gradients) -> Result<()> {
        if let Some(name) = grads.first_non_finite() {
            return Err(Error::NonFiniteGradient(name));
        }
        for (id, g) in grads.dense_iter() {
            match params.dense_mut(id) {
                Some(p) if p.len() == g.as_slice().len() => {}
                _ => return Err(Error::Shape(format!("gradient for {id} does not match"))),
            }
        }
        for (v, g) in grads.row_iter() {
            match params.row_mut(v) {
                Some(p) if p.len() == g.len() => {}
                _ => return Err(Error::MissingEmbedding(v)),
            }
        }

        self.step += 1;
        let c = self.config;
        let t = self.step as i32;
        let lr_t = c.learning_rate * (1.0 - c.beta2.powi(t)).sqrt() / (1.0 - c.beta1.powi(t));
        // epsilon is applied to the bias-corrected second moment
        let eps_t = c.epsilon * (1.0 - c.beta2.powi(t)).sqrt();

        let update = |p: &mut [f64], g: &[f64], mo: &mut Moments| {
            for i in 0..p.len() {
                mo.m[i] = c.beta1 * mo.m[i] + (1.0 - c.beta1) * g[i];
                mo.v[i] = c.beta2 * mo.v[i] + (1.0 - c.beta2) * g[i] * g[i];
                p[i] -= lr_t * mo.m[i] / (mo.v[i].sqrt() + eps_t);
            }
        };

        for (id, g) in grads.dense_iter() {
            let p = params.dense_mut(id).expect("checked");
            let mo = self
                .dense
                .entry(*id)
                .or_insert_with(|| Moments::zeros(g.as_slice().len()));
            update(p, g.as_slice(), mo);
        }
        for (v, g) in grads.row_iter() {
            let p = params.row_mut(v).expect("checked");
            let mo = self.rows.entry(v).or_insert_with(|| Moments::zeros(g.len()));
            update(p, g, mo);
        }
        Ok(())
    }
}
