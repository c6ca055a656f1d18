//! Semi-supervised classification on heterogeneous networks by propagating
//! object embeddings through per-link-type neural modules.
//!
//! The crate is organized bottom-up: [`hetgraph`] stores typed graphs,
//! [`sampler`] draws typed paths, [`nn`] holds the differentiable model,
//! [`trainer`] fits it, [`baseline`] provides Label Propagation, [`synth`]
//! generates planted test graphs and [`eval`] runs repeated-split
//! experiments.

pub mod baseline;
pub mod cli;
pub mod error;
pub mod eval;
pub mod hetgraph;
pub mod nn;
pub mod sampler;
pub mod synth;
pub mod trainer;

pub use error::{Error, Result};
