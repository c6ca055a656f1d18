//! Label Propagation over the type-suppressed graph.
//!
//! Both solvers target the clamped smoother: labeled rows are fixed to their
//! one-hot targets and unlabeled rows satisfy the corresponding rows of
//! `(I + alpha L) F = Y`, that is
//!
//! ```text
//! (1 + alpha d_u) F_u = alpha sum_j A_uj F_j
//! ```
//!
//! [`label_propagate`] reaches this fixpoint by Jacobi sweeps, which approach
//! the row-stochastic update `F <- D^-1 A F` as alpha grows;
//! [`lp_closed_form_small`] solves it directly.

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::hetgraph::{HetGraph, LabelSet};
use crate::nn::{argmax, Matrix};
use crate::trainer::Prediction;

/// Symmetric weighted adjacency in CSR form. Weights count parallel links.
#[derive(Debug, Clone, PartialEq)]
pub struct Adjacency {
    offsets: Vec<usize>,
    targets: Vec<usize>,
    weights: Vec<f64>,
}

impl Adjacency {
    /// Builds from undirected edges; each `(u, v)` adds 1 to both `A[u][v]`
    /// and `A[v][u]`. Self-loops are ignored.
    pub fn from_edges(n: usize, edges: &[(usize, usize)]) -> Self {
        let mut rows: Vec<Vec<usize>> = vec![Vec::new(); n];
        for &(u, v) in edges {
            if u != v {
                rows[u].push(v);
                rows[v].push(u);
            }
        }
        Self::from_neighbor_lists(rows)
    }

    fn from_neighbor_lists(mut rows: Vec<Vec<usize>>) -> Self {
        let mut offsets = Vec::with_capacity(rows.len() + 1);
        let mut targets = Vec::new();
        let mut weights = Vec::new();
        offsets.push(0);
        for row in &mut rows {
            row.sort_unstable();
            for (i, &v) in row.iter().enumerate() {
                if i > 0 && row[i - 1] == v {
                    *weights.last_mut().expect("previous entry") += 1.0;
                } else {
                    targets.push(v);
                    weights.push(1.0);
                }
            }
            offsets.push(targets.len());
        }
        Adjacency {
            offsets,
            targets,
            weights,
        }
    }

    pub fn num_nodes(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn row(&self, u: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let r = self.offsets[u]..self.offsets[u + 1];
        self.targets[r.clone()]
            .iter()
            .copied()
            .zip(self.weights[r].iter().copied())
    }

    pub fn weight(&self, u: usize, v: usize) -> f64 {
        let r = self.offsets[u]..self.offsets[u + 1];
        match self.targets[r.clone()].binary_search(&v) {
            Ok(i) => self.weights[r.start + i],
            Err(_) => 0.0,
        }
    }

    pub fn degree(&self, u: usize) -> f64 {
        self.row(u).map(|(_, w)| w).sum()
    }
}

/// Drops all types. Every stored direction of a link contributes to its own
/// row, so a link and its dual together make one undirected edge.
pub fn homogenize(graph: &HetGraph) -> Adjacency {
    let rows = (0..graph.num_objects())
        .map(|u| {
            graph
                .adjacency_of(u)
                .iter()
                .map(|nb| nb.object)
                .collect()
        })
        .collect();
    Adjacency::from_neighbor_lists(rows)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LpConfig {
    pub alpha: f64,
    pub max_iters: usize,
    pub tol: f64,
}

impl Default for LpConfig {
    fn default() -> Self {
        LpConfig {
            alpha: 0.99,
            max_iters: 1000,
            tol: 1e-9,
        }
    }
}

/// Per-object class scores (`N x C`).
#[derive(Debug, Clone, PartialEq)]
pub struct LabelDistribution {
    pub scores: Matrix,
    pub converged: bool,
    pub iterations: usize,
    /// Max absolute entry change of each sweep.
    pub deltas: Vec<f64>,
}

impl LabelDistribution {
    /// Row argmax, lowest class on ties. All-zero rows (no label reaches the
    /// object) get `fallback` and are reported as unreached.
    pub fn predict(&self, objects: &[usize], fallback: usize) -> Prediction {
        let mut unreached = Vec::new();
        let classes = objects
            .iter()
            .map(|&v| {
                let row = self.scores.row(v);
                if row.iter().all(|&x| x == 0.0) {
                    unreached.push(v);
                    fallback
                } else {
                    argmax(row)
                }
            })
            .collect();
        Prediction {
            objects: objects.to_vec(),
            classes,
            unreached,
        }
    }
}

fn check_seeds(n: usize, seeds: &[(usize, usize)], classes: usize, alpha: f64) -> Result<Vec<Option<usize>>> {
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(Error::Config(format!("alpha must be positive, got {alpha}")));
    }
    let mut clamp = vec![None; n];
    for &(v, y) in seeds {
        if v >= n {
            return Err(Error::ObjectOutOfRange { index: v, len: n });
        }
        if y >= classes {
            return Err(Error::ClassOutOfRange {
                class: y,
                num_classes: classes,
            });
        }
        clamp[v] = Some(y);
    }
    Ok(clamp)
}

/// Jacobi iteration of the clamped smoother, starting from `Y`. Stops when
/// the largest entry change drops below `tol`.
pub fn label_propagate(
    adj: &Adjacency,
    seeds: &[(usize, usize)],
    num_classes: usize,
    config: &LpConfig,
) -> Result<LabelDistribution> {
    let n = adj.num_nodes();
    let c = num_classes;
    let alpha = config.alpha;
    let clamp = check_seeds(n, seeds, c, alpha)?;
    let mut f = vec![0.0; n * c];
    for (v, y) in clamp.iter().enumerate() {
        if let Some(y) = y {
            f[v * c + y] = 1.0;
        }
    }
    let mut next = f.clone();
    let mut deltas = Vec::new();
    let mut converged = false;
    let mut iterations = 0;
    while iterations < config.max_iters {
        iterations += 1;
        let delta = next
            .par_chunks_mut(c)
            .enumerate()
            .map(|(u, out)| {
                if clamp[u].is_some() {
                    return 0.0;
                }
                out.fill(0.0);
                let mut d = 0.0;
                for (v, w) in adj.row(u) {
                    d += w;
                    for (o, x) in out.iter_mut().zip(&f[v * c..(v + 1) * c]) {
                        *o += w * x;
                    }
                }
                let scale = alpha / (1.0 + alpha * d);
                let mut change: f64 = 0.0;
                for (o, old) in out.iter_mut().zip(&f[u * c..(u + 1) * c]) {
                    *o *= scale;
                    change = change.max((*o - old).abs());
                }
                change
            })
            .reduce(|| 0.0, f64::max);
        std::mem::swap(&mut f, &mut next);
        deltas.push(delta);
        if delta < config.tol {
            converged = true;
            break;
        }
    }
    Ok(LabelDistribution {
        scores: Matrix::from_vec(n, c, f)?,
        converged,
        iterations,
        deltas,
    })
}

/// Largest graph accepted by the dense solver.
pub const CLOSED_FORM_MAX_NODES: usize = 2000;

/// Dense solve of `(I + alpha L)_uu F_u = alpha A_ul Y_l` with labeled rows
/// clamped to `Y_l`. The system matrix is symmetric positive definite.
pub fn lp_closed_form_small(
    adj: &Adjacency,
    seeds: &[(usize, usize)],
    num_classes: usize,
    alpha: f64,
) -> Result<LabelDistribution> {
    let n = adj.num_nodes();
    if n > CLOSED_FORM_MAX_NODES {
        return Err(Error::Config(format!(
            "dense solve limited to {CLOSED_FORM_MAX_NODES} nodes, got {n}"
        )));
    }
    let c = num_classes;
    let clamp = check_seeds(n, seeds, c, alpha)?;
    let free: Vec<usize> = (0..n).filter(|&v| clamp[v].is_none()).collect();
    let mut pos = vec![usize::MAX; n];
    for (i, &v) in free.iter().enumerate() {
        pos[v] = i;
    }
    let m = free.len();
    let mut system = DMatrix::<f64>::identity(m, m);
    let mut rhs = DMatrix::<f64>::zeros(m, c);
    for (i, &u) in free.iter().enumerate() {
        for (v, w) in adj.row(u) {
            system[(i, i)] += alpha * w;
            match clamp[v] {
                Some(y) => rhs[(i, y)] += alpha * w,
                None => system[(i, pos[v])] -= alpha * w,
            }
        }
    }
    let solution = match system.clone().cholesky() {
        Some(ch) => ch.solve(&rhs),
        None => system
            .lu()
            .solve(&rhs)
            .ok_or_else(|| Error::Shape("singular propagation system".into()))?,
    };
    let mut scores = Matrix::zeros(n, c);
    for v in 0..n {
        match clamp[v] {
            Some(y) => scores.set(v, y, 1.0),
            None => {
                for k in 0..c {
                    scores.set(v, k, solution[(pos[v], k)]);
                }
            }
        }
    }
    Ok(LabelDistribution {
        scores,
        converged: true,
        iterations: 0,
        deltas: Vec::new(),
    })
}

/// Runs LP on `graph` with `train` as seeds and predicts `objects`.
pub fn lp_predict(
    graph: &HetGraph,
    train: &LabelSet,
    objects: &[usize],
    config: &LpConfig,
) -> Result<(Prediction, LabelDistribution)> {
    let adj = homogenize(graph);
    let seeds: Vec<(usize, usize)> = train.iter().collect();
    let dist = label_propagate(&adj, &seeds, train.num_classes(), config)?;
    Ok((dist.predict(objects, train.majority_class()), dist))
}
