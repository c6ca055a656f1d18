//! Path sampling over a [`HetGraph`].
//!
//! Three layers:
//!
//! * [`uniform_walk`]: a type-blind walk that picks each next link uniformly
//!   among all links of the current tail, optionally stopping as soon as it
//!   lands on one of a set of object types.
//! * [`metapath_guided_sample`]: a walk constrained to follow a given
//!   [`MetaPath`], picking uniformly among the links of the required type.
//! * [`BatchSampler`]: two-step sampling. Each outer iteration draws one seed
//!   walk, reads off its metapath and fills a [`PathBatch`] with guided samples
//!   of that same metapath, so that one composed network serves the batch.

use std::fmt;

use rand::seq::IndexedRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hetgraph::{HetGraph, LabelSet, LinkTypeId, ObjectTypeId, Schema};

/// Restarts per guided-sampling slot before the slot is skipped.
pub const GUIDED_RETRIES: usize = 20;

/// Attempts at drawing a usable seed walk before giving up.
pub const SEED_RETRIES: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Step {
    pub link: LinkTypeId,
    pub object: usize,
}

/// A concrete walk `(source, e_1, ..., e_n)`; the destination is the object
/// reached by the last step.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Path {
    source: usize,
    steps: Vec<Step>,
    truncated: bool,
}

impl Path {
    /// Builds a path, checking that every step follows a stored link.
    pub fn new(graph: &HetGraph, source: usize, steps: Vec<Step>) -> Result<Self> {
        if steps.is_empty() {
            return Err(Error::EmptyMetaPath);
        }
        let mut tail = source;
        for (i, s) in steps.iter().enumerate() {
            if !graph
                .neighbors(tail)?
                .iter()
                .any(|n| n.link == s.link && n.object == s.object)
            {
                return Err(Error::NotComposable(i));
            }
            tail = s.object;
        }
        Ok(Path {
            source,
            steps,
            truncated: false,
        })
    }

    pub fn source(&self) -> usize {
        self.source
    }

    pub fn destination(&self) -> usize {
        self.steps.last().map_or(self.source, |s| s.object)
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn steps(&self) -> &[Step] {
        &self.steps
    }

    /// Set when the walk hit an object without links before stopping.
    pub fn is_truncated(&self) -> bool {
        self.truncated
    }

    /// The objects visited, source first.
    pub fn objects(&self) -> impl Iterator<Item = usize> + '_ {
        std::iter::once(self.source).chain(self.steps.iter().map(|s| s.object))
    }
}

/// Sequence of composable link types.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct MetaPath(Vec<LinkTypeId>);

impl MetaPath {
    pub fn new(schema: &Schema, links: Vec<LinkTypeId>) -> Result<Self> {
        if links.is_empty() {
            return Err(Error::EmptyMetaPath);
        }
        for (k, pair) in links.windows(2).enumerate() {
            if schema.link(pair[0]).target != schema.link(pair[1]).source {
                return Err(Error::NotComposable(k + 1));
            }
        }
        Ok(MetaPath(links))
    }

    pub fn links(&self) -> &[LinkTypeId] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn start_type(&self, schema: &Schema) -> ObjectTypeId {
        schema.link(self.0[0]).source
    }

    pub fn end_type(&self, schema: &Schema) -> ObjectTypeId {
        schema.link(*self.0.last().expect("non-empty")).target
    }

    /// Reverse traversal: reversed order, each link replaced by its dual.
    pub fn reversed(&self, schema: &Schema) -> MetaPath {
        MetaPath(self.0.iter().rev().map(|&t| schema.dual(t)).collect())
    }

    /// `l1>l2>...` using link type names.
    pub fn display<'a>(&'a self, schema: &'a Schema) -> MetaPathDisplay<'a> {
        MetaPathDisplay { path: self, schema }
    }
}

pub struct MetaPathDisplay<'a> {
    path: &'a MetaPath,
    schema: &'a Schema,
}

impl fmt::Display for MetaPathDisplay<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, &t) in self.path.0.iter().enumerate() {
            if i > 0 {
                f.write_str(">")?;
            }
            f.write_str(self.schema.link_name(t))?;
        }
        Ok(())
    }
}

/// Pairs of `(source, destination)` objects that all realize one metapath.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PathBatch {
    pub metapath: MetaPath,
    pub pairs: Vec<(usize, usize)>,
}

impl PathBatch {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn sources(&self) -> Vec<usize> {
        self.pairs.iter().map(|p| p.0).collect()
    }

    pub fn destinations(&self) -> Vec<usize> {
        self.pairs.iter().map(|p| p.1).collect()
    }
}

/// Walks up to `max_len` links from `start`, choosing each link uniformly
/// among all links of the current tail. Stops right after reaching an object
/// whose type is in `stop_types`. A tail with no links ends the walk early and
/// marks the path truncated.
pub fn uniform_walk<R: Rng + ?Sized>(
    graph: &HetGraph,
    start: usize,
    max_len: usize,
    stop_types: &[ObjectTypeId],
    rng: &mut R,
) -> Result<Path> {
    if graph.neighbors(start)?.is_empty() {
        return Err(Error::DeadStart(start));
    }
    if max_len == 0 {
        return Err(Error::Config("max path length must be at least 1".into()));
    }
    let mut steps = Vec::with_capacity(max_len);
    let mut tail = start;
    let mut truncated = false;
    for _ in 0..max_len {
        let adj = graph.adjacency_of(tail);
        let Some(next) = adj.choose(rng) else {
            truncated = true;
            break;
        };
        steps.push(Step {
            link: next.link,
            object: next.object,
        });
        tail = next.object;
        if stop_types.contains(&graph.object_type(tail)) {
            break;
        }
    }
    Ok(Path {
        source: start,
        steps,
        truncated,
    })
}

pub fn extract_metapath(path: &Path) -> MetaPath {
    MetaPath(path.steps.iter().map(|s| s.link).collect())
}

/// Samples a path following `metapath` from a uniformly chosen member of
/// `start_pool`, choosing uniformly among the links of each required type.
/// Returns `None` when [`GUIDED_RETRIES`] restarts all dead-end.
pub fn metapath_guided_sample<R: Rng + ?Sized>(
    graph: &HetGraph,
    metapath: &MetaPath,
    start_pool: &[usize],
    rng: &mut R,
) -> Result<Option<Path>> {
    let start_type = metapath.start_type(graph.schema());
    if start_pool.is_empty() {
        return Err(Error::InvalidStartPool);
    }
    if start_pool
        .iter()
        .any(|&v| v >= graph.num_objects() || graph.object_type(v) != start_type)
    {
        return Err(Error::InvalidStartPool);
    }
    Ok(guided_walk(graph, metapath, start_pool, rng))
}

fn guided_walk<R: Rng + ?Sized>(
    graph: &HetGraph,
    metapath: &MetaPath,
    start_pool: &[usize],
    rng: &mut R,
) -> Option<Path> {
    let mut steps = Vec::with_capacity(metapath.len());
    'restart: for _ in 0..GUIDED_RETRIES {
        steps.clear();
        let start = *start_pool.choose(rng)?;
        let mut tail = start;
        for &link in metapath.links() {
            let Some(next) = graph.neighbors_via(tail, link).choose(rng) else {
                continue 'restart;
            };
            steps.push(Step {
                link,
                object: next.object,
            });
            tail = next.object;
        }
        return Some(Path {
            source: start,
            steps,
            truncated: false,
        });
    }
    None
}

/// The same walk traversed backwards, each link replaced by its dual.
pub fn reverse_path(schema: &Schema, path: &Path) -> Path {
    let objects: Vec<usize> = path.objects().collect();
    let n = path.steps.len();
    let steps = (0..n)
        .map(|k| Step {
            link: schema.dual(path.steps[n - 1 - k].link),
            object: objects[n - 1 - k],
        })
        .collect();
    Path {
        source: path.destination(),
        steps,
        truncated: path.truncated,
    }
}

/// Seeding and constraint scheme for two-step sampling.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    /// Seeds from any linked object; walks never stop on type.
    Basic,
    /// Seeds from targeted objects; walks stop on the targeted type.
    Target,
    /// Seeds from labeled objects and reverses every path, so every
    /// destination is labeled.
    Label,
}

impl std::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "basic" => Ok(Variant::Basic),
            "target" => Ok(Variant::Target),
            "label" => Ok(Variant::Label),
            other => Err(Error::Config(format!("unknown variant `{other}`"))),
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Variant::Basic => "basic",
            Variant::Target => "target",
            Variant::Label => "label",
        })
    }
}

/// Iterator over the batches of two-step path sampling. Yields exactly
/// `iterations` batches (fewer only on error). A batch can be shorter than the
/// batch size when guided slots are exhausted.
pub struct BatchSampler<'g, R> {
    graph: &'g HetGraph,
    variant: Variant,
    targeted: ObjectTypeId,
    seeds: Vec<usize>,
    /// per object type: candidate starts for guided sampling
    pools: Vec<Vec<usize>>,
    batch_size: usize,
    max_len: usize,
    remaining: usize,
    rng: R,
}

/// Sets up two-step sampling. `labels` supplies the targeted type and, for
/// [`Variant::Label`], the labeled seeds and guided starts.
pub fn two_step_batch<'g, R: Rng>(
    graph: &'g HetGraph,
    labels: &LabelSet,
    variant: Variant,
    iterations: usize,
    batch_size: usize,
    max_len: usize,
    rng: R,
) -> Result<BatchSampler<'g, R>> {
    if batch_size == 0 || max_len == 0 {
        return Err(Error::Config(
            "batch size and max path length must be at least 1".into(),
        ));
    }
    let targeted = labels.targeted_type();
    let linked = |v: &usize| graph.degree(*v) > 0;
    let schema = graph.schema();
    let (seeds, pools) = match variant {
        Variant::Basic => {
            let seeds: Vec<usize> = (0..graph.num_objects()).filter(linked).collect();
            let mut pools = vec![Vec::new(); schema.num_object_types()];
            for &v in &seeds {
                pools[graph.object_type(v).index()].push(v);
            }
            (seeds, pools)
        }
        Variant::Target => {
            let seeds: Vec<usize> = graph
                .objects_of_type(targeted)
                .into_iter()
                .filter(linked)
                .collect();
            let mut pools = vec![Vec::new(); schema.num_object_types()];
            pools[targeted.index()] = seeds.clone();
            (seeds, pools)
        }
        Variant::Label => {
            let seeds: Vec<usize> = labels.objects().into_iter().filter(linked).collect();
            let mut pools = vec![Vec::new(); schema.num_object_types()];
            pools[targeted.index()] = seeds.clone();
            (seeds, pools)
        }
    };
    if seeds.is_empty() {
        return Err(match variant {
            Variant::Label => Error::EmptyLabels,
            _ => Error::NoTargetedObjects,
        });
    }
    Ok(BatchSampler {
        graph,
        variant,
        targeted,
        seeds,
        pools,
        batch_size,
        max_len,
        remaining: iterations,
        rng,
    })
}

impl<R: Rng> BatchSampler<'_, R> {
    pub fn variant(&self) -> Variant {
        self.variant
    }

    /// Draws one seed walk and returns its metapath in sampling direction
    /// (before any reversal).
    fn seed_metapath(&mut self) -> Result<MetaPath> {
        let stop: &[ObjectTypeId] = match self.variant {
            Variant::Basic => &[],
            Variant::Target | Variant::Label => std::slice::from_ref(&self.targeted),
        };
        for _ in 0..SEED_RETRIES {
            let start = *self.seeds.choose(&mut self.rng).expect("non-empty seeds");
            let path = uniform_walk(self.graph, start, self.max_len, stop, &mut self.rng)?;
            if path.is_empty() {
                continue;
            }
            let usable = match self.variant {
                Variant::Basic => true,
                Variant::Target | Variant::Label => {
                    !path.is_truncated()
                        && self.graph.object_type(path.destination()) == self.targeted
                }
            };
            if usable {
                return Ok(extract_metapath(&path));
            }
        }
        Err(Error::SeedExhausted(SEED_RETRIES))
    }

    /// Produces the next batch regardless of the iteration budget.
    pub fn sample_batch(&mut self) -> Result<PathBatch> {
        let forward = self.seed_metapath()?;
        let schema = self.graph.schema();
        let pool = &self.pools[forward.start_type(schema).index()];
        let mut pairs = Vec::with_capacity(self.batch_size);
        for _ in 0..self.batch_size {
            if let Some(p) = guided_walk(self.graph, &forward, pool, &mut self.rng) {
                pairs.push((p.source(), p.destination()));
            }
        }
        let batch = match self.variant {
            Variant::Label => PathBatch {
                metapath: forward.reversed(schema),
                pairs: pairs.into_iter().map(|(s, d)| (d, s)).collect(),
            },
            _ => PathBatch {
                metapath: forward,
                pairs,
            },
        };
        Ok(batch)
    }
}

impl<R: Rng> Iterator for BatchSampler<'_, R> {
    type Item = Result<PathBatch>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.remaining == 0 {
            return None;
        }
        self.remaining -= 1;
        Some(self.sample_batch())
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        (0, Some(self.remaining))
    }
}
