//! Planted-partition heterogeneous graphs with known classes.
//!
//! Every object carries a class in `0..C`: targeted objects as their label,
//! other objects as a hidden affiliation. Each link type has a class shift
//! `s`; an edge `u -> v` lands on class `(class(u) + s) mod C` with
//! probability `h` and on one of the other classes uniformly otherwise. A
//! shift of zero is ordinary homophily.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hetgraph::{HetGraph, HetGraphBuilder, LabelSet, Schema};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TypeSpec {
    pub name: String,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkSpec {
    pub name: String,
    pub source: String,
    pub target: String,
    pub dual: String,
    /// Mean number of links of this type leaving each source object.
    pub per_source: f64,
    #[serde(default)]
    pub shift: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantedSpec {
    pub object_types: Vec<TypeSpec>,
    pub targeted: String,
    pub links: Vec<LinkSpec>,
    pub classes: usize,
    pub homophily: f64,
    /// Fraction of targeted objects whose label is revealed.
    pub labeled_fraction: f64,
    pub seed: u64,
}

impl Default for PlantedSpec {
    /// Items, users and groups. Users create items of their own class but
    /// watch items of the next class, and citations also point to the next
    /// class. These links mislead a type-blind smoother but are informative
    /// to a model that tells link types apart.
    fn default() -> Self {
        let ty = |name: &str, count| TypeSpec {
            name: name.into(),
            count,
        };
        let link = |name: &str, source: &str, target: &str, dual: &str, per_source, shift| LinkSpec {
            name: name.into(),
            source: source.into(),
            target: target.into(),
            dual: dual.into(),
            per_source,
            shift,
        };
        PlantedSpec {
            object_types: vec![ty("item", 5000), ty("user", 500), ty("group", 100)],
            targeted: "item".into(),
            links: vec![
                link("cites", "item", "item", "cited_by", 0.3, 1),
                link("creates", "user", "item", "created_by", 8.0, 0),
                link("watches", "user", "item", "watched_by", 24.0, 1),
                link("joins", "user", "group", "has_member", 2.0, 0),
            ],
            classes: 4,
            homophily: 0.85,
            labeled_fraction: 0.05,
            seed: 7,
        }
    }
}

impl PlantedSpec {
    /// Two targeted classes, one homophilous link type.
    pub fn two_class(count: usize, seed: u64) -> Self {
        PlantedSpec {
            object_types: vec![TypeSpec {
                name: "node".into(),
                count,
            }],
            targeted: "node".into(),
            links: vec![LinkSpec {
                name: "links".into(),
                source: "node".into(),
                target: "node".into(),
                dual: "linked_by".into(),
                per_source: 3.0,
                shift: 0,
            }],
            classes: 2,
            homophily: 0.9,
            labeled_fraction: 0.1,
            seed,
        }
    }

    pub fn schema(&self) -> Result<Schema> {
        let types: Vec<&str> = self.object_types.iter().map(|t| t.name.as_str()).collect();
        let links: Vec<(&str, &str, &str, &str)> = self
            .links
            .iter()
            .map(|l| {
                (
                    l.name.as_str(),
                    l.source.as_str(),
                    l.target.as_str(),
                    l.dual.as_str(),
                )
            })
            .collect();
        Schema::new(&types, &links)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.classes < 2 {
            return bad(format!("need at least 2 classes, got {}", self.classes));
        }
        if !(0.0..=1.0).contains(&self.homophily) {
            return bad(format!("homophily {} outside [0, 1]", self.homophily));
        }
        if !(self.labeled_fraction > 0.0 && self.labeled_fraction <= 1.0) {
            return bad(format!("labeled fraction {} outside (0, 1]", self.labeled_fraction));
        }
        if !self.object_types.iter().any(|t| t.name == self.targeted) {
            return bad(format!("targeted type `{}` not declared", self.targeted));
        }
        for l in &self.links {
            if !(l.per_source >= 0.0 && l.per_source.is_finite()) {
                return bad(format!("link `{}` has invalid per_source", l.name));
            }
        }
        Ok(())
    }

    fn count(&self, name: &str) -> usize {
        self.object_types
            .iter()
            .find(|t| t.name == name)
            .map_or(0, |t| t.count)
    }
}

/// A generated dataset. `truth` labels every targeted object; `labels` is
/// the revealed subset.
#[derive(Debug, Clone)]
pub struct Planted {
    pub graph: HetGraph,
    pub labels: LabelSet,
    pub truth: LabelSet,
    /// Class of every object, targeted or not.
    pub classes: Vec<usize>,
}

pub fn generate_planted(spec: &PlantedSpec) -> Result<Planted> {
    spec.validate()?;
    let schema = spec.schema()?;
    let c = spec.classes;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

    for l in &spec.links {
        let ns = spec.count(&l.source);
        let nt = spec.count(&l.target);
        let pairs = if l.source == l.target {
            ns * ns.saturating_sub(1)
        } else {
            ns * nt
        };
        let wanted = (l.per_source * ns as f64).ceil() as usize;
        if wanted > pairs {
            return Err(Error::Infeasible(format!(
                "link `{}` needs {wanted} edges but only {pairs} endpoint pairs exist",
                l.name
            )));
        }
        if wanted > 0 && nt < c {
            return Err(Error::Infeasible(format!(
                "type `{}` has {nt} objects, fewer than {c} classes",
                l.target
            )));
        }
    }

    let mut builder = HetGraphBuilder::new(schema);
    let mut classes = Vec::new();
    // by_class[type][class] = object indices
    let mut by_class: Vec<Vec<Vec<usize>>> = Vec::new();
    for t in &spec.object_types {
        let tid = builder
            .schema()
            .object_type(&t.name)
            .expect("declared type");
        // balanced assignment in random order, so every class is populated
        let mut assigned: Vec<usize> = (0..t.count).map(|i| i % c).collect();
        assigned.shuffle(&mut rng);
        let mut groups = vec![Vec::new(); c];
        for (i, y) in assigned.into_iter().enumerate() {
            let v = builder.add_object_typed(&format!("{}{}", t.name, i), tid)?;
            classes.push(y);
            groups[y].push(v);
        }
        by_class.push(groups);
    }

    for l in &spec.links {
        let schema = builder.schema();
        let lid = schema.link_type(&l.name).expect("declared link");
        let st = schema.object_type(&l.source).expect("declared type").index();
        let tt = schema.object_type(&l.target).expect("declared type").index();
        let sources: Vec<usize> = by_class[st].iter().flatten().copied().collect();
        let whole = l.per_source.floor() as usize;
        let frac = l.per_source - whole as f64;
        let mut sorted_sources = sources;
        sorted_sources.sort_unstable();
        for u in sorted_sources {
            let n = whole + usize::from(rng.random_bool(frac));
            for _ in 0..n {
                let target_class = {
                    let planted = (classes[u] + l.shift) % c;
                    if rng.random_bool(spec.homophily) {
                        planted
                    } else {
                        let k = rng.random_range(0..c - 1);
                        if k >= planted {
                            k + 1
                        } else {
                            k
                        }
                    }
                };
                let pool = &by_class[tt][target_class];
                let v = loop {
                    let v = pool[rng.random_range(0..pool.len())];
                    if v != u {
                        break v;
                    }
                    if pool.len() == 1 {
                        return Err(Error::Infeasible(format!(
                            "class {target_class} of `{}` only holds the source itself",
                            l.target
                        )));
                    }
                };
                builder.add_edge_indexed(u, lid, v)?;
            }
        }
    }

    let graph = builder.build();
    let targeted = graph
        .schema()
        .object_type(&spec.targeted)
        .expect("validated");
    let class_names: Vec<String> = (0..c).map(|k| format!("c{k}")).collect();
    let truth_map = graph
        .objects_of_type(targeted)
        .into_iter()
        .map(|v| (v, classes[v]))
        .collect();
    let truth = LabelSet::new(targeted, class_names.clone(), truth_map)?;

    // stratified reveal, at least two per class so splits stay possible
    let mut revealed = std::collections::BTreeMap::new();
    for group in &by_class[targeted.index()] {
        let mut members = group.clone();
        members.shuffle(&mut rng);
        let k = ((spec.labeled_fraction * members.len() as f64).round() as usize)
            .max(2)
            .min(members.len());
        for &v in &members[..k] {
            revealed.insert(v, classes[v]);
        }
    }
    let labels = LabelSet::new(targeted, class_names, revealed)?;
    Ok(Planted {
        graph,
        labels,
        truth,
        classes,
    })
}

/// Fraction of links of type `link` (one direction) whose endpoints follow
/// the planted class map.
pub fn planted_fraction(planted: &Planted, spec: &PlantedSpec, link: &str) -> Option<f64> {
    let l = spec.links.iter().find(|l| l.name == link)?;
    let lid = planted.graph.schema().link_type(link)?;
    let (mut hit, mut total) = (0usize, 0usize);
    for u in 0..planted.graph.num_objects() {
        for nb in planted.graph.neighbors_via(u, lid) {
            total += 1;
            if planted.classes[nb.object] == (planted.classes[u] + l.shift) % spec.classes {
                hit += 1;
            }
        }
    }
    (total > 0).then(|| hit as f64 / total as f64)
}

/// File names written by [`write_dataset`].
pub const NODES_FILE: &str = "nodes.tsv";
pub const EDGES_FILE: &str = "edges.tsv";
pub const LABELS_FILE: &str = "labels.tsv";
pub const SCHEMA_FILE: &str = "schema.toml";
pub const TRUTH_FILE: &str = "truth.tsv";

/// Writes nodes, edges, labels and schema, plus the full truth labels.
pub fn write_dataset(planted: &Planted, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let g = &planted.graph;
    g.export_files(dir.join(NODES_FILE), dir.join(EDGES_FILE))?;
    planted.labels.write_file(g, dir.join(LABELS_FILE))?;
    planted.truth.write_file(g, dir.join(TRUTH_FILE))?;
    let schema_path = dir.join(SCHEMA_FILE);
    std::fs::write(&schema_path, g.schema().to_toml()).map_err(|e| Error::io(&schema_path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(h: f64, seed: u64) -> PlantedSpec {
        PlantedSpec {
            object_types: vec![
                TypeSpec { name: "item".into(), count: 400 },
                TypeSpec { name: "user".into(), count: 100 },
                TypeSpec { name: "group".into(), count: 8 },
            ],
            homophily: h,
            seed,
            ..PlantedSpec::default()
        }
    }

    #[test]
    fn deterministic_per_seed() {
        let a = generate_planted(&small(0.85, 3)).unwrap();
        let b = generate_planted(&small(0.85, 3)).unwrap();
        assert_eq!(a.graph.canonical_edges(), b.graph.canonical_edges());
        assert_eq!(a.labels, b.labels);
        let c = generate_planted(&small(0.85, 4)).unwrap();
        assert_ne!(a.graph.canonical_edges(), c.graph.canonical_edges());
    }

    #[test]
    fn reveal_is_stratified_subset_of_truth() {
        let p = generate_planted(&small(0.85, 1)).unwrap();
        assert_eq!(p.truth.len(), 400);
        assert_eq!(p.labels.len(), 20);
        assert_eq!(p.labels.class_counts(), vec![5, 5, 5, 5]);
        for (v, y) in p.labels.iter() {
            assert_eq!(p.truth.class_of(v), Some(y));
        }
    }

    #[test]
    fn infeasible_edge_counts_are_rejected() {
        let mut s = PlantedSpec::two_class(3, 0);
        s.links[0].per_source = 5.0;
        assert!(matches!(generate_planted(&s), Err(Error::Infeasible(_))));
        let mut s = PlantedSpec::two_class(10, 0);
        s.homophily = 1.5;
        assert!(matches!(generate_planted(&s), Err(Error::Config(_))));
    }

    #[test]
    fn full_homophily_keeps_links_on_class_map() {
        let spec = small(1.0, 2);
        let p = generate_planted(&spec).unwrap();
        for l in &spec.links {
            assert_eq!(planted_fraction(&p, &spec, &l.name), Some(1.0), "{}", l.name);
        }
    }
}
