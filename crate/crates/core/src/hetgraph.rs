//! Heterogeneous network storage.
//!
//! A [`HetGraph`] is an immutable typed multigraph. Every object carries an
//! [`ObjectTypeId`]; every stored link carries a directional [`LinkTypeId`]
//! whose endpoint types are fixed by the [`Schema`]. Each input edge is stored
//! twice, once per direction, the reverse copy tagged with the dual link type.
//!
//! Adjacency is kept in CSR form. Each object's neighbor list is sorted by
//! `(link type, neighbor index)`, so the links of one type form a contiguous
//! run that can be located by binary search.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ObjectTypeId(pub u16);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct LinkTypeId(pub u16);

impl ObjectTypeId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl LinkTypeId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

/// A directional link type: its endpoint object types and its dual.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LinkType {
    pub name: String,
    pub source: ObjectTypeId,
    pub target: ObjectTypeId,
    pub dual: LinkTypeId,
}

/// Network schema: the object types and the directional link types.
///
/// Every link type has exactly one dual with swapped endpoints. A link type
/// may be its own dual only when both endpoints share one object type.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Schema {
    object_types: Vec<String>,
    link_types: Vec<LinkType>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct SchemaFile {
    object_types: Vec<String>,
    #[serde(default)]
    links: Vec<LinkDecl>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct LinkDecl {
    name: String,
    source: String,
    target: String,
    dual: String,
}

impl Schema {
    /// Builds a schema from object type names and link declarations
    /// `(name, source type, target type, dual name)`.
    ///
    /// A dual that is not declared on its own gets created with swapped
    /// endpoints. A declared dual must point back and have swapped endpoints.
    pub fn new(object_types: &[&str], links: &[(&str, &str, &str, &str)]) -> Result<Self> {
        let file = SchemaFile {
            object_types: object_types.iter().map(|s| s.to_string()).collect(),
            links: links
                .iter()
                .map(|(n, s, t, d)| LinkDecl {
                    name: n.to_string(),
                    source: s.to_string(),
                    target: t.to_string(),
                    dual: d.to_string(),
                })
                .collect(),
        };
        Self::from_file(file)
    }

    fn from_file(file: SchemaFile) -> Result<Self> {
        let mut object_types: Vec<String> = Vec::new();
        for name in file.object_types {
            if name.is_empty() || name.contains(char::is_whitespace) {
                return Err(Error::Schema(format!("bad object type name `{name}`")));
            }
            if object_types.contains(&name) {
                return Err(Error::Schema(format!("object type `{name}` declared twice")));
            }
            object_types.push(name);
        }
        if object_types.len() > u16::MAX as usize {
            return Err(Error::Schema("too many object types".into()));
        }
        let type_of = |name: &str| -> Result<ObjectTypeId> {
            object_types
                .iter()
                .position(|t| t == name)
                .map(|i| ObjectTypeId(i as u16))
                .ok_or_else(|| Error::UnknownObjectType(name.to_string()))
        };

        let declared: BTreeMap<&str, &LinkDecl> =
            file.links.iter().map(|d| (d.name.as_str(), d)).collect();
        if declared.len() != file.links.len() {
            return Err(Error::Schema("link type declared twice".into()));
        }

        let mut link_types: Vec<LinkType> = Vec::new();
        let mut index: HashMap<String, usize> = HashMap::new();
        for decl in &file.links {
            if index.contains_key(&decl.name) {
                continue;
            }
            if decl.name.is_empty() || decl.name.contains(char::is_whitespace) {
                return Err(Error::Schema(format!("bad link type name `{}`", decl.name)));
            }
            let source = type_of(&decl.source)?;
            let target = type_of(&decl.target)?;
            let id = link_types.len();
            if decl.dual == decl.name {
                if source != target {
                    return Err(Error::Schema(format!(
                        "self-dual link `{}` must join one object type",
                        decl.name
                    )));
                }
                link_types.push(LinkType {
                    name: decl.name.clone(),
                    source,
                    target,
                    dual: LinkTypeId(id as u16),
                });
                index.insert(decl.name.clone(), id);
                continue;
            }
            if index.contains_key(&decl.dual) {
                return Err(Error::Schema(format!(
                    "link `{}` names `{}` as dual, which already has one",
                    decl.name, decl.dual
                )));
            }
            if let Some(dual_decl) = declared.get(decl.dual.as_str()) {
                if dual_decl.dual != decl.name
                    || dual_decl.source != decl.target
                    || dual_decl.target != decl.source
                {
                    return Err(Error::Schema(format!(
                        "link `{}` and its dual `{}` disagree",
                        decl.name, decl.dual
                    )));
                }
            }
            link_types.push(LinkType {
                name: decl.name.clone(),
                source,
                target,
                dual: LinkTypeId(id as u16 + 1),
            });
            link_types.push(LinkType {
                name: decl.dual.clone(),
                source: target,
                target: source,
                dual: LinkTypeId(id as u16),
            });
            index.insert(decl.name.clone(), id);
            index.insert(decl.dual.clone(), id + 1);
        }
        if link_types.len() > u16::MAX as usize {
            return Err(Error::Schema("too many link types".into()));
        }
        Ok(Schema {
            object_types,
            link_types,
        })
    }

    /// Parses the TOML schema format:
    ///
    /// ```toml
    /// object_types = ["user", "repo"]
    ///
    /// [[links]]
    /// name = "creates"
    /// source = "user"
    /// target = "repo"
    /// dual = "created_by"
    /// ```
    pub fn from_toml(text: &str) -> Result<Self> {
        let file: SchemaFile = toml::from_str(text).map_err(|e| Error::Schema(e.to_string()))?;
        Self::from_file(file)
    }

    pub fn to_toml(&self) -> String {
        let mut links = Vec::new();
        for (i, lt) in self.link_types.iter().enumerate() {
            // each dual pair is written once, from its lower id
            if lt.dual.index() < i {
                continue;
            }
            links.push(LinkDecl {
                name: lt.name.clone(),
                source: self.object_types[lt.source.index()].clone(),
                target: self.object_types[lt.target.index()].clone(),
                dual: self.link_types[lt.dual.index()].name.clone(),
            });
        }
        let file = SchemaFile {
            object_types: self.object_types.clone(),
            links,
        };
        toml::to_string(&file).expect("schema serializes")
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn num_object_types(&self) -> usize {
        self.object_types.len()
    }

    pub fn num_link_types(&self) -> usize {
        self.link_types.len()
    }

    pub fn object_type(&self, name: &str) -> Option<ObjectTypeId> {
        self.object_types
            .iter()
            .position(|t| t == name)
            .map(|i| ObjectTypeId(i as u16))
    }

    pub fn object_type_name(&self, id: ObjectTypeId) -> &str {
        &self.object_types[id.index()]
    }

    pub fn link_type(&self, name: &str) -> Option<LinkTypeId> {
        self.link_types
            .iter()
            .position(|t| t.name == name)
            .map(|i| LinkTypeId(i as u16))
    }

    pub fn link(&self, id: LinkTypeId) -> &LinkType {
        &self.link_types[id.index()]
    }

    pub fn link_name(&self, id: LinkTypeId) -> &str {
        &self.link_types[id.index()].name
    }

    pub fn dual(&self, id: LinkTypeId) -> LinkTypeId {
        self.link_types[id.index()].dual
    }

    pub fn link_ids(&self) -> impl Iterator<Item = LinkTypeId> {
        (0..self.link_types.len()).map(|i| LinkTypeId(i as u16))
    }
}

/// One entry of an object's adjacency list.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Neighbor {
    pub link: LinkTypeId,
    pub object: usize,
}

/// Immutable heterogeneous multigraph.
#[derive(Debug, Clone)]
pub struct HetGraph {
    schema: Schema,
    ids: Vec<String>,
    index: HashMap<String, usize>,
    types: Vec<ObjectTypeId>,
    offsets: Vec<usize>,
    adjacency: Vec<Neighbor>,
}

impl HetGraph {
    pub fn schema(&self) -> &Schema {
        &self.schema
    }

    pub fn num_objects(&self) -> usize {
        self.types.len()
    }

    /// Number of stored directional links (twice the input edge count).
    pub fn num_links(&self) -> usize {
        self.adjacency.len()
    }

    pub fn object_type(&self, v: usize) -> ObjectTypeId {
        self.types[v]
    }

    pub fn id(&self, v: usize) -> &str {
        &self.ids[v]
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn degree(&self, v: usize) -> usize {
        self.offsets[v + 1] - self.offsets[v]
    }

    /// Typed adjacency of `v`, sorted by `(link type, neighbor)`.
    pub fn neighbors(&self, v: usize) -> Result<&[Neighbor]> {
        if v >= self.num_objects() {
            return Err(Error::ObjectOutOfRange {
                index: v,
                len: self.num_objects(),
            });
        }
        Ok(self.adjacency_of(v))
    }

    pub(crate) fn adjacency_of(&self, v: usize) -> &[Neighbor] {
        &self.adjacency[self.offsets[v]..self.offsets[v + 1]]
    }

    /// The contiguous run of `v`'s links with type `link`.
    pub fn neighbors_via(&self, v: usize, link: LinkTypeId) -> &[Neighbor] {
        let adj = self.adjacency_of(v);
        let lo = adj.partition_point(|n| n.link < link);
        let hi = adj.partition_point(|n| n.link <= link);
        &adj[lo..hi]
    }

    pub fn objects_of_type(&self, t: ObjectTypeId) -> Vec<usize> {
        (0..self.num_objects())
            .filter(|&v| self.types[v] == t)
            .collect()
    }

    /// Writes the nodes and edges files. Nodes are written in index order, so
    /// the nodes file doubles as the id to index map. Each dual pair of
    /// stored links is written once.
    pub fn export(&self, mut nodes: impl Write, mut edges: impl Write) -> Result<()> {
        for v in 0..self.num_objects() {
            writeln!(
                nodes,
                "{}\t{}",
                self.ids[v],
                self.schema.object_type_name(self.types[v])
            )?;
        }
        for (u, t, v) in self.canonical_edges() {
            writeln!(
                edges,
                "{}\t{}\t{}",
                self.ids[u],
                self.schema.link_name(t),
                self.ids[v]
            )?;
        }
        Ok(())
    }

    /// One entry per undirected input edge, in the direction of the lower
    /// link id (or lower source index for self-dual types).
    pub fn canonical_edges(&self) -> Vec<(usize, LinkTypeId, usize)> {
        let mut out = Vec::with_capacity(self.adjacency.len() / 2);
        for u in 0..self.num_objects() {
            for n in self.adjacency_of(u) {
                let dual = self.schema.dual(n.link);
                let keep = if dual == n.link {
                    u < n.object
                } else {
                    n.link < dual
                };
                if keep {
                    out.push((u, n.link, n.object));
                }
            }
        }
        out
    }

    pub fn export_files(&self, nodes: impl AsRef<Path>, edges: impl AsRef<Path>) -> Result<()> {
        let nodes = nodes.as_ref();
        let edges = edges.as_ref();
        let n = BufWriter::new(File::create(nodes).map_err(|e| Error::io(nodes, e))?);
        let e = BufWriter::new(File::create(edges).map_err(|e| Error::io(edges, e))?);
        self.export(n, e)
    }
}

/// Incremental construction of a [`HetGraph`].
#[derive(Debug)]
pub struct HetGraphBuilder {
    schema: Schema,
    ids: Vec<String>,
    index: HashMap<String, usize>,
    types: Vec<ObjectTypeId>,
    edges: Vec<(usize, LinkTypeId, usize)>,
}

impl HetGraphBuilder {
    pub fn new(schema: Schema) -> Self {
        HetGraphBuilder {
            schema,
            ids: Vec::new(),
            index: HashMap::new(),
            types: Vec::new(),
            edges: Vec::new(),
        }
    }

    pub fn schema(&self) -> &Schema {
        &self.schema
    }

    /// Adds an object and returns its dense index.
    pub fn add_object(&mut self, id: &str, object_type: &str) -> Result<usize> {
        let t = self
            .schema
            .object_type(object_type)
            .ok_or_else(|| Error::UnknownObjectType(object_type.to_string()))?;
        self.add_object_typed(id, t)
    }

    pub fn add_object_typed(&mut self, id: &str, t: ObjectTypeId) -> Result<usize> {
        if self.index.contains_key(id) {
            return Err(Error::DuplicateObject(id.to_string()));
        }
        let v = self.ids.len();
        self.ids.push(id.to_string());
        self.index.insert(id.to_string(), v);
        self.types.push(t);
        Ok(v)
    }

    pub fn add_edge(&mut self, src: &str, link: &str, dst: &str) -> Result<()> {
        let t = self
            .schema
            .link_type(link)
            .ok_or_else(|| Error::UnknownLinkType(link.to_string()))?;
        let u = *self
            .index
            .get(src)
            .ok_or_else(|| Error::DanglingEndpoint(src.to_string()))?;
        let v = *self
            .index
            .get(dst)
            .ok_or_else(|| Error::DanglingEndpoint(dst.to_string()))?;
        self.add_edge_indexed(u, t, v)
    }

    pub fn add_edge_indexed(&mut self, u: usize, t: LinkTypeId, v: usize) -> Result<()> {
        let n = self.ids.len();
        for x in [u, v] {
            if x >= n {
                return Err(Error::ObjectOutOfRange { index: x, len: n });
            }
        }
        if u == v {
            return Err(Error::SelfLoop(self.ids[u].clone()));
        }
        let lt = self.schema.link(t);
        if self.types[u] != lt.source || self.types[v] != lt.target {
            let name = |o: ObjectTypeId| self.schema.object_type_name(o).to_string();
            return Err(Error::EndpointMismatch {
                edge: format!("{} -[{}]-> {}", self.ids[u], lt.name, self.ids[v]),
                found: format!("({}, {})", name(self.types[u]), name(self.types[v])),
                expected: format!("({}, {})", name(lt.source), name(lt.target)),
            });
        }
        self.edges.push((u, t, v));
        Ok(())
    }

    pub fn build(self) -> HetGraph {
        let n = self.ids.len();
        let mut degree = vec![0usize; n];
        for &(u, _, v) in &self.edges {
            degree[u] += 1;
            degree[v] += 1;
        }
        let mut offsets = vec![0usize; n + 1];
        for v in 0..n {
            offsets[v + 1] = offsets[v] + degree[v];
        }
        let mut fill = offsets.clone();
        let mut adjacency = vec![
            Neighbor {
                link: LinkTypeId(0),
                object: 0
            };
            offsets[n]
        ];
        for &(u, t, v) in &self.edges {
            adjacency[fill[u]] = Neighbor { link: t, object: v };
            fill[u] += 1;
            adjacency[fill[v]] = Neighbor {
                link: self.schema.dual(t),
                object: u,
            };
            fill[v] += 1;
        }
        for v in 0..n {
            adjacency[offsets[v]..offsets[v + 1]].sort_unstable();
        }
        HetGraph {
            schema: self.schema,
            ids: self.ids,
            index: self.index,
            types: self.types,
            offsets,
            adjacency,
        }
    }
}

/// Yields `(line number, fields)` for every non-empty, non-comment line.
fn tsv_records(
    reader: impl BufRead,
    arity: usize,
) -> impl Iterator<Item = Result<(usize, Vec<String>)>> {
    reader
        .lines()
        .enumerate()
        .filter_map(move |(i, line)| {
            let line = match line {
                Ok(l) => l,
                Err(e) => return Some(Err(Error::Stream(e))),
            };
            let trimmed = line.trim_end_matches(['\r', '\n']);
            if trimmed.trim().is_empty() || trimmed.trim_start().starts_with('#') {
                return None;
            }
            let fields: Vec<String> = trimmed.split('\t').map(|s| s.trim().to_string()).collect();
            if fields.len() != arity || fields.iter().any(|f| f.is_empty()) {
                return Some(Err(Error::Parse {
                    line: i + 1,
                    message: format!("expected {arity} tab-separated fields, got `{trimmed}`"),
                }));
            }
            Some(Ok((i + 1, fields)))
        })
}

/// Loads a graph from a nodes source (`id<TAB>object_type`) and an edges
/// source (`src_id<TAB>link_type<TAB>dst_id`). Lines starting with `#` are
/// comments. Indices are assigned in nodes-file order.
pub fn load_graph(nodes: impl BufRead, edges: impl BufRead, schema: Schema) -> Result<HetGraph> {
    let mut builder = HetGraphBuilder::new(schema);
    for rec in tsv_records(nodes, 2) {
        let (_, f) = rec?;
        builder.add_object(&f[0], &f[1])?;
    }
    for rec in tsv_records(edges, 3) {
        let (_, f) = rec?;
        builder.add_edge(&f[0], &f[1], &f[2])?;
    }
    Ok(builder.build())
}

pub fn load_graph_files(
    nodes: impl AsRef<Path>,
    edges: impl AsRef<Path>,
    schema: impl AsRef<Path>,
) -> Result<HetGraph> {
    let schema = Schema::load(schema)?;
    let nodes = nodes.as_ref();
    let edges = edges.as_ref();
    let n = BufReader::new(File::open(nodes).map_err(|e| Error::io(nodes, e))?);
    let e = BufReader::new(File::open(edges).map_err(|e| Error::io(edges, e))?);
    load_graph(n, e, schema)
}

/// Ground-truth labels on objects of one targeted type.
///
/// Class ids are dense: every id in `0..num_classes()` labels at least one
/// object.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelSet {
    targeted: ObjectTypeId,
    class_names: Vec<String>,
    labels: BTreeMap<usize, usize>,
}

impl LabelSet {
    /// Checked constructor. Fails if any class id is out of range or unused.
    pub fn new(
        targeted: ObjectTypeId,
        class_names: Vec<String>,
        labels: BTreeMap<usize, usize>,
    ) -> Result<Self> {
        if labels.is_empty() {
            return Err(Error::EmptyLabels);
        }
        let c = class_names.len();
        let mut seen = vec![false; c];
        for &y in labels.values() {
            if y >= c {
                return Err(Error::ClassOutOfRange {
                    class: y,
                    num_classes: c,
                });
            }
            seen[y] = true;
        }
        if let Some(class) = seen.iter().position(|s| !s) {
            return Err(Error::MissingClass { class });
        }
        Ok(LabelSet {
            targeted,
            class_names,
            labels,
        })
    }

    pub fn targeted_type(&self) -> ObjectTypeId {
        self.targeted
    }

    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn class_of(&self, v: usize) -> Option<usize> {
        self.labels.get(&v).copied()
    }

    pub fn contains(&self, v: usize) -> bool {
        self.labels.contains_key(&v)
    }

    /// Labeled objects in increasing index order.
    pub fn objects(&self) -> Vec<usize> {
        self.labels.keys().copied().collect()
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.labels.iter().map(|(&v, &y)| (v, y))
    }

    /// Per-class member counts.
    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes()];
        for &y in self.labels.values() {
            counts[y] += 1;
        }
        counts
    }

    /// Most frequent class, lowest id on ties.
    pub fn majority_class(&self) -> usize {
        let counts = self.class_counts();
        let mut best = 0;
        for (y, &c) in counts.iter().enumerate() {
            if c > counts[best] {
                best = y;
            }
        }
        best
    }

    /// Restricts to `objects` (unlabeled ones are ignored), keeping class
    /// names. Fails if a class disappears.
    pub fn subset(&self, objects: &[usize]) -> Result<LabelSet> {
        let labels = objects
            .iter()
            .filter_map(|&v| self.labels.get(&v).map(|&y| (v, y)))
            .collect();
        LabelSet::new(self.targeted, self.class_names.clone(), labels)
    }

    pub fn write(&self, graph: &HetGraph, mut out: impl Write) -> Result<()> {
        for (v, y) in self.iter() {
            writeln!(out, "{}\t{}", graph.id(v), self.class_names[y])?;
        }
        Ok(())
    }

    pub fn write_file(&self, graph: &HetGraph, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let f = BufWriter::new(File::create(path).map_err(|e| Error::io(path, e))?);
        self.write(graph, f)
    }
}

impl fmt::Display for LabelSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} labels over {} classes",
            self.labels.len(),
            self.class_names.len()
        )
    }
}

/// Loads `id<TAB>class_name` records. Class names map to dense ids in sorted
/// name order; repeated identical records collapse to one.
pub fn load_labels(
    source: impl BufRead,
    graph: &HetGraph,
    targeted_type: ObjectTypeId,
) -> Result<LabelSet> {
    let mut raw: BTreeMap<usize, String> = BTreeMap::new();
    let mut names: BTreeSet<String> = BTreeSet::new();
    for rec in tsv_records(source, 2) {
        let (_, f) = rec?;
        let v = graph
            .index_of(&f[0])
            .ok_or_else(|| Error::UnknownObject(f[0].clone()))?;
        if graph.object_type(v) != targeted_type {
            let schema = graph.schema();
            return Err(Error::WrongObjectType {
                id: f[0].clone(),
                actual: schema.object_type_name(graph.object_type(v)).to_string(),
                expected: schema.object_type_name(targeted_type).to_string(),
            });
        }
        match raw.get(&v) {
            Some(existing) if existing != &f[1] => {
                return Err(Error::ConflictingLabel(f[0].clone()))
            }
            Some(_) => {}
            None => {
                raw.insert(v, f[1].clone());
            }
        }
        names.insert(f[1].clone());
    }
    let class_names: Vec<String> = names.into_iter().collect();
    let labels = raw
        .into_iter()
        .map(|(v, name)| {
            let y = class_names.binary_search(&name).expect("name collected");
            (v, y)
        })
        .collect();
    LabelSet::new(targeted_type, class_names, labels)
}

pub fn load_labels_file(
    path: impl AsRef<Path>,
    graph: &HetGraph,
    targeted_type: ObjectTypeId,
) -> Result<LabelSet> {
    let path = path.as_ref();
    let f = BufReader::new(File::open(path).map_err(|e| Error::io(path, e))?);
    load_labels(f, graph, targeted_type)
}
