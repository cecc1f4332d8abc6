//! Heterogeneous graph storage: interned entities and relations,
//! multi-relational triple stores and weighted bipartite edge lists.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("entity `{name}` already interned as {existing}, not {requested}")]
    ClassConflict {
        name: String,
        existing: EntityClass,
        requested: EntityClass,
    },
    #[error("empty entity or relation name")]
    EmptyName,
    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("{path}:{line}: unknown entity class `{class}`")]
    UnknownClass {
        path: PathBuf,
        line: usize,
        class: String,
    },
    #[error("invalid edge weight {0}; weights must be finite and positive")]
    BadWeight(f64),
    #[error("split ratios {0:?} must be positive and sum to 1")]
    BadRatios((f64, f64, f64)),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> GraphError + '_ {
    move |source| GraphError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum EntityClass {
    Patient,
    Disease,
    Medicine,
    Other,
}

impl EntityClass {
    pub fn as_str(self) -> &'static str {
        match self {
            EntityClass::Patient => "patient",
            EntityClass::Disease => "disease",
            EntityClass::Medicine => "medicine",
            EntityClass::Other => "other",
        }
    }
}

impl fmt::Display for EntityClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EntityClass {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "patient" => Ok(EntityClass::Patient),
            "disease" => Ok(EntityClass::Disease),
            "medicine" => Ok(EntityClass::Medicine),
            "other" => Ok(EntityClass::Other),
            _ => Err(s.to_string()),
        }
    }
}

/// Dense index of an interned entity.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct EntityId(pub u32);

/// Dense index of an interned relation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct RelationId(pub u32);

impl EntityId {
    #[inline]
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl RelationId {
    #[inline]
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

/// Name table shared by every graph of a dataset.
///
/// Ids are assigned in order of first ingestion and are dense in
/// `[0, count)`. The class of an entity is fixed when it is first seen.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Interner {
    names: Vec<String>,
    classes: Vec<EntityClass>,
    index: HashMap<String, EntityId>,
    relation_names: Vec<String>,
    relation_index: HashMap<String, RelationId>,
}

impl Interner {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn intern_entity(&mut self, name: &str, class: EntityClass) -> Result<EntityId, GraphError> {
        if name.is_empty() {
            return Err(GraphError::EmptyName);
        }
        if let Some(&id) = self.index.get(name) {
            let existing = self.classes[id.index()];
            if existing != class {
                return Err(GraphError::ClassConflict {
                    name: name.to_string(),
                    existing,
                    requested: class,
                });
            }
            return Ok(id);
        }
        let id = EntityId(self.names.len() as u32);
        self.names.push(name.to_string());
        self.classes.push(class);
        self.index.insert(name.to_string(), id);
        Ok(id)
    }

    pub fn intern_relation(&mut self, name: &str) -> Result<RelationId, GraphError> {
        if name.is_empty() {
            return Err(GraphError::EmptyName);
        }
        if let Some(&id) = self.relation_index.get(name) {
            return Ok(id);
        }
        let id = RelationId(self.relation_names.len() as u32);
        self.relation_names.push(name.to_string());
        self.relation_index.insert(name.to_string(), id);
        Ok(id)
    }

    pub fn entity(&self, name: &str) -> Option<EntityId> {
        self.index.get(name).copied()
    }

    pub fn relation(&self, name: &str) -> Option<RelationId> {
        self.relation_index.get(name).copied()
    }

    pub fn entity_name(&self, id: EntityId) -> &str {
        &self.names[id.index()]
    }

    pub fn relation_name(&self, id: RelationId) -> &str {
        &self.relation_names[id.index()]
    }

    pub fn class(&self, id: EntityId) -> EntityClass {
        self.classes[id.index()]
    }

    pub fn num_entities(&self) -> usize {
        self.names.len()
    }

    pub fn num_relations(&self) -> usize {
        self.relation_names.len()
    }

    /// All entities of one class, in id order.
    pub fn entities_of(&self, class: EntityClass) -> Vec<EntityId> {
        self.classes
            .iter()
            .enumerate()
            .filter(|(_, &c)| c == class)
            .map(|(i, _)| EntityId(i as u32))
            .collect()
    }

    /// Writes the `id<TAB>name<TAB>class` entity table.
    pub fn write_entity_table(&self, path: &Path) -> Result<(), GraphError> {
        let mut out = BufWriter::new(File::create(path).map_err(io_err(path))?);
        for (i, (name, class)) in self.names.iter().zip(&self.classes).enumerate() {
            writeln!(out, "{}\t{}\t{}", i, name, class).map_err(io_err(path))?;
        }
        out.flush().map_err(io_err(path))
    }

    /// Writes the `id<TAB>name` relation table.
    pub fn write_relation_table(&self, path: &Path) -> Result<(), GraphError> {
        let mut out = BufWriter::new(File::create(path).map_err(io_err(path))?);
        for (i, name) in self.relation_names.iter().enumerate() {
            writeln!(out, "{}\t{}", i, name).map_err(io_err(path))?;
        }
        out.flush().map_err(io_err(path))
    }

    /// Reads entity and relation tables back. Ids must be listed densely
    /// in increasing order.
    pub fn read_tables(entities: &Path, relations: &Path) -> Result<Self, GraphError> {
        let mut interner = Interner::new();
        for (line_no, fields) in tsv_records(entities)? {
            let fields = fields?;
            if fields.len() != 3 {
                return Err(parse_err(entities, line_no, "expected id, name, class"));
            }
            let class = fields[2].parse::<EntityClass>().map_err(|class| GraphError::UnknownClass {
                path: entities.to_path_buf(),
                line: line_no,
                class,
            })?;
            let id = interner.intern_entity(&fields[1], class)?;
            if fields[0] != id.0.to_string() {
                return Err(parse_err(entities, line_no, "entity ids must be dense and ordered"));
            }
        }
        for (line_no, fields) in tsv_records(relations)? {
            let fields = fields?;
            if fields.len() != 2 {
                return Err(parse_err(relations, line_no, "expected id, name"));
            }
            let id = interner.intern_relation(&fields[1])?;
            if fields[0] != id.0.to_string() {
                return Err(parse_err(relations, line_no, "relation ids must be dense and ordered"));
            }
        }
        Ok(interner)
    }
}

fn parse_err(path: &Path, line: usize, message: &str) -> GraphError {
    GraphError::Parse {
        path: path.to_path_buf(),
        line,
        message: message.to_string(),
    }
}

type Record = (usize, Result<Vec<String>, GraphError>);

/// Tab-separated records of a UTF-8 file, skipping blank and `#` lines.
fn tsv_records(path: &Path) -> Result<impl Iterator<Item = Record>, GraphError> {
    let file = File::open(path).map_err(io_err(path))?;
    let owned = path.to_path_buf();
    Ok(BufReader::new(file)
        .lines()
        .enumerate()
        .filter_map(move |(i, line)| {
            let line_no = i + 1;
            match line {
                Err(source) => Some((
                    line_no,
                    Err(GraphError::Io {
                        path: owned.clone(),
                        source,
                    }),
                )),
                Ok(line) => {
                    let trimmed = line.trim_end_matches(['\r', '\n']);
                    if trimmed.trim().is_empty() || trimmed.starts_with('#') {
                        None
                    } else {
                        Some((line_no, Ok(trimmed.split('\t').map(str::to_string).collect())))
                    }
                }
            }
        }))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Triple {
    pub head: EntityId,
    pub relation: RelationId,
    pub tail: EntityId,
}

impl Triple {
    pub fn new(head: EntityId, relation: RelationId, tail: EntityId) -> Self {
        Triple { head, relation, tail }
    }
}

/// Statistics reported by the file loaders.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct LoadStats {
    pub records: usize,
    pub duplicates: usize,
}

/// A deduplicated set of `(head, relation, tail)` facts.
#[derive(Clone, Debug, Default)]
pub struct TripleStore {
    triples: Vec<Triple>,
    members: HashSet<Triple>,
    by_relation: BTreeMap<RelationId, Vec<usize>>,
    by_entity: BTreeMap<EntityId, Vec<usize>>,
}

impl TripleStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Inserts a triple, returning `false` if it was already present.
    pub fn insert(&mut self, triple: Triple) -> bool {
        if !self.members.insert(triple) {
            return false;
        }
        let idx = self.triples.len();
        self.triples.push(triple);
        self.by_relation.entry(triple.relation).or_default().push(idx);
        self.by_entity.entry(triple.head).or_default().push(idx);
        if triple.tail != triple.head {
            self.by_entity.entry(triple.tail).or_default().push(idx);
        }
        true
    }

    pub fn contains(&self, triple: &Triple) -> bool {
        self.members.contains(triple)
    }

    pub fn triples(&self) -> &[Triple] {
        &self.triples
    }

    pub fn len(&self) -> usize {
        self.triples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.triples.is_empty()
    }

    /// Entities occurring in at least one triple, in id order.
    pub fn entities(&self) -> Vec<EntityId> {
        self.by_entity.keys().copied().collect()
    }

    /// Relations occurring in at least one triple, in id order.
    pub fn relations(&self) -> Vec<RelationId> {
        self.by_relation.keys().copied().collect()
    }

    pub fn with_relation(&self, relation: RelationId) -> impl Iterator<Item = &Triple> {
        self.by_relation
            .get(&relation)
            .into_iter()
            .flatten()
            .map(move |&i| &self.triples[i])
    }

    pub fn with_entity(&self, entity: EntityId) -> impl Iterator<Item = &Triple> {
        self.by_entity
            .get(&entity)
            .into_iter()
            .flatten()
            .map(move |&i| &self.triples[i])
    }

    /// Loads a triple TSV file:
    /// `head<TAB>relation<TAB>tail<TAB>head_class<TAB>tail_class`.
    pub fn load(path: &Path, interner: &mut Interner) -> Result<(Self, LoadStats), GraphError> {
        let mut store = TripleStore::new();
        let mut stats = LoadStats::default();
        for (line_no, fields) in tsv_records(path)? {
            let fields = fields?;
            if fields.len() != 5 {
                return Err(parse_err(
                    path,
                    line_no,
                    &format!("expected 5 tab-separated columns, found {}", fields.len()),
                ));
            }
            let class = |s: &str| {
                s.parse::<EntityClass>().map_err(|class| GraphError::UnknownClass {
                    path: path.to_path_buf(),
                    line: line_no,
                    class,
                })
            };
            let head_class = class(&fields[3])?;
            let tail_class = class(&fields[4])?;
            let head = interner.intern_entity(&fields[0], head_class)?;
            let relation = interner.intern_relation(&fields[1])?;
            let tail = interner.intern_entity(&fields[2], tail_class)?;
            stats.records += 1;
            if !store.insert(Triple::new(head, relation, tail)) {
                stats.duplicates += 1;
            }
        }
        Ok((store, stats))
    }

    pub fn write(&self, path: &Path, interner: &Interner) -> Result<(), GraphError> {
        let mut out = BufWriter::new(File::create(path).map_err(io_err(path))?);
        for t in &self.triples {
            writeln!(
                out,
                "{}\t{}\t{}\t{}\t{}",
                interner.entity_name(t.head),
                interner.relation_name(t.relation),
                interner.entity_name(t.tail),
                interner.class(t.head),
                interner.class(t.tail)
            )
            .map_err(io_err(path))?;
        }
        out.flush().map_err(io_err(path))
    }
}

impl PartialEq for TripleStore {
    fn eq(&self, other: &Self) -> bool {
        self.members == other.members
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Edge {
    pub user: EntityId,
    pub item: EntityId,
    pub weight: f64,
}

/// How repeated `(user, item)` pairs are folded on insertion.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MergePolicy {
    /// Weights accumulate, as for prescription counts.
    Sum,
    /// The pair is kept once with weight 1, as for diagnoses.
    Unit,
}

/// Weighted user-item edge list.
#[derive(Clone, Debug, Default)]
pub struct BipartiteGraph {
    edges: Vec<Edge>,
    index: HashMap<(EntityId, EntityId), usize>,
    by_user: BTreeMap<EntityId, Vec<usize>>,
    by_item: BTreeMap<EntityId, Vec<usize>>,
}

impl BipartiteGraph {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds an edge, merging with an existing `(user, item)` pair according
    /// to `policy`. Returns `true` if the pair is new.
    pub fn add_edge(
        &mut self,
        user: EntityId,
        item: EntityId,
        weight: f64,
        policy: MergePolicy,
    ) -> Result<bool, GraphError> {
        if !(weight.is_finite() && weight > 0.0) {
            return Err(GraphError::BadWeight(weight));
        }
        let weight = match policy {
            MergePolicy::Sum => weight,
            MergePolicy::Unit => 1.0,
        };
        if let Some(&i) = self.index.get(&(user, item)) {
            if policy == MergePolicy::Sum {
                self.edges[i].weight += weight;
            }
            return Ok(false);
        }
        let i = self.edges.len();
        self.edges.push(Edge { user, item, weight });
        self.index.insert((user, item), i);
        self.by_user.entry(user).or_default().push(i);
        self.by_item.entry(item).or_default().push(i);
        Ok(true)
    }

    pub fn from_edges(edges: impl IntoIterator<Item = Edge>, policy: MergePolicy) -> Result<Self, GraphError> {
        let mut g = BipartiteGraph::new();
        for e in edges {
            g.add_edge(e.user, e.item, e.weight, policy)?;
        }
        Ok(g)
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn len(&self) -> usize {
        self.edges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.edges.is_empty()
    }

    pub fn weight(&self, user: EntityId, item: EntityId) -> Option<f64> {
        self.index.get(&(user, item)).map(|&i| self.edges[i].weight)
    }

    pub fn contains(&self, user: EntityId, item: EntityId) -> bool {
        self.index.contains_key(&(user, item))
    }

    pub fn users(&self) -> Vec<EntityId> {
        self.by_user.keys().copied().collect()
    }

    pub fn items(&self) -> Vec<EntityId> {
        self.by_item.keys().copied().collect()
    }

    /// Edges of one user in insertion order.
    pub fn user_edges(&self, user: EntityId) -> impl Iterator<Item = &Edge> {
        self.by_user
            .get(&user)
            .into_iter()
            .flatten()
            .map(move |&i| &self.edges[i])
    }

    pub fn user_items(&self, user: EntityId) -> Vec<EntityId> {
        self.user_edges(user).map(|e| e.item).collect()
    }

    /// `sum_i`: the total weight of a user's edges.
    pub fn user_sum(&self, user: EntityId) -> f64 {
        self.user_edges(user).map(|e| e.weight).sum()
    }

    /// Total weight incident to an item.
    pub fn item_mass(&self, item: EntityId) -> f64 {
        self.by_item
            .get(&item)
            .into_iter()
            .flatten()
            .map(|&i| self.edges[i].weight)
            .sum()
    }

    pub fn total_weight(&self) -> f64 {
        self.edges.iter().map(|e| e.weight).sum()
    }

    /// Loads `user<TAB>item[<TAB>weight]` lines; weight defaults to 1.
    pub fn load(
        path: &Path,
        interner: &mut Interner,
        user_class: EntityClass,
        item_class: EntityClass,
        policy: MergePolicy,
    ) -> Result<(Self, LoadStats), GraphError> {
        let mut graph = BipartiteGraph::new();
        let mut stats = LoadStats::default();
        for (line_no, fields) in tsv_records(path)? {
            let fields = fields?;
            if !(2..=3).contains(&fields.len()) {
                return Err(parse_err(
                    path,
                    line_no,
                    &format!("expected 2 or 3 tab-separated columns, found {}", fields.len()),
                ));
            }
            let weight = match fields.get(2) {
                Some(w) => w
                    .trim()
                    .parse::<f64>()
                    .map_err(|_| parse_err(path, line_no, &format!("bad weight `{}`", w)))?,
                None => 1.0,
            };
            let user = interner.intern_entity(&fields[0], user_class)?;
            let item = interner.intern_entity(&fields[1], item_class)?;
            stats.records += 1;
            let fresh = graph.add_edge(user, item, weight, policy).map_err(|e| match e {
                GraphError::BadWeight(w) => parse_err(path, line_no, &format!("bad weight {}", w)),
                other => other,
            })?;
            if !fresh {
                stats.duplicates += 1;
            }
        }
        Ok((graph, stats))
    }

    pub fn write(&self, path: &Path, interner: &Interner) -> Result<(), GraphError> {
        let mut out = BufWriter::new(File::create(path).map_err(io_err(path))?);
        for e in &self.edges {
            writeln!(
                out,
                "{}\t{}\t{}",
                interner.entity_name(e.user),
                interner.entity_name(e.item),
                e.weight
            )
            .map_err(io_err(path))?;
        }
        out.flush().map_err(io_err(path))
    }
}

impl PartialEq for BipartiteGraph {
    fn eq(&self, other: &Self) -> bool {
        self.edges.len() == other.edges.len()
            && self
                .edges
                .iter()
                .all(|e| other.weight(e.user, e.item) == Some(e.weight))
    }
}

/// Train/validation/test partition of bipartite edges.
#[derive(Clone, Debug)]
pub struct DatasetSplit {
    pub train: BipartiteGraph,
    pub valid: BipartiteGraph,
    pub test: BipartiteGraph,
    pub ratios: (f64, f64, f64),
}

pub const DEFAULT_SPLIT: (f64, f64, f64) = (0.7, 0.1, 0.2);

/// Shuffles the edges with a seeded rng and cuts them by `ratios`.
/// Each partition keeps the original edge order.
pub fn split_edges(graph: &BipartiteGraph, ratios: (f64, f64, f64), seed: u64) -> Result<DatasetSplit, GraphError> {
    let (a, b, c) = ratios;
    let positive = [a, b, c].iter().all(|r| r.is_finite() && *r > 0.0);
    if !positive || (a + b + c - 1.0).abs() > 1e-9 {
        return Err(GraphError::BadRatios(ratios));
    }
    let n = graph.len();
    let n_train = ((a * n as f64).round() as usize).min(n);
    let n_valid = ((b * n as f64).round() as usize).min(n - n_train);

    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut parts = [
        order[..n_train].to_vec(),
        order[n_train..n_train + n_valid].to_vec(),
        order[n_train + n_valid..].to_vec(),
    ];
    let mut graphs = parts.iter_mut().map(|idx| {
        idx.sort_unstable();
        // Weights are copied verbatim; pairs are unique in the source.
        BipartiteGraph::from_edges(idx.iter().map(|&i| graph.edges[i]), MergePolicy::Sum)
    });
    Ok(DatasetSplit {
        train: graphs.next().unwrap()?,
        valid: graphs.next().unwrap()?,
        test: graphs.next().unwrap()?,
        ratios,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn tmp_file(content: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(content.as_bytes()).unwrap();
        f
    }

    #[test]
    fn interning_is_idempotent_and_dense() {
        let mut interner = Interner::new();
        let a = interner.intern_entity("aspirin", EntityClass::Medicine).unwrap();
        assert_eq!(interner.intern_entity("aspirin", EntityClass::Medicine).unwrap(), a);
        let b = interner.intern_entity("flu", EntityClass::Disease).unwrap();
        let c = interner.intern_entity("p1", EntityClass::Patient).unwrap();
        assert_eq!((a.0, b.0, c.0), (0, 1, 2));
    }

    #[test]
    fn class_conflict_is_rejected() {
        let mut interner = Interner::new();
        interner.intern_entity("aspirin", EntityClass::Medicine).unwrap();
        let err = interner.intern_entity("aspirin", EntityClass::Disease).unwrap_err();
        assert!(matches!(err, GraphError::ClassConflict { .. }));
        assert!(matches!(
            interner.intern_entity("", EntityClass::Other),
            Err(GraphError::EmptyName)
        ));
    }

    #[test]
    fn load_triples_dedups() {
        let f = tmp_file(
            "# comment\n\
             a\tr\tb\tmedicine\tmedicine\n\
             a\tr\tb\tmedicine\tmedicine\n\
             b\tr\tc\tmedicine\tother\n",
        );
        let mut interner = Interner::new();
        let (store, stats) = TripleStore::load(f.path(), &mut interner).unwrap();
        assert_eq!(store.len(), 2);
        assert_eq!(stats.duplicates, 1);
        assert_eq!(stats.records, 3);
    }

    #[test]
    fn load_empty_file() {
        let f = tmp_file("");
        let (store, stats) = TripleStore::load(f.path(), &mut Interner::new()).unwrap();
        assert!(store.is_empty());
        assert_eq!(stats, LoadStats::default());
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let f = tmp_file("a\tr\tb\tmedicine\tmedicine\na b\n");
        match TripleStore::load(f.path(), &mut Interner::new()) {
            Err(GraphError::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected parse error, got {:?}", other),
        }
    }

    #[test]
    fn unknown_class_is_reported() {
        let f = tmp_file("a\tr\tb\tmedicine\tdrug\n");
        assert!(matches!(
            TripleStore::load(f.path(), &mut Interner::new()),
            Err(GraphError::UnknownClass { line: 1, .. })
        ));
    }

    #[test]
    fn bipartite_load_merges_and_defaults_weight() {
        let f = tmp_file("p1\tm1\t2\np1\tm1\t3\np1\tm2\np2\tm2\t1.5\n");
        let mut interner = Interner::new();
        let (g, stats) = BipartiteGraph::load(
            f.path(),
            &mut interner,
            EntityClass::Patient,
            EntityClass::Medicine,
            MergePolicy::Sum,
        )
        .unwrap();
        let p1 = interner.entity("p1").unwrap();
        let m1 = interner.entity("m1").unwrap();
        let m2 = interner.entity("m2").unwrap();
        assert_eq!(g.len(), 3);
        assert_eq!(stats.duplicates, 1);
        assert_eq!(g.weight(p1, m1), Some(5.0));
        assert_eq!(g.weight(p1, m2), Some(1.0));
        assert_eq!(g.user_sum(p1), 6.0);
        assert_eq!(g.item_mass(m2), 2.5);
    }

    #[test]
    fn unit_policy_keeps_weight_one() {
        let mut g = BipartiteGraph::new();
        let (p, d) = (EntityId(0), EntityId(1));
        assert!(g.add_edge(p, d, 1.0, MergePolicy::Unit).unwrap());
        assert!(!g.add_edge(p, d, 1.0, MergePolicy::Unit).unwrap());
        assert_eq!(g.weight(p, d), Some(1.0));
        assert!(g.add_edge(p, EntityId(2), 0.0, MergePolicy::Sum).is_err());
    }

    fn chain_graph(n: u32) -> BipartiteGraph {
        let mut g = BipartiteGraph::new();
        for i in 0..n {
            g.add_edge(EntityId(i % 3), EntityId(100 + i), 1.0 + i as f64, MergePolicy::Sum)
                .unwrap();
        }
        g
    }

    #[test]
    fn split_sizes_and_determinism() {
        let g = chain_graph(10);
        let s = split_edges(&g, DEFAULT_SPLIT, 42).unwrap();
        assert_eq!((s.train.len(), s.valid.len(), s.test.len()), (7, 1, 2));
        let again = split_edges(&g, DEFAULT_SPLIT, 42).unwrap();
        assert_eq!(s.train.edges(), again.train.edges());
        assert_eq!(s.test.edges(), again.test.edges());
        assert!(matches!(
            split_edges(&g, (0.5, 0.5, 0.5), 1),
            Err(GraphError::BadRatios(_))
        ));
        assert!(split_edges(&g, (0.0, 0.5, 0.5), 1).is_err());
    }

    proptest! {
        #[test]
        fn split_partitions_cover_and_are_disjoint(n in 0u32..200, seed in any::<u64>()) {
            let g = chain_graph(n);
            let s = split_edges(&g, DEFAULT_SPLIT, seed).unwrap();
            let total = s.train.len() + s.valid.len() + s.test.len();
            prop_assert_eq!(total, g.len());
            for (part, r) in [(&s.train, 0.7), (&s.valid, 0.1), (&s.test, 0.2)] {
                prop_assert!((part.len() as f64 - r * n as f64).abs() <= 1.0 + 1e-9);
            }
            for e in g.edges() {
                let hits = [&s.train, &s.valid, &s.test]
                    .iter()
                    .filter(|p| p.weight(e.user, e.item) == Some(e.weight))
                    .count();
                prop_assert_eq!(hits, 1);
            }
        }

        #[test]
        fn user_sums_match_edges(weights in prop::collection::vec((0u32..5, 0u32..8, 1u32..10), 0..60)) {
            let mut g = BipartiteGraph::new();
            for (u, i, w) in weights {
                g.add_edge(EntityId(u), EntityId(100 + i), w as f64 * 0.5, MergePolicy::Sum).unwrap();
            }
            for u in g.users() {
                let direct: f64 = g.edges().iter().filter(|e| e.user == u).map(|e| e.weight).sum();
                prop_assert_eq!(direct, g.user_sum(u));
            }
        }

        #[test]
        fn triple_files_round_trip(raw in prop::collection::vec((0u8..6, 0u8..3, 0u8..6), 0..40)) {
            let mut interner = Interner::new();
            let mut store = TripleStore::new();
            for (h, r, t) in raw {
                let h = interner.intern_entity(&format!("e{}", h), EntityClass::Medicine).unwrap();
                let t = interner.intern_entity(&format!("e{}", t), EntityClass::Medicine).unwrap();
                let r = interner.intern_relation(&format!("r{}", r)).unwrap();
                store.insert(Triple::new(h, r, t));
            }
            for t in store.triples() {
                prop_assert!(store.contains(t));
            }
            let f = tempfile::NamedTempFile::new().unwrap();
            store.write(f.path(), &interner).unwrap();
            let mut reread = interner.clone();
            let (loaded, stats) = TripleStore::load(f.path(), &mut reread).unwrap();
            prop_assert_eq!(stats.duplicates, 0);
            prop_assert!(loaded == store);
            prop_assert_eq!(reread, interner);
        }
    }

    #[test]
    fn name_tables_round_trip() {
        let mut interner = Interner::new();
        interner.intern_entity("p1", EntityClass::Patient).unwrap();
        interner.intern_entity("m1", EntityClass::Medicine).unwrap();
        interner.intern_relation("interacts_with").unwrap();
        let dir = tempfile::tempdir().unwrap();
        let (e, r) = (dir.path().join("entities.tsv"), dir.path().join("relations.tsv"));
        interner.write_entity_table(&e).unwrap();
        interner.write_relation_table(&r).unwrap();
        assert_eq!(Interner::read_tables(&e, &r).unwrap(), interner);
    }
}
