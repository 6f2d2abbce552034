//! Heterogeneous citation network over Act, Chapter, Topic, Section and Fact
//! nodes, metapath schemas, and metapath instance enumeration and sampling.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::fs;
use std::path::Path;
use std::sync::{Arc, Mutex};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{FactDocument, StatuteHierarchy};
use crate::error::{Error, Result};

pub const GRAPH_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum NodeType {
    #[serde(rename = "A")]
    Act,
    #[serde(rename = "C")]
    Chapter,
    #[serde(rename = "T")]
    Topic,
    #[serde(rename = "S")]
    Section,
    #[serde(rename = "F")]
    Fact,
}

impl NodeType {
    pub const ALL: [NodeType; 5] = [
        NodeType::Act,
        NodeType::Chapter,
        NodeType::Topic,
        NodeType::Section,
        NodeType::Fact,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn code(self) -> char {
        match self {
            NodeType::Act => 'A',
            NodeType::Chapter => 'C',
            NodeType::Topic => 'T',
            NodeType::Section => 'S',
            NodeType::Fact => 'F',
        }
    }
}

impl fmt::Display for NodeType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.code())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Relation {
    /// Fact → Section.
    Ct,
    /// Section → Fact.
    Ctb,
    /// Parent → child in the hierarchy.
    Inc,
    /// Child → parent in the hierarchy.
    Po,
}

impl Relation {
    pub const ALL: [Relation; 4] = [Relation::Ct, Relation::Ctb, Relation::Inc, Relation::Po];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn inverse(self) -> Relation {
        match self {
            Relation::Ct => Relation::Ctb,
            Relation::Ctb => Relation::Ct,
            Relation::Inc => Relation::Po,
            Relation::Po => Relation::Inc,
        }
    }

    /// Whether `from -[self]-> to` is a legal typed edge.
    pub fn connects(self, from: NodeType, to: NodeType) -> bool {
        use NodeType::*;
        matches!(
            (from, self, to),
            (Act, Relation::Inc, Chapter)
                | (Chapter, Relation::Inc, Topic)
                | (Topic, Relation::Inc, Section)
                | (Chapter, Relation::Po, Act)
                | (Topic, Relation::Po, Chapter)
                | (Section, Relation::Po, Topic)
                | (Fact, Relation::Ct, Section)
                | (Section, Relation::Ctb, Fact)
        )
    }

    pub fn name(self) -> &'static str {
        match self {
            Relation::Ct => "ct",
            Relation::Ctb => "ctb",
            Relation::Inc => "inc",
            Relation::Po => "po",
        }
    }
}

impl fmt::Display for Relation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Dense index of a node within a [`HeteroGraph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct NodeIdx(pub usize);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeInfo {
    pub id: String,
    #[serde(rename = "type")]
    pub ty: NodeType,
    /// Position among nodes of the same type; selects the embedding column.
    pub local: usize,
}

/// Records node queries so tests can prove which nodes evaluation touched.
#[derive(Debug, Clone, Default)]
pub struct AccessRecorder {
    log: Arc<Mutex<Vec<(NodeType, String)>>>,
}

impl AccessRecorder {
    pub fn record(&self, ty: NodeType, id: &str) {
        self.log.lock().unwrap().push((ty, id.to_string()));
    }

    pub fn entries(&self) -> Vec<(NodeType, String)> {
        self.log.lock().unwrap().clone()
    }

    pub fn clear(&self) {
        self.log.lock().unwrap().clear();
    }
}

/// Immutable typed graph. Every relation is stored together with its inverse.
#[derive(Debug, Clone)]
pub struct HeteroGraph {
    nodes: Vec<NodeInfo>,
    by_type: [Vec<NodeIdx>; 5],
    lookup: [HashMap<String, NodeIdx>; 5],
    adjacency: [Vec<Vec<NodeIdx>>; 4],
    recorder: Option<AccessRecorder>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GraphStats {
    pub nodes: HashMap<String, usize>,
    pub edges: HashMap<String, usize>,
}

#[derive(Serialize, Deserialize)]
struct GraphFile {
    format_version: u32,
    nodes: Vec<NodeInfo>,
    adjacency: HashMap<Relation, Vec<Vec<usize>>>,
}

struct GraphBuilder {
    nodes: Vec<NodeInfo>,
    by_type: [Vec<NodeIdx>; 5],
    lookup: [HashMap<String, NodeIdx>; 5],
    adjacency: [Vec<Vec<NodeIdx>>; 4],
}

impl GraphBuilder {
    fn new() -> Self {
        GraphBuilder {
            nodes: Vec::new(),
            by_type: Default::default(),
            lookup: Default::default(),
            adjacency: Default::default(),
        }
    }

    fn add_node(&mut self, ty: NodeType, id: &str) -> Result<NodeIdx> {
        if self.lookup[ty.index()].contains_key(id) {
            return Err(Error::Config(format!("duplicate {ty} node `{id}`")));
        }
        let idx = NodeIdx(self.nodes.len());
        self.nodes.push(NodeInfo {
            id: id.to_string(),
            ty,
            local: self.by_type[ty.index()].len(),
        });
        self.by_type[ty.index()].push(idx);
        self.lookup[ty.index()].insert(id.to_string(), idx);
        for adj in &mut self.adjacency {
            adj.push(Vec::new());
        }
        Ok(idx)
    }

    fn add_edge(&mut self, from: NodeIdx, rel: Relation, to: NodeIdx) {
        debug_assert!(rel.connects(self.nodes[from.0].ty, self.nodes[to.0].ty));
        self.adjacency[rel.index()][from.0].push(to);
        self.adjacency[rel.inverse().index()][to.0].push(from);
    }

    fn finish(self) -> HeteroGraph {
        HeteroGraph {
            nodes: self.nodes,
            by_type: self.by_type,
            lookup: self.lookup,
            adjacency: self.adjacency,
            recorder: None,
        }
    }
}

/// Builds the network from the hierarchy and training facts only.
pub fn build_citation_graph(
    train_facts: &[FactDocument],
    hierarchy: &StatuteHierarchy,
) -> Result<HeteroGraph> {
    let mut b = GraphBuilder::new();
    let act = b.add_node(NodeType::Act, &hierarchy.act)?;
    for c in &hierarchy.chapters {
        let ci = b.add_node(NodeType::Chapter, &c.id)?;
        b.add_edge(act, Relation::Inc, ci);
    }
    for t in &hierarchy.topics {
        let ti = b.add_node(NodeType::Topic, &t.id)?;
        let ci = b.lookup[NodeType::Chapter.index()][&t.parent];
        b.add_edge(ci, Relation::Inc, ti);
    }
    for s in &hierarchy.sections {
        let si = b.add_node(NodeType::Section, &s.id)?;
        let ti = b.lookup[NodeType::Topic.index()][&s.parent_topic];
        b.add_edge(ti, Relation::Inc, si);
    }
    for f in train_facts {
        let fi = b.add_node(NodeType::Fact, &f.id)?;
        for l in &f.labels {
            let si = *b.lookup[NodeType::Section.index()]
                .get(l)
                .ok_or_else(|| Error::UnknownSection(l.clone()))?;
            b.add_edge(fi, Relation::Ct, si);
        }
    }
    Ok(b.finish())
}

impl HeteroGraph {
    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn count(&self, ty: NodeType) -> usize {
        self.by_type[ty.index()].len()
    }

    pub fn nodes_of(&self, ty: NodeType) -> &[NodeIdx] {
        &self.by_type[ty.index()]
    }

    pub fn info(&self, n: NodeIdx) -> &NodeInfo {
        &self.nodes[n.0]
    }

    pub fn node_type(&self, n: NodeIdx) -> NodeType {
        self.nodes[n.0].ty
    }

    /// Resolves a typed id. Unknown ids are a hard error.
    pub fn node(&self, ty: NodeType, id: &str) -> Result<NodeIdx> {
        if let Some(r) = &self.recorder {
            r.record(ty, id);
        }
        self.lookup[ty.index()]
            .get(id)
            .copied()
            .ok_or_else(|| Error::UnknownNode(format!("{ty}:{id}")))
    }

    pub fn contains(&self, ty: NodeType, id: &str) -> bool {
        self.lookup[ty.index()].contains_key(id)
    }

    /// Out-neighbors of `n` along `rel`.
    pub fn neighbors(&self, n: NodeIdx, rel: Relation) -> &[NodeIdx] {
        if let Some(r) = &self.recorder {
            let info = &self.nodes[n.0];
            r.record(info.ty, &info.id);
        }
        &self.adjacency[rel.index()][n.0]
    }

    pub fn has_edge(&self, from: NodeIdx, rel: Relation, to: NodeIdx) -> bool {
        self.adjacency[rel.index()][from.0].contains(&to)
    }

    pub fn edge_count(&self, rel: Relation) -> usize {
        self.adjacency[rel.index()].iter().map(Vec::len).sum()
    }

    /// Starts logging every node query; returns the shared log.
    pub fn enable_recording(&mut self) -> AccessRecorder {
        let r = AccessRecorder::default();
        self.recorder = Some(r.clone());
        r
    }

    pub fn disable_recording(&mut self) {
        self.recorder = None;
    }

    pub fn stats(&self) -> GraphStats {
        GraphStats {
            nodes: NodeType::ALL
                .iter()
                .map(|t| (t.code().to_string(), self.count(*t)))
                .collect(),
            edges: Relation::ALL
                .iter()
                .map(|r| (r.name().to_string(), self.edge_count(*r)))
                .collect(),
        }
    }

    /// Checks the inverse-pair and typing invariants.
    pub fn check_invariants(&self) -> Result<()> {
        for rel in Relation::ALL {
            for (u, outs) in self.adjacency[rel.index()].iter().enumerate() {
                for &v in outs {
                    if !rel.connects(self.nodes[u].ty, self.nodes[v.0].ty) {
                        return Err(Error::Config(format!(
                            "illegal {rel} edge {} -> {}",
                            self.nodes[u].id, self.nodes[v.0].id
                        )));
                    }
                    if !self.has_edge(v, rel.inverse(), NodeIdx(u)) {
                        return Err(Error::Config(format!(
                            "{rel} edge {} -> {} has no inverse",
                            self.nodes[u].id, self.nodes[v.0].id
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        let adjacency = Relation::ALL
            .iter()
            .map(|r| {
                let lists = self.adjacency[r.index()]
                    .iter()
                    .map(|l| l.iter().map(|n| n.0).collect())
                    .collect();
                (*r, lists)
            })
            .collect();
        let file = GraphFile {
            format_version: GRAPH_FORMAT_VERSION,
            nodes: self.nodes.clone(),
            adjacency,
        };
        Ok(serde_json::to_string(&file)?)
    }

    pub fn from_json(json: &str) -> Result<Self> {
        let file: GraphFile = serde_json::from_str(json)?;
        if file.format_version != GRAPH_FORMAT_VERSION {
            return Err(Error::Config(format!(
                "unsupported graph format version {}",
                file.format_version
            )));
        }
        let mut b = GraphBuilder::new();
        for n in &file.nodes {
            b.add_node(n.ty, &n.id)?;
        }
        for rel in Relation::ALL {
            let lists = file
                .adjacency
                .get(&rel)
                .ok_or_else(|| Error::Config(format!("graph file lacks `{rel}` adjacency")))?;
            if lists.len() != b.nodes.len() {
                return Err(Error::Config(format!("`{rel}` adjacency has wrong length")));
            }
            for (u, outs) in lists.iter().enumerate() {
                for &v in outs {
                    if v >= b.nodes.len() {
                        return Err(Error::Config(format!("`{rel}` edge to missing node {v}")));
                    }
                    b.adjacency[rel.index()][u].push(NodeIdx(v));
                }
            }
        }
        let g = b.finish();
        g.check_invariants()?;
        Ok(g)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let json = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&json)
    }
}

/// A declared node-type and relation sequence that starts and ends on the same type.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MetapathSchema {
    pub id: String,
    pub node_types: Vec<NodeType>,
    pub relations: Vec<Relation>,
}

impl MetapathSchema {
    pub fn new(id: &str, node_types: Vec<NodeType>, relations: Vec<Relation>) -> Result<Self> {
        let s = MetapathSchema {
            id: id.to_string(),
            node_types,
            relations,
        };
        s.validate()?;
        Ok(s)
    }

    /// Parses the dash notation `S-ctb-F-ct-S`.
    pub fn parse(notation: &str) -> Result<Self> {
        let parts: Vec<&str> = notation.split('-').collect();
        let bad = || Error::Config(format!("bad metapath `{notation}`"));
        if parts.len() < 3 || parts.len() % 2 == 0 {
            return Err(bad());
        }
        let mut types = Vec::new();
        let mut rels = Vec::new();
        for (i, p) in parts.iter().enumerate() {
            if i % 2 == 0 {
                types.push(match *p {
                    "A" => NodeType::Act,
                    "C" => NodeType::Chapter,
                    "T" => NodeType::Topic,
                    "S" => NodeType::Section,
                    "F" => NodeType::Fact,
                    _ => return Err(bad()),
                });
            } else {
                rels.push(match *p {
                    "ct" => Relation::Ct,
                    "ctb" => Relation::Ctb,
                    "inc" => Relation::Inc,
                    "po" => Relation::Po,
                    _ => return Err(bad()),
                });
            }
        }
        Self::new(notation, types, rels)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.node_types.len();
        if n < 2 || self.relations.len() != n - 1 {
            return Err(Error::Config(format!("schema `{}` has inconsistent length", self.id)));
        }
        if self.node_types[0] != self.node_types[n - 1] {
            return Err(Error::Config(format!(
                "schema `{}` must start and end on the same node type",
                self.id
            )));
        }
        for (i, r) in self.relations.iter().enumerate() {
            if !r.connects(self.node_types[i], self.node_types[i + 1]) {
                return Err(Error::Config(format!(
                    "schema `{}`: illegal step {} -{}-> {}",
                    self.id,
                    self.node_types[i],
                    r,
                    self.node_types[i + 1]
                )));
            }
        }
        Ok(())
    }

    pub fn side(&self) -> NodeType {
        self.node_types[0]
    }

    /// Number of hops M; instances have M + 1 nodes.
    pub fn len(&self) -> usize {
        self.relations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.relations.is_empty()
    }

    pub fn notation(&self) -> String {
        let mut s = self.node_types[0].to_string();
        for (r, t) in self.relations.iter().zip(&self.node_types[1..]) {
            s.push_str(&format!("-{r}-{t}"));
        }
        s
    }
}

/// The four Section-side and four Fact-side schemas, Section side first.
pub fn default_schemas() -> Vec<MetapathSchema> {
    [
        "S-ctb-F-ct-S",
        "S-po-T-inc-S",
        "S-po-T-po-C-inc-T-inc-S",
        "S-po-T-po-C-po-A-inc-C-inc-T-inc-S",
        "F-ct-S-ctb-F",
        "F-ct-S-po-T-inc-S-ctb-F",
        "F-ct-S-po-T-po-C-inc-T-inc-S-ctb-F",
        "F-ct-S-po-T-po-C-po-A-inc-C-inc-T-inc-S-ctb-F",
    ]
    .iter()
    .map(|s| MetapathSchema::parse(s).expect("built-in schema is legal"))
    .collect()
}

/// Concrete node path `n_0 … n_M` with `n_M` the target and `n_0` the neighbor.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct MetapathInstance {
    pub schema: String,
    pub nodes: Vec<NodeIdx>,
}

impl MetapathInstance {
    pub fn target(&self) -> NodeIdx {
        *self.nodes.last().unwrap()
    }

    pub fn neighbor(&self) -> NodeIdx {
        self.nodes[0]
    }
}

/// Type and relation check per step.
pub fn conforms(g: &HeteroGraph, inst: &MetapathInstance, p: &MetapathSchema) -> bool {
    inst.schema == p.id
        && inst.nodes.len() == p.node_types.len()
        && inst
            .nodes
            .iter()
            .zip(&p.node_types)
            .all(|(n, t)| n.0 < g.num_nodes() && g.node_type(*n) == *t)
        && inst
            .nodes
            .windows(2)
            .zip(&p.relations)
            .all(|(w, r)| g.has_edge(w[0], *r, w[1]))
}

/// Every instance of `p` ending at `v`, by depth-first expansion. Exponential
/// on long schemas; intended as a reference for small graphs.
pub fn enumerate_instances(g: &HeteroGraph, v: NodeIdx, p: &MetapathSchema) -> Vec<MetapathInstance> {
    let m = p.len();
    let mut out = Vec::new();
    if g.node_type(v) != p.node_types[m] {
        return out;
    }
    let mut rev_path = vec![v];
    fn expand(
        g: &HeteroGraph,
        p: &MetapathSchema,
        pos: usize,
        rev_path: &mut Vec<NodeIdx>,
        out: &mut Vec<MetapathInstance>,
    ) {
        if pos == 0 {
            let mut nodes = rev_path.clone();
            nodes.reverse();
            out.push(MetapathInstance {
                schema: p.id.clone(),
                nodes,
            });
            return;
        }
        let cur = *rev_path.last().unwrap();
        let rel = p.relations[pos - 1].inverse();
        for &prev in g.neighbors(cur, rel) {
            if g.node_type(prev) != p.node_types[pos - 1] {
                continue;
            }
            rev_path.push(prev);
            expand(g, p, pos - 1, rev_path, out);
            rev_path.pop();
        }
    }
    expand(g, p, m, &mut rev_path, &mut out);
    out
}

/// Per-schema table of which nodes can still complete a backward walk.
#[derive(Debug, Clone)]
pub struct MetapathSampler {
    schemas: Vec<MetapathSchema>,
    /// `viable[s][i][n]`: node `n` at position `i` of schema `s` can reach position 0.
    viable: Vec<Vec<Vec<bool>>>,
}

const MAX_WALK_ATTEMPTS: usize = 32;

impl MetapathSampler {
    pub fn new(g: &HeteroGraph, schemas: &[MetapathSchema]) -> Self {
        let viable = schemas.iter().map(|p| viability(g, p)).collect();
        MetapathSampler {
            schemas: schemas.to_vec(),
            viable,
        }
    }

    pub fn schemas(&self) -> &[MetapathSchema] {
        &self.schemas
    }

    pub fn has_instance(&self, schema: usize, v: NodeIdx) -> bool {
        let m = self.schemas[schema].len();
        self.viable[schema][m][v.0]
    }

    /// Up to `k` instances drawn with replacement by random typed walks from
    /// `v`. Each step picks uniformly among typed neighbors that can still
    /// complete the schema. Nodes in `exclude` may only appear as the target.
    pub fn sample(
        &self,
        g: &HeteroGraph,
        schema: usize,
        v: NodeIdx,
        k: usize,
        seed: u64,
        exclude: Option<&HashSet<NodeIdx>>,
    ) -> Vec<MetapathInstance> {
        if !self.has_instance(schema, v) {
            return Vec::new();
        }
        let p = &self.schemas[schema];
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, v.0 as u64, schema as u64));
        let mut out = Vec::with_capacity(k);
        'draws: for _ in 0..k {
            'attempt: for _ in 0..MAX_WALK_ATTEMPTS {
                let mut rev = vec![v];
                let mut cur = v;
                for pos in (1..=p.len()).rev() {
                    let rel = p.relations[pos - 1].inverse();
                    let candidates: Vec<NodeIdx> = g
                        .neighbors(cur, rel)
                        .iter()
                        .copied()
                        .filter(|n| self.viable[schema][pos - 1][n.0])
                        .filter(|n| exclude.map_or(true, |ex| !ex.contains(n)))
                        .collect();
                    match candidates.choose(&mut rng) {
                        Some(&n) => {
                            rev.push(n);
                            cur = n;
                        }
                        None => continue 'attempt,
                    }
                }
                rev.reverse();
                out.push(MetapathInstance {
                    schema: p.id.clone(),
                    nodes: rev,
                });
                continue 'draws;
            }
            // Exclusions left no completable walk.
            return Vec::new();
        }
        out
    }
}

fn viability(g: &HeteroGraph, p: &MetapathSchema) -> Vec<Vec<bool>> {
    let n = g.num_nodes();
    let mut table = vec![vec![false; n]; p.len() + 1];
    for i in 0..n {
        table[0][i] = g.node_type(NodeIdx(i)) == p.node_types[0];
    }
    for pos in 1..=p.len() {
        let rel = p.relations[pos - 1].inverse();
        for i in 0..n {
            let node = NodeIdx(i);
            if g.node_type(node) != p.node_types[pos] {
                continue;
            }
            table[pos][i] = g.adjacency[rel.index()][i]
                .iter()
                .any(|prev| table[pos - 1][prev.0]);
        }
    }
    table
}

/// Mixes the root seed with a node index and a schema index.
pub fn derive_seed(seed: u64, node: u64, schema: u64) -> u64 {
    let mut z = seed
        ^ node.wrapping_mul(0x9E37_79B9_7F4A_7C15)
        ^ schema.wrapping_mul(0xC2B2_AE3D_27D4_EB4F);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Samples `k` instances of `p` for `v` without a precomputed sampler.
pub fn sample_instances(
    g: &HeteroGraph,
    v: NodeIdx,
    p: &MetapathSchema,
    k: usize,
    seed: u64,
) -> Vec<MetapathInstance> {
    assert!(k >= 1, "k must be at least 1");
    if v.0 >= g.num_nodes() || g.node_type(v) != p.node_types[p.len()] {
        return Vec::new();
    }
    MetapathSampler::new(g, std::slice::from_ref(p)).sample(g, 0, v, k, seed, None)
}
