//! Building graphs, their time expansion, exit graphs and nearest-exit paths.

use std::collections::{BTreeSet, BinaryHeap, HashMap, VecDeque};
use std::cmp::Reverse;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::behavior::BehaviorSpec;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum GraphError {
    #[error("no vertices")]
    NoVertices,
    #[error("duplicate vertex `{0}`")]
    DuplicateVertex(String),
    #[error("id `{0}` must be nonempty and must not contain '-'")]
    BadId(String),
    #[error("edge {edge} references unknown vertex `{vertex}`")]
    UnknownVertex { edge: String, vertex: String },
    #[error("self-loop on `{0}`")]
    SelfLoop(String),
    #[error("duplicate edge {0}")]
    DuplicateEdge(String),
    #[error("edge {0}: travel time must be ≥ 1")]
    ZeroTravelTime(String),
    #[error("no exits")]
    NoExits,
    #[error("exit `{exit}` has capacity {capacity} < population {population}")]
    ExitCapacity {
        exit: String,
        capacity: u64,
        population: usize,
    },
    #[error("duplicate person `{0}`")]
    DuplicatePerson(String),
    #[error("person `{person}` is at unknown location `{at}`")]
    UnknownLocation { person: String, at: String },
    #[error("deadline {deadline} exceeds t_max {t_max}")]
    DeadlineAfterHorizon { deadline: u32, t_max: u32 },
    #[error("invalid behavior: {0}")]
    Behavior(String),
    #[error("invalid generator parameters: {0}")]
    Generator(String),
    #[error("malformed document: {0}")]
    Json(String),
}

/// A location: a vertex or an edge, by index.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Loc {
    Vertex(usize),
    Edge(usize),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vertex {
    pub id: String,
    pub capacity: u64,
    pub exit: bool,
}

/// Undirected edge; `u` is its canonical first endpoint.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Edge {
    pub u: usize,
    pub v: usize,
    pub capacity: u64,
    pub travel_time: u32,
}

impl Edge {
    pub fn other(&self, x: usize) -> usize {
        if x == self.u {
            self.v
        } else {
            self.u
        }
    }

    pub fn touches(&self, x: usize) -> bool {
        self.u == x || self.v == x
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BuildingGraph {
    pub vertices: Vec<Vertex>,
    pub edges: Vec<Edge>,
    index: HashMap<String, usize>,
    pairs: HashMap<(usize, usize), usize>,
    /// Per vertex: (neighbor, edge), ordered by neighbor index.
    adj: Vec<Vec<(usize, usize)>>,
}

fn valid_id(id: &str) -> bool {
    !id.is_empty() && !id.contains('-') && !id.chars().any(char::is_whitespace)
}

impl BuildingGraph {
    pub fn new(vertices: Vec<Vertex>, edges: Vec<Edge>) -> Result<Self, GraphError> {
        if vertices.is_empty() {
            return Err(GraphError::NoVertices);
        }
        let mut index = HashMap::new();
        for (i, v) in vertices.iter().enumerate() {
            if !valid_id(&v.id) {
                return Err(GraphError::BadId(v.id.clone()));
            }
            if index.insert(v.id.clone(), i).is_some() {
                return Err(GraphError::DuplicateVertex(v.id.clone()));
            }
        }
        let n = vertices.len();
        let mut pairs = HashMap::new();
        let mut adj = vec![Vec::new(); n];
        for (k, e) in edges.iter().enumerate() {
            let name = || {
                let id = |x: usize| vertices.get(x).map_or("?", |v| v.id.as_str());
                format!("{}-{}", id(e.u), id(e.v))
            };
            if e.u >= n || e.v >= n {
                return Err(GraphError::UnknownVertex {
                    edge: name(),
                    vertex: "?".into(),
                });
            }
            if e.u == e.v {
                return Err(GraphError::SelfLoop(vertices[e.u].id.clone()));
            }
            if e.travel_time == 0 {
                return Err(GraphError::ZeroTravelTime(name()));
            }
            let key = (e.u.min(e.v), e.u.max(e.v));
            if pairs.insert(key, k).is_some() {
                return Err(GraphError::DuplicateEdge(name()));
            }
            adj[e.u].push((e.v, k));
            adj[e.v].push((e.u, k));
        }
        for list in &mut adj {
            list.sort_unstable();
        }
        Ok(BuildingGraph {
            vertices,
            edges,
            index,
            pairs,
            adj,
        })
    }

    pub fn num_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn vertex(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn id(&self, v: usize) -> &str {
        &self.vertices[v].id
    }

    pub fn is_exit(&self, v: usize) -> bool {
        self.vertices[v].exit
    }

    pub fn exits(&self) -> Vec<usize> {
        (0..self.num_vertices()).filter(|&v| self.is_exit(v)).collect()
    }

    pub fn edge_between(&self, a: usize, b: usize) -> Option<usize> {
        self.pairs.get(&(a.min(b), a.max(b))).copied()
    }

    pub fn neighbors(&self, v: usize) -> &[(usize, usize)] {
        &self.adj[v]
    }

    /// `u-v` in canonical orientation.
    pub fn edge_name(&self, e: usize) -> String {
        let edge = &self.edges[e];
        format!("{}-{}", self.id(edge.u), self.id(edge.v))
    }

    pub fn loc_name(&self, loc: Loc) -> String {
        match loc {
            Loc::Vertex(v) => self.id(v).to_string(),
            Loc::Edge(e) => self.edge_name(e),
        }
    }

    /// Parses `v3` or `v6-v3` (either orientation).
    pub fn parse_loc(&self, text: &str) -> Option<Loc> {
        let text = text.trim();
        match text.split_once('-') {
            None => self.vertex(text).map(Loc::Vertex),
            Some((a, b)) => {
                let e = self.edge_between(self.vertex(a.trim())?, self.vertex(b.trim())?)?;
                Some(Loc::Edge(e))
            }
        }
    }

    pub fn loc_exists(&self, loc: Loc) -> bool {
        match loc {
            Loc::Vertex(v) => v < self.num_vertices(),
            Loc::Edge(e) => e < self.num_edges(),
        }
    }

    /// Hop distances from `src`; BFS does not pass through `blocked` vertices
    /// (they are still reached).
    pub fn hop_distances(&self, src: usize, blocked: &dyn Fn(usize) -> bool) -> Vec<Option<u32>> {
        let mut dist = vec![None; self.num_vertices()];
        dist[src] = Some(0);
        let mut queue = VecDeque::from([src]);
        while let Some(x) = queue.pop_front() {
            if x != src && blocked(x) {
                continue;
            }
            let dx = dist[x].expect("queued vertices have a distance");
            for &(w, _) in &self.adj[x] {
                if dist[w].is_none() {
                    dist[w] = Some(dx + 1);
                    queue.push_back(w);
                }
            }
        }
        dist
    }

    /// Travel-time shortest distances from `src` (Dijkstra).
    pub fn travel_distances(&self, src: usize) -> Vec<Option<u64>> {
        let mut dist: Vec<Option<u64>> = vec![None; self.num_vertices()];
        let mut heap = BinaryHeap::from([Reverse((0u64, src))]);
        dist[src] = Some(0);
        while let Some(Reverse((d, x))) = heap.pop() {
            if dist[x].is_some_and(|best| d > best) {
                continue;
            }
            for &(w, e) in &self.adj[x] {
                let nd = d + u64::from(self.edges[e].travel_time);
                if dist[w].is_none_or(|old| nd < old) {
                    dist[w] = Some(nd);
                    heap.push(Reverse((nd, w)));
                }
            }
        }
        dist
    }

    /// Induced subgraph on `keep` (parent indices, kept in the given order).
    /// Exits are replaced by `exits` (parent indices).
    pub fn induced(&self, keep: &[usize], exits: &[usize]) -> (BuildingGraph, Vec<usize>) {
        let mut local = vec![usize::MAX; self.num_vertices()];
        for (i, &v) in keep.iter().enumerate() {
            local[v] = i;
        }
        let vertices = keep
            .iter()
            .map(|&v| Vertex {
                id: self.vertices[v].id.clone(),
                capacity: self.vertices[v].capacity,
                exit: exits.contains(&v),
            })
            .collect();
        let edges = self
            .edges
            .iter()
            .filter(|e| local[e.u] != usize::MAX && local[e.v] != usize::MAX)
            .map(|e| Edge {
                u: local[e.u],
                v: local[e.v],
                capacity: e.capacity,
                travel_time: e.travel_time,
            })
            .collect();
        let g = BuildingGraph::new(vertices, edges).expect("induced subgraph of a valid graph");
        (g, keep.to_vec())
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Person {
    pub id: String,
    pub at: Loc,
}

/// A planning instance: building, initial state and planning horizon.
#[derive(Clone, Debug, PartialEq)]
pub struct Instance {
    pub graph: BuildingGraph,
    pub people: Vec<Person>,
    pub t_max: Option<u32>,
    pub deadline: Option<u32>,
    pub behavior: Option<BehaviorSpec>,
}

impl Instance {
    pub fn population(&self) -> usize {
        self.people.len()
    }

    pub fn initial_state(&self) -> Vec<Loc> {
        self.people.iter().map(|p| p.at).collect()
    }

    pub fn person_ids(&self) -> Vec<String> {
        self.people.iter().map(|p| p.id.clone()).collect()
    }

    /// Head-count per vertex at t = 0 (edge-resident persons excluded).
    pub fn initial_counts(&self) -> Vec<u64> {
        let mut counts = vec![0; self.graph.num_vertices()];
        for p in &self.people {
            if let Loc::Vertex(v) = p.at {
                counts[v] += 1;
            }
        }
        counts
    }

    pub fn to_json(&self) -> serde_json::Value {
        let g = &self.graph;
        let doc = InstanceDoc {
            vertices: g
                .vertices
                .iter()
                .map(|v| VertexDoc {
                    id: v.id.clone(),
                    capacity: v.capacity,
                    exit: v.exit,
                })
                .collect(),
            edges: g
                .edges
                .iter()
                .map(|e| EdgeDoc {
                    u: g.id(e.u).to_string(),
                    v: g.id(e.v).to_string(),
                    capacity: e.capacity,
                    travel_time: e.travel_time,
                })
                .collect(),
            people: self
                .people
                .iter()
                .map(|p| PersonDoc {
                    id: p.id.clone(),
                    at: g.loc_name(p.at),
                })
                .collect(),
            t_max: self.t_max,
            deadline: self.deadline,
            behavior: self.behavior.as_ref().map(BehaviorSpec::to_json),
        };
        serde_json::to_value(doc).expect("instance serializes")
    }
}

#[derive(Serialize, Deserialize)]
struct VertexDoc {
    id: String,
    capacity: u64,
    #[serde(default)]
    exit: bool,
}

#[derive(Serialize, Deserialize)]
struct EdgeDoc {
    u: String,
    v: String,
    capacity: u64,
    travel_time: u32,
}

#[derive(Serialize, Deserialize)]
struct PersonDoc {
    id: String,
    at: String,
}

#[derive(Serialize, Deserialize)]
struct InstanceDoc {
    vertices: Vec<VertexDoc>,
    #[serde(default)]
    edges: Vec<EdgeDoc>,
    #[serde(default)]
    people: Vec<PersonDoc>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    t_max: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    deadline: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    behavior: Option<serde_json::Value>,
}

fn graph_from_doc(doc: &InstanceDoc) -> Result<BuildingGraph, GraphError> {
    let vertices: Vec<Vertex> = doc
        .vertices
        .iter()
        .map(|v| Vertex {
            id: v.id.clone(),
            capacity: v.capacity,
            exit: v.exit,
        })
        .collect();
    let mut index = HashMap::new();
    for (i, v) in vertices.iter().enumerate() {
        index.entry(v.id.clone()).or_insert(i);
    }
    let mut edges = Vec::with_capacity(doc.edges.len());
    for e in &doc.edges {
        let find = |id: &str| {
            index.get(id).copied().ok_or_else(|| GraphError::UnknownVertex {
                edge: format!("{}-{}", e.u, e.v),
                vertex: id.to_string(),
            })
        };
        edges.push(Edge {
            u: find(&e.u)?,
            v: find(&e.v)?,
            capacity: e.capacity,
            travel_time: e.travel_time,
        });
    }
    BuildingGraph::new(vertices, edges)
}

fn parse_doc(text: &str) -> Result<InstanceDoc, GraphError> {
    serde_json::from_str(text).map_err(|e| GraphError::Json(e.to_string()))
}

/// Parses only the building part of an instance document.
pub fn load_graph(text: &str) -> Result<BuildingGraph, GraphError> {
    graph_from_doc(&parse_doc(text)?)
}

/// Parses and validates a full instance document.
pub fn load_instance(text: &str) -> Result<Instance, GraphError> {
    let doc = parse_doc(text)?;
    let graph = graph_from_doc(&doc)?;
    let exits = graph.exits();
    if exits.is_empty() {
        return Err(GraphError::NoExits);
    }
    let mut seen = BTreeSet::new();
    let mut people = Vec::with_capacity(doc.people.len());
    for p in &doc.people {
        if !valid_id(&p.id) {
            return Err(GraphError::BadId(p.id.clone()));
        }
        if !seen.insert(p.id.clone()) {
            return Err(GraphError::DuplicatePerson(p.id.clone()));
        }
        let at = graph.parse_loc(&p.at).ok_or_else(|| GraphError::UnknownLocation {
            person: p.id.clone(),
            at: p.at.clone(),
        })?;
        people.push(Person {
            id: p.id.clone(),
            at,
        });
    }
    for &x in &exits {
        if (graph.vertices[x].capacity as usize) < people.len() {
            return Err(GraphError::ExitCapacity {
                exit: graph.id(x).to_string(),
                capacity: graph.vertices[x].capacity,
                population: people.len(),
            });
        }
    }
    if let (Some(d), Some(t)) = (doc.deadline, doc.t_max) {
        if d > t {
            return Err(GraphError::DeadlineAfterHorizon {
                deadline: d,
                t_max: t,
            });
        }
    }
    let behavior = doc
        .behavior
        .as_ref()
        .map(BehaviorSpec::from_json)
        .transpose()
        .map_err(|e| GraphError::Behavior(e.to_string()))?;
    Ok(Instance {
        graph,
        people,
        t_max: doc.t_max,
        deadline: doc.deadline,
        behavior,
    })
}

/// A node of the time-expanded graph.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Node {
    Vertex(usize),
    /// Position `k` (1-based, counted from the edge's first endpoint) on an
    /// edge with travel time at least 2. Slot 1 is e′, slot d−1 is e″.
    Slot { edge: usize, k: u32 },
}

/// A one-tick move between adjacent expanded nodes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Arc {
    pub from: usize,
    pub to: usize,
    pub edge: usize,
}

/// Edges with travel time d ≥ 2 become chains of d−1 slot nodes so that
/// every move takes exactly one tick.
#[derive(Clone, Debug)]
pub struct ExpandedGraph {
    pub base: BuildingGraph,
    pub nodes: Vec<Node>,
    /// Index of slot 1 for each edge (none when d = 1).
    slot_start: Vec<Option<usize>>,
    pub arcs: Vec<Arc>,
    pub out_arcs: Vec<Vec<usize>>,
    pub in_arcs: Vec<Vec<usize>>,
}

pub fn expand(g: &BuildingGraph) -> ExpandedGraph {
    let mut nodes: Vec<Node> = (0..g.num_vertices()).map(Node::Vertex).collect();
    let mut slot_start = Vec::with_capacity(g.num_edges());
    for (e, edge) in g.edges.iter().enumerate() {
        if edge.travel_time >= 2 {
            slot_start.push(Some(nodes.len()));
            for k in 1..edge.travel_time {
                nodes.push(Node::Slot { edge: e, k });
            }
        } else {
            slot_start.push(None);
        }
    }
    let mut arcs = Vec::new();
    let mut push = |from: usize, to: usize, edge: usize| {
        if from < g.num_vertices() && g.is_exit(from) {
            return;
        }
        arcs.push(Arc { from, to, edge });
    };
    for (e, edge) in g.edges.iter().enumerate() {
        match slot_start[e] {
            None => {
                push(edge.u, edge.v, e);
                push(edge.v, edge.u, e);
            }
            Some(s) => {
                let last = s + edge.travel_time as usize - 2;
                push(edge.u, s, e);
                push(s, edge.u, e);
                for k in s..last {
                    push(k, k + 1, e);
                    push(k + 1, k, e);
                }
                push(last, edge.v, e);
                push(edge.v, last, e);
            }
        }
    }
    let mut out_arcs = vec![Vec::new(); nodes.len()];
    let mut in_arcs = vec![Vec::new(); nodes.len()];
    for (i, a) in arcs.iter().enumerate() {
        out_arcs[a.from].push(i);
        in_arcs[a.to].push(i);
    }
    ExpandedGraph {
        base: g.clone(),
        nodes,
        slot_start,
        arcs,
        out_arcs,
        in_arcs,
    }
}

impl ExpandedGraph {
    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    /// Node of slot `k` (1-based from the first endpoint) on edge `e`.
    pub fn slot(&self, e: usize, k: u32) -> Option<usize> {
        let d = self.base.edges[e].travel_time;
        match self.slot_start[e] {
            Some(s) if k >= 1 && k < d => Some(s + k as usize - 1),
            _ => None,
        }
    }

    /// Slot at distance `k` from endpoint `from` along `e`.
    pub fn slot_from(&self, e: usize, from: usize, k: u32) -> Option<usize> {
        let edge = &self.base.edges[e];
        if from == edge.u {
            self.slot(e, k)
        } else {
            self.slot(e, edge.travel_time.checked_sub(k)?)
        }
    }

    /// The (e′, e″) pair of an edge with travel time ≥ 2.
    pub fn virtual_pair(&self, e: usize) -> Option<(usize, usize)> {
        let d = self.base.edges[e].travel_time;
        Some((self.slot(e, 1)?, self.slot(e, d - 1)?))
    }

    /// Ticks between e′ and e″.
    pub fn internal_time(&self, e: usize) -> Option<u32> {
        let d = self.base.edges[e].travel_time;
        (d >= 2).then(|| d - 2)
    }

    pub fn slots_of(&self, e: usize) -> Vec<usize> {
        let d = self.base.edges[e].travel_time;
        (1..d).filter_map(|k| self.slot(e, k)).collect()
    }

    /// `v1`, `v1-v5'`, `v1-v5''` or `v1-v5#k` for interior slots.
    pub fn node_name(&self, n: usize) -> String {
        match self.nodes[n] {
            Node::Vertex(v) => self.base.id(v).to_string(),
            Node::Slot { edge, k } => {
                let d = self.base.edges[edge].travel_time;
                let name = self.base.edge_name(edge);
                if k == 1 {
                    format!("{name}'")
                } else if k == d - 1 {
                    format!("{name}''")
                } else {
                    format!("{name}#{k}")
                }
            }
        }
    }

    pub fn arc_name(&self, a: usize) -> String {
        let arc = &self.arcs[a];
        format!("{}>{}", self.node_name(arc.from), self.node_name(arc.to))
    }

    /// Arc from `from` to `to`, if any.
    pub fn arc_between(&self, from: usize, to: usize) -> Option<usize> {
        self.out_arcs[from]
            .iter()
            .copied()
            .find(|&a| self.arcs[a].to == to)
    }

    /// Drops the slot chains and returns the building graph.
    pub fn contract(&self) -> BuildingGraph {
        self.base.clone()
    }
}

/// A radius-κ neighbourhood of an exit, with that exit as the only exit.
#[derive(Clone, Debug)]
pub struct ExitGraph {
    pub exit: usize,
    pub radius: u32,
    pub subgraph: BuildingGraph,
    /// Subgraph vertex i is parent vertex `vertex_map[i]`.
    pub vertex_map: Vec<usize>,
    /// Parent indices of the vertices at hop distance exactly κ, ascending.
    pub entry_vertices: Vec<usize>,
    /// Hop distance to the exit per subgraph vertex.
    pub distance: Vec<u32>,
    /// BFS parent (toward the exit) per subgraph vertex, as parent indices.
    pub toward_exit: Vec<Option<usize>>,
}

impl ExitGraph {
    pub fn local(&self, parent_vertex: usize) -> Option<usize> {
        self.vertex_map.iter().position(|&v| v == parent_vertex)
    }

    pub fn contains(&self, parent_vertex: usize) -> bool {
        self.vertex_map.contains(&parent_vertex)
    }
}

/// EG(g, v, κ) with radius counted in hops; other exits of `g` are excluded.
pub fn exit_graph(g: &BuildingGraph, v: usize, kappa: u32) -> Result<ExitGraph, GraphError> {
    if v >= g.num_vertices() {
        return Err(GraphError::UnknownVertex {
            edge: String::new(),
            vertex: v.to_string(),
        });
    }
    Ok(exit_graph_excluding(g, v, kappa, &|x| g.is_exit(x)))
}

/// Like [`exit_graph`], excluding every vertex for which `excluded` holds
/// (other than `v` itself).
pub fn exit_graph_excluding(
    g: &BuildingGraph,
    v: usize,
    kappa: u32,
    excluded: &dyn Fn(usize) -> bool,
) -> ExitGraph {
    let n = g.num_vertices();
    let mut dist: Vec<Option<u32>> = vec![None; n];
    let mut parent = vec![None; n];
    dist[v] = Some(0);
    let mut queue = VecDeque::from([v]);
    while let Some(x) = queue.pop_front() {
        let dx = dist[x].expect("queued");
        if dx == kappa {
            continue;
        }
        for &(w, _) in g.neighbors(x) {
            if w == v || excluded(w) || dist[w].is_some() {
                continue;
            }
            dist[w] = Some(dx + 1);
            parent[w] = Some(x);
            queue.push_back(w);
        }
    }
    let keep: Vec<usize> = (0..n).filter(|&x| dist[x].is_some()).collect();
    let (subgraph, vertex_map) = g.induced(&keep, &[v]);
    let entry_vertices = keep
        .iter()
        .copied()
        .filter(|&x| dist[x] == Some(kappa))
        .collect();
    ExitGraph {
        exit: v,
        radius: kappa,
        subgraph,
        distance: keep.iter().map(|&x| dist[x].expect("kept")).collect(),
        toward_exit: keep.iter().map(|&x| parent[x]).collect(),
        vertex_map,
        entry_vertices,
    }
}

/// Deterministic shortest paths (by travel time) to the nearest exit.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NearestExitTable {
    pub exit: Vec<Option<usize>>,
    /// Vertex sequence of Π(v); just `[v]` for exits and unreachable vertices.
    pub path: Vec<Vec<usize>>,
    /// Cumulative travel time along `path`.
    pub times: Vec<Vec<u64>>,
}

impl NearestExitTable {
    /// T(b, j): time to reach `j` along Π(b), or `None` when j ∉ Π(b).
    pub fn time(&self, b: usize, j: usize) -> Option<u64> {
        self.path[b]
            .iter()
            .position(|&x| x == j)
            .map(|i| self.times[b][i])
    }

    pub fn reaches_exit(&self, v: usize) -> bool {
        self.exit[v].is_some()
    }

    pub fn distance(&self, v: usize) -> Option<u64> {
        self.exit[v].map(|_| *self.times[v].last().expect("nonempty path"))
    }
}

/// Ties on distance go to the lexicographically smallest exit id, then to
/// the lexicographically smallest next-vertex id.
pub fn nearest_exit_table(g: &BuildingGraph) -> NearestExitTable {
    let n = g.num_vertices();
    let mut exits = g.exits();
    exits.sort_by(|&a, &b| g.id(a).cmp(g.id(b)));
    let per_exit: Vec<Vec<Option<u64>>> = exits.iter().map(|&x| g.travel_distances(x)).collect();
    let mut table = NearestExitTable {
        exit: vec![None; n],
        path: vec![Vec::new(); n],
        times: vec![Vec::new(); n],
    };
    for v in 0..n {
        let best = exits
            .iter()
            .enumerate()
            .filter_map(|(i, _)| per_exit[i][v].map(|d| (d, i)))
            .min();
        let Some((_, i)) = best else {
            table.path[v] = vec![v];
            table.times[v] = vec![0];
            continue;
        };
        let x = exits[i];
        let dist = &per_exit[i];
        let mut path = vec![v];
        let mut times = vec![0];
        let mut cur = v;
        while cur != x {
            let dc = dist[cur].expect("on a shortest path");
            let (next, e) = g
                .neighbors(cur)
                .iter()
                .copied()
                .filter(|&(w, e)| {
                    dist[w].is_some_and(|dw| dw + u64::from(g.edges[e].travel_time) == dc)
                })
                .min_by(|a, b| g.id(a.0).cmp(g.id(b.0)))
                .expect("shortest path continues");
            let t = times.last().copied().unwrap_or(0) + u64::from(g.edges[e].travel_time);
            path.push(next);
            times.push(t);
            cur = next;
        }
        table.exit[v] = Some(x);
        table.path[v] = path;
        table.times[v] = times;
    }
    table
}

#[derive(Clone, Debug)]
pub struct GeneratorParams {
    pub n_vertices: usize,
    pub edge_factor: f64,
    pub n_exits: usize,
    pub population: usize,
    pub deadline: u32,
    pub t_max: Option<u32>,
    pub seed: u64,
    pub edge_capacity: (u64, u64),
    pub vertex_capacity: (u64, u64),
    pub travel_time: (u32, u32),
}

impl Default for GeneratorParams {
    fn default() -> Self {
        GeneratorParams {
            n_vertices: 20,
            edge_factor: 1.35,
            n_exits: 2,
            population: 20,
            deadline: 10,
            t_max: None,
            seed: 0,
            edge_capacity: (2, 10),
            vertex_capacity: (5, 50),
            travel_time: (1, 5),
        }
    }
}

/// Neighbouring vertex indices an edge may span; keeps corridors long.
const LOCALITY: usize = 4;

/// Random connected building: a local spanning tree plus extra local edges,
/// ⌈n·factor⌉ edges in total. People are placed uniformly on non-exit
/// vertices with room left.
pub fn generate_instance(p: &GeneratorParams) -> Result<Instance, GraphError> {
    let n = p.n_vertices;
    let fail = |m: String| Err(GraphError::Generator(m));
    if n < 2 {
        return fail("need at least 2 vertices".into());
    }
    if !(1.0..=3.0).contains(&p.edge_factor) {
        return fail(format!("edge factor {} outside [1, 3]", p.edge_factor));
    }
    if p.n_exits == 0 || p.n_exits >= n {
        return fail(format!("{} exits on {n} vertices", p.n_exits));
    }
    if p.population == 0 {
        return fail("population must be at least 1".into());
    }
    if p.edge_capacity.0 > p.edge_capacity.1
        || p.vertex_capacity.0 > p.vertex_capacity.1
        || p.travel_time.0 == 0
        || p.travel_time.0 > p.travel_time.1
    {
        return fail("empty or invalid range".into());
    }
    let target = ((n as f64) * p.edge_factor - 1e-9).ceil() as usize;
    let max_edges = n * (n - 1) / 2;
    if target < n - 1 || target > max_edges {
        return fail(format!("{target} edges cannot form a simple connected graph"));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(p.seed);
    let mut exits: Vec<usize> = (0..n).collect();
    exits.shuffle(&mut rng);
    exits.truncate(p.n_exits);
    exits.sort_unstable();
    let mut vertices: Vec<Vertex> = (0..n)
        .map(|i| Vertex {
            id: format!("v{}", i + 1),
            capacity: rng.gen_range(p.vertex_capacity.0..=p.vertex_capacity.1),
            exit: false,
        })
        .collect();
    for &x in &exits {
        vertices[x].exit = true;
        vertices[x].capacity = vertices[x].capacity.max(p.population as u64);
    }
    let room: u64 = vertices.iter().filter(|v| !v.exit).map(|v| v.capacity).sum();
    if p.population as u64 > room {
        return fail(format!(
            "population {} exceeds non-exit capacity {room}",
            p.population
        ));
    }

    let mut pairs = BTreeSet::new();
    for i in 1..n {
        let j = rng.gen_range(i.saturating_sub(LOCALITY)..i);
        pairs.insert((j, i));
    }
    let mut window = LOCALITY + 2;
    let mut stale = 0;
    while pairs.len() < target {
        let i = rng.gen_range(0..n);
        let j = rng.gen_range(i.saturating_sub(window)..=(i + window).min(n - 1));
        if i == j || !pairs.insert((i.min(j), i.max(j))) {
            stale += 1;
            if stale > 50 * n {
                window = window.saturating_mul(2).min(n);
                stale = 0;
            }
        }
    }
    let edges: Vec<Edge> = pairs
        .into_iter()
        .map(|(u, v)| Edge {
            u,
            v,
            capacity: rng.gen_range(p.edge_capacity.0..=p.edge_capacity.1),
            travel_time: rng.gen_range(p.travel_time.0..=p.travel_time.1),
        })
        .collect();
    let graph = BuildingGraph::new(vertices, edges)?;

    let mut free: Vec<u64> = graph
        .vertices
        .iter()
        .map(|v| if v.exit { 0 } else { v.capacity })
        .collect();
    let mut people = Vec::with_capacity(p.population);
    for k in 0..p.population {
        let open: Vec<usize> = (0..n).filter(|&v| free[v] > 0).collect();
        let v = *open.choose(&mut rng).expect("room checked above");
        free[v] -= 1;
        people.push(Person {
            id: format!("p{}", k + 1),
            at: Loc::Vertex(v),
        });
    }
    Ok(Instance {
        graph,
        people,
        t_max: p.t_max,
        deadline: Some(p.deadline),
        behavior: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line(d: &[u32]) -> BuildingGraph {
        let vertices = (0..=d.len())
            .map(|i| Vertex {
                id: format!("a{i}"),
                capacity: 5,
                exit: i == d.len(),
            })
            .collect();
        let edges = d
            .iter()
            .enumerate()
            .map(|(i, &t)| Edge {
                u: i,
                v: i + 1,
                capacity: 2,
                travel_time: t,
            })
            .collect();
        BuildingGraph::new(vertices, edges).unwrap()
    }

    #[test]
    fn expansion_slot_counts() {
        let g = line(&[1, 2, 3]);
        let x = expand(&g);
        assert_eq!(x.num_nodes(), 4 + 1 + 2);
        assert_eq!(x.virtual_pair(0), None);
        let (a, b) = x.virtual_pair(1).unwrap();
        assert_eq!(a, b);
        assert_eq!(x.internal_time(1), Some(0));
        assert_eq!(x.internal_time(2), Some(1));
        assert_eq!(x.node_name(x.slot(2, 1).unwrap()), "a2-a3'");
        assert_eq!(x.node_name(x.slot(2, 2).unwrap()), "a2-a3''");
        // exit a3 has no outgoing arcs
        assert!(x.out_arcs[3].is_empty());
    }

    #[test]
    fn parse_either_orientation() {
        let g = line(&[1, 2]);
        assert_eq!(g.parse_loc("a1-a2"), Some(Loc::Edge(1)));
        assert_eq!(g.parse_loc("a2-a1"), Some(Loc::Edge(1)));
        assert_eq!(g.parse_loc("a0-a2"), None);
    }

    #[test]
    fn generator_edge_count() {
        let p = GeneratorParams {
            n_vertices: 110,
            edge_factor: 1.35,
            n_exits: 2,
            population: 500,
            seed: 7,
            ..GeneratorParams::default()
        };
        let inst = generate_instance(&p).unwrap();
        assert_eq!(inst.graph.num_edges(), 149);
        assert_eq!(inst.population(), 500);
    }
}
