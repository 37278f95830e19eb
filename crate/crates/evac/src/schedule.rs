//! Per-person schedules, their validation, evacuation counts, and the
//! occupancy (head-count) view used by the integer program.

use std::collections::{BTreeMap, HashMap};
use std::fmt;

use evac_milp::{format_rational, Rational};
use num_traits::{One, Zero};
use petgraph::algo::dinics;
use petgraph::graph::{EdgeIndex, Graph, NodeIndex};
use serde_json::{json, Map, Value};

use crate::graph::{BuildingGraph, ExpandedGraph, Loc, Node};

/// `paths[p][t]` is the location of person `p` at tick `t`, for
/// `t` in `0..=horizon`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Schedule {
    pub horizon: u32,
    pub paths: Vec<Vec<Loc>>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ScheduleError {
    #[error("malformed schedule document: {0}")]
    Json(String),
    #[error("person `{0}` is missing from the schedule")]
    MissingPerson(String),
    #[error("schedule names unknown person `{0}`")]
    UnknownPerson(String),
    #[error("person `{person}` has {got} locations, expected {expected}")]
    Length {
        person: String,
        got: usize,
        expected: usize,
    },
    #[error("person `{person}` at tick {tick}: unknown location `{at}`")]
    UnknownLocation { person: String, tick: usize, at: String },
    #[error("deadline {deadline} is outside the horizon 0..={horizon}")]
    DeadlineOutOfRange { deadline: u32, horizon: u32 },
    #[error("probabilities sum to {0}, not 1")]
    ProbabilityMass(String),
}

impl Schedule {
    /// Nobody moves.
    pub fn stationary(s0: &[Loc], horizon: u32) -> Self {
        Schedule {
            horizon,
            paths: s0.iter().map(|&l| vec![l; horizon as usize + 1]).collect(),
        }
    }

    pub fn num_persons(&self) -> usize {
        self.paths.len()
    }

    pub fn at(&self, p: usize, t: u32) -> Loc {
        self.paths[p][t as usize]
    }

    pub fn initial_state(&self) -> Vec<Loc> {
        self.paths.iter().map(|p| p[0]).collect()
    }

    pub fn to_json(&self, g: &BuildingGraph, person_ids: &[String]) -> Value {
        let mut people = Map::new();
        for (id, path) in person_ids.iter().zip(&self.paths) {
            let locs: Vec<Value> = path.iter().map(|&l| Value::String(g.loc_name(l))).collect();
            people.insert(id.clone(), Value::Array(locs));
        }
        json!({ "horizon": self.horizon, "people": people })
    }

    /// Reads `{"horizon": T, "people": {"p1": ["v1", "v1-v5", ...]}}`.
    pub fn from_json(text: &str, g: &BuildingGraph, person_ids: &[String]) -> Result<Self, ScheduleError> {
        let doc: Value = serde_json::from_str(text).map_err(|e| ScheduleError::Json(e.to_string()))?;
        let horizon = doc
            .get("horizon")
            .and_then(Value::as_u64)
            .and_then(|h| u32::try_from(h).ok())
            .ok_or_else(|| ScheduleError::Json("`horizon` must be a tick".into()))?;
        let people = doc
            .get("people")
            .and_then(Value::as_object)
            .ok_or_else(|| ScheduleError::Json("`people` must be an object".into()))?;
        if let Some(extra) = people.keys().find(|k| !person_ids.contains(k)) {
            return Err(ScheduleError::UnknownPerson(extra.clone()));
        }
        let expected = horizon as usize + 1;
        let mut paths = Vec::with_capacity(person_ids.len());
        for id in person_ids {
            let list = people
                .get(id)
                .and_then(Value::as_array)
                .ok_or_else(|| ScheduleError::MissingPerson(id.clone()))?;
            if list.len() != expected {
                return Err(ScheduleError::Length {
                    person: id.clone(),
                    got: list.len(),
                    expected,
                });
            }
            let mut path = Vec::with_capacity(expected);
            for (tick, v) in list.iter().enumerate() {
                let text = v.as_str().unwrap_or_default();
                let loc = g.parse_loc(text).ok_or_else(|| ScheduleError::UnknownLocation {
                    person: id.clone(),
                    tick,
                    at: v.to_string(),
                })?;
                path.push(loc);
            }
            paths.push(path);
        }
        Ok(Schedule { horizon, paths })
    }
}

/// Why a schedule is not weak or not strong. Persons, vertices and edges are
/// indices; ticks are the tick at which the offending state is observed (for
/// moves, the tick the move starts).
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Violation {
    /// Wrong number of ticks or a location that is not in the graph.
    Shape { person: usize },
    /// From a vertex, only the vertex itself, an incident edge or a
    /// neighbour across a one-tick edge is reachable in one tick.
    IllegalMove { person: usize, tick: u32 },
    /// From an edge, only the edge itself or one of its endpoints.
    IllegalEdgeExit { person: usize, tick: u32 },
    /// Crossing an edge took fewer ticks than its travel time.
    TooFast { person: usize, tick: u32, edge: usize },
    /// Left an exit.
    LeftExit { person: usize, tick: u32 },
    VertexCapacity { vertex: usize, tick: u32, count: u64 },
    /// Persons located on the edge at `tick`.
    EdgeCapacity { edge: usize, tick: u32, count: u64 },
    /// One-tick crossings of the edge between `tick` and `tick + 1`.
    CrossingCapacity { edge: usize, tick: u32, count: u64 },
    NotEvacuated { person: usize },
}

impl Violation {
    pub fn is_weak(&self) -> bool {
        matches!(
            self,
            Violation::Shape { .. }
                | Violation::IllegalMove { .. }
                | Violation::IllegalEdgeExit { .. }
                | Violation::TooFast { .. }
                | Violation::LeftExit { .. }
        )
    }

    pub fn describe(&self, g: &BuildingGraph, person_ids: &[String]) -> String {
        let p = |i: &usize| person_ids.get(*i).cloned().unwrap_or_else(|| format!("#{i}"));
        match self {
            Violation::Shape { person } => format!("{}: malformed path", p(person)),
            Violation::IllegalMove { person, tick } => {
                format!("{}: illegal move from a vertex at t={tick}", p(person))
            }
            Violation::IllegalEdgeExit { person, tick } => {
                format!("{}: illegal move off an edge at t={tick}", p(person))
            }
            Violation::TooFast { person, tick, edge } => format!(
                "{}: crossed {} faster than its travel time, arriving at t={}",
                p(person),
                g.edge_name(*edge),
                tick + 1
            ),
            Violation::LeftExit { person, tick } => {
                format!("{}: left an exit at t={tick}", p(person))
            }
            Violation::VertexCapacity { vertex, tick, count } => format!(
                "vertex {} holds {count} > {} at t={tick}",
                g.id(*vertex),
                g.vertices[*vertex].capacity
            ),
            Violation::EdgeCapacity { edge, tick, count } => format!(
                "edge {} carries {count} > {} at t={tick}",
                g.edge_name(*edge),
                g.edges[*edge].capacity
            ),
            Violation::CrossingCapacity { edge, tick, count } => format!(
                "edge {} carries {count} > {} between t={tick} and t={}",
                g.edge_name(*edge),
                g.edges[*edge].capacity,
                tick + 1
            ),
            Violation::NotEvacuated { person } => format!("{}: not at an exit at the horizon", p(person)),
        }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self:?}")
    }
}

/// Movement legality: adjacency, edge travel times, absorbing exits.
/// Capacities are not checked and people may stay unevacuated. People may
/// linger on an edge; the travel-time rule applies to each traversal.
pub fn validate_weak(es: &Schedule, g: &BuildingGraph) -> Result<(), Violation> {
    let len = es.horizon as usize + 1;
    for (person, path) in es.paths.iter().enumerate() {
        if path.len() != len || !path.iter().all(|&l| g.loc_exists(l)) {
            return Err(Violation::Shape { person });
        }
    }
    // Per person: the vertex and tick an edge stay started from, if known.
    let mut entered: Vec<Option<(usize, u32)>> = vec![None; es.paths.len()];
    for t in 0..es.horizon {
        for (person, path) in es.paths.iter().enumerate() {
            let (a, b) = (path[t as usize], path[t as usize + 1]);
            match a {
                Loc::Vertex(v) => {
                    if g.is_exit(v) && b != a {
                        return Err(Violation::LeftExit { person, tick: t });
                    }
                    match b {
                        Loc::Vertex(w) if w == v => {}
                        Loc::Vertex(w) => match g.edge_between(v, w) {
                            Some(e) if g.edges[e].travel_time == 1 => {}
                            Some(e) => return Err(Violation::TooFast { person, tick: t, edge: e }),
                            None => return Err(Violation::IllegalMove { person, tick: t }),
                        },
                        Loc::Edge(e) if g.edges[e].touches(v) => entered[person] = Some((v, t)),
                        Loc::Edge(_) => return Err(Violation::IllegalMove { person, tick: t }),
                    }
                }
                Loc::Edge(e) => match b {
                    Loc::Edge(f) if f == e => {}
                    Loc::Vertex(w) if g.edges[e].touches(w) => {
                        if let Some((from, t0)) = entered[person] {
                            if from != w && t + 1 - t0 < g.edges[e].travel_time {
                                return Err(Violation::TooFast { person, tick: t, edge: e });
                            }
                        }
                        entered[person] = None;
                    }
                    _ => return Err(Violation::IllegalEdgeExit { person, tick: t }),
                },
            }
        }
    }
    Ok(())
}

/// Weak validity plus per-tick vertex and edge capacities, one-tick
/// crossings per edge and interval within the edge capacity, and everyone
/// at an exit at the horizon.
pub fn validate_strong(es: &Schedule, g: &BuildingGraph) -> Result<(), Violation> {
    validate_weak(es, g)?;
    let (nv, ne) = (g.num_vertices(), g.num_edges());
    for t in 0..=es.horizon {
        let mut vc = vec![0u64; nv];
        let mut ec = vec![0u64; ne];
        for path in &es.paths {
            match path[t as usize] {
                Loc::Vertex(v) => vc[v] += 1,
                Loc::Edge(e) => ec[e] += 1,
            }
        }
        if let Some(v) = (0..nv).find(|&v| vc[v] > g.vertices[v].capacity) {
            return Err(Violation::VertexCapacity { vertex: v, tick: t, count: vc[v] });
        }
        if let Some(e) = (0..ne).find(|&e| ec[e] > g.edges[e].capacity) {
            return Err(Violation::EdgeCapacity { edge: e, tick: t, count: ec[e] });
        }
        if t == es.horizon {
            break;
        }
        let mut cross = vec![0u64; ne];
        for path in &es.paths {
            if let (Loc::Vertex(a), Loc::Vertex(b)) = (path[t as usize], path[t as usize + 1]) {
                if a != b {
                    cross[g.edge_between(a, b).expect("weakly valid")] += 1;
                }
            }
        }
        if let Some(e) = (0..ne).find(|&e| cross[e] > g.edges[e].capacity) {
            return Err(Violation::CrossingCapacity { edge: e, tick: t, count: cross[e] });
        }
    }
    let last = es.horizon as usize;
    if let Some(person) = es
        .paths
        .iter()
        .position(|p| !matches!(p[last], Loc::Vertex(v) if g.is_exit(v)))
    {
        return Err(Violation::NotEvacuated { person });
    }
    Ok(())
}

/// Number of people at an exit at tick `deadline`.
pub fn count_evacuated(es: &Schedule, g: &BuildingGraph, deadline: u32) -> Result<usize, ScheduleError> {
    if deadline > es.horizon {
        return Err(ScheduleError::DeadlineOutOfRange {
            deadline,
            horizon: es.horizon,
        });
    }
    Ok(es
        .paths
        .iter()
        .filter(|p| matches!(p[deadline as usize], Loc::Vertex(v) if g.is_exit(v)))
        .count())
}

/// Σ αᵢ · N_{wesᵢ}(D) over weighted realizations, exactly.
pub fn expected_evacuated(
    realized: &[(Schedule, Rational)],
    g: &BuildingGraph,
    deadline: u32,
) -> Result<Rational, ScheduleError> {
    let mass: Rational = realized.iter().map(|(_, a)| a.clone()).sum();
    if !mass.is_one() {
        return Err(ScheduleError::ProbabilityMass(format_rational(&mass)));
    }
    let mut total = Rational::zero();
    for (es, alpha) in realized {
        let n = count_evacuated(es, g, deadline)?;
        total += alpha * Rational::from_integer(n.into());
    }
    Ok(total)
}

/// The schedule shifted `by` ticks later; everyone waits at their initial
/// location meanwhile. The horizon is unchanged.
pub fn delay(es: &Schedule, by: u32) -> Schedule {
    let paths = es
        .paths
        .iter()
        .map(|p| {
            (0..=es.horizon)
                .map(|t| p[t.saturating_sub(by) as usize])
                .collect()
        })
        .collect();
    Schedule {
        horizon: es.horizon,
        paths,
    }
}

/// Head-counts per expanded node and tick.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Occupancy {
    pub t_max: u32,
    pub n_nodes: usize,
    counts: Vec<u64>,
}

impl Occupancy {
    pub fn zeros(n_nodes: usize, t_max: u32) -> Self {
        Occupancy {
            t_max,
            n_nodes,
            counts: vec![0; n_nodes * (t_max as usize + 1)],
        }
    }

    pub fn get(&self, node: usize, t: u32) -> u64 {
        self.counts[t as usize * self.n_nodes + node]
    }

    pub fn set(&mut self, node: usize, t: u32, value: u64) {
        self.counts[t as usize * self.n_nodes + node] = value;
    }

    pub fn add(&mut self, node: usize, t: u32, value: u64) {
        self.counts[t as usize * self.n_nodes + node] += value;
    }

    pub fn tick(&self, t: u32) -> &[u64] {
        let s = t as usize * self.n_nodes;
        &self.counts[s..s + self.n_nodes]
    }

    pub fn total(&self, t: u32) -> u64 {
        self.tick(t).iter().sum()
    }
}

/// Persons moving along each expanded arc between `t` and `t + 1`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Flows {
    pub t_max: u32,
    pub n_arcs: usize,
    values: Vec<u64>,
}

impl Flows {
    pub fn zeros(n_arcs: usize, t_max: u32) -> Self {
        Flows {
            t_max,
            n_arcs,
            values: vec![0; n_arcs * t_max as usize],
        }
    }

    pub fn get(&self, arc: usize, t: u32) -> u64 {
        self.values[t as usize * self.n_arcs + arc]
    }

    pub fn set(&mut self, arc: usize, t: u32, value: u64) {
        self.values[t as usize * self.n_arcs + arc] = value;
    }

    pub fn add(&mut self, arc: usize, t: u32, value: u64) {
        self.values[t as usize * self.n_arcs + arc] += value;
    }
}

/// Expanded node of every person at every tick.
///
/// A stay on an edge with travel time d ≥ 2 that ends at the far endpoint b
/// at tick t₁ is placed `min(d−1, t₁−t)` slots before b at tick t, so the
/// person waits next to the tail and then walks at full speed. A stay that
/// never ends walks at full speed from the tail and then waits next to the
/// far end. Stays that return to the tail sit in the slot next to it.
/// Stays on one-tick edges are attributed to the tail vertex.
pub fn node_paths(es: &Schedule, xg: &ExpandedGraph) -> Vec<Vec<usize>> {
    let g = &xg.base;
    let len = es.horizon as usize + 1;
    es.paths
        .iter()
        .map(|path| {
            let mut nodes = vec![0; len];
            let mut t = 0;
            while t < len {
                match path[t] {
                    Loc::Vertex(v) => {
                        nodes[t] = v;
                        t += 1;
                    }
                    Loc::Edge(e) => {
                        let end = (t..len).find(|&s| path[s] != Loc::Edge(e)).unwrap_or(len);
                        let vertex_at = |s: usize| match path.get(s) {
                            Some(&Loc::Vertex(x)) => Some(x),
                            _ => None,
                        };
                        let tail = if t > 0 { vertex_at(t - 1) } else { None };
                        let head = vertex_at(end);
                        let edge = &g.edges[e];
                        let d = edge.travel_time;
                        for (s, slot) in nodes.iter_mut().enumerate().take(end).skip(t) {
                            *slot = if d == 1 {
                                tail.or(head).unwrap_or(edge.u)
                            } else {
                                match head {
                                    Some(b) if Some(b) != tail => {
                                        let k = (end - s).min(d as usize - 1) as u32;
                                        xg.slot_from(e, b, k).expect("k < d")
                                    }
                                    None if tail.is_some() => {
                                        let k = (s + 1 - t).min(d as usize - 1) as u32;
                                        xg.slot_from(e, tail.unwrap(), k).expect("k < d")
                                    }
                                    _ => {
                                        let anchor = tail.or(head).unwrap_or(edge.u);
                                        xg.slot_from(e, anchor, 1).expect("d ≥ 2")
                                    }
                                }
                            };
                        }
                        t = end;
                    }
                }
            }
            nodes
        })
        .collect()
}

pub fn occupancy_of(es: &Schedule, xg: &ExpandedGraph) -> Occupancy {
    let mut occ = Occupancy::zeros(xg.num_nodes(), es.horizon);
    for nodes in node_paths(es, xg) {
        for (t, &n) in nodes.iter().enumerate() {
            occ.add(n, t as u32, 1);
        }
    }
    occ
}

/// Arc flows induced by the persons' node paths, or the first
/// `(person, tick)` whose step is not a hold or an arc.
///
/// A stay on an edge must start and end at the edge's endpoints, and a stay
/// on a one-tick edge must start where leaving is possible, since it is
/// represented as waiting at the tail.
pub fn flows_of(es: &Schedule, xg: &ExpandedGraph) -> Result<Flows, (usize, u32)> {
    let g = &xg.base;
    for (p, path) in es.paths.iter().enumerate() {
        for t in 1..path.len() {
            let (a, b) = (path[t - 1], path[t]);
            let bad = match (a, b) {
                (Loc::Vertex(v), Loc::Edge(e)) => {
                    !g.edges[e].touches(v) || (g.edges[e].travel_time == 1 && g.is_exit(v))
                }
                (Loc::Edge(e), Loc::Vertex(w)) => !g.edges[e].touches(w),
                (Loc::Edge(e), Loc::Edge(f)) => e != f,
                _ => false,
            };
            if bad {
                return Err((p, t as u32 - 1));
            }
        }
    }
    let mut flows = Flows::zeros(xg.arcs.len(), es.horizon);
    for (p, nodes) in node_paths(es, xg).iter().enumerate() {
        for t in 0..es.horizon {
            let (a, b) = (nodes[t as usize], nodes[t as usize + 1]);
            if a == b {
                continue;
            }
            let arc = xg.arc_between(a, b).ok_or((p, t))?;
            flows.add(arc, t, 1);
        }
    }
    Ok(flows)
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum CertifyError {
    #[error("occupancy is not flow-consistent after t={0}")]
    NotConserved(u32),
    #[error("node {node} exceeds its capacity at t={tick}")]
    Capacity { node: usize, tick: u32 },
    #[error("edge {edge} exceeds its capacity at t={tick}")]
    EdgeCapacity { edge: usize, tick: u32 },
}

/// Finds arc flows that explain `occ` tick by tick, using one max-flow per
/// tick. With `strong`, vertex and edge capacities are checked and the
/// two directions of every one-tick edge share its capacity.
pub fn certify(occ: &Occupancy, xg: &ExpandedGraph, strong: bool) -> Result<Flows, CertifyError> {
    let g = &xg.base;
    let n = xg.num_nodes();
    if strong {
        for t in 0..=occ.t_max {
            for v in 0..g.num_vertices() {
                if occ.get(v, t) > g.vertices[v].capacity {
                    return Err(CertifyError::Capacity { node: v, tick: t });
                }
            }
            for e in 0..g.num_edges() {
                let load: u64 = xg.slots_of(e).iter().map(|&s| occ.get(s, t)).sum();
                if load > g.edges[e].capacity {
                    return Err(CertifyError::EdgeCapacity { edge: e, tick: t });
                }
            }
        }
    }
    let mut flows = Flows::zeros(xg.arcs.len(), occ.t_max);
    for t in 0..occ.t_max {
        let (now, next) = (occ.tick(t), occ.tick(t + 1));
        let total: u64 = now.iter().sum();
        if total != next.iter().sum::<u64>() {
            return Err(CertifyError::NotConserved(t));
        }
        if total == 0 {
            continue;
        }
        let mut net: Graph<(), u64> = Graph::with_capacity(2 * n + 2, xg.arcs.len() + 3 * n);
        let left: Vec<NodeIndex> = (0..n).map(|_| net.add_node(())).collect();
        let right: Vec<NodeIndex> = (0..n).map(|_| net.add_node(())).collect();
        let (src, dst) = (net.add_node(()), net.add_node(()));
        for i in 0..n {
            if now[i] > 0 {
                net.add_edge(src, left[i], now[i]);
                net.add_edge(left[i], right[i], total);
            }
            if next[i] > 0 {
                net.add_edge(right[i], dst, next[i]);
            }
        }
        let mut direct: Vec<(usize, EdgeIndex)> = Vec::new();
        let mut bundled: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for (a, arc) in xg.arcs.iter().enumerate() {
            if now[arc.from] == 0 || next[arc.to] == 0 {
                continue;
            }
            if strong && g.edges[arc.edge].travel_time == 1 {
                bundled.entry(arc.edge).or_default().push(a);
            } else {
                direct.push((a, net.add_edge(left[arc.from], right[arc.to], total)));
            }
        }
        // A bundle carries both directions of a one-tick edge through one
        // capacity-c(e) link: (arc, link from its tail, link to its head).
        let mut through: Vec<(usize, EdgeIndex, EdgeIndex)> = Vec::new();
        for (&edge, arcs) in &bundled {
            let b_in = net.add_node(());
            let b_out = net.add_node(());
            net.add_edge(b_in, b_out, g.edges[edge].capacity);
            let mut ins = HashMap::new();
            let mut outs = HashMap::new();
            for &a in arcs {
                let arc = xg.arcs[a];
                let i = *ins
                    .entry(arc.from)
                    .or_insert_with(|| net.add_edge(left[arc.from], b_in, total));
                let o = *outs
                    .entry(arc.to)
                    .or_insert_with(|| net.add_edge(b_out, right[arc.to], total));
                through.push((a, i, o));
            }
        }
        let (value, flow) = dinics(&net, src, dst);
        if value != total {
            return Err(CertifyError::NotConserved(t));
        }
        for (a, idx) in direct {
            flows.set(a, t, flow[idx.index()]);
        }
        // With inflow a from u and outflow a′ to w, min(a, a′) cross u→w;
        // the rest of u's inflow comes back out to u, which is a hold.
        for (a, i, o) in through {
            flows.set(a, t, flow[i.index()].min(flow[o.index()]));
        }
    }
    Ok(flows)
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum DecomposeError {
    #[error("initial state does not match the occupancy at t=0")]
    InitialMismatch,
    #[error("everyone must start on a vertex")]
    StartsOnEdge,
    #[error(transparent)]
    Certify(#[from] CertifyError),
    #[error("flows leave node {node} at t={tick} with more people than it holds")]
    Overdrawn { node: usize, tick: u32 },
    #[error("flows do not reproduce the occupancy at t={0}")]
    Inconsistent(u32),
}

/// One schedule whose head-counts follow `occ`. Flows are certified first,
/// preferring flows that respect one-tick crossing capacities.
pub fn decompose(occ: &Occupancy, s0: &[Loc], xg: &ExpandedGraph) -> Result<Schedule, DecomposeError> {
    let flows = match certify(occ, xg, true) {
        Ok(f) => f,
        Err(_) => certify(occ, xg, false)?,
    };
    decompose_with_flows(occ, &flows, s0, xg)
}

/// Greedy decomposition: at every node and tick the lowest-numbered person
/// takes the move to the lowest-numbered target node (holding counts as a
/// move to the node itself).
pub fn decompose_with_flows(
    occ: &Occupancy,
    flows: &Flows,
    s0: &[Loc],
    xg: &ExpandedGraph,
) -> Result<Schedule, DecomposeError> {
    let n = xg.num_nodes();
    let mut at = Vec::with_capacity(s0.len());
    for &l in s0 {
        match l {
            Loc::Vertex(v) => at.push(v),
            Loc::Edge(_) => return Err(DecomposeError::StartsOnEdge),
        }
    }
    let mut start = vec![0u64; n];
    for &v in &at {
        start[v] += 1;
    }
    if start != occ.tick(0) {
        return Err(DecomposeError::InitialMismatch);
    }
    let mut node_paths: Vec<Vec<usize>> = at.iter().map(|&v| vec![v]).collect();
    for t in 0..occ.t_max {
        let mut here: Vec<Vec<usize>> = vec![Vec::new(); n];
        for (p, &v) in at.iter().enumerate() {
            here[v].push(p);
        }
        let mut next = at.clone();
        for (node, persons) in here.iter().enumerate() {
            if persons.is_empty() {
                continue;
            }
            let mut moves: Vec<(usize, u64)> = xg.out_arcs[node]
                .iter()
                .map(|&a| (xg.arcs[a].to, flows.get(a, t)))
                .filter(|&(_, f)| f > 0)
                .collect();
            let out: u64 = moves.iter().map(|m| m.1).sum();
            let held = (persons.len() as u64)
                .checked_sub(out)
                .ok_or(DecomposeError::Overdrawn { node, tick: t })?;
            moves.push((node, held));
            moves.sort_unstable();
            let mut it = persons.iter();
            for (to, count) in moves {
                for _ in 0..count {
                    next[*it.next().expect("counts match")] = to;
                }
            }
        }
        at = next;
        let mut counts = vec![0u64; n];
        for (p, &v) in at.iter().enumerate() {
            counts[v] += 1;
            node_paths[p].push(v);
        }
        if counts != occ.tick(t + 1) {
            return Err(DecomposeError::Inconsistent(t + 1));
        }
    }
    let paths = node_paths
        .into_iter()
        .map(|nodes| {
            nodes
                .into_iter()
                .map(|x| match xg.nodes[x] {
                    Node::Vertex(v) => Loc::Vertex(v),
                    Node::Slot { edge, .. } => Loc::Edge(edge),
                })
                .collect()
        })
        .collect();
    Ok(Schedule {
        horizon: occ.t_max,
        paths,
    })
}
