//! Behavior models: how evacuees deviate from a prescribed schedule.
//!
//! A model maps a strong schedule to finitely many weak schedules with
//! probabilities ([`realize`]) and, equivalently, to affine constraint
//! blocks linking per-realization occupancies to the prescribed ones
//! ([`emit_constraints`]).

use std::collections::{BTreeSet, HashMap};

use evac_milp::{format_rational, parse_rational, Rational};
use num_traits::{One, Signed, Zero};
use serde_json::{json, Value};

use crate::graph::{nearest_exit_table, BuildingGraph, ExitGraph, ExpandedGraph, Loc, NearestExitTable};
use crate::schedule::{delay, Schedule};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum BehaviorError {
    #[error("unknown behavior type `{0}`")]
    UnknownType(String),
    #[error("missing or malformed field `{0}`")]
    Field(&'static str),
    #[error("`{0}` is not a rational number")]
    NotRational(String),
    #[error("probabilities sum to {0}, not 1")]
    Sum(String),
    #[error("probability {0} must be positive")]
    NonPositive(String),
    #[error("probability {0} outside [0, 1]")]
    OutOfRange(String),
    #[error("delay {0} appears twice")]
    DuplicateDelay(u32),
    #[error("no delays given")]
    Empty,
}

#[derive(Clone, Debug, PartialEq)]
pub enum BehaviorSpec {
    /// Follow the prescription shifted by τᵢ ticks with probability αᵢ.
    Dbm { delays: Vec<(u32, Rational)> },
    /// Follow the prescription with probability α, otherwise walk the
    /// shortest path to the nearest exit.
    Nebm { alpha: Rational },
}

fn rational_field(v: &Value) -> Result<Rational, BehaviorError> {
    let text = match v {
        Value::String(s) => s.clone(),
        Value::Number(n) => n.to_string(),
        _ => return Err(BehaviorError::Field("alpha")),
    };
    parse_rational(&text).ok_or(BehaviorError::NotRational(text))
}

impl BehaviorSpec {
    /// Everyone follows the prescription exactly.
    pub fn point_mass() -> Self {
        BehaviorSpec::Dbm {
            delays: vec![(0, Rational::one())],
        }
    }

    pub fn from_json(v: &Value) -> Result<Self, BehaviorError> {
        let kind = v
            .get("type")
            .and_then(Value::as_str)
            .ok_or(BehaviorError::Field("type"))?;
        let spec = match kind.to_ascii_lowercase().as_str() {
            "dbm" => {
                let list = v
                    .get("delays")
                    .and_then(Value::as_array)
                    .ok_or(BehaviorError::Field("delays"))?;
                let mut delays = Vec::with_capacity(list.len());
                for d in list {
                    let tau = d
                        .get("tau")
                        .and_then(Value::as_u64)
                        .and_then(|t| u32::try_from(t).ok())
                        .ok_or(BehaviorError::Field("tau"))?;
                    let alpha = rational_field(d.get("alpha").ok_or(BehaviorError::Field("alpha"))?)?;
                    delays.push((tau, alpha));
                }
                BehaviorSpec::Dbm { delays }
            }
            "nebm" => BehaviorSpec::Nebm {
                alpha: rational_field(v.get("alpha").ok_or(BehaviorError::Field("alpha"))?)?,
            },
            other => return Err(BehaviorError::UnknownType(other.to_string())),
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn to_json(&self) -> Value {
        match self {
            BehaviorSpec::Dbm { delays } => json!({
                "type": "dbm",
                "delays": delays
                    .iter()
                    .map(|(tau, alpha)| json!({"tau": tau, "alpha": format_rational(alpha)}))
                    .collect::<Vec<_>>(),
            }),
            BehaviorSpec::Nebm { alpha } => json!({
                "type": "nebm",
                "alpha": format_rational(alpha),
            }),
        }
    }

    pub fn validate(&self) -> Result<(), BehaviorError> {
        match self {
            BehaviorSpec::Dbm { delays } => {
                if delays.is_empty() {
                    return Err(BehaviorError::Empty);
                }
                let mut seen = BTreeSet::new();
                let mut sum = Rational::zero();
                for (tau, alpha) in delays {
                    if !seen.insert(*tau) {
                        return Err(BehaviorError::DuplicateDelay(*tau));
                    }
                    if !alpha.is_positive() {
                        return Err(BehaviorError::NonPositive(format_rational(alpha)));
                    }
                    sum += alpha;
                }
                if !sum.is_one() {
                    return Err(BehaviorError::Sum(format_rational(&sum)));
                }
            }
            BehaviorSpec::Nebm { alpha } => {
                if alpha.is_negative() || *alpha > Rational::one() {
                    return Err(BehaviorError::OutOfRange(format_rational(alpha)));
                }
            }
        }
        Ok(())
    }

    /// Number of realizations (Y copies).
    pub fn copies(&self) -> usize {
        match self {
            BehaviorSpec::Dbm { delays } => delays.len(),
            BehaviorSpec::Nebm { .. } => 2,
        }
    }

    /// zᵢ per copy, in copy order.
    pub fn probabilities(&self) -> Vec<Rational> {
        match self {
            BehaviorSpec::Dbm { delays } => delays.iter().map(|(_, a)| a.clone()).collect(),
            BehaviorSpec::Nebm { alpha } => vec![alpha.clone(), Rational::one() - alpha],
        }
    }

    pub fn describe(&self) -> String {
        match self {
            BehaviorSpec::Dbm { delays } => {
                let parts: Vec<String> = delays
                    .iter()
                    .map(|(t, a)| format!("{t}:{}", format_rational(a)))
                    .collect();
                format!("dbm[{}]", parts.join(" "))
            }
            BehaviorSpec::Nebm { alpha } => format!("nebm[{}]", format_rational(alpha)),
        }
    }
}

/// Position along Π(b) at tick `t` of someone who starts at vertex `b`.
fn route_loc(g: &BuildingGraph, table: &NearestExitTable, b: usize, t: u64) -> Loc {
    let path = &table.path[b];
    let times = &table.times[b];
    let i = times.partition_point(|&x| x <= t) - 1;
    if times[i] == t || i + 1 == path.len() {
        return Loc::Vertex(path[i]);
    }
    Loc::Edge(g.edge_between(path[i], path[i + 1]).expect("path follows edges"))
}

/// Expanded node occupied at tick `t` by someone who starts at vertex `b`.
fn route_node(xg: &ExpandedGraph, table: &NearestExitTable, b: usize, t: u64) -> usize {
    let path = &table.path[b];
    let times = &table.times[b];
    let i = times.partition_point(|&x| x <= t) - 1;
    if times[i] == t || i + 1 == path.len() {
        return path[i];
    }
    let e = xg.base.edge_between(path[i], path[i + 1]).expect("path follows edges");
    let k = u32::try_from(t - times[i]).expect("small tick");
    xg.slot_from(e, path[i], k).expect("inside the edge")
}

/// Endpoint an edge-resident person heads for: the one closer to its exit.
fn edge_exit_endpoint(g: &BuildingGraph, table: &NearestExitTable, e: usize) -> usize {
    let edge = &g.edges[e];
    match (table.distance(edge.u), table.distance(edge.v)) {
        (Some(a), Some(b)) if b < a => edge.v,
        (None, Some(_)) => edge.v,
        _ => edge.u,
    }
}

/// Everyone walks Π of their starting vertex; people on an edge first step
/// to its endpoint nearer an exit. Capacities are ignored.
pub fn nearest_exit_wes(s0: &[Loc], g: &BuildingGraph, horizon: u32) -> Schedule {
    let table = nearest_exit_table(g);
    let paths = s0
        .iter()
        .map(|&start| {
            (0..=u64::from(horizon))
                .map(|t| match start {
                    Loc::Vertex(b) => route_loc(g, &table, b, t),
                    Loc::Edge(e) if t == 0 => Loc::Edge(e),
                    Loc::Edge(e) => route_loc(g, &table, edge_exit_endpoint(g, &table, e), t - 1),
                })
                .collect()
        })
        .collect();
    Schedule { horizon, paths }
}

/// The weak schedules a behavior model produces from `ses`, with their
/// probabilities, in copy order.
pub fn realize(
    spec: &BehaviorSpec,
    ses: &Schedule,
    g: &BuildingGraph,
    s0: &[Loc],
) -> Vec<(Schedule, Rational)> {
    match spec {
        BehaviorSpec::Dbm { delays } => delays
            .iter()
            .map(|(tau, alpha)| (delay(ses, *tau), alpha.clone()))
            .collect(),
        BehaviorSpec::Nebm { alpha } => vec![
            (ses.clone(), alpha.clone()),
            (
                nearest_exit_wes(s0, g, ses.horizon),
                Rational::one() - alpha,
            ),
        ],
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BlockKind {
    Delay(u32),
    Follow,
    NearestExit,
}

/// `y[node, t] = Σ x[term node, term t]`; an empty sum means zero.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Link {
    pub node: usize,
    pub t: u32,
    pub terms: Vec<(usize, u32)>,
}

/// One Y copy: a linking equality for every occupancy variable, plus its
/// constant probability.
#[derive(Clone, Debug, PartialEq)]
pub struct ConstraintBlock {
    pub copy: usize,
    pub kind: BlockKind,
    pub probability: Rational,
    pub links: Vec<Link>,
}

impl ConstraintBlock {
    /// The linked terms of `y[node, t]`.
    pub fn terms(&self, node: usize, t: u32, t_max: u32) -> &[(usize, u32)] {
        &self.links[node * (t_max as usize + 1) + t as usize].terms
    }
}

fn shifted_links(n_nodes: usize, t_max: u32, tau: u32) -> Vec<Link> {
    let mut links = Vec::with_capacity(n_nodes * (t_max as usize + 1));
    for node in 0..n_nodes {
        for t in 0..=t_max {
            links.push(Link {
                node,
                t,
                terms: vec![(node, t.saturating_sub(tau))],
            });
        }
    }
    links
}

fn nearest_exit_links(xg: &ExpandedGraph, t_max: u32) -> Vec<Link> {
    let g = &xg.base;
    let table = nearest_exit_table(g);
    let mut by_pos: HashMap<(usize, u32), Vec<(usize, u32)>> = HashMap::new();
    for b in 0..g.num_vertices() {
        for t in 0..=t_max {
            let n = route_node(xg, &table, b, u64::from(t));
            by_pos.entry((n, t)).or_default().push((b, 0));
        }
    }
    let mut links = Vec::with_capacity(xg.num_nodes() * (t_max as usize + 1));
    for node in 0..xg.num_nodes() {
        for t in 0..=t_max {
            links.push(Link {
                node,
                t,
                terms: by_pos.remove(&(node, t)).unwrap_or_default(),
            });
        }
    }
    links
}

/// Linking blocks over every expanded node and tick `0..=t_max`, ordered
/// node-major so that [`ConstraintBlock::terms`] can index them.
///
/// Nearest-exit occupancies are written in closed form: `y[n, t]` sums
/// `x[b, 0]` over the starting vertices whose route is at `n` at tick `t`.
/// At an exit this is the cumulative count of arrivals.
pub fn emit_constraints(spec: &BehaviorSpec, xg: &ExpandedGraph, t_max: u32) -> Vec<ConstraintBlock> {
    let n = xg.num_nodes();
    match spec {
        BehaviorSpec::Dbm { delays } => delays
            .iter()
            .enumerate()
            .map(|(i, (tau, alpha))| ConstraintBlock {
                copy: i,
                kind: BlockKind::Delay(*tau),
                probability: alpha.clone(),
                links: shifted_links(n, t_max, *tau),
            })
            .collect(),
        BehaviorSpec::Nebm { alpha } => vec![
            ConstraintBlock {
                copy: 0,
                kind: BlockKind::Follow,
                probability: alpha.clone(),
                links: shifted_links(n, t_max, 0),
            },
            ConstraintBlock {
                copy: 1,
                kind: BlockKind::NearestExit,
                probability: Rational::one() - alpha,
                links: nearest_exit_links(xg, t_max),
            },
        ],
    }
}

/// Restricts parent-graph blocks to an exit graph.
///
/// Links whose node or terms leave the subgraph are dropped. Nearest-exit
/// blocks are re-derived on the subgraph, since routes there end at the
/// subgraph's own exit. Probabilities of copies left without links are
/// removed and the rest renormalized to sum to 1.
pub fn project(
    blocks: &[ConstraintBlock],
    parent: &ExpandedGraph,
    eg: &ExitGraph,
    sub: &ExpandedGraph,
    t_max: u32,
) -> Vec<ConstraintBlock> {
    let names: HashMap<String, usize> = (0..sub.num_nodes()).map(|n| (sub.node_name(n), n)).collect();
    let to_sub: Vec<Option<usize>> = (0..parent.num_nodes())
        .map(|n| {
            let inside = match parent.nodes[n] {
                crate::graph::Node::Vertex(v) => eg.contains(v),
                crate::graph::Node::Slot { edge, .. } => {
                    let e = &parent.base.edges[edge];
                    eg.contains(e.u) && eg.contains(e.v)
                }
            };
            if inside {
                names.get(&parent.node_name(n)).copied()
            } else {
                None
            }
        })
        .collect();
    let mut out: Vec<ConstraintBlock> = Vec::new();
    for b in blocks {
        let links = if b.kind == BlockKind::NearestExit {
            nearest_exit_links(sub, t_max)
        } else {
            let mut links: Vec<Link> = b
                .links
                .iter()
                .filter(|l| l.t <= t_max)
                .filter_map(|l| {
                    let node = to_sub[l.node]?;
                    let terms = l
                        .terms
                        .iter()
                        .map(|&(m, s)| to_sub[m].map(|m| (m, s)))
                        .collect::<Option<Vec<_>>>()?;
                    Some(Link { node, t: l.t, terms })
                })
                .collect();
            links.sort_by_key(|l| (l.node, l.t));
            links
        };
        if links.is_empty() {
            continue;
        }
        out.push(ConstraintBlock {
            copy: out.len(),
            kind: b.kind,
            probability: b.probability.clone(),
            links,
        });
    }
    if out.is_empty() {
        out.push(ConstraintBlock {
            copy: 0,
            kind: BlockKind::Follow,
            probability: Rational::one(),
            links: shifted_links(sub.num_nodes(), t_max, 0),
        });
    }
    let total: Rational = out.iter().map(|b| b.probability.clone()).sum();
    if !total.is_zero() && !total.is_one() {
        for b in &mut out {
            b.probability = &b.probability / &total;
        }
    }
    out
}
