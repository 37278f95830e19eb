//! The exact planner: an integer program over the time-expanded building.
//!
//! Variables are head-counts `x[node, t]` on every expanded node and
//! nonnegative flows `f[arc, t]` on every one-tick move. Each behavior
//! realization gets its own copy (`y1`, `y2`, ... with flows `g1`, ...)
//! tied to the X block by affine links, plus a constant probability `zᵢ`.

use std::collections::BTreeMap;
use std::fmt;

use evac_milp::{solve_mip, Cmp, Model, Rational, Sense, SolveOptions, SolveResult, Status, VarId};
use num_bigint::BigInt;
use num_traits::{One, ToPrimitive, Zero};
use petgraph::algo::dinics;
use petgraph::graph::{Graph, NodeIndex};

use crate::behavior::{emit_constraints, realize, BehaviorSpec, ConstraintBlock};
use crate::graph::{expand, BuildingGraph, ExpandedGraph, Loc, Node};
use crate::schedule::{
    certify, decompose_with_flows, expected_evacuated, validate_strong, CertifyError, DecomposeError,
    Flows, Occupancy, Schedule, ScheduleError, Violation,
};

/// Row families of the program.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Family {
    /// Head-count conservation at building vertices.
    VertexFlow,
    /// Head-count conservation at edge slots.
    SlotFlow,
    /// People leaving a node cannot outnumber those on it.
    Departure,
    /// Exit head-counts never decrease.
    ExitChain,
    VertexCapacity,
    EdgeCapacity,
    /// Everyone at an exit at the horizon.
    Evacuation,
    /// Head-counts at t = 0.
    Initial,
    /// Behavior links `y = f(x)`.
    Link,
    /// `zᵢ = αᵢ`.
    Probability,
}

impl Family {
    fn tag(self) -> &'static str {
        match self {
            Family::VertexFlow => "flow",
            Family::SlotFlow => "slot",
            Family::Departure => "depart",
            Family::ExitChain => "exit",
            Family::VertexCapacity => "vcap",
            Family::EdgeCapacity => "ecap",
            Family::Evacuation => "evac",
            Family::Initial => "init",
            Family::Link => "link",
            Family::Probability => "prob",
        }
    }
}

/// Number of rows emitted per family.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct FamilyCounts(pub BTreeMap<Family, usize>);

impl FamilyCounts {
    pub fn get(&self, f: Family) -> usize {
        self.0.get(&f).copied().unwrap_or(0)
    }

    fn bump(&mut self, f: Family) {
        *self.0.entry(f).or_default() += 1;
    }

    pub fn total(&self) -> usize {
        self.0.values().sum()
    }
}

impl fmt::Display for FamilyCounts {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.0.iter().map(|(k, v)| format!("{}={v}", k.tag())).collect();
        write!(f, "{}", parts.join(" "))
    }
}

/// Column layout: every occupancy block (X, then Y1..Yk), then every flow
/// block, then the z's. Within a block, columns run node-major then tick.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Layout {
    pub n_nodes: usize,
    pub n_arcs: usize,
    pub t_max: u32,
    /// Behavior copies; block 0 is X.
    pub copies: usize,
}

impl Layout {
    fn ticks(&self) -> usize {
        self.t_max as usize + 1
    }

    fn occ_block(&self) -> usize {
        self.n_nodes * self.ticks()
    }

    fn flow_block(&self) -> usize {
        self.n_arcs * self.t_max as usize
    }

    pub fn occ(&self, block: usize, node: usize, t: u32) -> VarId {
        VarId(block * self.occ_block() + node * self.ticks() + t as usize)
    }

    pub fn flow(&self, block: usize, arc: usize, t: u32) -> VarId {
        let base = (self.copies + 1) * self.occ_block();
        VarId(base + block * self.flow_block() + arc * self.t_max as usize + t as usize)
    }

    /// Probability variable of copy `i` (0-based).
    pub fn z(&self, i: usize) -> VarId {
        VarId((self.copies + 1) * (self.occ_block() + self.flow_block()) + i)
    }

    pub fn num_vars(&self) -> usize {
        (self.copies + 1) * (self.occ_block() + self.flow_block()) + self.copies
    }
}

fn prefix(block: usize) -> (String, String) {
    if block == 0 {
        ("x".into(), "f".into())
    } else {
        (format!("y{block}"), format!("g{block}"))
    }
}

fn declare(model: &mut Model, xg: &ExpandedGraph, layout: &Layout) {
    for block in 0..=layout.copies {
        let (x, _) = prefix(block);
        for n in 0..layout.n_nodes {
            let name = xg.node_name(n);
            for t in 0..=layout.t_max {
                model.add_int(format!("{x}[{name},{t}]"));
            }
        }
    }
    for block in 0..=layout.copies {
        let (_, f) = prefix(block);
        for a in 0..layout.n_arcs {
            let name = xg.arc_name(a);
            for t in 0..layout.t_max {
                model.add_int(format!("{f}[{name},{t}]"));
            }
        }
    }
    for i in 0..layout.copies {
        model.add_var(
            format!("z{}", i + 1),
            Some(Rational::zero()),
            Some(Rational::one()),
            false,
        );
    }
}

fn int(v: u64) -> Rational {
    Rational::from_integer(BigInt::from(v))
}

fn one() -> Rational {
    Rational::one()
}

fn row(
    model: &mut Model,
    counts: &mut FamilyCounts,
    family: Family,
    block: usize,
    what: String,
    terms: Vec<(VarId, Rational)>,
    cmp: Cmp,
    rhs: Rational,
) {
    let (x, _) = prefix(block);
    model.add_constraint(format!("{x}.{}[{what}]", family.tag()), terms, cmp, rhs);
    counts.bump(family);
}

/// Conservation, departure bounds and exit chains for one block.
fn add_lpw(model: &mut Model, xg: &ExpandedGraph, layout: &Layout, block: usize, counts: &mut FamilyCounts) {
    let g = &xg.base;
    let t_max = layout.t_max;
    for family in [Family::VertexFlow, Family::SlotFlow] {
        for n in 0..layout.n_nodes {
            let is_vertex = matches!(xg.nodes[n], Node::Vertex(_));
            if is_vertex != (family == Family::VertexFlow) {
                continue;
            }
            for t in 0..t_max {
                let mut terms = vec![(layout.occ(block, n, t + 1), one()), (layout.occ(block, n, t), -one())];
                terms.extend(xg.out_arcs[n].iter().map(|&a| (layout.flow(block, a, t), one())));
                terms.extend(xg.in_arcs[n].iter().map(|&a| (layout.flow(block, a, t), -one())));
                let what = format!("{},{t}", xg.node_name(n));
                row(model, counts, family, block, what, terms, Cmp::Eq, Rational::zero());
            }
        }
    }
    for n in 0..layout.n_nodes {
        if xg.out_arcs[n].is_empty() {
            continue;
        }
        for t in 0..t_max {
            let mut terms: Vec<(VarId, Rational)> =
                xg.out_arcs[n].iter().map(|&a| (layout.flow(block, a, t), one())).collect();
            terms.push((layout.occ(block, n, t), -one()));
            let what = format!("{},{t}", xg.node_name(n));
            row(model, counts, Family::Departure, block, what, terms, Cmp::Le, Rational::zero());
        }
    }
    for v in g.exits() {
        for t in 0..t_max {
            let terms = vec![(layout.occ(block, v, t + 1), one()), (layout.occ(block, v, t), -one())];
            let what = format!("{},{t}", g.id(v));
            row(model, counts, Family::ExitChain, block, what, terms, Cmp::Ge, Rational::zero());
        }
    }
}

/// Capacities and full evacuation on the X block.
fn add_lps(
    model: &mut Model,
    xg: &ExpandedGraph,
    layout: &Layout,
    population: u64,
    opts: &IpOptions,
    counts: &mut FamilyCounts,
) {
    let g = &xg.base;
    let t_max = layout.t_max;
    for v in 0..g.num_vertices() {
        let profile = opts.vertex_profile.iter().find(|(x, _)| *x == v).map(|(_, p)| p);
        for t in 0..=t_max {
            let cap = profile
                .and_then(|p| p.get(t as usize).copied())
                .unwrap_or(g.vertices[v].capacity);
            let terms = vec![(layout.occ(0, v, t), one())];
            row(model, counts, Family::VertexCapacity, 0, format!("{},{t}", g.id(v)), terms, Cmp::Le, int(cap));
        }
    }
    for (e, edge) in g.edges.iter().enumerate() {
        let cap = int(edge.capacity);
        if edge.travel_time >= 2 {
            let slots = xg.slots_of(e);
            for t in 0..=t_max {
                let terms = slots.iter().map(|&s| (layout.occ(0, s, t), one())).collect();
                row(model, counts, Family::EdgeCapacity, 0, format!("{},{t}", g.edge_name(e)), terms, Cmp::Le, cap.clone());
            }
        } else {
            let arcs: Vec<usize> = (0..layout.n_arcs).filter(|&a| xg.arcs[a].edge == e).collect();
            if arcs.is_empty() {
                continue;
            }
            for t in 0..t_max {
                let terms = arcs.iter().map(|&a| (layout.flow(0, a, t), one())).collect();
                row(model, counts, Family::EdgeCapacity, 0, format!("{},{t}", g.edge_name(e)), terms, Cmp::Le, cap.clone());
            }
        }
    }
    if !opts.soft {
        let terms = g.exits().into_iter().map(|v| (layout.occ(0, v, t_max), one())).collect();
        row(model, counts, Family::Evacuation, 0, format!("{t_max}"), terms, Cmp::Ge, int(population));
    }
}

fn add_initial(model: &mut Model, xg: &ExpandedGraph, layout: &Layout, start: &[u64], counts: &mut FamilyCounts) {
    for n in 0..layout.n_nodes {
        let value = start.get(n).copied().unwrap_or(0);
        let terms = vec![(layout.occ(0, n, 0), one())];
        row(model, counts, Family::Initial, 0, xg.node_name(n), terms, Cmp::Eq, int(value));
    }
}

/// The weak-schedule rows on the X block alone.
pub fn build_lpw(xg: &ExpandedGraph, t_max: u32) -> (Model, FamilyCounts) {
    let layout = Layout {
        n_nodes: xg.num_nodes(),
        n_arcs: xg.arcs.len(),
        t_max,
        copies: 0,
    };
    let mut model = Model::new("lpw", Sense::Maximize);
    declare(&mut model, xg, &layout);
    let mut counts = FamilyCounts::default();
    add_lpw(&mut model, xg, &layout, 0, &mut counts);
    (model, counts)
}

/// The capacity and evacuation rows on the X block alone.
pub fn build_lps(xg: &ExpandedGraph, t_max: u32, population: u64) -> (Model, FamilyCounts) {
    let layout = Layout {
        n_nodes: xg.num_nodes(),
        n_arcs: xg.arcs.len(),
        t_max,
        copies: 0,
    };
    let mut model = Model::new("lps", Sense::Maximize);
    declare(&mut model, xg, &layout);
    let mut counts = FamilyCounts::default();
    add_lps(&mut model, xg, &layout, population, &IpOptions::default(), &mut counts);
    (model, counts)
}

/// Building, initial state and behavior model.
#[derive(Clone, Copy, Debug)]
pub struct Framework<'a> {
    pub graph: &'a BuildingGraph,
    pub s0: &'a [Loc],
    pub spec: &'a BehaviorSpec,
}

#[derive(Clone, Debug, Default)]
pub struct IpOptions {
    /// Drop the full-evacuation row.
    pub soft: bool,
    /// Per-tick capacity overrides `(vertex, cap[t])` for t in `0..=t_max`.
    pub vertex_profile: Vec<(usize, Vec<u64>)>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum IlpError {
    #[error("deadline {deadline} exceeds t_max {t_max}")]
    DeadlineAfterHorizon { deadline: u32, t_max: u32 },
    #[error("the planner needs everyone to start on a vertex")]
    StartsOnEdge,
    #[error("invalid behavior: {0}")]
    Behavior(String),
    #[error("assignment is not integral or has the wrong length")]
    BadAssignment,
    #[error("solution does not decompose: {0}")]
    Decompose(#[from] DecomposeError),
    #[error("behavior copy {copy} does not certify: {source}")]
    Copy { copy: usize, source: CertifyError },
    #[error("assembled program rejects its own solution: {0}")]
    SelfCheck(String),
    #[error("extracted schedule is not strong: {0}")]
    NotStrong(Violation),
    #[error("recomputed objective {recomputed} differs from the solver's {solver}")]
    ObjectiveMismatch { recomputed: String, solver: String },
    #[error(transparent)]
    Schedule(#[from] ScheduleError),
}

/// An assembled program together with what is needed to read it back.
#[derive(Clone, Debug)]
pub struct IlpModel {
    pub model: Model,
    pub layout: Layout,
    pub xg: ExpandedGraph,
    pub blocks: Vec<ConstraintBlock>,
    pub deadline: u32,
    pub population: u64,
    pub soft: bool,
    pub counts: FamilyCounts,
}

fn start_counts(xg: &ExpandedGraph, s0: &[Loc]) -> Result<Vec<u64>, IlpError> {
    let mut start = vec![0u64; xg.num_nodes()];
    for &l in s0 {
        match l {
            Loc::Vertex(v) => start[v] += 1,
            Loc::Edge(_) => return Err(IlpError::StartsOnEdge),
        }
    }
    Ok(start)
}

/// The full program: capacities and evacuation on X, initial head-counts,
/// one weak-schedule copy per realization, the behavior links, and the
/// objective Σᵢ αᵢ Σ_exits y_i[v, D].
pub fn build_ip(fw: Framework<'_>, deadline: u32, t_max: u32, opts: &IpOptions) -> Result<IlpModel, IlpError> {
    if deadline > t_max {
        return Err(IlpError::DeadlineAfterHorizon { deadline, t_max });
    }
    fw.spec.validate().map_err(|e| IlpError::Behavior(e.to_string()))?;
    let xg = expand(fw.graph);
    let start = start_counts(&xg, fw.s0)?;
    let blocks = emit_constraints(fw.spec, &xg, t_max);
    let layout = Layout {
        n_nodes: xg.num_nodes(),
        n_arcs: xg.arcs.len(),
        t_max,
        copies: blocks.len(),
    };
    let mut model = Model::new("evacuation", Sense::Maximize);
    declare(&mut model, &xg, &layout);
    let mut counts = FamilyCounts::default();
    let population = fw.s0.len() as u64;
    add_lpw(&mut model, &xg, &layout, 0, &mut counts);
    add_lps(&mut model, &xg, &layout, population, opts, &mut counts);
    add_initial(&mut model, &xg, &layout, &start, &mut counts);
    for b in &blocks {
        add_lpw(&mut model, &xg, &layout, b.copy + 1, &mut counts);
    }
    for b in &blocks {
        let block = b.copy + 1;
        for link in &b.links {
            let mut terms = vec![(layout.occ(block, link.node, link.t), one())];
            terms.extend(link.terms.iter().map(|&(m, s)| (layout.occ(0, m, s), -one())));
            let what = format!("{},{}", xg.node_name(link.node), link.t);
            row(&mut model, &mut counts, Family::Link, block, what, terms, Cmp::Eq, Rational::zero());
        }
    }
    for b in &blocks {
        let p = &b.probability;
        let den = Rational::from_integer(p.denom().clone());
        let num = Rational::from_integer(p.numer().clone());
        let terms = vec![(layout.z(b.copy), den)];
        row(&mut model, &mut counts, Family::Probability, b.copy + 1, format!("z{}", b.copy + 1), terms, Cmp::Eq, num);
    }
    for b in &blocks {
        if b.probability.is_zero() {
            continue;
        }
        for v in fw.graph.exits() {
            model.objective.push((layout.occ(b.copy + 1, v, deadline), b.probability.clone()));
        }
    }
    Ok(IlpModel {
        model,
        layout,
        xg,
        blocks,
        deadline,
        population,
        soft: opts.soft,
        counts,
    })
}

/// Reads the X block of an assignment.
fn x_part(ilp: &IlpModel, values: &[Rational]) -> Result<(Occupancy, Flows), IlpError> {
    if values.len() < ilp.layout.num_vars() {
        return Err(IlpError::BadAssignment);
    }
    let get = |v: VarId| -> Result<u64, IlpError> {
        let x = &values[v.0];
        if !x.is_integer() {
            return Err(IlpError::BadAssignment);
        }
        x.to_integer().to_u64().ok_or(IlpError::BadAssignment)
    };
    let l = &ilp.layout;
    let mut occ = Occupancy::zeros(l.n_nodes, l.t_max);
    for n in 0..l.n_nodes {
        for t in 0..=l.t_max {
            occ.set(n, t, get(l.occ(0, n, t))?);
        }
    }
    let mut flows = Flows::zeros(l.n_arcs, l.t_max);
    for a in 0..l.n_arcs {
        for t in 0..l.t_max {
            flows.set(a, t, get(l.flow(0, a, t))?);
        }
    }
    Ok((occ, flows))
}

/// Values for a model with only the X block ([`build_lpw`], [`build_lps`]).
pub fn x_assignment(occ: &Occupancy, flows: &Flows) -> Vec<Rational> {
    let layout = Layout {
        n_nodes: occ.n_nodes,
        n_arcs: flows.n_arcs,
        t_max: occ.t_max,
        copies: 0,
    };
    let mut values = vec![Rational::zero(); layout.num_vars()];
    for n in 0..layout.n_nodes {
        for t in 0..=layout.t_max {
            values[layout.occ(0, n, t).0] = int(occ.get(n, t));
        }
    }
    for a in 0..layout.n_arcs {
        for t in 0..layout.t_max {
            values[layout.flow(0, a, t).0] = int(flows.get(a, t));
        }
    }
    values
}

/// Y occupancy of a block, from the X occupancy through the links.
pub fn linked_occupancy(block: &ConstraintBlock, x: &Occupancy) -> Occupancy {
    let mut y = Occupancy::zeros(x.n_nodes, x.t_max);
    for link in &block.links {
        let v = link.terms.iter().map(|&(m, s)| x.get(m, s)).sum();
        y.set(link.node, link.t, v);
    }
    y
}

/// Completes an X assignment to the whole program: Y head-counts through
/// the links, Y flows by max-flow, z's at their probabilities.
pub fn complete_assignment(ilp: &IlpModel, occ: &Occupancy, flows: &Flows) -> Result<Vec<Rational>, IlpError> {
    let l = &ilp.layout;
    let mut values = vec![Rational::zero(); l.num_vars()];
    let mut put_block = |block: usize, o: &Occupancy, f: &Flows| {
        for n in 0..l.n_nodes {
            for t in 0..=l.t_max {
                values[l.occ(block, n, t).0] = int(o.get(n, t));
            }
        }
        for a in 0..l.n_arcs {
            for t in 0..l.t_max {
                values[l.flow(block, a, t).0] = int(f.get(a, t));
            }
        }
    };
    put_block(0, occ, flows);
    for b in &ilp.blocks {
        let y = linked_occupancy(b, occ);
        let g = certify(&y, &ilp.xg, false).map_err(|source| IlpError::Copy {
            copy: b.copy + 1,
            source,
        })?;
        put_block(b.copy + 1, &y, &g);
    }
    for b in &ilp.blocks {
        values[l.z(b.copy).0] = b.probability.clone();
    }
    Ok(values)
}

/// Result of reading a solution back.
#[derive(Clone, Debug)]
pub struct Extracted {
    pub ses: Schedule,
    pub realized: Vec<(Schedule, Rational)>,
    /// Expected number evacuated by the deadline, recomputed from `realized`.
    pub objective: Rational,
    pub y_occupancy: Vec<Occupancy>,
}

/// Turns a solution of `ilp` into a schedule, checks it and recomputes the
/// objective from the schedule's realizations.
pub fn extract(
    ilp: &IlpModel,
    fw: Framework<'_>,
    values: &[Rational],
) -> Result<Extracted, IlpError> {
    let (occ, flows) = x_part(ilp, values)?;
    let ses = decompose_with_flows(&occ, &flows, fw.s0, &ilp.xg)?;
    if !ilp.soft {
        validate_strong(&ses, fw.graph).map_err(IlpError::NotStrong)?;
    }
    let realized = realize(fw.spec, &ses, fw.graph, fw.s0);
    let objective = expected_evacuated(&realized, fw.graph, ilp.deadline)?;
    let solver = ilp.model.objective_value(values);
    if solver != objective {
        return Err(IlpError::ObjectiveMismatch {
            recomputed: evac_milp::format_rational(&objective),
            solver: evac_milp::format_rational(&solver),
        });
    }
    let y_occupancy = ilp.blocks.iter().map(|b| linked_occupancy(b, &occ)).collect();
    Ok(Extracted {
        ses,
        realized,
        objective,
        y_occupancy,
    })
}

/// Upper bound on how many people can be at an exit by `t_max`, from a
/// max-flow over the time-expanded network. Multi-slot edges are relaxed
/// to a per-slot capacity, so the bound may be loose but never too low.
pub fn evacuation_bound(xg: &ExpandedGraph, s0_counts: &[u64], t_max: u32, opts: &IpOptions) -> u64 {
    let g = &xg.base;
    let n = xg.num_nodes();
    let ticks = t_max as usize + 1;
    let big: u64 = s0_counts.iter().sum::<u64>().max(1);
    let cap = |node: usize, t: u32| -> u64 {
        match xg.nodes[node] {
            Node::Vertex(v) => opts
                .vertex_profile
                .iter()
                .find(|(x, _)| *x == v)
                .and_then(|(_, p)| p.get(t as usize).copied())
                .unwrap_or(g.vertices[v].capacity),
            Node::Slot { edge, .. } => g.edges[edge].capacity,
        }
    };
    let mut net: Graph<(), u64> = Graph::new();
    let src = net.add_node(());
    let dst = net.add_node(());
    // (in, out) per node and tick
    let mut io: Vec<(NodeIndex, NodeIndex)> = Vec::with_capacity(n * ticks);
    for t in 0..ticks {
        for node in 0..n {
            let a = net.add_node(());
            let b = net.add_node(());
            net.add_edge(a, b, cap(node, t as u32).min(big));
            io.push((a, b));
        }
    }
    let at = |node: usize, t: usize| io[t * n + node];
    for (v, &c) in s0_counts.iter().enumerate() {
        if c > 0 {
            net.add_edge(src, at(v, 0).0, c);
        }
    }
    for v in g.exits() {
        net.add_edge(at(v, ticks - 1).1, dst, big);
    }
    for t in 0..ticks - 1 {
        for node in 0..n {
            net.add_edge(at(node, t).1, at(node, t + 1).0, big);
        }
        let mut bundles: BTreeMap<usize, (NodeIndex, NodeIndex)> = BTreeMap::new();
        for arc in &xg.arcs {
            if g.edges[arc.edge].travel_time == 1 {
                let (bi, bo) = *bundles.entry(arc.edge).or_insert_with(|| {
                    let bi = net.add_node(());
                    let bo = net.add_node(());
                    net.add_edge(bi, bo, g.edges[arc.edge].capacity);
                    (bi, bo)
                });
                net.add_edge(at(arc.from, t).1, bi, big);
                net.add_edge(bo, at(arc.to, t + 1).0, big);
            } else {
                net.add_edge(at(arc.from, t).1, at(arc.to, t + 1).0, big);
            }
        }
    }
    dinics(&net, src, dst).0
}

/// Outcome of the exact planner.
#[derive(Clone, Debug)]
pub struct IpPlan {
    pub status: Status,
    pub schedule: Option<Schedule>,
    /// Expected number evacuated by the deadline.
    pub objective: Option<Rational>,
    /// Upper bound on the expected number evacuated, when known.
    pub bound: Option<Rational>,
    pub nodes: u64,
    pub y_occupancy: Vec<Occupancy>,
}

impl IpPlan {
    pub fn optimum_proven(&self) -> bool {
        self.status == Status::Optimal
    }
}

#[derive(Clone, Debug)]
pub struct PlanOptions {
    pub ip: IpOptions,
    pub solve: SolveOptions,
    /// Prefer earlier arrivals among optimal plans.
    pub earliest: bool,
    /// Rebuild the full program and check the completed solution against it.
    pub verify: bool,
}

impl Default for PlanOptions {
    fn default() -> Self {
        PlanOptions {
            ip: IpOptions::default(),
            solve: SolveOptions::default(),
            earliest: true,
            verify: true,
        }
    }
}

fn lcm_of_denominators(coeffs: &[Rational]) -> BigInt {
    coeffs
        .iter()
        .fold(BigInt::one(), |acc, c| num_integer::Integer::lcm(&acc, c.denom()))
}

/// Solves the program with the behavior copies substituted out.
///
/// Each Y head-count is a sum of X head-counts, so the objective can be
/// written on X alone and the Y blocks dropped. The solution is completed
/// afterwards and, with `verify`, checked against the full program. With
/// `earliest`, a secondary term Σ_t Σ_exits x[v, t] is added at a weight
/// small enough that it only breaks ties between optimal plans.
pub fn plan_ip(fw: Framework<'_>, deadline: u32, t_max: u32, opts: &PlanOptions) -> Result<IpPlan, IlpError> {
    if deadline > t_max {
        return Err(IlpError::DeadlineAfterHorizon { deadline, t_max });
    }
    fw.spec.validate().map_err(|e| IlpError::Behavior(e.to_string()))?;
    let xg = expand(fw.graph);
    let start = start_counts(&xg, fw.s0)?;
    let population = fw.s0.len() as u64;
    let empty = |status| IpPlan {
        status,
        schedule: None,
        objective: None,
        bound: None,
        nodes: 0,
        y_occupancy: Vec::new(),
    };
    if !opts.ip.soft && evacuation_bound(&xg, &start, t_max, &opts.ip) < population {
        return Ok(empty(Status::Infeasible));
    }

    let layout = Layout {
        n_nodes: xg.num_nodes(),
        n_arcs: xg.arcs.len(),
        t_max,
        copies: 0,
    };
    let mut model = Model::new("evacuation-reduced", Sense::Maximize);
    declare(&mut model, &xg, &layout);
    let mut counts = FamilyCounts::default();
    add_lpw(&mut model, &xg, &layout, 0, &mut counts);
    add_lps(&mut model, &xg, &layout, population, &opts.ip, &mut counts);
    add_initial(&mut model, &xg, &layout, &start, &mut counts);

    let blocks = emit_constraints(fw.spec, &xg, t_max);
    let mut primary: BTreeMap<VarId, Rational> = BTreeMap::new();
    for b in &blocks {
        for v in fw.graph.exits() {
            for &(m, s) in b.terms(v, deadline, t_max) {
                *primary.entry(layout.occ(0, m, s)).or_insert_with(Rational::zero) += &b.probability;
            }
        }
    }
    primary.retain(|_, c| !c.is_zero());
    let coeffs: Vec<Rational> = primary.values().cloned().collect();
    let scale = if opts.earliest {
        let l = lcm_of_denominators(&coeffs);
        let m = BigInt::from(population) * BigInt::from(t_max + 1) + 1;
        Rational::from_integer(l * m)
    } else {
        Rational::one()
    };
    let mut objective: BTreeMap<VarId, Rational> =
        primary.iter().map(|(v, c)| (*v, c * &scale)).collect();
    if opts.earliest {
        for v in fw.graph.exits() {
            for t in 0..=t_max {
                *objective.entry(layout.occ(0, v, t)).or_insert_with(Rational::zero) += Rational::one();
            }
        }
    }
    model.objective = objective.into_iter().collect();

    let result: SolveResult = solve_mip(&model, &opts.solve);
    let bound = result.dual_bound.as_ref().map(|b| b / &scale);
    let Some(values) = result.values.as_ref() else {
        return Ok(IpPlan {
            bound,
            nodes: result.nodes,
            ..empty(result.status)
        });
    };

    let ilp_reduced = IlpModel {
        model,
        layout,
        xg: xg.clone(),
        blocks: blocks.clone(),
        deadline,
        population,
        soft: opts.ip.soft,
        counts,
    };
    let (occ, flows) = x_part(&ilp_reduced, values)?;
    let ses = decompose_with_flows(&occ, &flows, fw.s0, &xg)?;
    if !opts.ip.soft {
        validate_strong(&ses, fw.graph).map_err(IlpError::NotStrong)?;
    }
    let realized = realize(fw.spec, &ses, fw.graph, fw.s0);
    let expected = expected_evacuated(&realized, fw.graph, deadline)?;
    let primary_value = primary
        .iter()
        .fold(Rational::zero(), |acc, (v, c)| acc + c * &values[v.0]);
    if primary_value != expected {
        return Err(IlpError::ObjectiveMismatch {
            recomputed: evac_milp::format_rational(&expected),
            solver: evac_milp::format_rational(&primary_value),
        });
    }
    if opts.verify {
        let full = build_ip(fw, deadline, t_max, &opts.ip)?;
        let assignment = complete_assignment(&full, &occ, &flows)?;
        full.model
            .check(&assignment)
            .map_err(|v| IlpError::SelfCheck(v.to_string()))?;
        if full.model.objective_value(&assignment) != expected {
            return Err(IlpError::SelfCheck("objective differs".into()));
        }
    }
    let y_occupancy = blocks.iter().map(|b| linked_occupancy(b, &occ)).collect();
    Ok(IpPlan {
        status: result.status,
        schedule: Some(ses),
        objective: Some(expected),
        bound,
        nodes: result.nodes,
        y_occupancy,
    })
}

/// Smallest and largest useful horizon: the instance value if it covers the
/// deadline, otherwise twice the deadline.
pub fn default_t_max(instance_t_max: Option<u32>, deadline: u32) -> u32 {
    match instance_t_max {
        Some(t) if t >= deadline => t,
        _ => 2 * deadline,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{Edge, Vertex};

    fn pair(d: u32) -> BuildingGraph {
        BuildingGraph::new(
            vec![
                Vertex { id: "a".into(), capacity: 2, exit: false },
                Vertex { id: "b".into(), capacity: 5, exit: true },
            ],
            vec![Edge { u: 0, v: 1, capacity: 1, travel_time: d }],
        )
        .unwrap()
    }

    #[test]
    fn layout_is_dense() {
        let l = Layout { n_nodes: 3, n_arcs: 4, t_max: 2, copies: 2 };
        assert_eq!(l.occ(0, 0, 0), VarId(0));
        assert_eq!(l.occ(2, 2, 2), VarId(26));
        assert_eq!(l.flow(0, 0, 0), VarId(27));
        assert_eq!(l.flow(2, 3, 1), VarId(27 + 24 - 1));
        assert_eq!(l.z(1), VarId(27 + 24 + 1));
        assert_eq!(l.num_vars(), 27 + 24 + 2);
    }

    #[test]
    fn single_pair_plans() {
        let g = pair(2);
        let s0 = [Loc::Vertex(0), Loc::Vertex(0)];
        let spec = BehaviorSpec::point_mass();
        let fw = Framework { graph: &g, s0: &s0, spec: &spec };
        let plan = plan_ip(fw, 3, 3, &PlanOptions::default()).unwrap();
        assert_eq!(plan.status, Status::Optimal);
        // capacity 1 on the edge: one arrives at 2, the other at 3
        assert_eq!(plan.objective, Some(int(2)));
        let plan = plan_ip(fw, 2, 3, &PlanOptions::default()).unwrap();
        assert_eq!(plan.objective, Some(int(1)));
        let plan = plan_ip(fw, 2, 2, &PlanOptions::default()).unwrap();
        assert_eq!(plan.status, Status::Infeasible);
    }
}
