//! The exit-graph decomposition heuristic.
//!
//! Starting from the real exits, the building is peeled one exit graph at
//! a time. Each exit graph gets a small integer program of its own; the
//! people it routes to a temporary exit are then stitched onto the route
//! of someone who already leaves from that vertex. Entry vertices of a
//! processed exit graph become the next round's temporary exits.

use std::collections::{BTreeMap, BTreeSet};

use evac_milp::{Rational, SolveOptions, Status};
use num_bigint::BigInt;
use num_traits::{One, Zero};

use crate::behavior::BehaviorSpec;
use crate::graph::{exit_graph_excluding, nearest_exit_table, BuildingGraph, ExitGraph, Loc};
use crate::ilp::{plan_ip, Framework, IlpError, IpOptions, PlanOptions};
use crate::schedule::{validate_strong, Schedule, Violation};

#[derive(Clone, Debug)]
pub struct EvacOptions {
    /// Share of entry vertices that must be occupied before the radius
    /// stops growing, in (0, 1].
    pub gamma: Rational,
    /// Solver settings for every subproblem.
    pub solve: SolveOptions,
    /// Check each subproblem solution against its full program.
    pub verify: bool,
}

impl Default for EvacOptions {
    fn default() -> Self {
        EvacOptions {
            gamma: Rational::new(BigInt::from(1), BigInt::from(4)),
            solve: SolveOptions::default(),
            verify: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum EvacError {
    #[error("gamma must lie in (0, 1]")]
    Gamma,
    #[error("deadline {deadline} exceeds t_max {t_max}")]
    DeadlineAfterHorizon { deadline: u32, t_max: u32 },
    #[error("everyone must start on a vertex")]
    StartsOnEdge,
    #[error("subproblem at {exit}: {source}")]
    Subproblem { exit: String, source: IlpError },
}

/// Whose continuation a stitched person copies.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Leader {
    /// A person who started on the temporary exit.
    Starter(usize),
    /// Some other person who passes the temporary exit.
    Passer(usize),
    /// The nearest-exit path from the temporary exit.
    NearestPath,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Stitch {
    pub person: usize,
    /// First tick at the temporary exit.
    pub arrival: u32,
    pub leader: Option<Leader>,
    /// Ticks waited at the temporary exit before following; `None` when the
    /// person could not be stitched and stays parked there.
    pub delay: Option<u32>,
}

/// One processed temporary exit.
#[derive(Clone, Debug)]
pub struct Step {
    pub exit: usize,
    pub time_u_before: u32,
    pub time_u_after: u32,
    pub kappa: u32,
    pub entry_vertices: Vec<usize>,
    pub persons: Vec<usize>,
    /// The full-evacuation row was dropped after a hard-mode failure.
    pub soft: bool,
    pub status: Option<Status>,
    pub objective: Option<Rational>,
    pub epsilon: u32,
    pub stitches: Vec<Stitch>,
    /// People routed into the exit graph who never reach its exit.
    pub stranded: Vec<usize>,
    /// Contents of the next-round set after this step.
    pub next_ex: Vec<usize>,
}

#[derive(Clone, Debug, Default)]
pub struct Trace {
    pub steps: Vec<Step>,
    /// Temporary exits skipped because no neighbour was left.
    pub isolated: Vec<usize>,
    pub rounds: usize,
    pub time_u: BTreeMap<usize, u32>,
}

impl Trace {
    pub fn step(&self, exit: usize) -> Option<&Step> {
        self.steps.iter().find(|s| s.exit == exit)
    }
}

#[derive(Clone, Debug)]
pub struct EvacResult {
    pub schedule: Schedule,
    pub trace: Trace,
    pub strong: Result<(), Violation>,
}

/// Per-tick head-counts of a schedule, for capacity checks while stitching.
struct Load {
    nv: usize,
    ne: usize,
    vertex: Vec<i64>,
    edge: Vec<i64>,
    cross: Vec<i64>,
}

impl Load {
    fn new(g: &BuildingGraph, es: &Schedule) -> Self {
        let ticks = es.horizon as usize + 1;
        let mut load = Load {
            nv: g.num_vertices(),
            ne: g.num_edges(),
            vertex: vec![0; ticks * g.num_vertices()],
            edge: vec![0; ticks * g.num_edges()],
            cross: vec![0; ticks * g.num_edges()],
        };
        for path in &es.paths {
            load.apply(g, path, 1);
        }
        load
    }

    fn apply(&mut self, g: &BuildingGraph, path: &[Loc], sign: i64) {
        for (t, &l) in path.iter().enumerate() {
            match l {
                Loc::Vertex(v) => self.vertex[t * self.nv + v] += sign,
                Loc::Edge(e) => self.edge[t * self.ne + e] += sign,
            }
            if let (Loc::Vertex(a), Some(&Loc::Vertex(b))) = (l, path.get(t + 1)) {
                if a != b {
                    if let Some(e) = g.edge_between(a, b) {
                        self.cross[t * self.ne + e] += sign;
                    }
                }
            }
        }
    }

    /// Whether adding `path` keeps every capacity from tick `from` on.
    fn fits(&self, g: &BuildingGraph, path: &[Loc], from: usize) -> bool {
        for t in from..path.len() {
            let ok = match path[t] {
                Loc::Vertex(v) => self.vertex[t * self.nv + v] < g.vertices[v].capacity as i64,
                Loc::Edge(e) => self.edge[t * self.ne + e] < g.edges[e].capacity as i64,
            };
            if !ok {
                return false;
            }
            if let (Loc::Vertex(a), Some(&Loc::Vertex(b))) = (path[t], path.get(t + 1)) {
                if a != b {
                    let e = g.edge_between(a, b).expect("adjacent");
                    if self.cross[t * self.ne + e] >= g.edges[e].capacity as i64 {
                        return false;
                    }
                }
            }
        }
        true
    }
}

fn at_exit(g: &BuildingGraph, l: Loc) -> bool {
    matches!(l, Loc::Vertex(v) if g.is_exit(v))
}

/// `⌈γ·n⌉` for rational γ.
fn ceil_share(gamma: &Rational, n: usize) -> usize {
    let x = gamma * Rational::from_integer(BigInt::from(n));
    let c = x.ceil().to_integer();
    c.try_into().unwrap_or(usize::MAX)
}

struct Runner<'a> {
    g: &'a BuildingGraph,
    s0: &'a [Loc],
    spec: &'a BehaviorSpec,
    deadline: u32,
    t_max: u32,
    opts: &'a EvacOptions,
    es: Schedule,
    routed: Vec<bool>,
    active: Vec<bool>,
    ever_temp: Vec<bool>,
    time_u: BTreeMap<usize, u32>,
    trace: Trace,
}

impl Runner<'_> {
    fn occupied(&self, v: usize) -> bool {
        self.s0
            .iter()
            .enumerate()
            .any(|(p, &l)| l == Loc::Vertex(v) && !self.routed[p])
    }

    /// Radius and exit graph for temporary exit `v`.
    fn pick_exit_graph(&self, v: usize, current: &BTreeSet<usize>) -> ExitGraph {
        let g = self.g;
        let blocked = |x: usize| !self.active[x] || g.is_exit(x) || current.contains(&x);
        let whole = exit_graph_excluding(g, v, g.num_vertices() as u32, &blocked);
        let ecc = whole.distance.iter().copied().max().unwrap_or(0);
        for kappa in 1..=ecc {
            let eg = exit_graph_excluding(g, v, kappa, &blocked);
            let entries = &eg.entry_vertices;
            let occupied = entries.iter().filter(|&&x| self.occupied(x)).count();
            if !entries.is_empty() && occupied >= ceil_share(&self.opts.gamma, entries.len()) {
                return eg;
            }
        }
        exit_graph_excluding(g, v, ecc, &blocked)
    }

    /// A continuation leaving `v`, starting with `v` itself.
    fn continuation(&self, v: usize, exclude: &BTreeSet<usize>, turn: usize) -> Option<(Leader, Vec<Loc>)> {
        let g = self.g;
        let d = self.deadline as usize;
        let from_last_visit = |q: usize| -> Option<Vec<Loc>> {
            let path = &self.es.paths[q];
            let last = path.iter().rposition(|&l| l == Loc::Vertex(v))?;
            Some(path[last..].to_vec())
        };
        let starters: Vec<usize> = (0..self.s0.len())
            .filter(|&q| self.s0[q] == Loc::Vertex(v) && !exclude.contains(&q))
            .filter(|&q| at_exit(g, self.es.paths[q][d]))
            .collect();
        if !starters.is_empty() {
            let q = starters[turn % starters.len()];
            return from_last_visit(q).map(|c| (Leader::Starter(q), c));
        }
        let passer = (0..self.s0.len())
            .filter(|q| !exclude.contains(q))
            .find(|&q| at_exit(g, self.es.paths[q][d]) && self.es.paths[q].contains(&Loc::Vertex(v)));
        if let Some(q) = passer {
            return from_last_visit(q).map(|c| (Leader::Passer(q), c));
        }
        let table = nearest_exit_table(g);
        if !table.reaches_exit(v) {
            return None;
        }
        let path = table.path[v].clone();
        let mut out = vec![Loc::Vertex(v)];
        for w in path.windows(2) {
            let e = g.edge_between(w[0], w[1]).expect("path edge");
            for _ in 1..g.edges[e].travel_time {
                out.push(Loc::Edge(e));
            }
            out.push(Loc::Vertex(w[1]));
        }
        Some((Leader::NearestPath, out))
    }

    fn process(&mut self, v: usize, current: &BTreeSet<usize>, next_ex: &mut BTreeMap<usize, u32>) -> Result<(), EvacError> {
        let g = self.g;
        let tu = self.time_u.get(&v).copied().unwrap_or(0);
        let eg = self.pick_exit_graph(v, current);
        let mut persons: Vec<usize> = (0..self.s0.len())
            .filter(|&p| !self.routed[p])
            .filter(|&p| matches!(self.s0[p], Loc::Vertex(x) if eg.contains(x)))
            .collect();
        let folded: Vec<usize> = (0..self.s0.len())
            .filter(|&p| self.routed[p] && !g.is_exit(v))
            .filter(|&p| self.es.paths[p][tu as usize] == Loc::Vertex(v))
            .filter(|&p| self.es.paths[p][tu as usize..].iter().all(|&l| l == Loc::Vertex(v)))
            .collect();
        persons.extend(&folded);
        persons.sort_unstable();
        persons.dedup();

        let sub_deadline = self.deadline - tu;
        let sub_t_max = self.t_max - tu;
        let mut step = Step {
            exit: v,
            time_u_before: tu,
            time_u_after: tu,
            kappa: eg.radius,
            entry_vertices: eg.entry_vertices.clone(),
            persons: persons.clone(),
            soft: false,
            status: None,
            objective: None,
            epsilon: 0,
            stitches: Vec::new(),
            stranded: Vec::new(),
            next_ex: Vec::new(),
        };

        if !persons.is_empty() {
            let local_v = eg.local(v).expect("exit in its graph");
            let s0_local: Vec<Loc> = persons
                .iter()
                .map(|&p| {
                    if folded.contains(&p) {
                        Loc::Vertex(local_v)
                    } else {
                        match self.s0[p] {
                            Loc::Vertex(x) => Loc::Vertex(eg.local(x).expect("inside")),
                            Loc::Edge(_) => unreachable!("checked on entry"),
                        }
                    }
                })
                .collect();
            let profile: Vec<u64> = (0..=sub_t_max)
                .map(|t| {
                    let ext = (0..self.s0.len())
                        .filter(|p| !persons.contains(p))
                        .filter(|&p| self.es.paths[p][t as usize] == Loc::Vertex(v))
                        .count() as u64;
                    g.vertices[v].capacity.saturating_sub(ext)
                })
                .collect();
            let mut plan_opts = PlanOptions {
                ip: IpOptions {
                    soft: false,
                    vertex_profile: vec![(local_v, profile)],
                },
                solve: self.opts.solve.clone(),
                earliest: true,
                verify: self.opts.verify,
            };
            let fw = Framework {
                graph: &eg.subgraph,
                s0: &s0_local,
                spec: self.spec,
            };
            let wrap = |source| EvacError::Subproblem {
                exit: g.id(v).to_string(),
                source,
            };
            let mut plan = plan_ip(fw, sub_deadline, sub_t_max, &plan_opts).map_err(wrap)?;
            if plan.status == Status::Infeasible {
                plan_opts.ip.soft = true;
                step.soft = true;
                plan = plan_ip(fw, sub_deadline, sub_t_max, &plan_opts).map_err(wrap)?;
            }
            step.status = Some(plan.status);
            step.objective = plan.objective.clone();
            if let Some(local) = plan.schedule {
                self.stitch(v, &eg, &persons, &folded, &local, &mut step);
            }
        }
        for &p in &persons {
            self.routed[p] = true;
        }

        let new_tu = tu + step.epsilon;
        step.time_u_after = new_tu;
        self.time_u.insert(v, new_tu);
        for &x in &eg.vertex_map {
            self.active[x] = false;
        }
        if self.deadline > new_tu {
            for &u in &eg.entry_vertices {
                if u != v {
                    let e = next_ex.entry(u).or_insert(new_tu);
                    *e = (*e).min(new_tu);
                }
            }
        }
        step.next_ex = next_ex.keys().copied().collect();
        self.trace.steps.push(step);
        Ok(())
    }

    fn stitch(&mut self, v: usize, eg: &ExitGraph, persons: &[usize], folded: &[usize], local: &Schedule, step: &mut Step) {
        let g = self.g;
        let horizon = self.t_max as usize;
        let to_parent = |l: Loc| -> Loc {
            match l {
                Loc::Vertex(x) => Loc::Vertex(eg.vertex_map[x]),
                Loc::Edge(e) => {
                    let edge = &eg.subgraph.edges[e];
                    let (a, b) = (eg.vertex_map[edge.u], eg.vertex_map[edge.v]);
                    Loc::Edge(g.edge_between(a, b).expect("induced edge"))
                }
            }
        };
        // Global path per person up to arrival (or over the whole horizon
        // for those who never arrive), then parked.
        let mut arrivals: Vec<(u32, usize)> = Vec::new();
        for (i, &p) in persons.iter().enumerate() {
            let mut path: Vec<Loc>;
            let arrival: Option<usize>;
            if folded.contains(&p) {
                let tu = step.time_u_before as usize;
                let old = &self.es.paths[p];
                let first = (0..=tu).rev().take_while(|&t| old[t] == Loc::Vertex(v)).last().unwrap_or(tu);
                path = old[..first].to_vec();
                path.resize(horizon + 1, Loc::Vertex(v));
                arrival = Some(first);
            } else {
                let lp = &local.paths[i];
                path = (0..=horizon)
                    .map(|t| to_parent(lp[t.min(lp.len() - 1)]))
                    .collect();
                arrival = path.iter().position(|&l| l == Loc::Vertex(v));
                if let Some(a) = arrival {
                    for l in path.iter_mut().skip(a) {
                        *l = Loc::Vertex(v);
                    }
                }
            }
            self.es.paths[p] = path;
            match arrival {
                Some(a) => arrivals.push((a as u32, p)),
                None => step.stranded.push(p),
            }
        }
        // ε is measured from tick 0 of the subproblem, which is global tick 0.
        step.epsilon = arrivals
            .iter()
            .filter(|(_, p)| !folded.contains(p))
            .map(|&(a, _)| a)
            .max()
            .unwrap_or(0);
        if g.is_exit(v) {
            return;
        }
        arrivals.sort_unstable();
        let group: BTreeSet<usize> = persons.iter().copied().collect();
        let mut load = Load::new(g, &self.es);
        for (turn, &(a, p)) in arrivals.iter().enumerate() {
            let a = a as usize;
            let Some((leader, cont)) = self.continuation(v, &group, turn) else {
                step.stitches.push(Stitch { person: p, arrival: a as u32, leader: None, delay: None });
                continue;
            };
            let own = self.es.paths[p].clone();
            load.apply(g, &own, -1);
            let build = |delay: usize| -> Vec<Loc> {
                (0..=horizon)
                    .map(|t| {
                        if t <= a + delay {
                            own[t.min(a)]
                        } else {
                            cont[(t - a - delay).min(cont.len() - 1)]
                        }
                    })
                    .collect()
            };
            let chosen = (0..=horizon - a).find(|&d| load.fits(g, &build(d), a));
            let path = chosen.map_or_else(|| own.clone(), build);
            load.apply(g, &path, 1);
            self.es.paths[p] = path;
            step.stitches.push(Stitch {
                person: p,
                arrival: a as u32,
                leader: Some(leader),
                delay: chosen.map(|d| d as u32),
            });
        }
    }
}

/// Runs the heuristic. People never reached by any exit graph stay put.
pub fn bb_evac(
    g: &BuildingGraph,
    s0: &[Loc],
    spec: &BehaviorSpec,
    deadline: u32,
    t_max: u32,
    opts: &EvacOptions,
) -> Result<EvacResult, EvacError> {
    if opts.gamma <= Rational::zero() || opts.gamma > Rational::one() {
        return Err(EvacError::Gamma);
    }
    if deadline > t_max {
        return Err(EvacError::DeadlineAfterHorizon { deadline, t_max });
    }
    if s0.iter().any(|l| matches!(l, Loc::Edge(_))) {
        return Err(EvacError::StartsOnEdge);
    }
    let n = g.num_vertices();
    let mut run = Runner {
        g,
        s0,
        spec,
        deadline,
        t_max,
        opts,
        es: Schedule::stationary(s0, t_max),
        routed: vec![false; s0.len()],
        active: vec![true; n],
        ever_temp: vec![false; n],
        time_u: BTreeMap::new(),
        trace: Trace::default(),
    };
    let mut temp: BTreeMap<usize, u32> = g.exits().into_iter().map(|x| (x, 0)).collect();
    for &x in temp.keys() {
        run.ever_temp[x] = true;
    }
    while !temp.is_empty() && run.trace.rounds <= n {
        run.trace.rounds += 1;
        for (&x, &t) in &temp {
            run.time_u.insert(x, t);
        }
        let current: BTreeSet<usize> = temp.keys().copied().collect();
        let mut queue: BTreeSet<(u32, usize)> = temp.iter().map(|(&x, &t)| (t, x)).collect();
        let mut next_ex: BTreeMap<usize, u32> = BTreeMap::new();
        while let Some((_, v)) = queue.pop_first() {
            let has_neighbour = g
                .neighbors(v)
                .iter()
                .any(|&(w, _)| run.active[w] && !g.is_exit(w) && !current.contains(&w));
            if !has_neighbour {
                run.trace.isolated.push(v);
                continue;
            }
            run.process(v, &current, &mut next_ex)?;
        }
        for &x in next_ex.keys() {
            run.active[x] = true;
            run.ever_temp[x] = true;
        }
        temp = next_ex;
        let done = (0..n).filter(|&x| run.active[x]).all(|x| run.ever_temp[x]);
        if done {
            break;
        }
    }
    run.trace.time_u = run.time_u.clone();
    let strong = validate_strong(&run.es, g);
    Ok(EvacResult {
        schedule: run.es,
        trace: run.trace,
        strong,
    })
}
