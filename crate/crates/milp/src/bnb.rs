//! Branch and bound.
//!
//! Best-bound node selection with a depth-first dive: after a node is
//! branched on its most fractional variable, the floor child is solved at
//! once and the ceiling child waits in the queue.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::time::{Duration, Instant};

use num_bigint::BigInt;
use num_traits::{FromPrimitive, One, Signed, Zero};

use crate::float::{FloatLp, FloatResult};
use crate::model::{Cmp, Model, Sense};
use crate::simplex::{self, model_bounds, Bound, LpStatus};
use crate::Rational;

pub const DEFAULT_NODE_LIMIT: u64 = 10_000_000;
pub const TIME_LIMIT_ENV: &str = "EVAC_MILP_TIME_LIMIT";
/// Dense tableau entries above which `Engine::Auto` picks the float engine.
const EXACT_SIZE_LIMIT: usize = 60_000;
/// Integrality tolerance applied to float relaxation values.
const INT_TOL: f64 = 1e-6;
/// Warm LP states kept in the queue at most.
const WARM_SLOTS: usize = 32;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Engine {
    Auto,
    Exact,
    Float,
}

#[derive(Clone, Debug)]
pub struct SolveOptions {
    pub time_limit: Option<Duration>,
    pub node_limit: u64,
    pub engine: Engine,
}

impl Default for SolveOptions {
    /// Default node limit; the time limit comes from `EVAC_MILP_TIME_LIMIT`
    /// (seconds) when set.
    fn default() -> Self {
        let time_limit = std::env::var(TIME_LIMIT_ENV)
            .ok()
            .and_then(|s| s.trim().parse::<f64>().ok())
            .filter(|s| s.is_finite() && *s >= 0.0)
            .map(Duration::from_secs_f64);
        SolveOptions {
            time_limit,
            node_limit: DEFAULT_NODE_LIMIT,
            engine: Engine::Auto,
        }
    }
}

impl SolveOptions {
    pub fn with_time_limit(mut self, limit: Duration) -> Self {
        self.time_limit = Some(limit);
        self
    }

    pub fn with_engine(mut self, engine: Engine) -> Self {
        self.engine = engine;
        self
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Status {
    Optimal,
    Infeasible,
    Unbounded,
    TimeLimit,
    NodeLimit,
    /// Search finished but some node failed numerically, so optimality is
    /// not proven.
    Unproven,
}

#[derive(Clone, Debug)]
pub struct SolveResult {
    pub status: Status,
    pub objective: Option<Rational>,
    pub values: Option<Vec<Rational>>,
    /// Objective of the root relaxation (model sense).
    pub root_bound: Option<Rational>,
    /// Lagrangian bound from the final basis, exact LP solves only.
    pub dual_bound: Option<Rational>,
    pub nodes: u64,
    pub numerical_failures: u64,
    pub engine: Engine,
}

impl SolveResult {
    fn empty(status: Status, engine: Engine) -> Self {
        SolveResult {
            status,
            objective: None,
            values: None,
            root_bound: None,
            dual_bound: None,
            nodes: 0,
            numerical_failures: 0,
            engine,
        }
    }

    pub fn has_incumbent(&self) -> bool {
        self.values.is_some()
    }
}

/// Exact optimum of the LP relaxation (integrality marks ignored).
pub fn solve_lp(model: &Model) -> SolveResult {
    solve_lp_with(model, &SolveOptions::default())
}

pub fn solve_lp_with(model: &Model, options: &SolveOptions) -> SolveResult {
    let deadline = options.time_limit.map(|d| Instant::now() + d);
    if options.time_limit.is_some_and(|d| d.is_zero()) {
        return SolveResult::empty(Status::TimeLimit, Engine::Exact);
    }
    let relaxed = model.relaxation();
    let bounds = model_bounds(&relaxed);
    let Ok(out) = simplex::solve(&relaxed, &bounds, deadline) else {
        return SolveResult::empty(Status::TimeLimit, Engine::Exact);
    };
    let mut res = SolveResult::empty(
        match out.status {
            LpStatus::Optimal => Status::Optimal,
            LpStatus::Infeasible => Status::Infeasible,
            LpStatus::Unbounded => Status::Unbounded,
        },
        Engine::Exact,
    );
    res.nodes = 1;
    if let (Some(values), Some(obj)) = (out.values, out.objective) {
        let dual_ok = match (&out.dual_bound, model.sense) {
            (Some(b), Sense::Maximize) => &obj <= b,
            (Some(b), Sense::Minimize) => &obj >= b,
            (None, _) => false,
        };
        if relaxed.check(&values).is_err() || !dual_ok {
            res.status = Status::Unproven;
            res.numerical_failures = 1;
        }
        res.root_bound = Some(obj.clone());
        res.objective = Some(obj);
        res.values = Some(values);
        res.dual_bound = out.dual_bound;
    }
    res
}

/// Moves single-variable rows into variable bounds. Integer bounds are
/// rounded inward. Returns `None` when some bound pair is empty.
fn singleton_bounds(model: &Model) -> Option<(Model, Vec<Bound>)> {
    let mut bounds = model_bounds(model);
    let mut reduced = model.clone();
    reduced.constraints.clear();
    for row in &model.constraints {
        let live: Vec<_> = row.terms.iter().filter(|(_, a)| !a.is_zero()).collect();
        match live.as_slice() {
            [] => {
                if !row.cmp.holds(&Rational::zero(), &row.rhs) {
                    return None;
                }
            }
            [(v, a)] => {
                let value = &row.rhs / a;
                let (tighten_hi, tighten_lo) = match (row.cmp, a.is_positive()) {
                    (Cmp::Eq, _) => (true, true),
                    (Cmp::Le, true) | (Cmp::Ge, false) => (true, false),
                    (Cmp::Le, false) | (Cmp::Ge, true) => (false, true),
                };
                let b = &mut bounds[v.0];
                if tighten_hi && b.1.as_ref().is_none_or(|h| &value < h) {
                    b.1 = Some(value.clone());
                }
                if tighten_lo && b.0.as_ref().is_none_or(|l| &value > l) {
                    b.0 = Some(value);
                }
            }
            _ => reduced.constraints.push(row.clone()),
        }
    }
    for (var, b) in model.variables.iter().zip(bounds.iter_mut()) {
        if var.integer {
            b.0 = b.0.as_ref().map(|l| l.ceil());
            b.1 = b.1.as_ref().map(|h| h.floor());
        }
        if let (Some(l), Some(h)) = (&b.0, &b.1) {
            if l > h {
                return None;
            }
        }
    }
    Some((reduced, bounds))
}

enum NodeOutcome<W> {
    Infeasible,
    Unbounded,
    TimedOut,
    Failed,
    Solved {
        /// Relaxation objective in maximization form.
        key: Rational,
        /// Slack allowed when comparing `key` against the incumbent.
        tol: Rational,
        branch: Option<(usize, Rational)>,
        point: Option<Vec<Rational>>,
        warm: Option<W>,
    },
}

/// A warm start: parent state plus the single bound change to apply.
struct WarmEdit<W> {
    state: W,
    var: usize,
    upper: bool,
    value: Rational,
}

trait Relaxation {
    type Warm: Clone;

    fn solve(
        &mut self,
        bounds: &[Bound],
        warm: Option<WarmEdit<Self::Warm>>,
        deadline: Option<Instant>,
    ) -> NodeOutcome<Self::Warm>;
}

fn max_form(sense: Sense, obj: Rational) -> Rational {
    match sense {
        Sense::Maximize => obj,
        Sense::Minimize => -obj,
    }
}

struct ExactRelaxation<'a> {
    model: &'a Model,
}

impl Relaxation for ExactRelaxation<'_> {
    type Warm = ();

    fn solve(
        &mut self,
        bounds: &[Bound],
        _warm: Option<WarmEdit<()>>,
        deadline: Option<Instant>,
    ) -> NodeOutcome<()> {
        let Ok(out) = simplex::solve(self.model, bounds, deadline) else {
            return NodeOutcome::TimedOut;
        };
        match out.status {
            LpStatus::Infeasible => return NodeOutcome::Infeasible,
            LpStatus::Unbounded => return NodeOutcome::Unbounded,
            LpStatus::Optimal => {}
        }
        let values = out.values.expect("optimal LP has values");
        let key = max_form(self.model.sense, out.objective.expect("optimal LP has objective"));
        let half = Rational::new(BigInt::one(), BigInt::from(2));
        let mut branch: Option<(usize, Rational, Rational)> = None;
        for (j, var) in self.model.variables.iter().enumerate() {
            if !var.integer || values[j].is_integer() {
                continue;
            }
            let frac = &values[j] - values[j].floor();
            let dist = if frac > half { Rational::one() - &frac } else { frac };
            if branch.as_ref().is_none_or(|(_, _, d)| &dist > d) {
                branch = Some((j, values[j].floor(), dist));
            }
        }
        let point = branch.is_none().then_some(values);
        NodeOutcome::Solved {
            key,
            tol: Rational::zero(),
            branch: branch.map(|(j, f, _)| (j, f)),
            point,
            warm: Some(()),
        }
    }
}

struct FloatRelaxation<'a> {
    model: &'a Model,
    lp: FloatLp,
}

impl FloatRelaxation<'_> {
    fn evaluate(&self, sol: microlp::Solution, bounds: &[Bound]) -> NodeOutcome<microlp::Solution> {
        let values = self.lp.values(&sol);
        let obj = sol.objective();
        if !obj.is_finite() || values.iter().any(|v| !v.is_finite()) {
            return NodeOutcome::Failed;
        }
        let raw = match self.model.sense {
            Sense::Maximize => obj,
            Sense::Minimize => -obj,
        };
        let Some(key) = Rational::from_f64(raw) else {
            return NodeOutcome::Failed;
        };
        let tol = Rational::from_f64(1e-7 * raw.abs().max(1.0)).expect("finite tolerance");
        let mut branch: Option<(usize, f64)> = None;
        let mut best = INT_TOL;
        for (j, var) in self.model.variables.iter().enumerate() {
            if !var.integer {
                continue;
            }
            let v = values[j];
            let dist = (v - v.round()).abs();
            if dist > best {
                best = dist;
                branch = Some((j, v.floor()));
            }
        }
        if let Some((j, fl)) = branch {
            let floor = Rational::from_integer(BigInt::from_f64(fl).expect("finite floor"));
            return NodeOutcome::Solved {
                key,
                tol,
                branch: Some((j, floor)),
                point: None,
                warm: Some(sol),
            };
        }
        let point = self.exact_point(&values, bounds);
        if point.is_none() {
            return NodeOutcome::Failed;
        }
        NodeOutcome::Solved {
            key,
            tol,
            branch: None,
            point,
            warm: Some(sol),
        }
    }

    /// Rounds integer values and, when continuous variables exist, solves
    /// for them exactly with the integers fixed. The result is checked
    /// against the exact model.
    fn exact_point(&self, values: &[f64], node_bounds: &[Bound]) -> Option<Vec<Rational>> {
        let mut point = Vec::with_capacity(values.len());
        let mut continuous = false;
        for (var, &v) in self.model.variables.iter().zip(values) {
            if var.integer {
                point.push(Rational::from_integer(BigInt::from_f64(v.round())?));
            } else {
                continuous = true;
                point.push(Rational::zero());
            }
        }
        if continuous {
            let mut bounds = node_bounds.to_vec();
            for (j, var) in self.model.variables.iter().enumerate() {
                if var.integer {
                    bounds[j] = (Some(point[j].clone()), Some(point[j].clone()));
                }
            }
            let out = simplex::solve(self.model, &bounds, None).ok()?;
            point = out.values?;
        }
        self.model.check(&point).ok()?;
        let inside = point.iter().zip(node_bounds).all(|(v, (lo, hi))| {
            lo.as_ref().is_none_or(|l| v >= l) && hi.as_ref().is_none_or(|h| v <= h)
        });
        inside.then_some(point)
    }
}

impl Relaxation for FloatRelaxation<'_> {
    type Warm = microlp::Solution;

    fn solve(
        &mut self,
        bounds: &[Bound],
        warm: Option<WarmEdit<microlp::Solution>>,
        deadline: Option<Instant>,
    ) -> NodeOutcome<microlp::Solution> {
        if bounds
            .iter()
            .any(|b| matches!(b, (Some(l), Some(h)) if l > h))
        {
            return NodeOutcome::Infeasible;
        }
        if let Some(edit) = warm {
            let value = crate::float::to_f64(&edit.value);
            match self.lp.tighten(edit.state, edit.var, edit.upper, value) {
                FloatResult::Optimal(sol) => return self.evaluate(*sol, bounds),
                FloatResult::Infeasible => return NodeOutcome::Infeasible,
                // fall back to a cold solve below
                _ => {}
            }
        }
        match self.lp.solve(bounds, deadline) {
            FloatResult::Optimal(sol) => self.evaluate(*sol, bounds),
            FloatResult::Infeasible => NodeOutcome::Infeasible,
            FloatResult::Unbounded => NodeOutcome::Unbounded,
            FloatResult::TimedOut => NodeOutcome::TimedOut,
            FloatResult::Failed(_) => NodeOutcome::Failed,
        }
    }
}

/// Branching decisions on the way from the root, applied in order.
type Path = Vec<(usize, Bound)>;

struct Pending<W> {
    key: Rational,
    seq: u64,
    path: Path,
    warm: Option<WarmEdit<W>>,
}

impl<W> PartialEq for Pending<W> {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl<W> Eq for Pending<W> {}

impl<W> PartialOrd for Pending<W> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl<W> Ord for Pending<W> {
    /// Larger bound first; among equal bounds the older node first.
    fn cmp(&self, other: &Self) -> Ordering {
        self.key
            .cmp(&other.key)
            .then_with(|| other.seq.cmp(&self.seq))
    }
}

/// Branch and bound over the model's integer variables.
pub fn solve_mip(model: &Model, options: &SolveOptions) -> SolveResult {
    let engine = match options.engine {
        Engine::Auto => {
            let m = model.constraints.len();
            if m * (model.num_vars() + 2 * m) <= EXACT_SIZE_LIMIT {
                Engine::Exact
            } else {
                Engine::Float
            }
        }
        e => e,
    };
    if options.time_limit.is_some_and(|d| d.is_zero()) {
        return SolveResult::empty(Status::TimeLimit, engine);
    }
    let deadline = options.time_limit.map(|d| Instant::now() + d);
    let Some((reduced, bounds)) = singleton_bounds(model) else {
        return SolveResult::empty(Status::Infeasible, engine);
    };
    let mut res = match engine {
        Engine::Float => {
            let lp = FloatLp::new(&reduced);
            let mut relax = FloatRelaxation { model: &reduced, lp };
            search(&reduced, bounds, &mut relax, options.node_limit, deadline)
        }
        _ => {
            let mut relax = ExactRelaxation { model: &reduced };
            search(&reduced, bounds, &mut relax, options.node_limit, deadline)
        }
    };
    res.engine = engine;
    if let Some(values) = &res.values {
        // independent re-check against the caller's model
        if model.check(values).is_err() {
            res.values = None;
            res.objective = None;
            res.numerical_failures += 1;
            if res.status == Status::Optimal {
                res.status = Status::Unproven;
            }
        }
    }
    res
}

fn search<R: Relaxation>(
    model: &Model,
    root_bounds: Vec<Bound>,
    relax: &mut R,
    node_limit: u64,
    deadline: Option<Instant>,
) -> SolveResult {
    let granularity = model.objective_granularity();
    let mut res = SolveResult::empty(Status::Optimal, Engine::Auto);
    let mut incumbent: Option<(Rational, Vec<Rational>)> = None;
    let mut heap: BinaryHeap<Pending<R::Warm>> = BinaryHeap::new();
    let mut seq = 0u64;

    // a node may improve on the incumbent only if its bound reaches this
    let threshold = |inc: &Option<(Rational, Vec<Rational>)>, tol: &Rational| {
        inc.as_ref().map(|(v, _)| match &granularity {
            Some(g) => v + g - tol,
            None => v + tol,
        })
    };
    let can_improve = |key: &Rational, thr: &Option<Rational>, strict: bool| match thr {
        None => true,
        Some(t) if strict => key > t,
        Some(t) => key >= t,
    };

    let mut current: Option<(Path, Option<WarmEdit<R::Warm>>)> = Some((Vec::new(), None));
    let mut stopped: Option<Status> = None;
    let mut is_root = true;
    loop {
        let (path, warm) = match current.take() {
            Some(node) => node,
            None => {
                let Some(p) = heap.pop() else { break };
                let thr = threshold(&incumbent, &Rational::zero());
                if !can_improve(&p.key, &thr, granularity.is_none()) {
                    heap.clear();
                    break;
                }
                (p.path, p.warm)
            }
        };
        let mut bounds = root_bounds.clone();
        for (j, b) in &path {
            bounds[*j] = b.clone();
        }
        if deadline.is_some_and(|d| Instant::now() >= d) {
            stopped = Some(Status::TimeLimit);
            break;
        }
        if res.nodes >= node_limit {
            stopped = Some(Status::NodeLimit);
            break;
        }
        res.nodes += 1;
        let outcome = relax.solve(&bounds, warm, deadline);
        let root = std::mem::replace(&mut is_root, false);
        match outcome {
            NodeOutcome::Infeasible => {
                if root {
                    res.status = Status::Infeasible;
                    return res;
                }
            }
            NodeOutcome::Unbounded => {
                if root || incumbent.is_none() {
                    res.status = Status::Unbounded;
                    return res;
                }
                res.numerical_failures += 1;
            }
            NodeOutcome::TimedOut => {
                stopped = Some(Status::TimeLimit);
                break;
            }
            NodeOutcome::Failed => {
                res.numerical_failures += 1;
            }
            NodeOutcome::Solved {
                key,
                tol,
                branch,
                point,
                warm,
            } => {
                if root {
                    res.root_bound = Some(max_form(model.sense, key.clone()));
                }
                let thr = threshold(&incumbent, &tol);
                if !can_improve(&key, &thr, granularity.is_none()) {
                    continue;
                }
                if let Some(point) = point {
                    let value = max_form(model.sense, model.objective_value(&point));
                    if incumbent.as_ref().is_none_or(|(v, _)| &value > v) {
                        incumbent = Some((value, point));
                    }
                    continue;
                }
                let Some((j, floor)) = branch else {
                    res.numerical_failures += 1;
                    continue;
                };
                let ceil = &floor + Rational::one();
                let mut down = path.clone();
                down.push((j, (bounds[j].0.clone(), Some(floor.clone()))));
                let mut up = path;
                up.push((j, (Some(ceil.clone()), bounds[j].1.clone())));
                let up_warm = match &warm {
                    Some(w) if heap.len() < WARM_SLOTS => Some(WarmEdit {
                        state: w.clone(),
                        var: j,
                        upper: false,
                        value: ceil,
                    }),
                    _ => None,
                };
                seq += 1;
                heap.push(Pending {
                    key: key.clone(),
                    seq,
                    path: up,
                    warm: up_warm,
                });
                let down_warm = warm.map(|w| WarmEdit {
                    state: w,
                    var: j,
                    upper: true,
                    value: floor,
                });
                current = Some((down, down_warm));
            }
        }
    }

    res.status = match (stopped, &incumbent) {
        (Some(s), _) => s,
        (None, None) if res.numerical_failures > 0 => Status::Unproven,
        (None, None) => Status::Infeasible,
        (None, Some(_)) if res.numerical_failures > 0 => Status::Unproven,
        (None, Some(_)) => Status::Optimal,
    };
    if let Some((_, point)) = incumbent {
        res.objective = Some(model.objective_value(&point));
        res.values = Some(point);
    }
    res
}
