//! Floating-point LP relaxations backed by `microlp`.
//!
//! Values coming out of this module are never trusted as they are. The
//! branch-and-bound driver rounds them and re-checks the rounded point
//! against the exact model.

use std::time::{Duration, Instant};

use microlp::{ComparisonOp, OptimizationDirection, Problem, Solution, SolutionStatus, SolveOutcome};
use num_traits::ToPrimitive;

use crate::model::{Cmp, Model, Sense};
use crate::simplex::Bound;
use crate::Rational;

pub enum FloatResult {
    Optimal(Box<Solution>),
    Infeasible,
    Unbounded,
    TimedOut,
    Failed(String),
}

/// The relaxation data of a model, converted once to `f64`.
pub struct FloatLp {
    objective: Vec<f64>,
    rows: Vec<(Vec<(usize, f64)>, ComparisonOp, f64)>,
    direction: OptimizationDirection,
    vars: Vec<microlp::Variable>,
}

pub fn to_f64(r: &Rational) -> f64 {
    r.to_f64().unwrap_or(f64::NAN)
}

fn op(cmp: Cmp) -> ComparisonOp {
    match cmp {
        Cmp::Le => ComparisonOp::Le,
        Cmp::Ge => ComparisonOp::Ge,
        Cmp::Eq => ComparisonOp::Eq,
    }
}

impl FloatLp {
    pub fn new(model: &Model) -> Self {
        let mut objective = vec![0.0; model.num_vars()];
        for (v, c) in &model.objective {
            objective[v.0] += to_f64(c);
        }
        let rows = model
            .constraints
            .iter()
            .map(|row| {
                let terms = row.terms.iter().map(|(v, a)| (v.0, to_f64(a))).collect();
                (terms, op(row.cmp), to_f64(&row.rhs))
            })
            .collect();
        let direction = match model.sense {
            Sense::Maximize => OptimizationDirection::Maximize,
            Sense::Minimize => OptimizationDirection::Minimize,
        };
        FloatLp {
            objective,
            rows,
            direction,
            vars: Vec::new(),
        }
    }

    /// Cold solve with the given variable bounds.
    pub fn solve(&mut self, bounds: &[Bound], deadline: Option<Instant>) -> FloatResult {
        let mut problem = Problem::new(self.direction);
        if let Some(d) = deadline {
            let left = d.saturating_duration_since(Instant::now());
            if left.is_zero() {
                return FloatResult::TimedOut;
            }
            problem.set_time_limit(left.max(Duration::from_millis(1)));
        }
        self.vars = self
            .objective
            .iter()
            .zip(bounds)
            .map(|(&c, (l, h))| {
                let lo = l.as_ref().map_or(f64::NEG_INFINITY, to_f64);
                let hi = h.as_ref().map_or(f64::INFINITY, to_f64);
                problem.add_var(c, (lo, hi))
            })
            .collect();
        for (terms, cmp, rhs) in &self.rows {
            let expr: Vec<(microlp::Variable, f64)> =
                terms.iter().map(|&(j, a)| (self.vars[j], a)).collect();
            problem.add_constraint(expr, *cmp, *rhs);
        }
        finish(problem.solve())
    }

    /// Warm re-solve of `warm` after adding `x_var <= value` (or `>=`).
    pub fn tighten(&self, warm: Solution, var: usize, upper: bool, value: f64) -> FloatResult {
        let cmp = if upper {
            ComparisonOp::Le
        } else {
            ComparisonOp::Ge
        };
        finish(warm.add_constraint([(self.vars[var], 1.0)], cmp, value))
    }

    pub fn values(&self, sol: &Solution) -> Vec<f64> {
        self.vars.iter().map(|&v| sol.var_value_raw(v)).collect()
    }
}

fn finish(outcome: Result<SolveOutcome, microlp::Error>) -> FloatResult {
    match outcome {
        Ok(SolveOutcome::Solution(sol)) if sol.status() == SolutionStatus::Optimal => {
            FloatResult::Optimal(Box::new(sol))
        }
        Ok(_) => FloatResult::TimedOut,
        Err(microlp::Error::Infeasible) => FloatResult::Infeasible,
        Err(microlp::Error::Unbounded) => FloatResult::Unbounded,
        Err(e) => FloatResult::Failed(e.to_string()),
    }
}
