//! Dense bounded-variable primal simplex over exact rationals.
//!
//! Two phases with one artificial per row. Entering and leaving choices
//! follow Bland's rule (lowest index), which rules out cycling.

use std::time::Instant;

use num_traits::{One, Signed, Zero};

use crate::model::{Cmp, Model, Sense};
use crate::Rational;

pub type Bound = (Option<Rational>, Option<Rational>);

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum LpStatus {
    Optimal,
    Infeasible,
    Unbounded,
}

#[derive(Clone, Debug)]
pub struct LpOutcome {
    pub status: LpStatus,
    /// Objective in the model's own sense.
    pub objective: Option<Rational>,
    pub values: Option<Vec<Rational>>,
    /// Row multipliers from the final basis (model sense).
    pub duals: Option<Vec<Rational>>,
    /// Lagrangian bound implied by `duals`; `None` when it is infinite.
    pub dual_bound: Option<Rational>,
    pub iterations: u64,
}

impl LpOutcome {
    fn bare(status: LpStatus, iterations: u64) -> Self {
        LpOutcome {
            status,
            objective: None,
            values: None,
            duals: None,
            dual_bound: None,
            iterations,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TimedOut;

struct Tableau {
    rows: Vec<Vec<Rational>>,
    basis: Vec<usize>,
    beta: Vec<Rational>,
    /// Value of every column; meaningful for nonbasic columns.
    x: Vec<Rational>,
    is_basic: Vec<bool>,
    lo: Vec<Option<Rational>>,
    hi: Vec<Option<Rational>>,
    iterations: u64,
}

enum Step {
    Optimal,
    Unbounded,
    Moved,
}

impl Tableau {
    fn reduced_costs(&self, c: &[Rational]) -> Vec<Rational> {
        let mut d = c.to_vec();
        for (i, row) in self.rows.iter().enumerate() {
            let cb = &c[self.basis[i]];
            if cb.is_zero() {
                continue;
            }
            for (j, a) in row.iter().enumerate() {
                if !a.is_zero() {
                    d[j] -= cb * a;
                }
            }
        }
        d
    }

    fn fixed(&self, j: usize) -> bool {
        matches!((&self.lo[j], &self.hi[j]), (Some(l), Some(h)) if l == h)
    }

    fn step(&mut self, d: &mut [Rational]) -> Step {
        let ncols = d.len();
        let mut entering = None;
        for j in 0..ncols {
            if self.is_basic[j] || self.fixed(j) || d[j].is_zero() {
                continue;
            }
            if d[j].is_positive() && self.hi[j].as_ref().is_none_or(|h| &self.x[j] < h) {
                entering = Some((j, true));
                break;
            }
            if d[j].is_negative() && self.lo[j].as_ref().is_none_or(|l| &self.x[j] > l) {
                entering = Some((j, false));
                break;
            }
        }
        let Some((q, up)) = entering else {
            return Step::Optimal;
        };

        // (theta, variable index, row or None for a bound flip)
        let mut best: Option<(Rational, usize, Option<usize>)> = None;
        let mut consider = |theta: Rational, var: usize, row: Option<usize>| {
            let better = match &best {
                None => true,
                Some((t, v, _)) => theta < *t || (theta == *t && var < *v),
            };
            if better {
                best = Some((theta, var, row));
            }
        };
        if let (Some(l), Some(h)) = (&self.lo[q], &self.hi[q]) {
            consider(h - l, q, None);
        }
        for (i, row) in self.rows.iter().enumerate() {
            let a = &row[q];
            if a.is_zero() {
                continue;
            }
            let b = self.basis[i];
            // rate of change of the basic variable per unit step
            let rate = if up { -a.clone() } else { a.clone() };
            if rate.is_negative() {
                if let Some(l) = &self.lo[b] {
                    consider((&self.beta[i] - l) / (-&rate), b, Some(i));
                }
            } else if let Some(h) = &self.hi[b] {
                consider((h - &self.beta[i]) / &rate, b, Some(i));
            }
        }
        let Some((theta, _, leave)) = best else {
            return Step::Unbounded;
        };
        self.iterations += 1;

        if !theta.is_zero() {
            for (i, row) in self.rows.iter().enumerate() {
                let a = &row[q];
                if a.is_zero() {
                    continue;
                }
                let delta = a * &theta;
                if up {
                    self.beta[i] -= delta;
                } else {
                    self.beta[i] += delta;
                }
            }
            if up {
                self.x[q] += &theta;
            } else {
                self.x[q] -= &theta;
            }
        }

        let Some(r) = leave else {
            return Step::Moved;
        };
        let out = self.basis[r];
        let rate_up = {
            let a = &self.rows[r][q];
            if up {
                a.is_negative()
            } else {
                a.is_positive()
            }
        };
        self.x[out] = if rate_up {
            self.hi[out].clone().expect("bounded leaving variable")
        } else {
            self.lo[out].clone().expect("bounded leaving variable")
        };
        self.is_basic[out] = false;
        self.is_basic[q] = true;
        self.basis[r] = q;
        self.beta[r] = self.x[q].clone();

        let pivot = self.rows[r][q].clone();
        if !pivot.is_one() {
            for a in self.rows[r].iter_mut() {
                if !a.is_zero() {
                    *a /= &pivot;
                }
            }
        }
        let nz: Vec<usize> = (0..ncols).filter(|&j| !self.rows[r][j].is_zero()).collect();
        let prow = std::mem::take(&mut self.rows[r]);
        for (i, row) in self.rows.iter_mut().enumerate() {
            if i == r {
                continue;
            }
            let f = row[q].clone();
            if f.is_zero() {
                continue;
            }
            for &j in &nz {
                row[j] -= &f * &prow[j];
            }
        }
        let f = d[q].clone();
        if !f.is_zero() {
            for &j in &nz {
                d[j] -= &f * &prow[j];
            }
        }
        self.rows[r] = prow;
        Step::Moved
    }

    fn run(&mut self, d: &mut [Rational], deadline: Option<Instant>) -> Result<Step, TimedOut> {
        loop {
            if self.iterations % 16 == 0 && deadline.is_some_and(|t| Instant::now() >= t) {
                return Err(TimedOut);
            }
            match self.step(d) {
                Step::Moved => continue,
                other => return Ok(other),
            }
        }
    }

    fn value(&self, j: usize) -> Rational {
        if self.is_basic[j] {
            let r = self.basis.iter().position(|&b| b == j).expect("basic column");
            self.beta[r].clone()
        } else {
            self.x[j].clone()
        }
    }
}

fn start_value(lo: &Option<Rational>, hi: &Option<Rational>) -> Rational {
    match (lo, hi) {
        (Some(l), _) => l.clone(),
        (None, Some(h)) => h.clone(),
        (None, None) => Rational::zero(),
    }
}

/// Solves the LP relaxation of `model` with the variable bounds replaced by
/// `bounds` (one entry per variable).
pub fn solve(
    model: &Model,
    bounds: &[Bound],
    deadline: Option<Instant>,
) -> Result<LpOutcome, TimedOut> {
    let n = model.variables.len();
    let m = model.constraints.len();
    for (l, h) in bounds {
        if let (Some(l), Some(h)) = (l, h) {
            if l > h {
                return Ok(LpOutcome::bare(LpStatus::Infeasible, 0));
            }
        }
    }
    let ncols = n + 2 * m;
    let mut lo: Vec<Option<Rational>> = Vec::with_capacity(ncols);
    let mut hi: Vec<Option<Rational>> = Vec::with_capacity(ncols);
    for (l, h) in bounds {
        lo.push(l.clone());
        hi.push(h.clone());
    }
    for row in &model.constraints {
        let zero = Some(Rational::zero());
        match row.cmp {
            Cmp::Le => {
                lo.push(zero);
                hi.push(None);
            }
            Cmp::Ge => {
                lo.push(None);
                hi.push(zero);
            }
            Cmp::Eq => {
                lo.push(zero.clone());
                hi.push(zero);
            }
        }
    }
    for _ in 0..m {
        lo.push(Some(Rational::zero()));
        hi.push(None);
    }
    let mut x: Vec<Rational> = (0..ncols).map(|j| start_value(&lo[j], &hi[j])).collect();

    let mut rows = Vec::with_capacity(m);
    let mut beta = Vec::with_capacity(m);
    let mut signs = Vec::with_capacity(m);
    for (i, row) in model.constraints.iter().enumerate() {
        let mut dense = vec![Rational::zero(); ncols];
        for (v, a) in &row.terms {
            dense[v.0] += a;
        }
        let r = dense[..n]
            .iter()
            .zip(&x[..n])
            .fold(row.rhs.clone(), |acc, (a, xv)| acc - a * xv);
        let neg = r.is_negative();
        if neg {
            for a in dense.iter_mut() {
                if !a.is_zero() {
                    *a = -a.clone();
                }
            }
            dense[n + i] = -Rational::one();
        } else {
            dense[n + i] = Rational::one();
        }
        dense[n + m + i] = Rational::one();
        signs.push(if neg { -Rational::one() } else { Rational::one() });
        beta.push(r.abs());
        rows.push(dense);
    }
    let basis: Vec<usize> = (0..m).map(|i| n + m + i).collect();
    let mut is_basic = vec![false; ncols];
    for &b in &basis {
        is_basic[b] = true;
    }
    for &b in &basis {
        x[b] = Rational::zero();
    }
    let mut t = Tableau {
        rows,
        basis,
        beta,
        x,
        is_basic,
        lo,
        hi,
        iterations: 0,
    };

    // phase 1: maximize minus the sum of artificials
    let mut c1 = vec![Rational::zero(); ncols];
    for c in c1.iter_mut().skip(n + m) {
        *c = -Rational::one();
    }
    let mut d = t.reduced_costs(&c1);
    t.run(&mut d, deadline)?;
    let infeas = (0..m).fold(Rational::zero(), |acc, i| acc + t.value(n + m + i));
    if infeas.is_positive() {
        return Ok(LpOutcome::bare(LpStatus::Infeasible, t.iterations));
    }
    for j in n + m..ncols {
        t.hi[j] = Some(Rational::zero());
        if !t.is_basic[j] {
            t.x[j] = Rational::zero();
        }
    }

    // phase 2 in maximization form
    let flip = model.sense == Sense::Minimize;
    let mut c2 = vec![Rational::zero(); ncols];
    for (v, a) in &model.objective {
        if flip {
            c2[v.0] -= a;
        } else {
            c2[v.0] += a;
        }
    }
    let mut d = t.reduced_costs(&c2);
    if let Step::Unbounded = t.run(&mut d, deadline)? {
        return Ok(LpOutcome::bare(LpStatus::Unbounded, t.iterations));
    }

    let values: Vec<Rational> = (0..n).map(|j| t.value(j)).collect();
    let objective = model.objective_value(&values);
    let mut duals = vec![Rational::zero(); m];
    for (i, y) in duals.iter_mut().enumerate() {
        let col = n + m + i;
        let s = t
            .rows
            .iter()
            .zip(&t.basis)
            .fold(Rational::zero(), |acc, (row, &b)| acc + &c2[b] * &row[col]);
        *y = s * &signs[i];
    }
    let dual_bound = lagrangian_bound(model, bounds, &c2, &duals).map(|b| if flip { -b } else { b });
    if flip {
        for y in duals.iter_mut() {
            *y = -y.clone();
        }
    }
    Ok(LpOutcome {
        status: LpStatus::Optimal,
        objective: Some(objective),
        values: Some(values),
        duals: Some(duals),
        dual_bound,
        iterations: t.iterations,
    })
}

/// Upper bound on max c·x implied by row multipliers `y`, computed from the
/// original rows and bounds only.
fn lagrangian_bound(
    model: &Model,
    bounds: &[Bound],
    c: &[Rational],
    y: &[Rational],
) -> Option<Rational> {
    let n = model.variables.len();
    let mut rc: Vec<Rational> = c[..n].to_vec();
    let mut total = Rational::zero();
    for (row, yi) in model.constraints.iter().zip(y) {
        if yi.is_zero() {
            continue;
        }
        total += yi * &row.rhs;
        for (v, a) in &row.terms {
            rc[v.0] -= yi * a;
        }
        let slack_ok = match row.cmp {
            Cmp::Le => !yi.is_negative(),
            Cmp::Ge => !yi.is_positive(),
            Cmp::Eq => true,
        };
        if !slack_ok {
            return None;
        }
    }
    for (r, (l, h)) in rc.iter().zip(bounds) {
        if r.is_positive() {
            total += r * h.as_ref()?;
        } else if r.is_negative() {
            total += r * l.as_ref()?;
        }
    }
    Some(total)
}

pub fn model_bounds(model: &Model) -> Vec<Bound> {
    model
        .variables
        .iter()
        .map(|v| (v.lower.clone(), v.upper.clone()))
        .collect()
}
