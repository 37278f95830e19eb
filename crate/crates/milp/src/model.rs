use std::collections::HashMap;
use std::fmt;

use num_traits::{One, Signed, Zero};

use crate::Rational;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct VarId(pub usize);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Sense {
    Maximize,
    Minimize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Cmp {
    Le,
    Ge,
    Eq,
}

impl Cmp {
    pub fn holds(self, lhs: &Rational, rhs: &Rational) -> bool {
        match self {
            Cmp::Le => lhs <= rhs,
            Cmp::Ge => lhs >= rhs,
            Cmp::Eq => lhs == rhs,
        }
    }

    pub fn symbol(self) -> &'static str {
        match self {
            Cmp::Le => "<=",
            Cmp::Ge => ">=",
            Cmp::Eq => "=",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Variable {
    pub name: String,
    pub lower: Option<Rational>,
    pub upper: Option<Rational>,
    pub integer: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Constraint {
    pub name: String,
    pub terms: Vec<(VarId, Rational)>,
    pub cmp: Cmp,
    pub rhs: Rational,
}

impl Constraint {
    pub fn lhs(&self, values: &[Rational]) -> Rational {
        self.terms
            .iter()
            .fold(Rational::zero(), |acc, (v, a)| acc + a * &values[v.0])
    }
}

/// A linear program with optional integrality marks.
///
/// Constraints keep their insertion order; that order is the canonical
/// order used by the MPS writer and by the solvers' tie-breaking.
#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub name: String,
    pub sense: Sense,
    pub variables: Vec<Variable>,
    pub constraints: Vec<Constraint>,
    pub objective: Vec<(VarId, Rational)>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Violation {
    WrongLength { expected: usize, got: usize },
    LowerBound { var: String },
    UpperBound { var: String },
    NotIntegral { var: String },
    Row { row: String },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::WrongLength { expected, got } => {
                write!(f, "assignment has {got} values, model has {expected} variables")
            }
            Violation::LowerBound { var } => write!(f, "{var} is below its lower bound"),
            Violation::UpperBound { var } => write!(f, "{var} is above its upper bound"),
            Violation::NotIntegral { var } => write!(f, "{var} is not integral"),
            Violation::Row { row } => write!(f, "constraint {row} is violated"),
        }
    }
}

impl Model {
    pub fn new(name: impl Into<String>, sense: Sense) -> Self {
        Model {
            name: name.into(),
            sense,
            variables: Vec::new(),
            constraints: Vec::new(),
            objective: Vec::new(),
        }
    }

    pub fn add_var(
        &mut self,
        name: impl Into<String>,
        lower: Option<Rational>,
        upper: Option<Rational>,
        integer: bool,
    ) -> VarId {
        self.variables.push(Variable {
            name: name.into(),
            lower,
            upper,
            integer,
        });
        VarId(self.variables.len() - 1)
    }

    /// Nonnegative integer variable.
    pub fn add_int(&mut self, name: impl Into<String>) -> VarId {
        self.add_var(name, Some(Rational::zero()), None, true)
    }

    /// Terms are stored sorted by column with repeats summed and zeros
    /// dropped.
    pub fn add_constraint(
        &mut self,
        name: impl Into<String>,
        mut terms: Vec<(VarId, Rational)>,
        cmp: Cmp,
        rhs: Rational,
    ) -> usize {
        terms.sort_by_key(|t| t.0);
        let mut merged: Vec<(VarId, Rational)> = Vec::with_capacity(terms.len());
        for (v, c) in terms {
            match merged.last_mut() {
                Some((w, d)) if *w == v => *d += c,
                _ => merged.push((v, c)),
            }
        }
        merged.retain(|(_, c)| !c.is_zero());
        let terms = merged;
        self.constraints.push(Constraint {
            name: name.into(),
            terms,
            cmp,
            rhs,
        });
        self.constraints.len() - 1
    }

    pub fn num_vars(&self) -> usize {
        self.variables.len()
    }

    pub fn is_pure_integer(&self) -> bool {
        self.variables.iter().all(|v| v.integer)
    }

    pub fn has_integers(&self) -> bool {
        self.variables.iter().any(|v| v.integer)
    }

    pub fn name_index(&self) -> HashMap<&str, VarId> {
        self.variables
            .iter()
            .enumerate()
            .map(|(i, v)| (v.name.as_str(), VarId(i)))
            .collect()
    }

    pub fn objective_value(&self, values: &[Rational]) -> Rational {
        self.objective
            .iter()
            .fold(Rational::zero(), |acc, (v, c)| acc + c * &values[v.0])
    }

    /// Direct substitution check of bounds, integrality and every row.
    pub fn check(&self, values: &[Rational]) -> Result<(), Violation> {
        if values.len() != self.variables.len() {
            return Err(Violation::WrongLength {
                expected: self.variables.len(),
                got: values.len(),
            });
        }
        for (var, x) in self.variables.iter().zip(values) {
            if var.lower.as_ref().is_some_and(|l| x < l) {
                return Err(Violation::LowerBound {
                    var: var.name.clone(),
                });
            }
            if var.upper.as_ref().is_some_and(|u| x > u) {
                return Err(Violation::UpperBound {
                    var: var.name.clone(),
                });
            }
            if var.integer && !x.is_integer() {
                return Err(Violation::NotIntegral {
                    var: var.name.clone(),
                });
            }
        }
        for row in &self.constraints {
            if !row.cmp.holds(&row.lhs(values), &row.rhs) {
                return Err(Violation::Row {
                    row: row.name.clone(),
                });
            }
        }
        Ok(())
    }

    /// Copy without integrality marks.
    pub fn relaxation(&self) -> Model {
        let mut m = self.clone();
        for v in &mut m.variables {
            v.integer = false;
        }
        m
    }

    /// A positive g such that every objective value at an integral point is
    /// a multiple of g, or `None` when some continuous variable carries cost.
    pub fn objective_granularity(&self) -> Option<Rational> {
        let mut num = num_bigint::BigInt::zero();
        let mut den = num_bigint::BigInt::one();
        for (v, c) in &self.objective {
            if c.is_zero() {
                continue;
            }
            if !self.variables[v.0].integer {
                return None;
            }
            num = num_integer::Integer::gcd(&num, c.numer());
            den = num_integer::Integer::lcm(&den, c.denom());
        }
        if num.is_zero() {
            return None;
        }
        Some(Rational::new(num.abs(), den))
    }
}
