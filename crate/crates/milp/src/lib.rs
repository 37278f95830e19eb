//! Mixed-integer linear programming for small integer models.
//!
//! Models carry exact rational data. LP relaxations are solved either by an
//! exact rational simplex or by a floating-point engine whose integral
//! points are re-verified exactly before they are accepted.

pub mod bnb;
pub mod float;
pub mod model;
pub mod mps;
pub mod simplex;

pub type Rational = num_rational::BigRational;

pub use bnb::{solve_lp, solve_mip, Engine, SolveOptions, SolveResult, Status};
pub use model::{Cmp, Constraint, Model, Sense, VarId, Variable, Violation};
pub use mps::{read_mps, read_solution, write_mps, write_solution, MpsError};

/// Parses `"3"`, `"-2/5"` or a finite decimal such as `"0.25"` exactly.
pub fn parse_rational(text: &str) -> Option<Rational> {
    use num_bigint::BigInt;
    use num_traits::Zero;

    let s = text.trim();
    if s.is_empty() {
        return None;
    }
    if let Some((n, d)) = s.split_once('/') {
        let n: BigInt = n.trim().parse().ok()?;
        let d: BigInt = d.trim().parse().ok()?;
        if d.is_zero() {
            return None;
        }
        return Some(Rational::new(n, d));
    }
    let (mantissa, exp) = match s.find(['e', 'E']) {
        Some(i) => (&s[..i], s[i + 1..].parse::<i32>().ok()?),
        None => (s, 0),
    };
    let (neg, digits) = match mantissa.strip_prefix('-') {
        Some(rest) => (true, rest),
        None => (false, mantissa.strip_prefix('+').unwrap_or(mantissa)),
    };
    let (int_part, frac_part) = digits.split_once('.').unwrap_or((digits, ""));
    if int_part.is_empty() && frac_part.is_empty() {
        return None;
    }
    if !int_part.chars().chain(frac_part.chars()).all(|c| c.is_ascii_digit()) {
        return None;
    }
    let all: BigInt = format!("{int_part}{frac_part}0").parse::<BigInt>().ok()? / 10;
    let ten = BigInt::from(10);
    let scale = exp - frac_part.len() as i32;
    let mut value = Rational::from_integer(all);
    let factor = Rational::from_integer(num_traits::pow(ten, scale.unsigned_abs() as usize));
    if scale >= 0 {
        value *= factor;
    } else {
        value /= factor;
    }
    if neg {
        value = -value;
    }
    Some(value)
}

/// Renders a rational as `n` or `n/d`.
pub fn format_rational(r: &Rational) -> String {
    if r.is_integer() {
        r.numer().to_string()
    } else {
        format!("{}/{}", r.numer(), r.denom())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_exact_forms() {
        let r = |n: i64, d: i64| Rational::new(n.into(), d.into());
        assert_eq!(parse_rational("3"), Some(r(3, 1)));
        assert_eq!(parse_rational("-2/5"), Some(r(-2, 5)));
        assert_eq!(parse_rational("0.4"), Some(r(2, 5)));
        assert_eq!(parse_rational(".5"), Some(r(1, 2)));
        assert_eq!(parse_rational("1e2"), Some(r(100, 1)));
        assert_eq!(parse_rational("2.5E-1"), Some(r(1, 4)));
        assert_eq!(parse_rational("x"), None);
        assert_eq!(parse_rational("1/0"), None);
    }
}
