//! Fixed-format MPS export and import.
//!
//! Columns and rows are written under short codes (`C0000001`,
//! `R0000001`) so that every name fits its field. The descriptive names
//! travel in `*` comment lines and are restored on import. The objective is
//! written for minimization with integer coefficients; rows holding
//! fractions are multiplied by a positive integer. Both scalings are
//! recorded in comments and undone by the reader.

use std::collections::HashMap;
use std::fmt::Write as _;

use num_bigint::BigInt;
use num_integer::Integer;
use num_traits::{One, Signed, Zero};

use crate::model::{Cmp, Constraint, Model, Sense, VarId, Variable};
use crate::{format_rational, parse_rational, Rational};

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum MpsError {
    #[error("line {line}: {msg}")]
    Syntax { line: usize, msg: String },
    #[error("unknown variable `{0}`")]
    UnknownVariable(String),
    #[error("unknown row `{0}`")]
    UnknownRow(String),
    #[error("variable `{0}` assigned twice")]
    Duplicate(String),
}

fn col_code(j: usize) -> String {
    format!("C{:07}", j + 1)
}

fn row_code(i: usize) -> String {
    format!("R{:07}", i + 1)
}

/// Lcm of the denominators of `values`.
fn denominator_lcm<'a>(values: impl IntoIterator<Item = &'a Rational>) -> BigInt {
    values
        .into_iter()
        .fold(BigInt::one(), |acc, r| acc.lcm(r.denom()))
}

fn fields(out: &mut String, f1: &str, f2: &str, f3: &str, f4: &str) {
    let line = format!(" {f1:<2} {f2:<8}  {f3:<8}  {f4}");
    out.push_str(line.trim_end());
    out.push('\n');
}

/// Writes `model` in fixed MPS format.
pub fn write_mps(model: &Model) -> String {
    let mut out = String::new();
    let obj_scale = denominator_lcm(model.objective.iter().map(|(_, c)| c));
    let sense_sign = match model.sense {
        Sense::Maximize => -Rational::one(),
        Sense::Minimize => Rational::one(),
    };
    let obj_factor = &sense_sign * Rational::from_integer(obj_scale.clone());
    let row_scales: Vec<BigInt> = model
        .constraints
        .iter()
        .map(|row| denominator_lcm(row.terms.iter().map(|(_, a)| a).chain([&row.rhs])))
        .collect();

    let name = if model.name.trim().is_empty() {
        "MODEL"
    } else {
        model.name.trim()
    };
    out.push_str("* evac-milp export\n");
    let sense = match model.sense {
        Sense::Maximize => "MAX",
        Sense::Minimize => "MIN",
    };
    let _ = writeln!(out, "* SENSE {sense}");
    let _ = writeln!(out, "* OBJSCALE {obj_scale}");
    for (j, v) in model.variables.iter().enumerate() {
        let _ = writeln!(out, "* COL {} {}", col_code(j), v.name);
    }
    for (i, row) in model.constraints.iter().enumerate() {
        let _ = writeln!(out, "* ROW {} {}", row_code(i), row.name);
        if !row_scales[i].is_one() {
            let _ = writeln!(out, "* SCALE {} {}", row_code(i), row_scales[i]);
        }
    }
    let _ = writeln!(out, "NAME          {name}");
    out.push_str("ROWS\n");
    fields(&mut out, "N", "OBJ", "", "");
    for (i, row) in model.constraints.iter().enumerate() {
        let kind = match row.cmp {
            Cmp::Le => "L",
            Cmp::Ge => "G",
            Cmp::Eq => "E",
        };
        fields(&mut out, kind, &row_code(i), "", "");
    }

    // column-major view with summed duplicates
    let mut columns: Vec<Vec<(String, Rational)>> = vec![Vec::new(); model.num_vars()];
    let mut obj = vec![Rational::zero(); model.num_vars()];
    for (v, c) in &model.objective {
        obj[v.0] += c;
    }
    for (j, c) in obj.iter().enumerate() {
        if !c.is_zero() {
            columns[j].push(("OBJ".into(), c * &obj_factor));
        }
    }
    for (i, row) in model.constraints.iter().enumerate() {
        let scale = Rational::from_integer(row_scales[i].clone());
        let mut acc: Vec<(usize, Rational)> = Vec::new();
        for (v, a) in &row.terms {
            match acc.iter_mut().find(|(j, _)| *j == v.0) {
                Some(slot) => slot.1 += a,
                None => acc.push((v.0, a.clone())),
            }
        }
        for (j, a) in acc {
            if !a.is_zero() {
                columns[j].push((row_code(i), a * &scale));
            }
        }
    }

    out.push_str("COLUMNS\n");
    let mut in_int = false;
    let mut markers = 0;
    for (j, v) in model.variables.iter().enumerate() {
        if v.integer != in_int {
            let tag = if v.integer { "'INTORG'" } else { "'INTEND'" };
            let line = format!("    M{markers:07}  'MARKER'                 {tag}");
            out.push_str(&line);
            out.push('\n');
            markers += 1;
            in_int = v.integer;
        }
        let code = col_code(j);
        if columns[j].is_empty() {
            fields(&mut out, "", &code, "OBJ", "0");
        }
        for (row, a) in &columns[j] {
            fields(&mut out, "", &code, row, &format_rational(a));
        }
    }
    if in_int {
        let line = format!("    M{markers:07}  'MARKER'                 'INTEND'");
        out.push_str(&line);
        out.push('\n');
    }

    out.push_str("RHS\n");
    for (i, row) in model.constraints.iter().enumerate() {
        if !row.rhs.is_zero() {
            let scaled = &row.rhs * Rational::from_integer(row_scales[i].clone());
            fields(&mut out, "", "RHS", &row_code(i), &format_rational(&scaled));
        }
    }

    out.push_str("BOUNDS\n");
    for (j, v) in model.variables.iter().enumerate() {
        let code = col_code(j);
        match (&v.lower, &v.upper) {
            (None, None) => fields(&mut out, "FR", "BND", &code, ""),
            (None, Some(u)) => {
                fields(&mut out, "MI", "BND", &code, "");
                fields(&mut out, "UP", "BND", &code, &format_rational(u));
            }
            (Some(l), None) if l.is_zero() => fields(&mut out, "PL", "BND", &code, ""),
            (Some(l), None) => fields(&mut out, "LO", "BND", &code, &format_rational(l)),
            (Some(l), Some(u)) if l == u => {
                fields(&mut out, "FX", "BND", &code, &format_rational(l))
            }
            (Some(l), Some(u)) => {
                fields(&mut out, "LO", "BND", &code, &format_rational(l));
                fields(&mut out, "UP", "BND", &code, &format_rational(u));
            }
        }
    }
    out.push_str("ENDATA\n");
    out
}

#[derive(PartialEq)]
enum Section {
    Start,
    Rows,
    Columns,
    Rhs,
    Bounds,
    End,
}

fn syntax(line: usize, msg: impl Into<String>) -> MpsError {
    MpsError::Syntax {
        line,
        msg: msg.into(),
    }
}

fn number(line: usize, text: &str) -> Result<Rational, MpsError> {
    parse_rational(text).ok_or_else(|| syntax(line, format!("bad number `{text}`")))
}

/// Parses an MPS document. Comment metadata written by [`write_mps`] is
/// honoured; without it the model is read as a plain minimization.
pub fn read_mps(text: &str) -> Result<Model, MpsError> {
    let mut model = Model::new("", Sense::Minimize);
    let mut obj_scale = Rational::one();
    let mut col_names: HashMap<String, String> = HashMap::new();
    let mut row_names: HashMap<String, String> = HashMap::new();
    let mut row_scale: HashMap<String, Rational> = HashMap::new();
    let mut obj_row: Option<String> = None;
    let mut row_index: HashMap<String, usize> = HashMap::new();
    let mut col_index: HashMap<String, usize> = HashMap::new();
    let mut default_lower: Vec<bool> = Vec::new();
    let mut section = Section::Start;
    let mut integer = false;

    for (n, raw) in text.lines().enumerate() {
        let line_no = n + 1;
        if raw.trim().is_empty() {
            continue;
        }
        if let Some(comment) = raw.strip_prefix('*') {
            let parts: Vec<&str> = comment.trim().splitn(3, ' ').collect();
            match parts.as_slice() {
                ["SENSE", "MAX"] => model.sense = Sense::Maximize,
                ["SENSE", "MIN"] => model.sense = Sense::Minimize,
                ["OBJSCALE", k] => obj_scale = number(line_no, k)?,
                ["COL", code, name] => {
                    col_names.insert(code.to_string(), name.to_string());
                }
                ["ROW", code, name] => {
                    row_names.insert(code.to_string(), name.to_string());
                }
                ["SCALE", code, k] => {
                    row_scale.insert(code.to_string(), number(line_no, k)?);
                }
                _ => {}
            }
            continue;
        }
        let tokens: Vec<&str> = raw.split_whitespace().collect();
        if !raw.starts_with(' ') && !raw.starts_with('\t') {
            section = match tokens[0] {
                "NAME" => {
                    model.name = raw[4..].trim().to_string();
                    Section::Start
                }
                "ROWS" => Section::Rows,
                "COLUMNS" => Section::Columns,
                "RHS" => Section::Rhs,
                "BOUNDS" => Section::Bounds,
                "ENDATA" => Section::End,
                other => return Err(syntax(line_no, format!("unsupported section `{other}`"))),
            };
            continue;
        }
        match section {
            Section::Rows => {
                let [kind, code] = tokens[..] else {
                    return Err(syntax(line_no, "row line needs a type and a name"));
                };
                let cmp = match kind {
                    "N" => {
                        if obj_row.is_none() {
                            obj_row = Some(code.to_string());
                        }
                        continue;
                    }
                    "L" => Cmp::Le,
                    "G" => Cmp::Ge,
                    "E" => Cmp::Eq,
                    other => return Err(syntax(line_no, format!("bad row type `{other}`"))),
                };
                let name = row_names.get(code).cloned().unwrap_or_else(|| code.to_string());
                row_index.insert(code.to_string(), model.constraints.len());
                model.constraints.push(Constraint {
                    name,
                    terms: Vec::new(),
                    cmp,
                    rhs: Rational::zero(),
                });
            }
            Section::Columns => {
                if tokens.len() >= 3 && tokens[1] == "'MARKER'" {
                    match tokens[2] {
                        "'INTORG'" => integer = true,
                        "'INTEND'" => integer = false,
                        other => return Err(syntax(line_no, format!("bad marker `{other}`"))),
                    }
                    continue;
                }
                if tokens.len() != 3 && tokens.len() != 5 {
                    return Err(syntax(line_no, "column line needs one or two entries"));
                }
                let code = tokens[0];
                let j = match col_index.get(code) {
                    Some(&j) => j,
                    None => {
                        let name = col_names.get(code).cloned().unwrap_or_else(|| code.to_string());
                        model.variables.push(Variable {
                            name,
                            lower: Some(Rational::zero()),
                            upper: None,
                            integer,
                        });
                        default_lower.push(true);
                        col_index.insert(code.to_string(), model.variables.len() - 1);
                        model.variables.len() - 1
                    }
                };
                for pair in tokens[1..].chunks(2) {
                    let value = number(line_no, pair[1])?;
                    if Some(pair[0]) == obj_row.as_deref() {
                        if !value.is_zero() {
                            model.objective.push((VarId(j), value));
                        }
                        continue;
                    }
                    let &i = row_index
                        .get(pair[0])
                        .ok_or_else(|| MpsError::UnknownRow(pair[0].to_string()))?;
                    if !value.is_zero() {
                        model.constraints[i].terms.push((VarId(j), value));
                    }
                }
            }
            Section::Rhs => {
                if tokens.len() != 3 && tokens.len() != 5 {
                    return Err(syntax(line_no, "rhs line needs one or two entries"));
                }
                for pair in tokens[1..].chunks(2) {
                    if Some(pair[0]) == obj_row.as_deref() {
                        continue;
                    }
                    let &i = row_index
                        .get(pair[0])
                        .ok_or_else(|| MpsError::UnknownRow(pair[0].to_string()))?;
                    model.constraints[i].rhs = number(line_no, pair[1])?;
                }
            }
            Section::Bounds => {
                if tokens.len() < 3 {
                    return Err(syntax(line_no, "bound line too short"));
                }
                let (kind, code) = (tokens[0], tokens[2]);
                let &j = col_index
                    .get(code)
                    .ok_or_else(|| MpsError::UnknownVariable(code.to_string()))?;
                let value = match tokens.get(3) {
                    Some(t) => Some(number(line_no, t)?),
                    None => None,
                };
                let need = |v: Option<Rational>| v.ok_or_else(|| syntax(line_no, "bound value missing"));
                let var = &mut model.variables[j];
                match kind {
                    "LO" => var.lower = Some(need(value)?),
                    "UP" => {
                        let u = need(value)?;
                        if u.is_negative() && default_lower[j] {
                            var.lower = None;
                        }
                        var.upper = Some(u);
                    }
                    "FX" => {
                        let v = need(value)?;
                        var.lower = Some(v.clone());
                        var.upper = Some(v);
                    }
                    "FR" => {
                        var.lower = None;
                        var.upper = None;
                    }
                    "MI" => var.lower = None,
                    "PL" => var.upper = None,
                    "BV" => {
                        var.lower = Some(Rational::zero());
                        var.upper = Some(Rational::one());
                        var.integer = true;
                    }
                    "LI" => {
                        var.lower = Some(need(value)?);
                        var.integer = true;
                    }
                    "UI" => {
                        var.upper = Some(need(value)?);
                        var.integer = true;
                    }
                    other => return Err(syntax(line_no, format!("bad bound type `{other}`"))),
                }
                if kind != "UP" {
                    default_lower[j] = false;
                }
            }
            Section::Start | Section::End => {
                return Err(syntax(line_no, "data outside a section"));
            }
        }
    }
    if section != Section::End {
        return Err(syntax(text.lines().count(), "missing ENDATA"));
    }

    let obj_factor = match model.sense {
        Sense::Maximize => -obj_scale,
        Sense::Minimize => obj_scale,
    };
    for (_, c) in model.objective.iter_mut() {
        *c = &*c / &obj_factor;
    }
    for (i, row) in model.constraints.iter_mut().enumerate() {
        if let Some(k) = row_scale.get(&row_code(i)) {
            for (_, a) in row.terms.iter_mut() {
                *a = &*a / k;
            }
            row.rhs = &row.rhs / k;
        }
        row.terms.sort_by_key(|(v, _)| *v);
    }
    Ok(model)
}

/// Parses a `name value` solution listing. Names may be descriptive names
/// or column codes. Unlisted variables are zero. Integer variables within
/// 1e-6 of an integer are snapped to it.
pub fn read_solution(text: &str, model: &Model) -> Result<Vec<Rational>, MpsError> {
    let names = model.name_index();
    let mut values = vec![Rational::zero(); model.num_vars()];
    let mut seen = vec![false; model.num_vars()];
    let snap = Rational::new(BigInt::one(), BigInt::from(1_000_000));
    for (n, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') || line.starts_with('*') {
            continue;
        }
        let mut parts = line.split_whitespace();
        let (Some(name), Some(value), None) = (parts.next(), parts.next(), parts.next()) else {
            return Err(syntax(n + 1, "expected `name value`"));
        };
        let j = match names.get(name) {
            Some(v) => v.0,
            None => code_index(name)
                .filter(|&j| j < model.num_vars())
                .ok_or_else(|| MpsError::UnknownVariable(name.to_string()))?,
        };
        if std::mem::replace(&mut seen[j], true) {
            return Err(MpsError::Duplicate(name.to_string()));
        }
        let mut v = number(n + 1, value)?;
        if model.variables[j].integer {
            let r = v.round();
            if (&v - &r).abs() <= snap {
                v = r;
            }
        }
        values[j] = v;
    }
    Ok(values)
}

fn code_index(name: &str) -> Option<usize> {
    let digits = name.strip_prefix('C')?;
    if digits.len() != 7 {
        return None;
    }
    digits.parse::<usize>().ok()?.checked_sub(1)
}

/// Writes a `name value` listing using descriptive names.
pub fn write_solution(model: &Model, values: &[Rational]) -> String {
    let mut out = String::new();
    for (var, v) in model.variables.iter().zip(values) {
        let _ = writeln!(out, "{} {}", var.name, format_rational(v));
    }
    out
}
