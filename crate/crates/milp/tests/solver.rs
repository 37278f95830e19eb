use std::time::Duration;

use evac_milp::{
    read_mps, read_solution, solve_lp, solve_mip, write_mps, Cmp, Engine, Model, MpsError,
    Rational, Sense, SolveOptions, Status, VarId,
};
use num_traits::{One, Zero};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn q(n: i64) -> Rational {
    Rational::from_integer(n.into())
}

fn frac(n: i64, d: i64) -> Rational {
    Rational::new(n.into(), d.into())
}

#[test]
fn lp_single_upper_bound() {
    let mut m = Model::new("t", Sense::Maximize);
    let x = m.add_var("x", None, None, false);
    m.add_constraint("c", vec![(x, q(1))], Cmp::Le, q(3));
    m.objective.push((x, q(1)));
    let r = solve_lp(&m);
    assert_eq!(r.status, Status::Optimal);
    assert_eq!(r.values.unwrap(), vec![q(3)]);
    assert_eq!(r.dual_bound, Some(q(3)));
}

#[test]
fn lp_infeasible_and_unbounded() {
    let mut m = Model::new("t", Sense::Maximize);
    let x = m.add_var("x", None, None, false);
    m.add_constraint("lo", vec![(x, q(1))], Cmp::Ge, q(1));
    m.add_constraint("hi", vec![(x, q(1))], Cmp::Le, q(0));
    m.objective.push((x, q(1)));
    assert_eq!(solve_lp(&m).status, Status::Infeasible);
    assert_eq!(solve_mip(&m, &SolveOptions::default()).status, Status::Infeasible);

    let mut u = Model::new("u", Sense::Maximize);
    let x = u.add_var("x", Some(q(0)), None, false);
    let y = u.add_var("y", Some(q(0)), None, false);
    u.add_constraint("c", vec![(x, q(1)), (y, q(-1))], Cmp::Le, q(2));
    u.objective.push((x, q(1)));
    assert_eq!(solve_lp(&u).status, Status::Unbounded);
}

/// Max flow on a small network, arc capacities as bounds.
fn max_flow_model() -> Model {
    let arcs = [
        (0, 1, 4),
        (0, 2, 3),
        (1, 2, 2),
        (1, 3, 3),
        (2, 3, 5),
        (2, 4, 1),
        (3, 5, 4),
        (4, 5, 6),
    ];
    let mut m = Model::new("flow", Sense::Maximize);
    let vars: Vec<VarId> = arcs
        .iter()
        .map(|&(a, b, c)| m.add_var(format!("f{a}{b}"), Some(q(0)), Some(q(c)), true))
        .collect();
    for node in 1..5 {
        let mut terms = Vec::new();
        for (k, &(a, b, _)) in arcs.iter().enumerate() {
            if b == node {
                terms.push((vars[k], q(1)));
            }
            if a == node {
                terms.push((vars[k], q(-1)));
            }
        }
        m.add_constraint(format!("n{node}"), terms, Cmp::Eq, q(0));
    }
    for (k, &(a, _, _)) in arcs.iter().enumerate() {
        if a == 0 {
            m.objective.push((vars[k], q(1)));
        }
    }
    m
}

#[test]
fn totally_unimodular_root_is_integral() {
    let m = max_flow_model();
    let r = solve_lp(&m);
    assert_eq!(r.status, Status::Optimal);
    assert_eq!(r.objective, Some(q(5)));
    assert!(r.values.unwrap().iter().all(|v| v.is_integer()));
    let mip = solve_mip(&m, &SolveOptions::default());
    assert_eq!(mip.objective, Some(q(5)));
    assert_eq!(mip.nodes, 1);
}

#[test]
fn zero_time_limit_has_no_incumbent() {
    let m = max_flow_model();
    for engine in [Engine::Exact, Engine::Float] {
        let opts = SolveOptions::default()
            .with_time_limit(Duration::ZERO)
            .with_engine(engine);
        let r = solve_mip(&m, &opts);
        assert_eq!(r.status, Status::TimeLimit);
        assert!(!r.has_incumbent());
    }
}

struct Knapsack {
    values: Vec<i64>,
    weights: Vec<Vec<i64>>,
    caps: Vec<i64>,
    upper: Vec<i64>,
}

fn random_knapsack(seed: u64) -> Knapsack {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = 6;
    let rows = rng.gen_range(1..=2);
    Knapsack {
        values: (0..n).map(|_| rng.gen_range(1..=20)).collect(),
        weights: (0..rows)
            .map(|_| (0..n).map(|_| rng.gen_range(1..=12)).collect())
            .collect(),
        caps: (0..rows).map(|_| rng.gen_range(10..=40)).collect(),
        upper: (0..n).map(|_| rng.gen_range(1..=3)).collect(),
    }
}

fn knapsack_model(k: &Knapsack) -> Model {
    let mut m = Model::new("knap", Sense::Maximize);
    let xs: Vec<VarId> = k
        .upper
        .iter()
        .enumerate()
        .map(|(i, &u)| m.add_var(format!("x{i}"), Some(q(0)), Some(q(u)), true))
        .collect();
    for (r, w) in k.weights.iter().enumerate() {
        let terms = xs.iter().zip(w).map(|(&x, &a)| (x, q(a))).collect();
        m.add_constraint(format!("cap{r}"), terms, Cmp::Le, q(k.caps[r]));
    }
    m.objective = xs.iter().zip(&k.values).map(|(&x, &c)| (x, q(c))).collect();
    m
}

/// Exhaustive enumeration over the integer box.
fn enumerate(k: &Knapsack) -> i64 {
    let n = k.values.len();
    let mut x = vec![0i64; n];
    let mut best = 0;
    loop {
        let fits = k
            .weights
            .iter()
            .zip(&k.caps)
            .all(|(w, &c)| w.iter().zip(&x).map(|(a, b)| a * b).sum::<i64>() <= c);
        if fits {
            best = best.max(k.values.iter().zip(&x).map(|(a, b)| a * b).sum());
        }
        let mut i = 0;
        loop {
            if i == n {
                return best;
            }
            x[i] += 1;
            if x[i] <= k.upper[i] {
                break;
            }
            x[i] = 0;
            i += 1;
        }
    }
}

#[test]
fn knapsack_matches_enumeration() {
    let mut agree = 0;
    for seed in 0..100 {
        let k = random_knapsack(seed);
        let model = knapsack_model(&k);
        let expect = q(enumerate(&k));
        for engine in [Engine::Exact, Engine::Float] {
            let r = solve_mip(&model, &SolveOptions::default().with_engine(engine));
            assert_eq!(r.status, Status::Optimal, "seed {seed} {engine:?}");
            assert_eq!(r.objective.as_ref(), Some(&expect), "seed {seed} {engine:?}");
            assert!(model.check(r.values.as_ref().unwrap()).is_ok());
            // the float root bound is a rounded f64
            let slack = if engine == Engine::Exact { q(0) } else { frac(1, 1_000_000) };
            assert!(r.objective.as_ref().unwrap() <= &(r.root_bound.clone().unwrap() + slack));
        }
        agree += 1;
    }
    assert_eq!(agree, 100);
}

#[test]
fn minimization_with_fractional_costs() {
    // min 2/5 a + 3/5 b  s.t. a + b >= 3, a <= 1, integers
    let mut m = Model::new("min", Sense::Minimize);
    let a = m.add_int("a");
    let b = m.add_int("b");
    m.add_constraint("cover", vec![(a, q(1)), (b, q(1))], Cmp::Ge, q(3));
    m.add_constraint("a_cap", vec![(a, q(1))], Cmp::Le, q(1));
    m.objective = vec![(a, frac(2, 5)), (b, frac(3, 5))];
    for engine in [Engine::Exact, Engine::Float] {
        let r = solve_mip(&m, &SolveOptions::default().with_engine(engine));
        assert_eq!(r.objective, Some(frac(8, 5)), "{engine:?}");
        assert_eq!(r.values, Some(vec![q(1), q(2)]));
    }
}

#[test]
fn mixed_model_with_continuous_part() {
    // max x + y, x integer, y continuous, 2x + 2y <= 7, x <= 2.5
    let mut m = Model::new("mixed", Sense::Maximize);
    let x = m.add_int("x");
    let y = m.add_var("y", Some(q(0)), None, false);
    m.add_constraint("c", vec![(x, q(2)), (y, q(2))], Cmp::Le, q(7));
    m.add_constraint("xcap", vec![(x, q(2))], Cmp::Le, q(5));
    m.objective = vec![(x, q(1)), (y, q(1))];
    for engine in [Engine::Exact, Engine::Float] {
        let r = solve_mip(&m, &SolveOptions::default().with_engine(engine));
        assert_eq!(r.status, Status::Optimal);
        assert_eq!(r.objective, Some(frac(7, 2)), "{engine:?}");
    }
}

#[test]
fn deterministic_results() {
    let model = knapsack_model(&random_knapsack(42));
    let a = solve_mip(&model, &SolveOptions::default());
    let b = solve_mip(&model, &SolveOptions::default());
    assert_eq!(a.objective, b.objective);
    assert_eq!(a.values, b.values);
    assert_eq!(a.nodes, b.nodes);
}

fn sample_model() -> Model {
    let mut m = Model::new("sample", Sense::Maximize);
    let x = m.add_int("x[v1,0]");
    let y = m.add_var("y", Some(q(-2)), Some(q(7)), false);
    let z = m.add_var("z1", None, None, false);
    let w = m.add_var("w", None, Some(q(4)), true);
    let f = m.add_var("fixed", Some(q(3)), Some(q(3)), true);
    m.add_constraint("r1", vec![(x, q(1)), (y, frac(1, 3))], Cmp::Le, q(10));
    m.add_constraint("r2", vec![(x, q(2)), (w, q(-1))], Cmp::Ge, q(-4));
    m.add_constraint("bind", vec![(z, q(5))], Cmp::Eq, q(2));
    m.add_constraint("r4", vec![(x, q(1)), (f, q(1))], Cmp::Le, frac(21, 2));
    m.add_constraint("empty", vec![], Cmp::Le, q(0));
    m.objective = vec![(x, frac(2, 5)), (y, frac(3, 5)), (w, q(1))];
    m
}

#[test]
fn mps_round_trip() {
    let m = sample_model();
    let text = write_mps(&m);
    let back = read_mps(&text).expect("parse own export");
    assert_eq!(back, m);
    assert_eq!(write_mps(&back), text);
    assert!(text.contains("'INTORG'"));
    assert!(text.contains("* COL C0000001 x[v1,0]"));
    assert!(text.contains("* SCALE R0000001 3"));
}

#[test]
fn mps_export_is_integral() {
    let text = write_mps(&sample_model());
    let data = text
        .lines()
        .skip_while(|l| !l.starts_with("COLUMNS"))
        .take_while(|l| !l.starts_with("BOUNDS"));
    for line in data {
        assert!(!line.contains('/'), "fractional entry in `{line}`");
    }
}

#[test]
fn solution_reader_accepts_codes_and_names() {
    let m = sample_model();
    let values = read_solution("x[v1,0] 2\nC0000002 1.5\n* comment\nw 3.0000000001\n", &m).unwrap();
    assert_eq!(values[0], q(2));
    assert_eq!(values[1], frac(3, 2));
    assert_eq!(values[3], q(3));
    assert_eq!(values[2], Rational::zero());
}

#[test]
fn solution_reader_names_unknown_variable() {
    let m = sample_model();
    let err = read_solution("x[v1,0] 1\nghost 4\n", &m).unwrap_err();
    assert_eq!(err, MpsError::UnknownVariable("ghost".into()));
    assert!(err.to_string().contains("ghost"));
}

#[test]
fn malformed_solution_is_rejected() {
    let m = sample_model();
    assert!(matches!(
        read_solution("x[v1,0]\n", &m),
        Err(MpsError::Syntax { line: 1, .. })
    ));
    assert!(matches!(
        read_solution("x[v1,0] one\n", &m),
        Err(MpsError::Syntax { .. })
    ));
}

fn random_lp(seed: u64) -> Model {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.gen_range(1..=5);
    let rows = rng.gen_range(1..=5);
    let sense = if rng.gen_bool(0.5) {
        Sense::Maximize
    } else {
        Sense::Minimize
    };
    let mut m = Model::new("lp", sense);
    let vars: Vec<VarId> = (0..n)
        .map(|i| {
            let lo = rng.gen_range(-3..=0);
            let hi = rng.gen_range(1..=6);
            m.add_var(format!("v{i}"), Some(q(lo)), Some(q(hi)), false)
        })
        .collect();
    for r in 0..rows {
        let terms = vars
            .iter()
            .map(|&v| (v, frac(rng.gen_range(-4..=4), rng.gen_range(1..=3))))
            .collect();
        let cmp = match rng.gen_range(0..3) {
            0 => Cmp::Le,
            1 => Cmp::Ge,
            _ => Cmp::Eq,
        };
        m.add_constraint(format!("r{r}"), terms, cmp, q(rng.gen_range(-5..=5)));
    }
    m.objective = vars
        .iter()
        .map(|&v| (v, q(rng.gen_range(-5..=5))))
        .collect();
    m
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn lp_optimum_respects_weak_duality(seed in any::<u64>()) {
        let m = random_lp(seed);
        let r = solve_lp(&m);
        prop_assert_ne!(r.status, Status::Unproven);
        if r.status == Status::Optimal {
            let obj = r.objective.unwrap();
            let bound = r.dual_bound.expect("bounded boxes give a finite dual bound");
            match m.sense {
                Sense::Maximize => prop_assert!(obj <= bound),
                Sense::Minimize => prop_assert!(obj >= bound),
            }
            prop_assert!(m.check(r.values.as_ref().unwrap()).is_ok());
        }
    }

    #[test]
    fn mip_never_beats_its_relaxation(seed in any::<u64>()) {
        let mut m = random_lp(seed);
        for v in &mut m.variables {
            v.integer = true;
        }
        let lp = solve_lp(&m);
        let mip = solve_mip(&m, &SolveOptions::default());
        if let (Some(a), Some(b)) = (&mip.objective, &lp.objective) {
            match m.sense {
                Sense::Maximize => prop_assert!(a <= b),
                Sense::Minimize => prop_assert!(a >= b),
            }
            prop_assert!(m.check(mip.values.as_ref().unwrap()).is_ok());
        }
        if lp.status == Status::Infeasible {
            prop_assert_eq!(mip.status, Status::Infeasible);
        }
    }

    #[test]
    fn engines_agree_on_random_integer_programs(seed in any::<u64>()) {
        let mut m = random_lp(seed);
        for v in &mut m.variables {
            v.integer = true;
        }
        let a = solve_mip(&m, &SolveOptions::default().with_engine(Engine::Exact));
        let b = solve_mip(&m, &SolveOptions::default().with_engine(Engine::Float));
        prop_assert_eq!(a.status, b.status);
        prop_assert_eq!(a.objective, b.objective);
    }

    #[test]
    fn mps_round_trip_random(seed in any::<u64>()) {
        let mut m = random_lp(seed);
        for (i, v) in m.variables.iter_mut().enumerate() {
            v.integer = i % 2 == 0;
        }
        for row in &mut m.constraints {
            row.terms.retain(|(_, a)| !a.is_zero());
        }
        m.objective.retain(|(_, c)| !c.is_zero());
        let text = write_mps(&m);
        let back = read_mps(&text).unwrap();
        prop_assert_eq!(&back, &m);
        prop_assert_eq!(write_mps(&back), text);
    }
}

#[test]
fn granularity_prunes_without_losing_optimum() {
    // every objective value is a multiple of 1/5
    let mut m = Model::new("g", Sense::Maximize);
    let a = m.add_var("a", Some(q(0)), Some(q(5)), true);
    let b = m.add_var("b", Some(q(0)), Some(q(5)), true);
    m.add_constraint("c", vec![(a, q(3)), (b, q(2))], Cmp::Le, q(11));
    m.objective = vec![(a, frac(3, 5)), (b, frac(2, 5))];
    assert_eq!(m.objective_granularity(), Some(frac(1, 5)));
    let r = solve_mip(&m, &SolveOptions::default());
    assert_eq!(r.objective, Some(frac(11, 5)));
    assert!(r.objective.unwrap() <= Rational::one() * q(3));
}

#[test]
fn float_engine_keeps_pinned_continuous_values() {
    // z is fixed by a singleton row, which becomes a bound before search.
    let mut m = Model::new("t", Sense::Maximize);
    let x = m.add_int("x");
    let z = m.add_var("z", Some(q(0)), Some(q(1)), false);
    m.add_constraint("cap", vec![(x, q(2))], Cmp::Le, q(5));
    m.add_constraint("pin", vec![(z, q(10))], Cmp::Eq, q(7));
    m.objective.push((x, q(1)));
    for engine in [Engine::Exact, Engine::Float] {
        let r = solve_mip(&m, &SolveOptions { engine, ..SolveOptions::default() });
        assert_eq!(r.status, Status::Optimal, "{engine:?}");
        assert_eq!(r.values.unwrap(), vec![q(2), frac(7, 10)], "{engine:?}");
    }
}

#[test]
fn terms_are_canonical() {
    let mut m = Model::new("t", Sense::Minimize);
    let a = m.add_int("a");
    let b = m.add_int("b");
    m.add_constraint("c", vec![(b, q(1)), (a, q(2)), (b, q(-1)), (a, q(1))], Cmp::Le, q(1));
    assert_eq!(m.constraints[0].terms, vec![(a, q(3))]);
}
