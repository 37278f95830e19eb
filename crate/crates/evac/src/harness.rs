//! Experiment matrix: generated instances, both planners, one CSV record
//! per (instance, method).
//!
//! A run that fails or hits the cutoff is charged the full cutoff as its
//! wall time.

use std::collections::BTreeMap;
use std::sync::Mutex;
use std::time::{Duration, Instant};

use evac_milp::{format_rational, Rational, SolveOptions, Status};
use num_traits::{ToPrimitive, Zero};
use serde::Serialize;

use crate::bbevac::{bb_evac, EvacOptions};
use crate::behavior::{realize, BehaviorSpec};
use crate::graph::{generate_instance, nearest_exit_table, GeneratorParams, Instance};
use crate::ilp::{plan_ip, Framework, IpOptions, PlanOptions};
use crate::schedule::{expected_evacuated, Violation};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Method {
    Bbip,
    Bbevac,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::Bbip => "bbip",
            Method::Bbevac => "bbevac",
        }
    }
}

/// One generated instance of the matrix.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Cell {
    pub nodes: usize,
    pub population: usize,
    pub seed: u64,
}

/// Every combination of the three axes.
pub fn grid(nodes: &[usize], populations: &[usize], seeds: &[u64]) -> Vec<Cell> {
    let mut cells = Vec::new();
    for &n in nodes {
        for &p in populations {
            for &seed in seeds {
                cells.push(Cell {
                    nodes: n,
                    population: p,
                    seed,
                });
            }
        }
    }
    cells
}

#[derive(Clone, Debug)]
pub struct BenchConfig {
    pub cells: Vec<Cell>,
    pub n_exits: usize,
    pub edge_factor: f64,
    pub edge_capacity: (u64, u64),
    pub vertex_capacity: (u64, u64),
    pub travel_time: (u32, u32),
    pub behavior: BehaviorSpec,
    /// D is this multiple of the longest walk to a nearest exit, rounded up.
    pub deadline_scale: f64,
    /// t_max is this multiple of D.
    pub horizon_scale: u32,
    /// Budget for a whole BB_IP run.
    pub cutoff: Duration,
    /// Budget for each BB_Evac subproblem.
    pub subproblem_limit: Duration,
    pub gamma: Rational,
    pub workers: usize,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            cells: grid(&[20, 30, 40, 50, 60], &[20, 60, 100], &[1]),
            n_exits: 2,
            edge_factor: 1.35,
            edge_capacity: (2, 6),
            vertex_capacity: (5, 20),
            travel_time: (1, 3),
            behavior: BehaviorSpec::Dbm {
                delays: vec![
                    (0, Rational::new(7.into(), 10.into())),
                    (2, Rational::new(3.into(), 10.into())),
                ],
            },
            deadline_scale: 1.0,
            horizon_scale: 2,
            cutoff: Duration::from_secs(60),
            subproblem_limit: Duration::from_secs(60),
            gamma: Rational::new(1.into(), 4.into()),
            workers: 1,
        }
    }
}

impl BenchConfig {
    /// The original experiment sizes: 110 to 200 vertices, two-hour cutoff.
    pub fn full_scale() -> Self {
        BenchConfig {
            cells: grid(&(110..=200).step_by(10).collect::<Vec<_>>(), &[500, 1000], &[1]),
            cutoff: Duration::from_secs(7200),
            subproblem_limit: Duration::from_secs(600),
            ..BenchConfig::default()
        }
    }

    /// `count` instances with 30 to 60 vertices and 30 to 80 people.
    pub fn quality_matrix(count: usize) -> Self {
        let nodes = [30, 40, 50, 60];
        let pops = [30, 45, 60, 80];
        BenchConfig {
            cells: (0..count)
                .map(|i| Cell {
                    nodes: nodes[i % 4],
                    population: pops[(i + i / 4) % 4],
                    seed: 500 + i as u64,
                })
                .collect(),
            cutoff: Duration::from_secs(600),
            ..BenchConfig::default()
        }
    }

    /// `count` instances with at least 100 vertices and a 120 s cutoff.
    pub fn speed_matrix(count: usize) -> Self {
        BenchConfig {
            cells: (0..count)
                .map(|i| Cell {
                    nodes: 100 + 5 * i,
                    population: 150,
                    seed: 900 + i as u64,
                })
                .collect(),
            cutoff: Duration::from_secs(120),
            ..BenchConfig::default()
        }
    }

    fn generator(&self, cell: Cell) -> GeneratorParams {
        GeneratorParams {
            n_vertices: cell.nodes,
            edge_factor: self.edge_factor,
            n_exits: self.n_exits,
            population: cell.population,
            seed: cell.seed,
            edge_capacity: self.edge_capacity,
            vertex_capacity: self.vertex_capacity,
            travel_time: self.travel_time,
            ..GeneratorParams::default()
        }
    }
}

/// One CSV row.
#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentRecord {
    pub instance_id: String,
    pub seed: u64,
    pub n_vertices: usize,
    pub n_edges: usize,
    pub n_exits: usize,
    pub population: usize,
    pub behavior: String,
    pub deadline: u32,
    pub t_max: u32,
    pub method: Method,
    pub wall_s: f64,
    pub status: String,
    pub expected: Option<Rational>,
    pub optimum_proven: bool,
    /// Heuristic value over the proven optimum; set on heuristic rows only.
    pub quality_ratio: Option<f64>,
}

#[derive(Serialize)]
struct CsvRow<'a> {
    instance_id: &'a str,
    seed: u64,
    n_vertices: usize,
    n_edges: usize,
    n_exits: usize,
    population: usize,
    behavior: &'a str,
    #[serde(rename = "D")]
    deadline: u32,
    t_max: u32,
    method: &'a str,
    wall_s: String,
    status: &'a str,
    expected_evacuated: String,
    optimum_proven: bool,
    quality_ratio: String,
}

pub const CSV_HEADER: [&str; 15] = [
    "instance_id",
    "seed",
    "n_vertices",
    "n_edges",
    "n_exits",
    "population",
    "behavior",
    "D",
    "t_max",
    "method",
    "wall_s",
    "status",
    "expected_evacuated",
    "optimum_proven",
    "quality_ratio",
];

/// Serializes records; the header is written even when there are none.
pub fn write_csv<W: std::io::Write>(records: &[ExperimentRecord], out: W) -> csv::Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    w.write_record(CSV_HEADER)?;
    for r in records {
        w.serialize(CsvRow {
            instance_id: &r.instance_id,
            seed: r.seed,
            n_vertices: r.n_vertices,
            n_edges: r.n_edges,
            n_exits: r.n_exits,
            population: r.population,
            behavior: &r.behavior,
            deadline: r.deadline,
            t_max: r.t_max,
            method: r.method.as_str(),
            wall_s: format!("{:.3}", r.wall_s),
            status: &r.status,
            expected_evacuated: r.expected.as_ref().map(format_rational).unwrap_or_default(),
            optimum_proven: r.optimum_proven,
            quality_ratio: r.quality_ratio.map(|q| format!("{q:.4}")).unwrap_or_default(),
        })?;
    }
    w.flush()?;
    Ok(())
}

/// D for a generated instance: the longest nearest-exit walk times the
/// scale, rounded up, at least 1.
pub fn scaled_deadline(inst: &Instance, scale: f64) -> u32 {
    let table = nearest_exit_table(&inst.graph);
    let radius = (0..inst.graph.num_vertices())
        .filter_map(|v| table.distance(v))
        .max()
        .unwrap_or(1);
    ((radius as f64 * scale).ceil() as u32).max(1)
}

struct Run {
    wall: Duration,
    status: String,
    expected: Option<Rational>,
    proven: bool,
}

fn charged(cfg: &BenchConfig, run: &Run, finished: bool) -> f64 {
    if finished && run.wall <= cfg.cutoff {
        run.wall.as_secs_f64()
    } else {
        cfg.cutoff.as_secs_f64()
    }
}

fn run_bbip(cfg: &BenchConfig, inst: &Instance, deadline: u32, t_max: u32) -> Run {
    let start = Instant::now();
    let s0 = inst.initial_state();
    let fw = Framework {
        graph: &inst.graph,
        s0: &s0,
        spec: &cfg.behavior,
    };
    let mut opts = PlanOptions {
        solve: SolveOptions {
            time_limit: Some(cfg.cutoff),
            ..SolveOptions::default()
        },
        earliest: false,
        verify: false,
        ..PlanOptions::default()
    };
    let mut result = plan_ip(fw, deadline, t_max, &opts);
    let mut soft = false;
    if matches!(&result, Ok(p) if p.status == Status::Infeasible) {
        // Nobody-left-behind is impossible within t_max; maximize anyway.
        soft = true;
        opts.ip = IpOptions {
            soft: true,
            ..IpOptions::default()
        };
        opts.solve.time_limit = Some(cfg.cutoff.saturating_sub(start.elapsed()));
        result = plan_ip(fw, deadline, t_max, &opts);
    }
    let wall = start.elapsed();
    match result {
        Ok(plan) => {
            let mut status = format!("{:?}", plan.status).to_lowercase();
            if soft {
                status.push_str("-soft");
            }
            Run {
                wall,
                status,
                proven: plan.optimum_proven(),
                expected: plan.objective,
            }
        }
        Err(e) => Run {
            wall,
            status: format!("error: {e}"),
            expected: None,
            proven: false,
        },
    }
}

fn run_bbevac(cfg: &BenchConfig, inst: &Instance, deadline: u32, t_max: u32) -> Run {
    let start = Instant::now();
    let s0 = inst.initial_state();
    let opts = EvacOptions {
        gamma: cfg.gamma.clone(),
        solve: SolveOptions {
            time_limit: Some(cfg.subproblem_limit),
            ..SolveOptions::default()
        },
        verify: false,
    };
    let result = bb_evac(&inst.graph, &s0, &cfg.behavior, deadline, t_max, &opts);
    let wall = start.elapsed();
    match result {
        Ok(res) => {
            let realized = realize(&cfg.behavior, &res.schedule, &inst.graph, &s0);
            let expected = expected_evacuated(&realized, &inst.graph, deadline).ok();
            let status = match &res.strong {
                Ok(()) => "ok".to_string(),
                Err(Violation::NotEvacuated { .. }) => "not-evacuated".to_string(),
                Err(v) if v.is_weak() => "invalid".to_string(),
                Err(_) => "capacity-violation".to_string(),
            };
            Run {
                wall,
                status,
                expected,
                proven: false,
            }
        }
        Err(e) => Run {
            wall,
            status: format!("error: {e}"),
            expected: None,
            proven: false,
        },
    }
}

fn run_cell(cfg: &BenchConfig, index: usize, cell: Cell) -> Vec<ExperimentRecord> {
    let id = format!("g{index:03}-n{}-p{}-s{}", cell.nodes, cell.population, cell.seed);
    let behavior = cfg.behavior.describe();
    let inst = match generate_instance(&cfg.generator(cell)) {
        Ok(i) => i,
        Err(e) => {
            return [Method::Bbip, Method::Bbevac]
                .into_iter()
                .map(|method| ExperimentRecord {
                    instance_id: id.clone(),
                    seed: cell.seed,
                    n_vertices: cell.nodes,
                    n_edges: 0,
                    n_exits: cfg.n_exits,
                    population: cell.population,
                    behavior: behavior.clone(),
                    deadline: 0,
                    t_max: 0,
                    method,
                    wall_s: 0.0,
                    status: format!("error: {e}"),
                    expected: None,
                    optimum_proven: false,
                    quality_ratio: None,
                })
                .collect();
        }
    };
    let deadline = scaled_deadline(&inst, cfg.deadline_scale);
    let t_max = deadline * cfg.horizon_scale.max(1);
    let ip = run_bbip(cfg, &inst, deadline, t_max);
    let ev = run_bbevac(cfg, &inst, deadline, t_max);
    let ratio = match (&ip.expected, &ev.expected) {
        (Some(a), Some(b)) if ip.proven => Some(if a.is_zero() {
            if b.is_zero() {
                1.0
            } else {
                f64::INFINITY
            }
        } else {
            (b / a).to_f64().unwrap_or(0.0)
        }),
        _ => None,
    };
    let record = |method, run: &Run, finished: bool, quality_ratio| ExperimentRecord {
        instance_id: id.clone(),
        seed: cell.seed,
        n_vertices: inst.graph.num_vertices(),
        n_edges: inst.graph.num_edges(),
        n_exits: inst.graph.exits().len(),
        population: inst.population(),
        behavior: behavior.clone(),
        deadline,
        t_max,
        method,
        wall_s: charged(cfg, run, finished),
        status: run.status.clone(),
        expected: run.expected.clone(),
        optimum_proven: run.proven,
        quality_ratio,
    };
    vec![
        record(Method::Bbip, &ip, ip.proven, None),
        record(Method::Bbevac, &ev, ev.expected.is_some(), ratio),
    ]
}

/// Runs every cell; records come back in cell order, BB_IP before BB_Evac.
pub fn run_matrix(cfg: &BenchConfig) -> Vec<ExperimentRecord> {
    let next = Mutex::new(0usize);
    let done: Mutex<BTreeMap<usize, Vec<ExperimentRecord>>> = Mutex::new(BTreeMap::new());
    std::thread::scope(|s| {
        for _ in 0..cfg.workers.max(1).min(cfg.cells.len().max(1)) {
            s.spawn(|| loop {
                let i = {
                    let mut n = next.lock().unwrap();
                    let i = *n;
                    *n += 1;
                    i
                };
                let Some(&cell) = cfg.cells.get(i) else { break };
                let rows = run_cell(cfg, i, cell);
                done.lock().unwrap().insert(i, rows);
            });
        }
    });
    done.into_inner().unwrap().into_values().flatten().collect()
}

/// Mean wall time, expected value and quality ratio for one axis value.
#[derive(Clone, Debug, PartialEq)]
pub struct AxisSummary {
    pub axis: &'static str,
    pub value: usize,
    pub method: Method,
    pub runs: usize,
    pub mean_wall_s: f64,
    pub mean_expected: Option<f64>,
    pub mean_quality: Option<f64>,
}

fn mean(xs: &[f64]) -> Option<f64> {
    (!xs.is_empty()).then(|| xs.iter().sum::<f64>() / xs.len() as f64)
}

/// Averages grouped by vertex count and by population.
pub fn summarize(records: &[ExperimentRecord]) -> Vec<AxisSummary> {
    let mut out = Vec::new();
    let axes: [(&'static str, fn(&ExperimentRecord) -> usize); 2] =
        [("n_vertices", |r| r.n_vertices), ("population", |r| r.population)];
    for (axis, key) in axes {
        let mut groups: BTreeMap<(usize, Method), Vec<&ExperimentRecord>> = BTreeMap::new();
        for r in records {
            groups.entry((key(r), r.method)).or_default().push(r);
        }
        for ((value, method), rs) in groups {
            let walls: Vec<f64> = rs.iter().map(|r| r.wall_s).collect();
            let exp: Vec<f64> = rs.iter().filter_map(|r| r.expected.as_ref()?.to_f64()).collect();
            let qs: Vec<f64> = rs.iter().filter_map(|r| r.quality_ratio).collect();
            out.push(AxisSummary {
                axis,
                value,
                method,
                runs: rs.len(),
                mean_wall_s: mean(&walls).unwrap_or(0.0),
                mean_expected: mean(&exp),
                mean_quality: mean(&qs),
            });
        }
    }
    out
}

/// Plain-text table of [`summarize`].
pub fn summary_table(records: &[ExperimentRecord]) -> String {
    let fmt = |x: Option<f64>| x.map(|v| format!("{v:.3}")).unwrap_or_else(|| "-".into());
    let mut s = format!(
        "{:<11} {:>6} {:<7} {:>4} {:>9} {:>9} {:>8}\n",
        "axis", "value", "method", "runs", "wall_s", "expected", "quality"
    );
    for a in summarize(records) {
        s.push_str(&format!(
            "{:<11} {:>6} {:<7} {:>4} {:>9.3} {:>9} {:>8}\n",
            a.axis,
            a.value,
            a.method.as_str(),
            a.runs,
            a.mean_wall_s,
            fmt(a.mean_expected),
            fmt(a.mean_quality)
        ));
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_matrix_gives_header_only() {
        let cfg = BenchConfig {
            cells: Vec::new(),
            ..BenchConfig::default()
        };
        let records = run_matrix(&cfg);
        let mut buf = Vec::new();
        write_csv(&records, &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), format!("{}\n", CSV_HEADER.join(",")));
    }

    #[test]
    fn tiny_matrix_is_deterministic() {
        let cfg = BenchConfig {
            cells: grid(&[8], &[6], &[3, 4]),
            workers: 2,
            ..BenchConfig::default()
        };
        let strip = |rs: Vec<ExperimentRecord>| {
            rs.into_iter()
                .map(|r| ExperimentRecord { wall_s: 0.0, ..r })
                .collect::<Vec<_>>()
        };
        let a = strip(run_matrix(&cfg));
        let b = strip(run_matrix(&cfg));
        assert_eq!(a.len(), 4);
        assert_eq!(a, b);
        for pair in a.chunks(2) {
            if let (Some(ip), Some(ev)) = (&pair[0].expected, &pair[1].expected) {
                if pair[0].optimum_proven {
                    assert!(ev <= ip);
                }
            }
        }
    }
}
