//! `evac`: validate, plan, realize, generate, export and benchmark.
//!
//! Machine-readable output goes to stdout (or `--out`), the human summary to
//! stderr.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use clap::{Args, Parser, Subcommand};
use evac::bbevac::{bb_evac, EvacOptions, Leader};
use evac::behavior::{realize, BehaviorSpec};
use evac::graph::{expand, generate_instance, GeneratorParams, Instance};
use evac::harness::{grid, run_matrix, summary_table, write_csv, BenchConfig};
use evac::ilp::{build_ip, build_lps, build_lpw, default_t_max, plan_ip, Framework, IpOptions, PlanOptions};
use evac::schedule::Schedule;
use evac::{count_evacuated, expected_evacuated, load_instance, validate_strong, validate_weak};
use evac_milp::{format_rational, parse_rational, write_mps, Rational, SolveOptions, Status};
use serde_json::{json, Value};

const USAGE: u8 = 2;
const IO: u8 = 3;
const INVALID_INSTANCE: u8 = 4;
const VALIDATION_FAILED: u8 = 5;
const INFEASIBLE: u8 = 6;
const NO_SOLUTION: u8 = 7;
const BENCH_INCOMPLETE: u8 = 8;

#[derive(Parser)]
#[command(name = "evac", version, about = "Behavior-aware building evacuation planning")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check a schedule against an instance.
    Validate {
        instance: PathBuf,
        schedule: PathBuf,
        /// Deadline for the evacuation count.
        #[arg(long = "D", env = "EVAC_D")]
        deadline: Option<u32>,
    },
    /// Exact planner.
    PlanIp {
        instance: PathBuf,
        #[command(flatten)]
        plan: PlanArgs,
        /// Drop the nobody-left-behind row.
        #[arg(long, env = "EVAC_SOFT")]
        soft: bool,
        /// Skip the tie-break toward earlier arrivals.
        #[arg(long, env = "EVAC_NO_EARLIEST")]
        no_earliest: bool,
    },
    /// Decomposition heuristic.
    PlanEvac {
        instance: PathBuf,
        #[command(flatten)]
        plan: PlanArgs,
        /// Share of occupied entry vertices that fixes an exit graph's radius.
        #[arg(long, env = "EVAC_GAMMA", default_value = "1/4")]
        gamma: String,
    },
    /// Expand a schedule into the weak schedules of a behavior model.
    Realize {
        instance: PathBuf,
        schedule: PathBuf,
        #[arg(long = "D", env = "EVAC_D")]
        deadline: Option<u32>,
        /// Behavior as JSON; defaults to the instance's.
        #[arg(long, env = "EVAC_BEHAVIOR")]
        behavior: Option<String>,
    },
    /// Generate a random building instance.
    Gen {
        #[arg(long, env = "EVAC_GEN_NODES", default_value_t = 20)]
        nodes: usize,
        #[arg(long, env = "EVAC_GEN_SEED", default_value_t = 0)]
        seed: u64,
        #[arg(long, env = "EVAC_GEN_POPULATION", default_value_t = 20)]
        population: usize,
        #[arg(long, env = "EVAC_GEN_EXITS", default_value_t = 2)]
        exits: usize,
        #[arg(long, env = "EVAC_GEN_EDGE_FACTOR", default_value_t = 1.35)]
        edge_factor: f64,
        #[arg(long = "D", env = "EVAC_D", default_value_t = 10)]
        deadline: u32,
        #[arg(long, env = "EVAC_OUT")]
        out: Option<PathBuf>,
    },
    /// Write the integer program as MPS.
    ExportLp {
        instance: PathBuf,
        #[arg(long = "D", env = "EVAC_D")]
        deadline: Option<u32>,
        #[arg(long, env = "EVAC_T_MAX")]
        t_max: Option<u32>,
        /// Which rows: `weak`, `strong` or `full`.
        #[arg(long, env = "EVAC_EXPORT_FORM", default_value = "full")]
        form: String,
        #[arg(long, env = "EVAC_BEHAVIOR")]
        behavior: Option<String>,
        #[arg(long, env = "EVAC_OUT")]
        out: Option<PathBuf>,
    },
    /// Run both planners over a generated matrix and write CSV.
    Bench(BenchArgs),
}

#[derive(Args)]
struct PlanArgs {
    #[arg(long = "D", env = "EVAC_D")]
    deadline: Option<u32>,
    #[arg(long, env = "EVAC_T_MAX")]
    t_max: Option<u32>,
    /// Behavior as JSON; defaults to the instance's, else exact following.
    #[arg(long, env = "EVAC_BEHAVIOR")]
    behavior: Option<String>,
    /// Solver time limit in seconds (per subproblem for the heuristic).
    #[arg(long, env = "EVAC_TIME_LIMIT")]
    time_limit: Option<f64>,
    #[arg(long, env = "EVAC_OUT")]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct BenchArgs {
    /// Comma-separated vertex counts; empty for no instances.
    #[arg(long, env = "EVAC_BENCH_NODES", default_value = "20,30,40,50,60")]
    nodes: String,
    #[arg(long, env = "EVAC_BENCH_POPULATIONS", default_value = "20,60,100")]
    populations: String,
    #[arg(long, env = "EVAC_BENCH_SEEDS", default_value = "1")]
    seeds: String,
    /// Seconds charged to a run that does not finish.
    #[arg(long, env = "EVAC_BENCH_CUTOFF", default_value_t = 60.0)]
    cutoff: f64,
    #[arg(long, env = "EVAC_BENCH_SUBPROBLEM_LIMIT", default_value_t = 60.0)]
    subproblem_limit: f64,
    #[arg(long, env = "EVAC_BENCH_WORKERS", default_value_t = 1)]
    workers: usize,
    #[arg(long, env = "EVAC_BEHAVIOR")]
    behavior: Option<String>,
    #[arg(long, env = "EVAC_GAMMA", default_value = "1/4")]
    gamma: String,
    /// 110 to 200 vertices with a two-hour cutoff; overrides the axes.
    #[arg(long, env = "EVAC_BENCH_FULL_SCALE")]
    full_scale: bool,
    #[arg(long, env = "EVAC_OUT")]
    out: Option<PathBuf>,
}

struct Failure(u8, String);

type Outcome = Result<(), Failure>;

fn fail<T>(code: u8, msg: impl Into<String>) -> Result<T, Failure> {
    Err(Failure(code, msg.into()))
}

fn read(path: &Path) -> Result<String, Failure> {
    std::fs::read_to_string(path).map_err(|e| Failure(IO, format!("{}: {e}", path.display())))
}

fn emit(out: Option<&Path>, text: &str) -> Outcome {
    match out {
        Some(p) => std::fs::write(p, text).map_err(|e| Failure(IO, format!("{}: {e}", p.display()))),
        None => {
            println!("{text}");
            Ok(())
        }
    }
}

fn emit_json(out: Option<&Path>, v: &Value) -> Outcome {
    emit(out, &serde_json::to_string_pretty(v).expect("serializable"))
}

fn instance(path: &Path) -> Result<Instance, Failure> {
    load_instance(&read(path)?).map_err(|e| Failure(INVALID_INSTANCE, format!("{}: {e}", path.display())))
}

fn schedule(path: &Path, inst: &Instance) -> Result<Schedule, Failure> {
    Schedule::from_json(&read(path)?, &inst.graph, &inst.person_ids())
        .map_err(|e| Failure(VALIDATION_FAILED, format!("{}: {e}", path.display())))
}

fn behavior(flag: Option<&str>, inst: Option<&Instance>) -> Result<BehaviorSpec, Failure> {
    let spec = match flag {
        Some(text) => {
            let v: Value = serde_json::from_str(text).map_err(|e| Failure(USAGE, format!("--behavior: {e}")))?;
            BehaviorSpec::from_json(&v).map_err(|e| Failure(USAGE, format!("--behavior: {e}")))?
        }
        None => inst
            .and_then(|i| i.behavior.clone())
            .unwrap_or_else(BehaviorSpec::point_mass),
    };
    spec.validate().map_err(|e| Failure(USAGE, format!("behavior: {e}")))?;
    Ok(spec)
}

fn deadline(flag: Option<u32>, inst: &Instance) -> Result<u32, Failure> {
    flag.or(inst.deadline)
        .ok_or_else(|| Failure(USAGE, "no deadline: pass --D or set `deadline` in the instance".into()))
}

fn horizon(flag: Option<u32>, inst: &Instance, d: u32) -> Result<u32, Failure> {
    let t = flag.unwrap_or_else(|| default_t_max(inst.t_max, d));
    if t < d {
        return fail(USAGE, format!("t_max {t} is before the deadline {d}"));
    }
    Ok(t)
}

fn seconds(s: Option<f64>) -> Result<Option<Duration>, Failure> {
    s.map(|x| Duration::try_from_secs_f64(x).map_err(|e| Failure(USAGE, format!("time limit: {e}"))))
        .transpose()
}

fn rational(flag: &str, text: &str) -> Result<Rational, Failure> {
    parse_rational(text).ok_or_else(|| Failure(USAGE, format!("{flag}: `{text}` is not a number")))
}

fn validate(inst_path: &Path, sched_path: &Path, d: Option<u32>) -> Outcome {
    let inst = instance(inst_path)?;
    let es = schedule(sched_path, &inst)?;
    let g = &inst.graph;
    let ids = inst.person_ids();
    let verdict = |r: Result<(), evac::schedule::Violation>| match r {
        Ok(()) => (json!("pass"), "pass".to_string()),
        Err(v) => (json!({ "fail": v.describe(g, &ids) }), format!("fail ({})", v.describe(g, &ids))),
    };
    let strong_ok = validate_strong(&es, g).is_ok();
    let (wj, wh) = verdict(validate_weak(&es, g));
    let (sj, sh) = verdict(validate_strong(&es, g));
    let d = d.or(inst.deadline).unwrap_or(es.horizon).min(es.horizon);
    let evacuated = count_evacuated(&es, g, d).map_err(|e| Failure(VALIDATION_FAILED, e.to_string()))?;
    eprintln!("weak: {wh}");
    eprintln!("strong: {sh}");
    eprintln!("evacuated by {d}: {evacuated} of {}", es.num_persons());
    emit_json(
        None,
        &json!({ "weak": wj, "strong": sj, "deadline": d, "evacuated": evacuated }),
    )?;
    if strong_ok {
        Ok(())
    } else {
        Err(Failure(VALIDATION_FAILED, String::new()))
    }
}

fn plan_ip_cmd(path: &Path, a: &PlanArgs, soft: bool, no_earliest: bool) -> Outcome {
    let inst = instance(path)?;
    let spec = behavior(a.behavior.as_deref(), Some(&inst))?;
    let d = deadline(a.deadline, &inst)?;
    let t_max = horizon(a.t_max, &inst, d)?;
    let s0 = inst.initial_state();
    let fw = Framework {
        graph: &inst.graph,
        s0: &s0,
        spec: &spec,
    };
    let opts = PlanOptions {
        ip: IpOptions {
            soft,
            ..IpOptions::default()
        },
        solve: SolveOptions {
            time_limit: seconds(a.time_limit)?,
            ..SolveOptions::default()
        },
        earliest: !no_earliest,
        verify: true,
    };
    let plan = plan_ip(fw, d, t_max, &opts).map_err(|e| Failure(INVALID_INSTANCE, e.to_string()))?;
    let status = format!("{:?}", plan.status).to_lowercase();
    eprintln!("status: {status}, D = {d}, t_max = {t_max}, {} nodes", plan.nodes);
    let Some(es) = plan.schedule else {
        emit_json(a.out.as_deref(), &json!({ "status": status, "deadline": d, "t_max": t_max }))?;
        return match plan.status {
            Status::Infeasible => fail(INFEASIBLE, "no schedule evacuates everyone by t_max; try --soft"),
            _ => fail(NO_SOLUTION, "stopped before finding a schedule"),
        };
    };
    let objective = plan.objective.as_ref().map(format_rational);
    eprintln!(
        "expected evacuated by {d}: {}{}",
        objective.as_deref().unwrap_or("?"),
        if plan.status == Status::Optimal { " (optimal)" } else { "" }
    );
    emit_json(
        a.out.as_deref(),
        &json!({
            "status": status,
            "deadline": d,
            "t_max": t_max,
            "behavior": spec.to_json(),
            "expected_evacuated": objective,
            "bound": plan.bound.as_ref().map(format_rational),
            "schedule": es.to_json(&inst.graph, &inst.person_ids()),
        }),
    )
}

fn plan_evac_cmd(path: &Path, a: &PlanArgs, gamma: &str) -> Outcome {
    let inst = instance(path)?;
    let spec = behavior(a.behavior.as_deref(), Some(&inst))?;
    let d = deadline(a.deadline, &inst)?;
    let t_max = horizon(a.t_max, &inst, d)?;
    let s0 = inst.initial_state();
    let g = &inst.graph;
    let ids = inst.person_ids();
    let opts = EvacOptions {
        gamma: rational("--gamma", gamma)?,
        solve: SolveOptions {
            time_limit: seconds(a.time_limit)?,
            ..SolveOptions::default()
        },
        verify: false,
    };
    let res = bb_evac(g, &s0, &spec, d, t_max, &opts).map_err(|e| Failure(INVALID_INSTANCE, e.to_string()))?;
    let realized = realize(&spec, &res.schedule, g, &s0);
    let expected = expected_evacuated(&realized, g, d).map_err(|e| Failure(VALIDATION_FAILED, e.to_string()))?;
    let names = |xs: &[usize]| xs.iter().map(|&x| g.id(x).to_string()).collect::<Vec<_>>();
    let steps: Vec<Value> = res
        .trace
        .steps
        .iter()
        .map(|s| {
            eprintln!(
                "{}: kappa {}, entries {:?}, timeU {} -> {}, epsilon {}",
                g.id(s.exit),
                s.kappa,
                names(&s.entry_vertices),
                s.time_u_before,
                s.time_u_after,
                s.epsilon
            );
            json!({
                "exit": g.id(s.exit),
                "kappa": s.kappa,
                "entry_vertices": names(&s.entry_vertices),
                "time_u": [s.time_u_before, s.time_u_after],
                "persons": s.persons.iter().map(|&p| ids[p].clone()).collect::<Vec<_>>(),
                "soft": s.soft,
                "status": s.status.map(|st| format!("{st:?}").to_lowercase()),
                "objective": s.objective.as_ref().map(format_rational),
                "epsilon": s.epsilon,
                "stitches": s.stitches.iter().map(|st| json!({
                    "person": ids[st.person],
                    "arrival": st.arrival,
                    "leader": match st.leader {
                        Some(Leader::Starter(p)) | Some(Leader::Passer(p)) => Value::from(ids[p].clone()),
                        Some(Leader::NearestPath) => Value::from("nearest-exit path"),
                        None => Value::Null,
                    },
                    "delay": st.delay,
                })).collect::<Vec<_>>(),
                "stranded": s.stranded.iter().map(|&p| ids[p].clone()).collect::<Vec<_>>(),
                "next_ex": names(&s.next_ex),
            })
        })
        .collect();
    let strong = match &res.strong {
        Ok(()) => "pass".to_string(),
        Err(v) => v.describe(g, &ids),
    };
    let evacuated = count_evacuated(&res.schedule, g, d).map_err(|e| Failure(VALIDATION_FAILED, e.to_string()))?;
    eprintln!("evacuated by {d}: {evacuated}; expected {}; strong: {strong}", format_rational(&expected));
    emit_json(
        a.out.as_deref(),
        &json!({
            "deadline": d,
            "t_max": t_max,
            "behavior": spec.to_json(),
            "evacuated": evacuated,
            "expected_evacuated": format_rational(&expected),
            "strong": strong,
            "steps": steps,
            "isolated": names(&res.trace.isolated),
            "schedule": res.schedule.to_json(g, &ids),
        }),
    )
}

fn realize_cmd(inst_path: &Path, sched_path: &Path, d: Option<u32>, b: Option<&str>) -> Outcome {
    let inst = instance(inst_path)?;
    let es = schedule(sched_path, &inst)?;
    let spec = behavior(b, Some(&inst))?;
    let g = &inst.graph;
    let ids = inst.person_ids();
    let d = d.or(inst.deadline).unwrap_or(es.horizon).min(es.horizon);
    let realized = realize(&spec, &es, g, &inst.initial_state());
    let expected = expected_evacuated(&realized, g, d).map_err(|e| Failure(VALIDATION_FAILED, e.to_string()))?;
    let mut copies = Vec::new();
    for (i, (wes, p)) in realized.iter().enumerate() {
        let n = count_evacuated(wes, g, d).map_err(|e| Failure(VALIDATION_FAILED, e.to_string()))?;
        eprintln!("copy {}: probability {}, {n} evacuated by {d}", i + 1, format_rational(p));
        copies.push(json!({
            "probability": format_rational(p),
            "evacuated": n,
            "schedule": wes.to_json(g, &ids),
        }));
    }
    eprintln!("expected evacuated by {d}: {}", format_rational(&expected));
    emit_json(
        None,
        &json!({
            "behavior": spec.to_json(),
            "deadline": d,
            "expected_evacuated": format_rational(&expected),
            "realizations": copies,
        }),
    )
}

#[allow(clippy::too_many_arguments)]
fn gen_cmd(nodes: usize, seed: u64, population: usize, exits: usize, factor: f64, d: u32, out: Option<&Path>) -> Outcome {
    let p = GeneratorParams {
        n_vertices: nodes,
        edge_factor: factor,
        n_exits: exits,
        population,
        deadline: d,
        seed,
        ..GeneratorParams::default()
    };
    let inst = generate_instance(&p).map_err(|e| Failure(USAGE, e.to_string()))?;
    eprintln!(
        "{} vertices, {} edges, {} exits, {} people",
        inst.graph.num_vertices(),
        inst.graph.num_edges(),
        inst.graph.exits().len(),
        inst.population()
    );
    emit_json(out, &inst.to_json())
}

fn export_cmd(path: &Path, d: Option<u32>, t: Option<u32>, form: &str, b: Option<&str>, out: Option<&Path>) -> Outcome {
    let inst = instance(path)?;
    let d = deadline(d, &inst)?;
    let t_max = horizon(t, &inst, d)?;
    let xg = expand(&inst.graph);
    let (model, counts) = match form {
        "weak" => build_lpw(&xg, t_max),
        "strong" => build_lps(&xg, t_max, inst.population() as u64),
        "full" => {
            let spec = behavior(b, Some(&inst))?;
            let s0 = inst.initial_state();
            let fw = Framework {
                graph: &inst.graph,
                s0: &s0,
                spec: &spec,
            };
            let ilp = build_ip(fw, d, t_max, &IpOptions::default()).map_err(|e| Failure(INVALID_INSTANCE, e.to_string()))?;
            (ilp.model, ilp.counts)
        }
        other => return fail(USAGE, format!("--form must be weak, strong or full, not `{other}`")),
    };
    eprintln!(
        "{} variables, {} rows: {counts}",
        model.variables.len(),
        model.constraints.len()
    );
    emit(out, write_mps(&model).trim_end())
}

fn list<T: std::str::FromStr>(flag: &str, text: &str) -> Result<Vec<T>, Failure> {
    text.split(',')
        .map(str::trim)
        .filter(|x| !x.is_empty())
        .map(|x| x.parse().map_err(|_| Failure(USAGE, format!("{flag}: `{x}` is not a count"))))
        .collect()
}

fn bench_cmd(a: &BenchArgs) -> Outcome {
    let nodes: Vec<usize> = list("--nodes", &a.nodes)?;
    let populations: Vec<usize> = list("--populations", &a.populations)?;
    let seeds: Vec<u64> = list("--seeds", &a.seeds)?;
    let mut cfg = if a.full_scale {
        BenchConfig::full_scale()
    } else {
        BenchConfig {
            cells: grid(&nodes, &populations, &seeds),
            cutoff: seconds(Some(a.cutoff))?.unwrap_or_default(),
            subproblem_limit: seconds(Some(a.subproblem_limit))?.unwrap_or_default(),
            ..BenchConfig::default()
        }
    };
    if a.full_scale {
        cfg.cells = grid(&(110..=200).step_by(10).collect::<Vec<_>>(), &populations, &seeds);
    }
    cfg.workers = a.workers;
    cfg.gamma = rational("--gamma", &a.gamma)?;
    if a.behavior.is_some() {
        cfg.behavior = behavior(a.behavior.as_deref(), None)?;
    }
    let records = run_matrix(&cfg);
    let mut buf = Vec::new();
    write_csv(&records, &mut buf).map_err(|e| Failure(IO, e.to_string()))?;
    emit(a.out.as_deref(), String::from_utf8(buf).expect("utf-8").trim_end())?;
    eprint!("{}", summary_table(&records));
    let errors = records.iter().filter(|r| r.status.starts_with("error")).count();
    if errors > 0 {
        return fail(BENCH_INCOMPLETE, format!("{errors} runs failed"));
    }
    Ok(())
}

fn run(cli: Cli) -> Outcome {
    match cli.command {
        Command::Validate {
            instance,
            schedule,
            deadline,
        } => validate(&instance, &schedule, deadline),
        Command::PlanIp {
            instance,
            plan,
            soft,
            no_earliest,
        } => plan_ip_cmd(&instance, &plan, soft, no_earliest),
        Command::PlanEvac { instance, plan, gamma } => plan_evac_cmd(&instance, &plan, &gamma),
        Command::Realize {
            instance,
            schedule,
            deadline,
            behavior,
        } => realize_cmd(&instance, &schedule, deadline, behavior.as_deref()),
        Command::Gen {
            nodes,
            seed,
            population,
            exits,
            edge_factor,
            deadline,
            out,
        } => gen_cmd(nodes, seed, population, exits, edge_factor, deadline, out.as_deref()),
        Command::ExportLp {
            instance,
            deadline,
            t_max,
            form,
            behavior,
            out,
        } => export_cmd(&instance, deadline, t_max, &form, behavior.as_deref(), out.as_deref()),
        Command::Bench(a) => bench_cmd(&a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { USAGE } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure(code, msg)) => {
            if !msg.is_empty() {
                eprintln!("error: {msg}");
            }
            ExitCode::from(code)
        }
    }
}
