//! `gridmesh`: merge regional MATPOWER cases, split them into regions and
//! solve the resulting power flow centrally or with ADMM / ALADIN.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::Context;
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::json;

use gridmesh_core::admm::{admm_solve, AdmmConfig};
use gridmesh_core::aladin::{aladin_solve, AladinConfig, DualUpdate};
use gridmesh_core::casefile::matpower::write_matpower_case;
use gridmesh_core::casefile::{load_composite, read_case};
use gridmesh_core::centralized::{solve_newton_raphson, PfSolution};
use gridmesh_core::localnlp::HessianMethod;
use gridmesh_core::perturb::perturb_states;
use gridmesh_core::topology::{merge_cases, split_cases, DistProblem, Formulation};
use gridmesh_core::trace::{RunOutcome, Termination};
use gridmesh_core::{CaseData, ConnectionSpec, Error};

const EXIT_BUDGET: u8 = 2;
const EXIT_INPUT: u8 = 3;
const EXIT_NUMERICAL: u8 = 4;

#[derive(Parser)]
#[command(name = "gridmesh", version, about = "Distributed AC power flow over interconnected regional grids")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Merge regional cases into one MATPOWER case plus a JSON bus map.
    Merge {
        #[command(flatten)]
        input: Input,
        /// Merged case file; the bus map goes next to it as `<stem>.map.json`.
        #[arg(short, long)]
        out: PathBuf,
    },
    /// Write the per-region cases after slack conversion and a summary of
    /// core and copy buses.
    Split {
        #[command(flatten)]
        input: Input,
        #[arg(short, long)]
        out_dir: PathBuf,
    },
    /// Newton-Raphson on the merged case.
    SolveCentral {
        #[command(flatten)]
        input: Input,
        #[arg(long, default_value_t = 1e-10)]
        tol: f64,
        #[arg(long, default_value_t = 30)]
        max_iter: usize,
        /// Solution JSON (per-bus vm, va, p, q).
        #[arg(long)]
        solution: Option<PathBuf>,
    },
    /// Distributed solve with ADMM or ALADIN.
    Solve {
        #[command(flatten)]
        input: Input,
        #[command(flatten)]
        solver: SolverArgs,
        #[command(flatten)]
        output: OutputArgs,
        /// Also run Newton-Raphson on the merged case and report the largest
        /// deviation per quantity.
        #[arg(long)]
        validate: bool,
    },
    /// Rerun a distributed solve from the exact solution perturbed by
    /// `sigma` times one seeded standard-normal draw, once per `sigma`.
    Perturb {
        #[command(flatten)]
        input: Input,
        #[command(flatten)]
        solver: SolverArgs,
        /// Perturbation scales; may be repeated.
        #[arg(long = "sigma", default_values_t = [0.01, 0.1, 1.0, 10.0])]
        sigmas: Vec<f64>,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        /// Consensus level whose first crossing is reported.
        #[arg(long, default_value_t = 1e-3)]
        level: f64,
        /// One trace per sigma is written here as `trace_sigma_<sigma>.csv`.
        #[arg(short, long)]
        out_dir: PathBuf,
        /// Write zeros in the timing column.
        #[arg(long)]
        no_timing: bool,
    },
}

#[derive(Args)]
struct Input {
    /// Connection specification (JSON).
    conn: PathBuf,
    /// Regional case files in region order; defaults to the `cases` list
    /// of the connection file.
    #[arg(long = "case")]
    cases: Vec<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Method {
    Admm,
    Aladin,
}

#[derive(Args)]
struct SolverArgs {
    #[arg(long, value_enum, default_value_t = Method::Aladin)]
    method: Method,
    /// `least-squares` (`ls`) or `feasibility`; defaults to least-squares
    /// for ALADIN and feasibility for ADMM.
    #[arg(long)]
    formulation: Option<Formulation>,
    /// ALADIN Hessian approximation: gauss-newton, finite-diff, bfgs, lbfgs.
    #[arg(long)]
    hessian: Option<HessianMethod>,
    #[arg(long)]
    rho: Option<f64>,
    /// ALADIN proximal weight.
    #[arg(long)]
    nu: Option<f64>,
    #[arg(long)]
    tol: Option<f64>,
    #[arg(long)]
    max_iter: Option<usize>,
    /// ALADIN multiplier update: coordinated (default) or literal.
    #[arg(long)]
    dual_update: Option<DualUpdate>,
}

#[derive(Args)]
struct OutputArgs {
    /// Trace CSV.
    #[arg(long)]
    trace: Option<PathBuf>,
    /// Solution JSON.
    #[arg(long)]
    solution: Option<PathBuf>,
    /// Global norms as whitespace-separated columns for gnuplot.
    #[arg(long)]
    plot: Option<PathBuf>,
    /// Write zeros in the timing column so reruns are byte-identical.
    #[arg(long)]
    no_timing: bool,
}

/// A failure with the exit status it maps to.
struct Failure {
    code: u8,
    error: anyhow::Error,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = if e.is_input_error() { EXIT_INPUT } else { EXIT_NUMERICAL };
        Failure { code, error: e.into() }
    }
}

impl From<anyhow::Error> for Failure {
    fn from(error: anyhow::Error) -> Self {
        let code = match error.downcast_ref::<Error>() {
            Some(e) if !e.is_input_error() => EXIT_NUMERICAL,
            _ => EXIT_INPUT,
        };
        Failure { code, error }
    }
}

type CliResult<T> = std::result::Result<T, Failure>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Err(e) = configure_threads() {
        eprintln!("error: {e:#}");
        return ExitCode::from(EXIT_INPUT);
    }
    match run(cli.command) {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            eprintln!("error: {:#}", f.error);
            ExitCode::from(f.code)
        }
    }
}

fn configure_threads() -> anyhow::Result<()> {
    let Ok(value) = std::env::var("GRIDMESH_THREADS") else {
        return Ok(());
    };
    let threads: usize = value
        .trim()
        .parse()
        .with_context(|| format!("GRIDMESH_THREADS must be a positive integer, got '{value}'"))?;
    anyhow::ensure!(threads > 0, "GRIDMESH_THREADS must be a positive integer, got '{value}'");
    rayon::ThreadPoolBuilder::new().num_threads(threads).build_global()?;
    Ok(())
}

fn run(command: Command) -> CliResult<u8> {
    match command {
        Command::Merge { input, out } => merge(&input, &out),
        Command::Split { input, out_dir } => split(&input, &out_dir),
        Command::SolveCentral {
            input,
            tol,
            max_iter,
            solution,
        } => solve_central(&input, tol, max_iter, solution.as_deref()),
        Command::Solve {
            input,
            solver,
            output,
            validate,
        } => solve(&input, &solver, &output, validate),
        Command::Perturb {
            input,
            solver,
            sigmas,
            seed,
            level,
            out_dir,
            no_timing,
        } => perturb(&input, &solver, &sigmas, seed, level, &out_dir, no_timing),
    }
}

fn load(input: &Input) -> CliResult<(Vec<CaseData>, ConnectionSpec)> {
    let conn = &input.conn;
    if input.cases.is_empty() {
        return Ok(load_composite(conn).with_context(|| format!("loading {}", conn.display()))?);
    }
    let text = fs::read_to_string(conn).with_context(|| format!("reading {}", conn.display()))?;
    let spec = ConnectionSpec::parse(&text, Some(input.cases.len()))
        .with_context(|| format!("parsing {}", conn.display()))?;
    let cases = input
        .cases
        .iter()
        .map(|p| read_case(p).with_context(|| format!("reading {}", p.display())))
        .collect::<anyhow::Result<Vec<_>>>()?;
    Ok((cases, spec))
}

fn write(path: &Path, text: &str) -> CliResult<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

fn merge(input: &Input, out: &Path) -> CliResult<u8> {
    let (cases, spec) = load(input)?;
    let merged = merge_cases(&cases, &spec)?;
    let stem = out.file_stem().and_then(|s| s.to_str()).unwrap_or("merged");
    let name: String = stem
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() { c } else { '_' })
        .collect();
    write(out, &write_matpower_case(&merged.case, &name))?;
    let map_path = out.with_file_name(format!("{stem}.map.json"));
    write(&map_path, &merged.map.to_json())?;
    println!(
        "merged {} regions into {} buses, {} branches: {}",
        cases.len(),
        merged.case.buses.len(),
        merged.case.branches.len(),
        out.display()
    );
    Ok(0)
}

fn split(input: &Input, out_dir: &Path) -> CliResult<u8> {
    let (cases, spec) = load(input)?;
    let regions = split_cases(&cases, &spec)?;
    let mut summary = Vec::new();
    for model in &regions {
        let file = format!("region{}.m", model.region);
        write(&out_dir.join(&file), &write_matpower_case(&model.case, &format!("region{}", model.region)))?;
        let copies: Vec<_> = model
            .copies
            .iter()
            .map(|c| json!({"owner_region": c.owner_region, "owner_bus": c.owner_bus, "global_id": c.global_id}))
            .collect();
        summary.push(json!({
            "region": model.region,
            "case": file,
            "core_buses": model.n_core(),
            "copy_buses": model.n_copy(),
            "state_dim": model.n_state(),
            "residual_dim": model.n_residual(),
            "copies": copies,
        }));
        println!(
            "region {}: {} core, {} copy buses, state dimension {}",
            model.region,
            model.n_core(),
            model.n_copy(),
            model.n_state()
        );
    }
    let text = serde_json::to_string_pretty(&json!({"regions": summary})).context("serializing summary")?;
    write(&out_dir.join("regions.json"), &text)?;
    Ok(0)
}

#[derive(Serialize)]
struct BusValue {
    id: usize,
    vm: f64,
    /// Radians.
    va: f64,
    p: f64,
    q: f64,
}

fn bus_values(ids: &[usize], vm: &[f64], va: &[f64], p: &[f64], q: &[f64]) -> Vec<BusValue> {
    (0..ids.len())
        .map(|k| BusValue {
            id: ids[k],
            vm: vm[k],
            va: va[k],
            p: p[k],
            q: q[k],
        })
        .collect()
}

fn solve_central(input: &Input, tol: f64, max_iter: usize, solution: Option<&Path>) -> CliResult<u8> {
    let (cases, spec) = load(input)?;
    let merged = merge_cases(&cases, &spec)?;
    let start = Instant::now();
    let sol = solve_newton_raphson(&merged.case, tol, max_iter)?;
    println!(
        "Newton-Raphson converged in {} iterations, mismatch {:e}, {:.3} s",
        sol.iterations,
        sol.mismatch,
        start.elapsed().as_secs_f64()
    );
    if let Some(path) = solution {
        let doc = json!({
            "method": "newton-raphson",
            "converged": true,
            "iterations": sol.iterations,
            "mismatch": sol.mismatch,
            "buses": bus_values(&sol.bus_ids, &sol.vm, &sol.va, &sol.p, &sol.q),
        });
        write(path, &serde_json::to_string_pretty(&doc).context("serializing solution")?)?;
    }
    Ok(0)
}

fn formulation_for(solver: &SolverArgs) -> Formulation {
    solver.formulation.unwrap_or(match solver.method {
        Method::Admm => Formulation::Feasibility,
        Method::Aladin => Formulation::LeastSquares,
    })
}

fn build_problem(input: &Input, solver: &SolverArgs) -> CliResult<DistProblem> {
    let formulation = formulation_for(solver);
    let hessian = solver.hessian.unwrap_or(match formulation {
        Formulation::LeastSquares => HessianMethod::GaussNewton,
        Formulation::Feasibility => HessianMethod::FiniteDiff,
    });
    if hessian == HessianMethod::GaussNewton && formulation != Formulation::LeastSquares {
        return Err(Error::GaussNewtonFeasibility.into());
    }
    if matches!(solver.method, Method::Admm) && (solver.hessian.is_some() || solver.nu.is_some()) {
        return Err(Error::Config("--hessian and --nu only apply to ALADIN".into()).into());
    }
    let (cases, spec) = load(input)?;
    Ok(DistProblem::build(&cases, &spec, formulation)?)
}

fn run_solver(
    problem: &DistProblem,
    solver: &SolverArgs,
    zeta0: Option<Vec<nalgebra::DVector<f64>>>,
) -> CliResult<RunOutcome> {
    let outcome = match solver.method {
        Method::Admm => {
            let mut cfg = AdmmConfig {
                zeta0,
                ..AdmmConfig::default()
            };
            if let Some(rho) = solver.rho {
                cfg.rho = rho;
            }
            if let Some(tol) = solver.tol {
                cfg.tol = tol;
            }
            if let Some(n) = solver.max_iter {
                cfg.max_iter = n;
            }
            admm_solve(problem, &cfg)?
        }
        Method::Aladin => {
            let mut cfg = AladinConfig {
                zeta0,
                ..AladinConfig::default()
            };
            cfg.hessian = solver.hessian.unwrap_or(match problem.formulation {
                Formulation::LeastSquares => HessianMethod::GaussNewton,
                Formulation::Feasibility => HessianMethod::FiniteDiff,
            });
            if let Some(rho) = solver.rho {
                cfg.rho = rho;
            }
            if let Some(nu) = solver.nu {
                cfg.nu = nu;
            }
            if let Some(tol) = solver.tol {
                cfg.tol = tol;
            }
            if let Some(n) = solver.max_iter {
                cfg.max_iter = n;
            }
            if let Some(d) = solver.dual_update {
                cfg.dual_update = d;
            }
            aladin_solve(problem, &cfg)?
        }
    };
    Ok(outcome)
}

fn status_line(outcome: &RunOutcome) -> String {
    let norms = outcome.trace.norm_history().last().copied().unwrap_or_default();
    let status = match &outcome.termination {
        Termination::Converged => "converged".to_string(),
        Termination::IterationLimit => "iteration budget exhausted".to_string(),
        Termination::Failed(e) => format!("failed: {e}"),
    };
    format!(
        "{status} after {} iterations (pf {:.2e}, spec {:.2e}, consensus {:.2e})",
        outcome.iterations(),
        norms.pf,
        norms.spec,
        norms.consensus
    )
}

fn exit_code(termination: &Termination) -> u8 {
    match termination {
        Termination::Converged => 0,
        Termination::IterationLimit => EXIT_BUDGET,
        Termination::Failed(e) if e.is_input_error() => EXIT_INPUT,
        Termination::Failed(_) => EXIT_NUMERICAL,
    }
}

fn max_deviation(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn solve(input: &Input, solver: &SolverArgs, output: &OutputArgs, validate: bool) -> CliResult<u8> {
    let problem = build_problem(input, solver)?;
    let start = Instant::now();
    let outcome = run_solver(&problem, solver, None)?;
    let elapsed = start.elapsed().as_secs_f64();
    if let Some(path) = &output.trace {
        write(path, &outcome.trace.to_csv(!output.no_timing))?;
    }
    if let Some(path) = &output.plot {
        write(path, &outcome.trace.to_plot_data())?;
    }
    println!("{}", status_line(&outcome));
    if !output.no_timing {
        println!("wall time {elapsed:.3} s");
    }

    let (va, vm) = problem.gather(&outcome.states);
    let (p, q) = problem.gather_injections(&outcome.states);
    let mut validation = None;
    if validate {
        let central: PfSolution = solve_newton_raphson(&problem.merged.case, 1e-12, 30)?;
        let dev = json!({
            "vm": max_deviation(&vm, &central.vm),
            "va": max_deviation(&va, &central.va),
            "p": max_deviation(&p, &central.p),
            "q": max_deviation(&q, &central.q),
        });
        println!(
            "max deviation from Newton-Raphson: vm {:.2e}, va {:.2e}, p {:.2e}, q {:.2e}",
            dev["vm"].as_f64().unwrap_or(f64::NAN),
            dev["va"].as_f64().unwrap_or(f64::NAN),
            dev["p"].as_f64().unwrap_or(f64::NAN),
            dev["q"].as_f64().unwrap_or(f64::NAN),
        );
        validation = Some(dev);
    }
    if let Some(path) = &output.solution {
        let ids: Vec<usize> = problem.merged.case.buses.iter().map(|b| b.bus_id).collect();
        let params: serde_json::Map<_, _> = outcome
            .trace
            .params
            .iter()
            .map(|(k, v)| (k.clone(), json!(v)))
            .collect();
        let doc = json!({
            "converged": outcome.converged(),
            "iterations": outcome.iterations(),
            "params": params,
            "buses": bus_values(&ids, &vm, &va, &p, &q),
            "validation": validation,
        });
        write(path, &serde_json::to_string_pretty(&doc).context("serializing solution")?)?;
    }
    Ok(exit_code(&outcome.termination))
}

fn perturb(
    input: &Input,
    solver: &SolverArgs,
    sigmas: &[f64],
    seed: u64,
    level: f64,
    out_dir: &Path,
    no_timing: bool,
) -> CliResult<u8> {
    let problem = build_problem(input, solver)?;
    let central = solve_newton_raphson(&problem.merged.case, 1e-12, 30)?;
    let exact = problem.scatter(&central.va, &central.vm)?;
    println!("sigma,iterations,first_below_level,status");
    for &sigma in sigmas {
        let start = perturb_states(&exact, sigma, seed);
        let outcome = run_solver(&problem, solver, Some(start))?;
        let mut trace = outcome.trace.clone();
        trace.param("sigma", sigma);
        trace.param("seed", seed);
        write(&out_dir.join(format!("trace_sigma_{sigma}.csv")), &trace.to_csv(!no_timing))?;
        let first = trace
            .first_consensus_below(level)
            .map_or_else(|| "none".to_string(), |k| k.to_string());
        let status = match &outcome.termination {
            Termination::Converged => "converged".to_string(),
            Termination::IterationLimit => "budget".to_string(),
            Termination::Failed(e) => format!("failed ({e})"),
        };
        println!("{sigma},{},{first},{status}", outcome.iterations());
    }
    Ok(0)
}
